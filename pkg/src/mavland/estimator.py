"""Constant-velocity Kalman filter over the landing-site state.

State vector (10)::

    [x_c, y_c, theta, w, h, dx_c, dy_c, dtheta, dw, dh]

Positions are in px (theta in rad) and rates per second. The measurement is
the 5-vector produced by :func:`mavland.geometry.bbox_to_state`. All
operations are pure: they take an estimate and return a new one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from mavland.geometry import SiteState, angle_diff, wrap_quarter

N_POS = 5
N_STATE = 2 * N_POS
THETA = 2

H = np.hstack([np.eye(N_POS), np.zeros((N_POS, N_POS))])


class NumericalError(RuntimeError):
    """Covariance lost positive-definiteness; usually a tuning problem."""


@dataclass(frozen=True)
class FilterConfig:
    """Noise model and coasting limit.

    Attributes:
        process_noise_psd: white-acceleration intensity per measured component
            (px^2/s^3, rad^2/s^3 for theta).
        measurement_noise: diagonal of the 5x5 measurement covariance
            (px^2, rad^2 for theta).
        initial_rate_sigma: prior std-dev of each rate component at init.
        initial_covariance_scale: multiplier on the whole initial covariance.
        max_coast_frames: predict-only frames tolerated before the track is lost.
        inflate_partial: scale measurement noise by 1/visible_fraction^2 for
            clipped or occluded boxes.
    """

    process_noise_psd: tuple[float, ...] = (400.0, 400.0, 0.05, 400.0, 400.0)
    measurement_noise: tuple[float, ...] = (4.0, 4.0, 0.0004, 9.0, 9.0)
    initial_rate_sigma: tuple[float, ...] = (50.0, 50.0, 0.5, 50.0, 50.0)
    initial_covariance_scale: float = 1.0
    max_coast_frames: int = 20
    inflate_partial: bool = True

    def __post_init__(self):
        for name in ("process_noise_psd", "measurement_noise", "initial_rate_sigma"):
            values = tuple(float(x) for x in getattr(self, name))
            if len(values) != N_POS:
                raise ValueError(f"{name} needs {N_POS} entries, got {len(values)}")
            if any(not x > 0 for x in values):
                raise ValueError(f"{name} entries must be > 0, got {values}")
            object.__setattr__(self, name, values)
        if not self.initial_covariance_scale > 0:
            raise ValueError("initial_covariance_scale must be > 0")
        if int(self.max_coast_frames) < 1:
            raise ValueError("max_coast_frames must be >= 1")


@dataclass(frozen=True)
class FilterEstimate:
    state: np.ndarray
    covariance: np.ndarray
    timestamp: float = 0.0
    frames_since_measurement: int = 0
    visible_fraction: float = 1.0
    nis: Optional[float] = field(default=None, compare=False)

    @property
    def site(self) -> np.ndarray:
        return self.state[:N_POS]

    @property
    def rates(self) -> np.ndarray:
        return self.state[N_POS:]


@dataclass(frozen=True)
class TrackLost:
    """Returned by :func:`step` once the filter has coasted too long."""

    last: FilterEstimate


def transition(dt: float) -> np.ndarray:
    F = np.eye(N_STATE)
    F[np.arange(N_POS), np.arange(N_POS) + N_POS] = dt
    return F


def process_noise(dt: float, psd: Sequence[float]) -> np.ndarray:
    """Discretised continuous white-acceleration noise, per component."""
    Q = np.zeros((N_STATE, N_STATE))
    for i, q in enumerate(psd):
        j = i + N_POS
        Q[i, i] = q * dt**3 / 3.0
        Q[i, j] = Q[j, i] = q * dt**2 / 2.0
        Q[j, j] = q * dt
    return Q


def measurement_covariance(z: SiteState, cfg: FilterConfig) -> np.ndarray:
    r = np.asarray(cfg.measurement_noise, dtype=float)
    if cfg.inflate_partial and z.visible_fraction < 1.0:
        r = r / max(z.visible_fraction, 1e-3) ** 2
    return np.diag(r)


def check_covariance(P: np.ndarray) -> None:
    if not np.all(np.isfinite(P)):
        raise NumericalError("covariance has non-finite entries")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is not positive-definite") from exc


def init(z0: SiteState, cfg: FilterConfig, timestamp: float = 0.0) -> FilterEstimate:
    """Start a track at ``z0`` with zero rates.

    Raises:
        ValueError: if ``z0`` is degenerate.
    """
    if z0.degenerate:
        raise ValueError("cannot initialise a track from a degenerate box")
    state = np.zeros(N_STATE)
    state[:N_POS] = z0.as_tuple()
    state[THETA] = wrap_quarter(state[THETA])
    variances = np.concatenate(
        [np.asarray(cfg.measurement_noise), np.square(cfg.initial_rate_sigma)]
    )
    P = np.diag(cfg.initial_covariance_scale * variances)
    return FilterEstimate(
        state=state, covariance=P, timestamp=timestamp, visible_fraction=z0.visible_fraction
    )


def predict(est: FilterEstimate, dt: float, cfg: FilterConfig) -> FilterEstimate:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    F = transition(dt)
    x = F @ est.state
    x[THETA] = wrap_quarter(x[THETA])
    P = F @ est.covariance @ F.T + process_noise(dt, cfg.process_noise_psd)
    P = 0.5 * (P + P.T)
    return FilterEstimate(
        state=x,
        covariance=P,
        timestamp=est.timestamp + dt,
        frames_since_measurement=est.frames_since_measurement + 1,
        visible_fraction=est.visible_fraction,
    )


def innovation(est: FilterEstimate, z: SiteState, cfg: FilterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Innovation vector and its covariance; theta uses the wrapped difference."""
    y = np.asarray(z.as_tuple(), dtype=float) - H @ est.state
    y[THETA] = angle_diff(z.theta, est.state[THETA])
    S = H @ est.covariance @ H.T + measurement_covariance(z, cfg)
    return y, S


def update(est: FilterEstimate, z: SiteState, cfg: FilterConfig) -> FilterEstimate:
    """Kalman measurement update with a Joseph-form covariance.

    Raises:
        NumericalError: if the updated covariance is not positive-definite.
    """
    y, S = innovation(est, z, cfg)
    R = measurement_covariance(z, cfg)
    P = est.covariance
    PHt = P @ H.T
    K = np.linalg.solve(S, PHt.T).T
    x = est.state + K @ y
    x[THETA] = wrap_quarter(x[THETA])
    I_KH = np.eye(N_STATE) - K @ H
    P = I_KH @ P @ I_KH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    check_covariance(P)
    nis = float(y @ np.linalg.solve(S, y))
    return replace(
        est,
        state=x,
        covariance=P,
        frames_since_measurement=0,
        visible_fraction=z.visible_fraction,
        nis=nis,
    )


def step(
    est: FilterEstimate,
    maybe_z: Optional[SiteState],
    dt: float,
    cfg: FilterConfig,
) -> Union[FilterEstimate, TrackLost]:
    """Predict, then update if a usable measurement is present.

    Returns :class:`TrackLost` once more than ``cfg.max_coast_frames``
    consecutive frames went without a measurement.
    """
    est = predict(est, dt, cfg)
    if maybe_z is not None and not maybe_z.degenerate:
        est = update(est, maybe_z, cfg)
    if est.frames_since_measurement > cfg.max_coast_frames:
        return TrackLost(est)
    return est
