"""State controller: PID loops, stepped descent and the landing phase machine.

Sign convention (shared with :mod:`mavland.simulator`): the camera's u axis is
the body x axis and its v axis is the body y axis, so a site to the right of
the image centre (+u error) is reached by a +x body velocity, and a positive
site angle is removed by a positive yaw rate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from mavland.estimator import FilterEstimate, TrackLost
from mavland.geometry import ImageFrameSpec


class IllegalTransition(RuntimeError):
    pass


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    output_limit: float = 1.0
    integral_limit: float = 1.0
    derivative_filter_tau: float = 0.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be >= 0")
        if not (self.output_limit > 0 and self.integral_limit > 0):
            raise ValueError("PID limits must be > 0")
        if self.derivative_filter_tau < 0:
            raise ValueError("derivative_filter_tau must be >= 0")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: Optional[float] = None
    derivative: float = 0.0


def _clamp(x: float, limit: float) -> float:
    return max(-limit, min(limit, x))


def pid_step(gains: PidGains, error: float, dt: float, state: PidState) -> tuple[float, PidState]:
    """One PID update.

    Integration is rectangular (the current error is included), the
    derivative is taken on the error sequence with no kick on the first call
    and smoothed by a first-order filter, and the integral is frozen while the
    output is saturated in the direction of the error.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if state.prev_error is None:
        raw_d = 0.0
    else:
        raw_d = (error - state.prev_error) / dt
    alpha = dt / (gains.derivative_filter_tau + dt)
    deriv = state.derivative + alpha * (raw_d - state.derivative)

    integral = _clamp(state.integral + error * dt, gains.integral_limit)
    u = gains.kp * error + gains.ki * integral + gains.kd * deriv
    if abs(u) > gains.output_limit and error * u > 0:
        integral = state.integral
        u = gains.kp * error + gains.ki * integral + gains.kd * deriv
    return _clamp(u, gains.output_limit), PidState(integral, error, deriv)


class Phase(enum.Enum):
    SEARCH = "SEARCH"
    ALIGN = "ALIGN"
    DESCEND = "DESCEND"
    FINAL_LAND = "FINAL_LAND"
    LANDED = "LANDED"
    ABORTED = "ABORTED"


LEGAL_TRANSITIONS = {
    Phase.SEARCH: {Phase.ALIGN, Phase.ABORTED},
    Phase.ALIGN: {Phase.DESCEND, Phase.FINAL_LAND, Phase.SEARCH, Phase.ABORTED},
    Phase.DESCEND: {Phase.ALIGN, Phase.FINAL_LAND, Phase.SEARCH, Phase.ABORTED},
    Phase.FINAL_LAND: {Phase.LANDED, Phase.ABORTED},
    Phase.LANDED: set(),
    Phase.ABORTED: set(),
}


@dataclass(frozen=True)
class LandingPhase:
    phase: Phase
    entered_at: float = 0.0

    def to(self, new: Phase, t: float) -> "LandingPhase":
        if new not in LEGAL_TRANSITIONS[self.phase]:
            raise IllegalTransition(f"{self.phase.value} -> {new.value}")
        return LandingPhase(new, t)


class CommandMode(enum.Enum):
    HOLD = "HOLD"
    ALIGN = "ALIGN"
    DESCEND_STEP = "DESCEND_STEP"
    FINAL_LAND = "FINAL_LAND"
    ABORT = "ABORT"


@dataclass(frozen=True)
class ControlCommand:
    """Velocity-level command for the autopilot.

    ``vx``/``vy`` are body-frame m/s, ``yaw_rate`` rad/s. ``z_setpoint`` is
    the altitude target; in FINAL_LAND mode the autopilot ignores it and
    descends at the constant rate ``vz`` instead.
    """

    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0
    z_setpoint: Optional[float] = None
    mode: CommandMode = CommandMode.HOLD
    vz: Optional[float] = None


DEFAULT_XY_GAINS = PidGains(
    kp=0.6, ki=0.05, kd=0.05, output_limit=1.0, integral_limit=0.5, derivative_filter_tau=0.1
)
DEFAULT_YAW_GAINS = PidGains(kp=1.0, output_limit=0.5, integral_limit=0.2)


@dataclass(frozen=True)
class LandingConfig:
    """Landing law parameters.

    Attributes:
        k_alt: proportionality constant of the altitude error (m/px).
        z_step: altitude dropped per descent step (m).
        z_land_threshold: altitude at which the final landing starts (m).
        ze_descend_max: largest altitude error that still permits a step (m);
            only checked while the whole site is in view.
        align_tolerance_px: centroid error below which the site counts as centred.
        theta_tolerance: site angle below which the heading counts as aligned (rad).
        final_descent_rate: constant sink rate of the final landing (m/s).
        search_timeout: time in SEARCH before aborting (s).
        expected_aspect: site width/height ratio seen from straight above;
            1 gives the plain |w - h| law.
        step_reached_tol: a new step is issued once the vehicle is this close
            to the current setpoint (m).
        touchdown_z: altitude counted as touchdown (m).
        focal_px: camera focal length, used to express pixel errors as metres
            at the current altitude before the planar PID.
    """

    k_alt: float = 0.01
    z_step: float = 0.5
    z_land_threshold: float = 0.3
    ze_descend_max: float = 0.5
    align_tolerance_px: float = 20.0
    theta_tolerance: float = 0.05
    final_descent_rate: float = 0.25
    search_timeout: float = 10.0
    expected_aspect: float = 1.0
    step_reached_tol: float = 0.1
    touchdown_z: float = 0.01
    focal_px: float = 554.3
    xy_gains: PidGains = DEFAULT_XY_GAINS
    yaw_gains: PidGains = DEFAULT_YAW_GAINS

    def __post_init__(self):
        for name in (
            "k_alt", "z_step", "z_land_threshold", "ze_descend_max", "align_tolerance_px",
            "theta_tolerance", "final_descent_rate", "search_timeout", "expected_aspect",
            "step_reached_tol", "touchdown_z", "focal_px",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.touchdown_z >= self.z_land_threshold:
            raise ValueError("touchdown_z must be below z_land_threshold")


@dataclass(frozen=True)
class ControllerState:
    phase: LandingPhase
    z_setpoint: float
    clock: float = 0.0
    search_started: float = 0.0
    pid_x: PidState = field(default_factory=PidState)
    pid_y: PidState = field(default_factory=PidState)
    pid_yaw: PidState = field(default_factory=PidState)
    final_land_entries: int = 0
    final_land_entry_z: Optional[float] = None


def new_controller(start_altitude: float) -> ControllerState:
    return ControllerState(phase=LandingPhase(Phase.SEARCH, 0.0), z_setpoint=start_altitude)


def planar_errors(est: FilterEstimate, frame: ImageFrameSpec) -> tuple[float, float, float]:
    """Centroid error against the image centre (px) and the site angle (rad)."""
    c = frame.centroid
    return float(est.state[0] - c.u), float(est.state[1] - c.v), float(est.state[2])


def altitude_error(w: float, h: float, cfg: LandingConfig) -> float:
    """Altitude error k_alt * |w - aspect * h| (m)."""
    if w < 0 or h < 0:
        raise ValueError(f"width and height must be >= 0, got {w}, {h}")
    return cfg.k_alt * abs(w - cfg.expected_aspect * h)


def descend_step(z_current: float, cfg: LandingConfig) -> float:
    """Next altitude setpoint, one step below the current altitude.

    Raises:
        ValueError: at or below the landing threshold, where the final
            landing should already have taken over.
    """
    if not z_current > cfg.z_land_threshold:
        raise ValueError(
            f"altitude {z_current} m is not above the landing threshold {cfg.z_land_threshold} m"
        )
    return max(z_current - cfg.z_step, cfg.z_land_threshold)


def _move(s: ControllerState, new: Phase, t: float, **changes) -> ControllerState:
    return replace(s, phase=s.phase.to(new, t), **changes)


def control_step(
    state: ControllerState,
    est: Union[FilterEstimate, TrackLost, None],
    pose,
    cfg: LandingConfig,
    frame: ImageFrameSpec,
    dt: float,
) -> tuple[ControlCommand, ControllerState]:
    """Advance the landing phase machine by one control period.

    ``pose`` needs ``z`` (altitude, m); ``est`` is the current filter output,
    :class:`TrackLost`, or None before the first detection.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t = state.clock + dt
    s = replace(state, clock=t)
    phase = s.phase.phase
    tracking = isinstance(est, FilterEstimate)

    if phase is Phase.LANDED:
        return ControlCommand(z_setpoint=0.0, mode=CommandMode.FINAL_LAND, vz=0.0), s
    if phase is Phase.ABORTED:
        return ControlCommand(z_setpoint=s.z_setpoint, mode=CommandMode.ABORT), s

    if phase is Phase.FINAL_LAND:
        if pose.z <= cfg.touchdown_z:
            s = _move(s, Phase.LANDED, t)
            return ControlCommand(z_setpoint=0.0, mode=CommandMode.FINAL_LAND, vz=0.0), s
        return _final_command(cfg), s

    if phase is Phase.SEARCH:
        if not tracking:
            if t - s.search_started > cfg.search_timeout:
                s = _move(s, Phase.ABORTED, t)
                return ControlCommand(z_setpoint=s.z_setpoint, mode=CommandMode.ABORT), s
            return ControlCommand(z_setpoint=s.z_setpoint, mode=CommandMode.HOLD), s
        s = _move(s, Phase.ALIGN, t, pid_x=PidState(), pid_y=PidState(), pid_yaw=PidState())
        phase = Phase.ALIGN
    elif not tracking:
        s = _move(s, Phase.SEARCH, t, search_started=t)
        return ControlCommand(z_setpoint=s.z_setpoint, mode=CommandMode.HOLD), s

    assert isinstance(est, FilterEstimate)
    ex, ey, etheta = planar_errors(est, frame)
    metres_per_px = max(pose.z, cfg.touchdown_z) / cfg.focal_px
    vx, pid_x = pid_step(cfg.xy_gains, ex * metres_per_px, dt, s.pid_x)
    vy, pid_y = pid_step(cfg.xy_gains, ey * metres_per_px, dt, s.pid_y)
    yaw_rate, pid_yaw = pid_step(cfg.yaw_gains, etheta, dt, s.pid_yaw)
    s = replace(s, pid_x=pid_x, pid_y=pid_y, pid_yaw=pid_yaw)

    w_hat, h_hat = max(float(est.state[3]), 0.0), max(float(est.state[4]), 0.0)
    z_err = altitude_error(w_hat, h_hat, cfg)
    centred = abs(ex) < cfg.align_tolerance_px and abs(ey) < cfg.align_tolerance_px
    heading_ok = abs(etheta) < cfg.theta_tolerance

    if centred and heading_ok and pose.z <= cfg.z_land_threshold:
        if s.final_land_entries:
            raise IllegalTransition("FINAL_LAND entered twice")
        s = _move(s, Phase.FINAL_LAND, t, final_land_entries=1, final_land_entry_z=pose.z)
        return _final_command(cfg), s

    # a clipped or occluded box no longer shows the site's shape, so |w - h|
    # only gates descent while the whole site is in view
    shape_ok = est.visible_fraction < 1.0 or z_err < cfg.ze_descend_max
    may_descend = centred and shape_ok and pose.z > cfg.z_land_threshold
    if phase is Phase.ALIGN and may_descend:
        s = _move(s, Phase.DESCEND, t)
        phase = Phase.DESCEND
    elif phase is Phase.DESCEND and not may_descend:
        s = _move(s, Phase.ALIGN, t)
        phase = Phase.ALIGN

    if phase is Phase.DESCEND:
        if pose.z - s.z_setpoint <= cfg.step_reached_tol:
            s = replace(s, z_setpoint=min(s.z_setpoint, descend_step(pose.z, cfg)))
        mode = CommandMode.DESCEND_STEP
    else:
        mode = CommandMode.ALIGN
    return ControlCommand(vx=vx, vy=vy, yaw_rate=yaw_rate, z_setpoint=s.z_setpoint, mode=mode), s


def _final_command(cfg: LandingConfig) -> ControlCommand:
    return ControlCommand(z_setpoint=0.0, mode=CommandMode.FINAL_LAND, vz=-cfg.final_descent_rate)


def abort(state: ControllerState) -> ControllerState:
    """Force ABORTED, e.g. when the detection source has gone away."""
    if state.phase.phase in (Phase.LANDED, Phase.ABORTED):
        return state
    return _move(state, Phase.ABORTED, state.clock)


def is_terminal(state: ControllerState) -> bool:
    return state.phase.phase in (Phase.LANDED, Phase.ABORTED)

