"""Deterministic closed-loop landing world.

A kinematic quadrotor (first-order velocity lag, Euler-integrated at the
camera rate) carries a downward pinhole camera over a flat ground plane with
one rectangular landing pad. The synthetic detector turns the projected pad
into noisy, possibly clipped or occluded bounding boxes.

World frame: x, y horizontal (m), yaw measured from +x towards +y, altitude z
above ground. The camera's u axis is the body x axis and its v axis the body
y axis (see :mod:`mavland.controller` for the matching command signs).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Protocol, Sequence

import numpy as np
from shapely.geometry import Polygon, box as shapely_box

from mavland import controller as ctl
from mavland import estimator as kf
from mavland.geometry import BoundingBox, ImageFrameSpec, ImagePoint, bbox_to_state, order_corners

if TYPE_CHECKING:
    from mavland.config import ScenarioConfig


class DetectorClosed(RuntimeError):
    """The detection source ended (e.g. an external detector exited)."""


@dataclass(frozen=True)
class VehiclePose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        if self.z < 0:
            raise ValueError(f"altitude must be >= 0, got {self.z}")


@dataclass(frozen=True)
class VehicleParams:
    """Autopilot abstraction: velocity lag and vertical speed limit."""

    tau: float = 0.3
    vertical_speed_limit: float = 0.25

    def __post_init__(self):
        if not (self.tau > 0 and self.vertical_speed_limit > 0):
            raise ValueError("vehicle tau and vertical_speed_limit must be > 0")


@dataclass(frozen=True)
class PadSpec:
    cx: float = 0.0
    cy: float = 0.0
    length: float = 1.0
    breadth: float = 1.0
    yaw: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.breadth > 0):
            raise ValueError("pad length and breadth must be > 0")

    def corners(self) -> list[tuple[float, float]]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = []
        for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            dx, dy = a * self.length / 2.0, b * self.breadth / 2.0
            out.append((self.cx + c * dx - s * dy, self.cy + s * dx + c * dy))
        return out


@dataclass(frozen=True)
class CameraModel:
    """Downward pinhole camera; optical axis along -z of the body."""

    width: int = 640
    height: int = 480
    rate: float = 20.0
    focal_px: float = 554.3

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValueError("focal_px must be > 0")
        self.frame  # validates size and rate

    @property
    def frame(self) -> ImageFrameSpec:
        return ImageFrameSpec(self.width, self.height, self.rate)


@dataclass(frozen=True)
class DetectorNoise:
    """Synthetic detector imperfections.

    ``occlusion_rect`` is a world-space (xmin, ymin, xmax, ymax) rectangle
    lying on the pad. ``latency_frames`` delays every detection by that many
    camera frames.
    """

    corner_sigma: float = 0.0
    dropout_prob: float = 0.0
    occlusion_rect: Optional[tuple[float, float, float, float]] = None
    seed: int = 0
    latency_frames: int = 0

    def __post_init__(self):
        if self.corner_sigma < 0:
            raise ValueError("corner_sigma must be >= 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must be in [0, 1]")
        if self.latency_frames not in (0, 1):
            raise ValueError("latency_frames must be 0 or 1")
        if self.occlusion_rect is not None:
            r = tuple(float(x) for x in self.occlusion_rect)
            if len(r) != 4 or not (r[0] < r[2] and r[1] < r[3]):
                raise ValueError("occlusion_rect must be (xmin, ymin, xmax, ymax) with min < max")
            object.__setattr__(self, "occlusion_rect", r)


def vehicle_step(
    pose: VehiclePose,
    cmd: ctl.ControlCommand,
    dt: float,
    tau: float = 0.3,
    vertical_speed_limit: float = 0.25,
) -> VehiclePose:
    """Advance the vehicle by one Euler step.

    Velocities follow ``v += dt/tau * (v_cmd - v)``; the body-frame planar
    command is rotated into the world by the current yaw. Altitude chases
    ``cmd.z_setpoint`` with a rate command ``(z_sp - z)/tau`` limited to
    ``vertical_speed_limit``. A command carrying ``vz`` (final landing) sets
    the vertical speed directly. Positions integrate the updated velocities.
    """
    if not (dt > 0 and tau > 0):
        raise ValueError("dt and tau must be positive")
    k = dt / tau
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    vx_cmd = c * cmd.vx - s * cmd.vy
    vy_cmd = s * cmd.vx + c * cmd.vy
    vx = pose.vx + k * (vx_cmd - pose.vx)
    vy = pose.vy + k * (vy_cmd - pose.vy)
    yaw_rate = pose.yaw_rate + k * (cmd.yaw_rate - pose.yaw_rate)

    if cmd.vz is not None:
        vz = cmd.vz
    else:
        vz_cmd = 0.0
        if cmd.z_setpoint is not None:
            vz_cmd = (cmd.z_setpoint - pose.z) / tau
            vz_cmd = max(-vertical_speed_limit, min(vertical_speed_limit, vz_cmd))
        vz = pose.vz + k * (vz_cmd - pose.vz)

    z = pose.z + vz * dt
    if z <= 0.0:
        z = 0.0
        vz = max(vz, 0.0)
    return VehiclePose(
        x=pose.x + vx * dt,
        y=pose.y + vy * dt,
        z=z,
        yaw=pose.yaw + yaw_rate * dt,
        vx=vx,
        vy=vy,
        vz=vz,
        yaw_rate=yaw_rate,
    )


def world_to_image(
    points: Sequence[tuple[float, float]], pose: VehiclePose, cam: CameraModel
) -> list[tuple[float, float]]:
    if not pose.z > 0:
        raise ValueError("projection undefined at zero altitude")
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    f_over_z = cam.focal_px / pose.z
    cu, cv = cam.width / 2.0, cam.height / 2.0
    out = []
    for px, py in points:
        dx, dy = px - pose.x, py - pose.y
        bx = c * dx + s * dy
        by = -s * dx + c * dy
        out.append((f_over_z * bx + cu, f_over_z * by + cv))
    return out


def _clip_to_rect(poly, width, height):
    """Sutherland-Hodgman clip of a convex polygon to [0, width] x [0, height]."""

    def clip(pts, inside, cross):
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(cross(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cross(prev, cur))
        return out

    def at_u(a, b, u):
        t = (u - a[0]) / (b[0] - a[0])
        return (u, a[1] + t * (b[1] - a[1]))

    def at_v(a, b, v):
        t = (v - a[1]) / (b[1] - a[1])
        return (a[0] + t * (b[0] - a[0]), v)

    pts = list(poly)
    for inside, cross in (
        (lambda p: p[0] >= 0.0, lambda a, b: at_u(a, b, 0.0)),
        (lambda p: p[0] <= width, lambda a, b: at_u(a, b, width)),
        (lambda p: p[1] >= 0.0, lambda a, b: at_v(a, b, 0.0)),
        (lambda p: p[1] <= height, lambda a, b: at_v(a, b, height)),
    ):
        if not pts:
            break
        pts = clip(pts, inside, cross)
    return pts


def _area(poly) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        acc += x0 * y1 - x1 * y0
    return abs(acc) / 2.0


def _oriented_bounds(region, corners: Sequence[ImagePoint]) -> list[tuple[float, float]]:
    """Smallest box with the pad's image orientation that covers ``region``."""
    tl, tr, bl, _ = corners
    e1 = np.array([tr.u - tl.u, tr.v - tl.v])
    e2 = np.array([bl.u - tl.u, bl.v - tl.v])
    e1 /= np.linalg.norm(e1)
    e2 /= np.linalg.norm(e2)
    origin = np.array([tl.u, tl.v])
    pts = []
    geoms = getattr(region, "geoms", [region])
    for g in geoms:
        pts.extend(g.exterior.coords)
    rel = np.asarray(pts) - origin
    a, b = rel @ e1, rel @ e2
    a0, a1, b0, b1 = a.min(), a.max(), b.min(), b.max()
    return [tuple(origin + ai * e1 + bi * e2) for ai, bi in ((a0, b0), (a1, b0), (a0, b1), (a1, b1))]


def project_pad(
    pose: VehiclePose,
    pad: PadSpec,
    cam: CameraModel,
    occluder: Optional[tuple[float, float, float, float]] = None,
    frame_id: int = 0,
) -> Optional[BoundingBox]:
    """Ground-truth bounding box of the pad as seen by the camera.

    Corners falling outside the image are clamped to its border and the
    visible fraction becomes (visible area) / (full pad area). A world-space
    ``occluder`` removes the covered area and pulls the affected corners in to
    the occlusion boundary. Returns None when nothing of the pad is visible.

    Raises:
        ValueError: at zero altitude.
    """
    img = world_to_image(pad.corners(), pose, cam)
    full_area = _area(img)
    W, H = float(cam.width), float(cam.height)
    corners = order_corners(img)
    inside = all(0.0 <= u <= W and 0.0 <= v <= H for u, v in img)

    occ_poly = None
    if occluder is not None:
        x0, y0, x1, y1 = occluder
        occ_img = world_to_image([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], pose, cam)
        occ_poly = Polygon(occ_img)
        if not occ_poly.intersects(Polygon(img)):
            occ_poly = None

    if occ_poly is None:
        if inside:
            visible = 1.0
        else:
            visible = _area(_clip_to_rect(img, W, H)) / full_area
    else:
        unoccluded = Polygon(img).difference(occ_poly)
        if unoccluded.is_empty or unoccluded.area <= 0.0:
            return None
        visible = unoccluded.intersection(shapely_box(0.0, 0.0, W, H)).area / full_area
        corners = order_corners(_oriented_bounds(unoccluded, corners))
        corners = (corners[0], corners[1], corners[2], corners[3])

    if visible <= 0.0:
        return None
    clamped = tuple(ImagePoint(min(max(p.u, 0.0), W), min(max(p.v, 0.0), H)) for p in corners)
    return BoundingBox(
        corners=clamped,
        confidence=1.0,
        frame_id=frame_id,
        visible_fraction=min(visible, 1.0),
    )


def detect(
    true_box: Optional[BoundingBox],
    noise: DetectorNoise,
    rng: np.random.Generator,
    frame: ImageFrameSpec = ImageFrameSpec(),
) -> Optional[BoundingBox]:
    """Synthetic detector: dropout, then iid Gaussian corner noise.

    Every call draws the same number of variates (one uniform, eight normals)
    whether or not the pad is visible, so the random stream stays aligned
    frame by frame.
    """
    u = rng.random()
    jitter = rng.standard_normal(8)
    if true_box is None or u < noise.dropout_prob:
        return None
    if noise.corner_sigma == 0.0:
        return true_box
    jitter = jitter * noise.corner_sigma
    W, H = float(frame.width), float(frame.height)
    corners = tuple(
        ImagePoint(
            min(max(p.u + jitter[2 * i], 0.0), W),
            min(max(p.v + jitter[2 * i + 1], 0.0), H),
        )
        for i, p in enumerate(true_box.corners)
    )
    return replace(true_box, corners=corners)


class DetectionSource(Protocol):
    def detect(self, frame_id: int, t: float, pose: VehiclePose) -> Optional[BoundingBox]: ...

    def close(self) -> None: ...


class SyntheticDetector:
    """Projects the pad and runs :func:`detect` with a seeded generator."""

    def __init__(self, scenario: "ScenarioConfig", seed: int):
        self.scenario = scenario
        self.rng = np.random.default_rng(seed)

    def detect(self, frame_id: int, t: float, pose: VehiclePose) -> Optional[BoundingBox]:
        sc = self.scenario
        truth = None
        if pose.z > 0:
            truth = project_pad(pose, sc.pad, sc.camera, sc.noise.occlusion_rect, frame_id)
        return detect(truth, sc.noise, self.rng, sc.camera.frame)

    def close(self) -> None:
        pass


@dataclass
class EpisodeResult:
    seed: int
    success: bool
    final_error_m: float
    landing_time_s: float
    mean_descent_speed_mps: float
    final_phase: ctl.Phase
    phase_trace: list[tuple[float, ctl.Phase]] = field(default_factory=list)
    trajectory: list[tuple] = field(default_factory=list)
    final_land_entries: int = 0
    final_land_entry_z: Optional[float] = None
    detector_failed: bool = False


TRAJECTORY_COLUMNS = (
    "t", "x", "y", "z", "yaw", "phase", "vx_cmd", "vy_cmd", "yaw_rate_cmd", "z_setpoint",
)


def run_episode(
    scenario: "ScenarioConfig",
    seed: Optional[int] = None,
    detector: Optional[DetectionSource] = None,
) -> EpisodeResult:
    """Run one closed-loop landing at the camera rate.

    Each tick: detect -> bbox_to_state -> filter step -> control_step ->
    vehicle_step. Ends on LANDED, ABORTED or ``scenario.max_time``.
    """
    seed = scenario.noise.seed if seed is None else seed
    if detector is None:
        detector = SyntheticDetector(scenario, seed)
    cam, fcfg = scenario.camera, scenario.filter
    lcfg = replace(scenario.landing, focal_px=cam.focal_px)
    frame = cam.frame
    dt = frame.period
    start = scenario.start_pose
    pose = VehiclePose(x=start.x, y=start.y, z=start.z, yaw=start.yaw)
    state = ctl.new_controller(pose.z)
    est: kf.FilterEstimate | kf.TrackLost | None = None
    delayed: deque = deque()
    trace = [(0.0, state.phase.phase)]
    rows = []
    failed = False

    n_ticks = int(math.floor(scenario.max_time * frame.rate + 1e-9))
    for k in range(n_ticks + 1):
        t = k * dt
        try:
            det = detector.detect(k + 1, t, pose)
        except DetectorClosed:
            failed = True
            state = ctl.abort(state)
            trace.append((t, state.phase.phase))
            break
        delayed.append(det)
        if len(delayed) > scenario.noise.latency_frames:
            det = delayed.popleft()
        else:
            det = None
        z = bbox_to_state(det) if det is not None else None

        if isinstance(est, kf.FilterEstimate):
            est = kf.step(est, z, dt, fcfg)
        elif z is not None and not z.degenerate:
            est = kf.init(z, fcfg, timestamp=t)
        else:
            est = None

        prev_phase = state.phase.phase
        cmd, state = ctl.control_step(state, est, pose, lcfg, frame, dt)
        if isinstance(est, kf.TrackLost):
            est = None
        if state.phase.phase is not prev_phase:
            trace.append((t, state.phase.phase))
        rows.append(
            (t, pose.x, pose.y, pose.z, pose.yaw, state.phase.phase.value,
             cmd.vx, cmd.vy, cmd.yaw_rate, cmd.z_setpoint)
        )
        if ctl.is_terminal(state):
            break
        pose = vehicle_step(pose, cmd, dt, scenario.vehicle.tau, scenario.vehicle.vertical_speed_limit)
    detector.close()

    success = state.phase.phase is ctl.Phase.LANDED
    if success:
        t_land = trace[-1][0]
        err = math.hypot(pose.x - scenario.pad.cx, pose.y - scenario.pad.cy)
        speed = (start.z - pose.z) / t_land if t_land > 0 else math.nan
    else:
        t_land = err = speed = math.nan
    return EpisodeResult(
        seed=seed,
        success=success,
        final_error_m=err,
        landing_time_s=t_land,
        mean_descent_speed_mps=speed,
        final_phase=state.phase.phase,
        phase_trace=trace,
        trajectory=rows,
        final_land_entries=state.final_land_entries,
        final_land_entry_z=state.final_land_entry_z,
        detector_failed=failed,
    )
