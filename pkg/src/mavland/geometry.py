"""Image-plane geometry and the bounding-box to site-state transform.

Corner convention used throughout the package (image axes: u right, v down)::

    0 ---- 1        0 = top-left,    1 = top-right
    |      |        2 = bottom-left, 3 = bottom-right
    2 ---- 3

Edges (0, 1) and (2, 3) are the two widths, edges (0, 2) and (1, 3) the two
heights. The site angle is the angle of the top edge 0 -> 1 against the image
horizontal, folded into [-pi/4, pi/4) because a box looks the same after a
quarter turn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

QUARTER = math.pi / 2.0
HALF_QUARTER = math.pi / 4.0

# Boxes narrower than this (px) along either axis carry no usable shape.
DEGENERATE_EPS = 1e-9


class ImagePoint(NamedTuple):
    """Pixel coordinate, u to the right and v downwards."""

    u: float
    v: float


@dataclass(frozen=True)
class ImageFrameSpec:
    """Camera image geometry: resolution (px) and frame rate (Hz)."""

    width: int = 640
    height: int = 480
    rate: float = 20.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not self.rate > 0:
            raise ValueError(f"frame rate must be positive, got {self.rate}")

    @property
    def centroid(self) -> ImagePoint:
        return ImagePoint(self.width / 2.0, self.height / 2.0)

    @property
    def period(self) -> float:
        return 1.0 / self.rate


@dataclass(frozen=True)
class BoundingBox:
    """Four ordered corners of a detected landing site.

    Attributes:
        corners: (top-left, top-right, bottom-left, bottom-right).
        confidence: detector score in [0, 1].
        frame_id: camera frame counter the detection belongs to.
        visible_fraction: share of the true site covered by the box, 1 when
            the site is fully in view and unoccluded.
    """

    corners: tuple[ImagePoint, ImagePoint, ImagePoint, ImagePoint]
    confidence: float = 1.0
    frame_id: int = 0
    visible_fraction: float = 1.0

    def __post_init__(self):
        if len(self.corners) != 4:
            raise ValueError(f"a bounding box needs 4 corners, got {len(self.corners)}")
        for p in self.corners:
            if not (math.isfinite(p[0]) and math.isfinite(p[1])):
                raise ValueError(f"non-finite corner {p!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not 0.0 <= self.visible_fraction <= 1.0:
            raise ValueError(f"visible_fraction {self.visible_fraction} outside [0, 1]")

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]], **kwargs) -> "BoundingBox":
        corners = tuple(ImagePoint(float(p[0]), float(p[1])) for p in points)
        return cls(corners=corners, **kwargs)  # type: ignore[arg-type]


@dataclass(frozen=True)
class SiteState:
    """Measurement fed to the estimator: centroid, angle, width, height.

    ``degenerate`` marks boxes that collapsed to a point or a line; the
    estimator treats those as missing measurements.
    """

    x_c: float
    y_c: float
    theta: float
    w: float
    h: float
    frame_id: int = 0
    visible_fraction: float = 1.0
    degenerate: bool = False

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x_c, self.y_c, self.theta, self.w, self.h)


def euclidean(p1: Sequence[float], p2: Sequence[float]) -> float:
    return math.hypot(p1[0] - p2[0], p1[1] - p2[1])


def wrap_quarter(angle: float) -> float:
    """Fold an angle into [-pi/4, pi/4) modulo a quarter turn."""
    r = angle - QUARTER * math.floor((angle + HALF_QUARTER) / QUARTER)
    # floor() can land one ulp on the wrong side of the boundary
    if r >= HALF_QUARTER:
        r -= QUARTER
    elif r < -HALF_QUARTER:
        r += QUARTER
    return r


def angle_diff(a: float, b: float) -> float:
    """Shortest signed difference a - b under quarter-turn symmetry."""
    return wrap_quarter(a - b)


def bbox_to_state(box: BoundingBox) -> SiteState:
    """Transform box corners into (x_c, y_c, theta, w, h).

    The centroid is the mean of the four corners, theta is the wrapped angle
    of the top edge, and width/height average the two parallel edges.
    """
    b0, b1, b2, b3 = box.corners
    x_c = (b0.u + b1.u + b2.u + b3.u) / 4.0
    y_c = (b0.v + b1.v + b2.v + b3.v) / 4.0
    w = (euclidean(b0, b1) + euclidean(b2, b3)) / 2.0
    h = (euclidean(b0, b2) + euclidean(b1, b3)) / 2.0
    degenerate = w <= DEGENERATE_EPS or h <= DEGENERATE_EPS
    if w <= DEGENERATE_EPS and h <= DEGENERATE_EPS:
        theta = 0.0
    else:
        theta = wrap_quarter(math.atan2(b1.v - b0.v, b1.u - b0.u))
    return SiteState(
        x_c=x_c,
        y_c=y_c,
        theta=theta,
        w=w,
        h=h,
        frame_id=box.frame_id,
        visible_fraction=box.visible_fraction,
        degenerate=degenerate,
    )


def order_corners(points: Sequence[Sequence[float]]) -> tuple[ImagePoint, ...]:
    """Label the vertices of a convex quadrilateral as (TL, TR, BL, BR).

    Vertices are walked clockwise on screen starting from the one whose
    outgoing edge is closest to the +u direction, so the top edge is always
    the most horizontal one and points rightwards.
    """
    if len(points) != 4:
        raise ValueError(f"expected 4 points, got {len(points)}")
    cu = sum(p[0] for p in points) / 4.0
    cv = sum(p[1] for p in points) / 4.0
    ring = sorted(points, key=lambda p: math.atan2(p[1] - cv, p[0] - cu))

    def edge_key(k: int) -> tuple[float, bool]:
        a = math.atan2(ring[(k + 1) % 4][1] - ring[k][1], ring[(k + 1) % 4][0] - ring[k][0])
        # on a 45 degree tie prefer the edge at -pi/4, matching wrap_quarter
        return abs(a), a > 0

    best = min(range(4), key=edge_key)
    tl, tr, br, bl = (ring[(best + i) % 4] for i in range(4))
    return tuple(ImagePoint(float(p[0]), float(p[1])) for p in (tl, tr, bl, br))
