"""Closed-form distance and barrier functions for segments and ellipses.

Two shape primitives back every barrier in this package:

* line segments (walls), measured with a signed line distance combined
  with a trimming term so the result is zero exactly on the segment and
  positive everywhere else;
* ellipses (social zones), measured through the constant focal-sum
  property, which is cheap, smooth away from the foci, and never
  underestimates clearance along the major axis.

All functions broadcast over a trailing point axis: ``x`` may be a
single ``(2,)`` point or an ``(..., 2)`` stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Half-width of the |t| / norm smoothing used only inside gradient
# routines, meters. Values stay exact.
_GRAD_DELTA = 1e-9

__all__ = [
    "Segment",
    "Ellipse",
    "Barrier",
    "signed_line_distance",
    "trim",
    "segment_distance",
    "ellipse_distance",
    "shape_distance",
    "shape_distance_gradient",
    "barrier_value",
    "barrier_gradient",
    "wrap_angle",
]


def wrap_angle(angle):
    """Normalize an angle (or array of angles) to (-pi, pi]."""
    wrapped = -((-np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi)
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True, eq=False)
class Segment:
    """Line segment between two 2D endpoints, meters."""

    endpoint_a: np.ndarray
    endpoint_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.endpoint_a, dtype=float).reshape(2)
        b = np.asarray(self.endpoint_b, dtype=float).reshape(2)
        object.__setattr__(self, "endpoint_a", a)
        object.__setattr__(self, "endpoint_b", b)
        if not np.isfinite(a).all() or not np.isfinite(b).all():
            raise ValueError("segment endpoints must be finite")
        if self.length <= 0.0:
            raise ValueError("segment must have positive length")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.endpoint_b - self.endpoint_a))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.endpoint_a + self.endpoint_b)


@dataclass(frozen=True, eq=False)
class Ellipse:
    """Rotated ellipse: center, semi-axes a >= b > 0, rotation theta.

    theta is the world-frame angle of the major axis. a == b is allowed
    (the foci coincide and the distance function becomes exact).
    """

    center: np.ndarray
    a: float
    b: float
    theta: float = 0.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(2)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "theta", float(self.theta))
        if not (self.a >= self.b > 0.0):
            raise ValueError(f"ellipse needs a >= b > 0, got a={self.a}, b={self.b}")

    @property
    def focal_half_distance(self) -> float:
        return float(np.sqrt(max(self.a**2 - self.b**2, 0.0)))

    @property
    def focus_a(self) -> np.ndarray:
        c = self.focal_half_distance
        return self.center + c * np.array([np.cos(self.theta), np.sin(self.theta)])

    @property
    def focus_b(self) -> np.ndarray:
        c = self.focal_half_distance
        return self.center - c * np.array([np.cos(self.theta), np.sin(self.theta)])

    def boundary_points(self, n: int = 128) -> np.ndarray:
        """Sample n boundary points counterclockwise, shape (n, 2)."""
        phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        ct, st = np.cos(self.theta), np.sin(self.theta)
        x = self.a * np.cos(phi)
        y = self.b * np.sin(phi)
        return np.stack(
            [self.center[0] + ct * x - st * y, self.center[1] + st * x + ct * y],
            axis=-1,
        )

    def quadratic_residual(self, points) -> np.ndarray:
        """Residual of the rotated-ellipse equation, zero on the boundary."""
        p = np.asarray(points, dtype=float) - self.center
        ct, st = np.cos(self.theta), np.sin(self.theta)
        u = p[..., 0] * ct + p[..., 1] * st
        v = -p[..., 0] * st + p[..., 1] * ct
        return (u / self.a) ** 2 + (v / self.b) ** 2 - 1.0


@dataclass(frozen=True, eq=False)
class Barrier:
    """A keep-out shape plus robot clearance and safety margin, meters."""

    shape: Segment | Ellipse
    clearance: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "clearance", float(self.clearance))
        object.__setattr__(self, "margin", float(self.margin))
        if self.clearance < 0.0 or self.margin < 0.0:
            raise ValueError("clearance and margin must be nonnegative")


def _as_points(x):
    p = np.asarray(x, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError(f"expected trailing axis of size 2, got shape {p.shape}")
    return p, p.ndim == 1


def signed_line_distance(x, seg: Segment):
    """Signed distance from x to the infinite line through the segment.

    Positive on one side, negative on the other; swapping the endpoints
    flips the sign.
    """
    p, scalar = _as_points(x)
    xa, ya = seg.endpoint_a
    xb, yb = seg.endpoint_b
    g = ((p[..., 0] - xa) * (yb - ya) - (p[..., 1] - ya) * (xb - xa)) / seg.length
    return float(g) if scalar else g


def trim(x, seg: Segment):
    """Trimming term, positive inside the disk of radius L/2 at the midpoint."""
    p, scalar = _as_points(x)
    half = 0.5 * seg.length
    d2 = np.sum((p - seg.midpoint) ** 2, axis=-1)
    t = (half * half - d2) / seg.length
    return float(t) if scalar else t


def segment_distance(x, seg: Segment):
    """Approximate distance to the segment: zero on it, positive elsewhere.

    Exact (equal to the true point-segment distance) wherever the trim
    term is nonnegative; never smaller than the true distance anywhere.
    """
    p, scalar = _as_points(x)
    g = signed_line_distance(p, seg)
    t = trim(p, seg)
    q = 0.5 * (np.abs(t) - t)
    d = np.sqrt(np.asarray(g) ** 2 + np.asarray(q) ** 2)
    return float(d) if scalar else d


def _segment_distance_gradient(x, seg: Segment):
    p, scalar = _as_points(x)
    g = np.asarray(signed_line_distance(p, seg))
    t = np.asarray(trim(p, seg))
    dg = np.array([seg.endpoint_b[1] - seg.endpoint_a[1],
                   -(seg.endpoint_b[0] - seg.endpoint_a[0])]) / seg.length
    # |t| smoothed to sqrt(t^2 + delta^2) so the kink at t = 0 has a
    # continuous surrogate gradient; the value routine keeps exact |t|.
    t_s = np.sqrt(t * t + _GRAD_DELTA**2)
    q = 0.5 * (t_s - t)
    dq_dt = 0.5 * (t / t_s - 1.0)
    dt = -2.0 * (p - seg.midpoint) / seg.length
    d = np.sqrt(g * g + q * q)
    safe = np.maximum(d, 1e-30)
    grad = (g[..., None] * dg + (q * dq_dt)[..., None] * dt) / safe[..., None]
    grad = np.where(d[..., None] < 1e-12, 0.0, grad)
    return grad[0] if scalar and grad.ndim == 2 else grad


def ellipse_distance(x, ell: Ellipse):
    """Focal-sum distance: zero on the ellipse, negative inside, positive outside."""
    p, scalar = _as_points(x)
    ra = np.linalg.norm(p - ell.focus_a, axis=-1)
    rb = np.linalg.norm(p - ell.focus_b, axis=-1)
    d = 0.5 * (ra + rb) - ell.a
    return float(d) if scalar else d


def _ellipse_distance_gradient(x, ell: Ellipse):
    p, scalar = _as_points(x)
    va = p - ell.focus_a
    vb = p - ell.focus_b
    na = np.sqrt(np.sum(va * va, axis=-1) + _GRAD_DELTA**2)
    nb = np.sqrt(np.sum(vb * vb, axis=-1) + _GRAD_DELTA**2)
    grad = 0.5 * (va / na[..., None] + vb / nb[..., None])
    return grad[0] if scalar and grad.ndim == 2 else grad


def shape_distance(x, shape: Segment | Ellipse):
    if isinstance(shape, Segment):
        return segment_distance(x, shape)
    if isinstance(shape, Ellipse):
        return ellipse_distance(x, shape)
    raise TypeError(f"unsupported shape type {type(shape).__name__}")


def shape_distance_gradient(x, shape: Segment | Ellipse):
    if isinstance(shape, Segment):
        return _segment_distance_gradient(x, shape)
    if isinstance(shape, Ellipse):
        return _ellipse_distance_gradient(x, shape)
    raise TypeError(f"unsupported shape type {type(shape).__name__}")


def barrier_value(x, barrier: Barrier):
    """h(x) = d(x, shape) - clearance - margin; safe set is h >= 0."""
    d = shape_distance(x, barrier.shape)
    return d - barrier.clearance - barrier.margin


def barrier_gradient(x, barrier: Barrier):
    """Gradient of the barrier value with respect to the query point."""
    return shape_distance_gradient(x, barrier.shape)
