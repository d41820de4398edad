"""Solid-core boundaries in the unit cell and their offset curves.

A core boundary is sampled as a closed counterclockwise polyline. Growth by
an offset ``sigma`` moves every sample along the outward unit normal, which
is the characteristic solution of the front equation |grad S| = 1 written in
parametric form. For a centred circle of radius R the offset is the circle of
radius R + sigma.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import GeometryError, OffsetRangeError, ValidationError

DEFAULT_SAMPLES = 512
CLOG_BISECT_TOL = 1e-6


class ShapeSpec:
    """Base class of parametric core shapes.

    Subclasses provide ``_local(s)``, the curve relative to ``center``, and
    ``period``, the parameter range [0, period).
    """

    period = 2.0 * math.pi

    def validate(self):
        if len(self.center) != 2:
            raise ValidationError("center must be a 2D point")

    def evaluate(self, s):
        s = np.asarray(s, dtype=float)
        x, y = self._local(s)
        return np.column_stack([self.center[0] + x, self.center[1] + y])

    @property
    def base_radius(self) -> float:
        """Characteristic size; the long semi-axis for ellipses."""
        raise NotImplementedError


@dataclass(frozen=True)
class Circle(ShapeSpec):
    R_c: float
    center: tuple = (0.5, 0.5)

    def validate(self):
        super().validate()
        if not self.R_c > 0:
            raise ValidationError(f"circle radius must be positive, got {self.R_c}")

    def _local(self, s):
        return self.R_c * np.cos(s), self.R_c * np.sin(s)

    @property
    def base_radius(self):
        return self.R_c


@dataclass(frozen=True)
class Ellipse(ShapeSpec):
    """Ellipse (R_a cos s, R_b sin s) rotated by ``theta`` radians."""

    R_a: float
    R_b: float
    theta: float = 0.0
    center: tuple = (0.5, 0.5)

    def validate(self):
        super().validate()
        if not (self.R_b > 0 and self.R_a >= self.R_b):
            raise ValidationError(
                f"ellipse needs R_a >= R_b > 0, got R_a={self.R_a}, R_b={self.R_b}")

    def _local(self, s):
        x = self.R_a * np.cos(s)
        y = self.R_b * np.sin(s)
        c, sn = math.cos(self.theta), math.sin(self.theta)
        return c * x - sn * y, sn * x + c * y

    @property
    def base_radius(self):
        return self.R_a


@dataclass(frozen=True)
class Bean(ShapeSpec):
    """Non-convex bean r(s) = R_c (cos^3 s + sin^3 s) traced in polar form over [0, pi)."""

    R_c: float
    center: tuple = (0.5, 0.5)
    period = math.pi

    def validate(self):
        super().validate()
        if not self.R_c > 0:
            raise ValidationError(f"bean size must be positive, got {self.R_c}")

    def _local(self, s):
        r = self.R_c * (np.cos(s) ** 3 + np.sin(s) ** 3)
        return r * np.cos(s), r * np.sin(s)

    @property
    def base_radius(self):
        return self.R_c


@dataclass(frozen=True)
class Polyline(ShapeSpec):
    """Closed polygon, parametrised by normalised arc length."""

    points: tuple
    center: tuple = (0.5, 0.5)
    period = 1.0

    def validate(self):
        super().validate()
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValidationError("polyline needs at least 3 points")

    def _local(self, s):
        pts = np.asarray(self.points, dtype=float)
        closed = np.vstack([pts, pts[:1]])
        seg = np.hypot(*np.diff(closed, axis=0).T)
        arc = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
        x = np.interp(s, arc, closed[:, 0]) - self.center[0]
        y = np.interp(s, arc, closed[:, 1]) - self.center[1]
        return x, y

    @property
    def base_radius(self):
        pts = np.asarray(self.points, dtype=float)
        return float(np.max(np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1])))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class OffsetCurve:
    sigma: float
    samples: np.ndarray = field(repr=False)
    source: ShapeSpec | None = None

    @property
    def n(self):
        return len(self.samples)


@dataclass(frozen=True)
class GeomQuantities:
    gamma_len: float
    fluid_area: float
    solid_area: float
    specific_surface: float


def signed_area(points) -> float:
    p = np.asarray(points)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def perimeter(points) -> float:
    p = np.asarray(points)
    return float(np.sum(np.hypot(*(np.roll(p, -1, axis=0) - p).T)))


def outward_normals(points):
    """Unit outward normals of a counterclockwise polyline from centred tangents."""
    p = np.asarray(points)
    t = np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)
    norm = np.hypot(t[:, 0], t[:, 1])
    if np.any(norm == 0):
        raise GeometryError("repeated samples: tangent undefined")
    return np.column_stack([t[:, 1], -t[:, 0]]) / norm[:, None]


def discrete_curvature(points):
    """Signed curvature of the circle through each consecutive sample triple.

    Positive where a counterclockwise curve turns left (convex part).
    """
    p = np.asarray(points)
    a = p - np.roll(p, 1, axis=0)
    b = np.roll(p, -1, axis=0) - p
    c = np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    la = np.hypot(a[:, 0], a[:, 1])
    lb = np.hypot(b[:, 0], b[:, 1])
    lc = np.hypot(c[:, 0], c[:, 1])
    return 2.0 * cross / (la * lb * lc)


def is_convex(curve: OffsetCurve, tol=1e-9) -> bool:
    k = discrete_curvature(curve.samples)
    return bool(k.min() >= -tol * np.abs(k).max())


def _segments_cross(p1, p2, q1, q2):
    """Proper-or-touching intersection test, broadcast over arrays of segments."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - \
            (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    hit = (d1 * d2 <= 0) & (d3 * d4 <= 0)
    # collinear pairs only meet if their extents overlap
    collinear = (d1 == 0) & (d2 == 0)
    overlap = np.ones_like(hit)
    for k in (0, 1):
        lo = np.maximum(np.minimum(p1[..., k], p2[..., k]), np.minimum(q1[..., k], q2[..., k]))
        hi = np.minimum(np.maximum(p1[..., k], p2[..., k]), np.maximum(q1[..., k], q2[..., k]))
        overlap &= lo <= hi
    return hit & (~collinear | overlap)


def polyline_self_intersects(points, chunk=256) -> bool:
    p = np.asarray(points)
    n = len(p)
    a, b = p, np.roll(p, -1, axis=0)
    idx = np.arange(n)
    for start in range(0, n, chunk):
        i = idx[start:start + chunk, None]
        hit = _segments_cross(a[i], b[i], a[None, :], b[None, :])
        # adjacent segments share an endpoint by construction
        gap = np.abs(i - idx[None, :])
        hit &= (gap > 1) & (gap < n - 1)
        if hit.any():
            return True
    return False


def points_in_polygon(points, poly, chunk=4096):
    """Even-odd rule point-in-polygon, vectorised over points."""
    pts = np.asarray(points, dtype=float)
    poly = np.asarray(poly, dtype=float)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    inside = np.zeros(len(pts), dtype=bool)
    for start in range(0, len(pts), chunk):
        px = pts[start:start + chunk, 0:1]
        py = pts[start:start + chunk, 1:2]
        straddle = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        crossings = straddle & (px < xint)
        inside[start:start + chunk] = (np.count_nonzero(crossings, axis=1) % 2) == 1
    return inside


def cell_clearance(points) -> float:
    """Smallest distance from any sample to the four edges of the unit cell."""
    p = np.asarray(points)
    return float(np.min(np.minimum(np.minimum(p[:, 0], 1 - p[:, 0]),
                                   np.minimum(p[:, 1], 1 - p[:, 1]))))


def eval_initial_curve(shape: ShapeSpec, n_samples: int = DEFAULT_SAMPLES,
                       check_cell: bool = True) -> OffsetCurve:
    if n_samples < 16:
        raise ValidationError("n_samples must be at least 16")
    shape.validate()
    s = shape.period * np.arange(n_samples) / n_samples
    pts = shape.evaluate(s)
    if signed_area(pts) < 0:
        pts = pts[::-1].copy()
    if check_cell and cell_clearance(pts) <= 0:
        raise GeometryError(f"{shape!r} leaves the unit cell")
    if polyline_self_intersects(pts):
        raise GeometryError(f"{shape!r} is not a simple curve")
    return OffsetCurve(0.0, _frozen(pts), shape)


def smooth_offset_limit(curve: OffsetCurve) -> float:
    """Offset below which the curve stays free of swallowtails: 1 / max |curvature|."""
    return float(1.0 / np.max(np.abs(discrete_curvature(curve.samples))))


def _displace(curve, sigma):
    return curve.samples + sigma * outward_normals(curve.samples)


def offset_curve(base: OffsetCurve, sigma: float, *, epsilon: float = 0.0,
                 check_cell: bool = True, check_simple: bool = True) -> OffsetCurve:
    """Move every sample of ``base`` by ``sigma`` along the outward normal.

    Raises OffsetRangeError when the result comes closer than ``epsilon`` to
    the cell boundary or shrinks beyond the smooth limit, and GeometryError
    when the resulting polyline self-intersects.
    """
    sigma = float(sigma)
    if sigma == 0.0:
        return OffsetCurve(base.sigma, base.samples, base.source)
    if sigma < 0 and -sigma >= smooth_offset_limit(base):
        raise OffsetRangeError(f"shrinkage {sigma} exceeds the smooth offset limit")
    pts = _displace(base, sigma)
    if check_cell and cell_clearance(pts) < epsilon:
        raise OffsetRangeError(f"offset {sigma} brings the curve within {epsilon} of the cell boundary")
    if check_simple and polyline_self_intersects(pts):
        raise GeometryError(f"offset {sigma} produces a self-intersecting curve")
    return OffsetCurve(base.sigma + sigma, _frozen(pts), base.source)


def curves_overlap(p, q) -> bool:
    n, m = len(p), len(q)
    a, b = p, np.roll(p, -1, axis=0)
    c, d = q, np.roll(q, -1, axis=0)
    for start in range(0, n, 256):
        sl = slice(start, start + 256)
        if _segments_cross(a[sl, None], b[sl, None], c[None, :], d[None, :]).any():
            return True
    return bool(points_in_polygon(p[:1], q)[0] or points_in_polygon(q[:1], p)[0])


def geom_quantities(curves, check: bool = True) -> GeomQuantities:
    curves = list(curves)
    if check:
        for i in range(len(curves)):
            for j in range(i + 1, len(curves)):
                if curves_overlap(np.asarray(curves[i].samples), np.asarray(curves[j].samples)):
                    raise GeometryError(f"inclusions {i} and {j} overlap")
    gamma_len = sum(perimeter(c.samples) for c in curves)
    solid = sum(signed_area(c.samples) for c in curves)
    fluid = 1.0 - solid
    return GeomQuantities(float(gamma_len), float(fluid), float(solid), float(gamma_len) / fluid)


def max_admissible_offset(base: OffsetCurve, epsilon: float) -> tuple[float, float]:
    """Return (sigma_clog, sigma_smooth) for growth of ``base``.

    sigma_clog is the largest offset (to CLOG_BISECT_TOL) keeping every sample
    at least ``epsilon`` away from the cell edges.
    """
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    sigma_smooth = smooth_offset_limit(base)

    def clear(s):
        return cell_clearance(_displace(base, s))

    if clear(0.0) < epsilon:
        return 0.0, sigma_smooth
    lo, hi = 0.0, 1.0
    while hi - lo > CLOG_BISECT_TOL / 4:
        mid = 0.5 * (lo + hi)
        if clear(mid) >= epsilon:
            lo = mid
        else:
            hi = mid
    return lo, sigma_smooth


def growth_limit(base: OffsetCurve, epsilon: float) -> float:
    """Largest usable growth offset: sigma_clog, additionally capped by the
    smooth limit when the base curve has concave parts."""
    sigma_clog, sigma_smooth = max_admissible_offset(base, epsilon)
    if is_convex(base):
        return sigma_clog
    return min(sigma_clog, sigma_smooth)
