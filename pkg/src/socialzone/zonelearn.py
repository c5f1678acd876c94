"""Learn speed-parameterized minimum social zones from encounter records.

Pipeline: embed (LOS angle, distance) records as complementary-distance
Cartesian points with speed on the third axis, strip a small fraction of
outliers by Local Outlier Factor, wrap the remainder in a 3D convex
hull, slice the hull at requested speeds, and fit each slice with the
minimum-area enclosing ellipse. The complementary embedding turns the
closest-approach boundary into the outer boundary of the point cloud,
which is what a hull can capture.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull as _SciHull
from scipy.spatial import cKDTree
from scipy.spatial import QhullError

from .geometry import Ellipse, wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_R_MAX = 2.0  # meters; distances beyond carry no boundary information
DEFAULT_LOF_K = 20
DEFAULT_OUTLIER_FRACTION = 0.002
DEFAULT_SPEED_GRID = tuple(round(0.4 + 0.2 * i, 1) for i in range(7))  # 0.4 .. 1.6

ZONE_MODEL_SCHEMA = "socialzone.zone-model/1"

__all__ = [
    "DegeneracyError",
    "EmptySliceError",
    "SocialZone",
    "ZoneModel",
    "ConvexHull3",
    "to_complement",
    "lof_scores",
    "remove_outliers",
    "convex_hull_3d",
    "slice_at_speed",
    "min_enclosing_ellipse",
    "build_zone_model",
]


class DegeneracyError(ValueError):
    """Input too flat/collinear for the requested geometric construction."""


class EmptySliceError(ValueError):
    """Slicing plane does not intersect the hull interior."""


@dataclass(frozen=True, eq=False)
class SocialZone:
    """Minimum social zone ellipse in the pedestrian body frame.

    Body frame: x forward along the heading, y to the left. center is
    the ellipse center offset from the pedestrian, a/b the semi-axes,
    theta the major-axis rotation relative to the heading.
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
            raise ValueError(f"zone needs a >= b > 0, got a={self.a}, b={self.b}")

    def as_ellipse(self) -> Ellipse:
        return Ellipse(self.center.copy(), self.a, self.b, self.theta)

    def to_dict(self, speed: float) -> dict:
        return {
            "speed_m_s": speed,
            "center": [self.center[0], self.center[1]],
            "a": self.a,
            "b": self.b,
            "theta_rad": self.theta,
        }


@dataclass(frozen=True, eq=False)
class ZoneModel:
    """Ascending speeds paired with the zone fitted at each speed."""

    speeds: np.ndarray
    zones: tuple[SocialZone, ...]
    provenance: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        speeds = np.asarray(self.speeds, dtype=float).reshape(-1)
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "zones", tuple(self.zones))
        if len(speeds) != len(self.zones):
            raise ValueError("speeds and zones must have the same length")
        if len(speeds) > 1 and not np.all(np.diff(speeds) > 0):
            raise ValueError("speeds must be strictly ascending")

    def __len__(self) -> int:
        return len(self.zones)

    def lookup(self, speed: float) -> tuple[float, SocialZone, bool]:
        """Zone for a query speed: round up to the next modeled speed.

        Queries above the modeled range clamp to the fastest zone and
        set the clamped flag. Interpolation is deliberately avoided; the
        rounded-up zone contains what an interpolant would promise.
        """
        if len(self.zones) == 0:
            raise ValueError("zone model is empty")
        idx = int(np.searchsorted(self.speeds, float(speed) - 1e-9, side="left"))
        clamped = idx >= len(self.zones)
        if clamped:
            idx = len(self.zones) - 1
            logger.warning(
                "query speed %.3f m/s above modeled range (max %.3f); clamping",
                speed, self.speeds[-1],
            )
        return float(self.speeds[idx]), self.zones[idx], clamped

    def save(self, path) -> None:
        payload = {
            "schema": ZONE_MODEL_SCHEMA,
            "zones": [z.to_dict(s) for s, z in zip(self.speeds, self.zones)],
            "provenance": self.provenance,
            "warnings": list(self.warnings),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ZoneModel":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if not isinstance(payload, dict) or payload.get("schema") != ZONE_MODEL_SCHEMA:
            raise ValueError(f"{path}: not a {ZONE_MODEL_SCHEMA} file")
        entries = sorted(payload.get("zones", []), key=lambda e: e["speed_m_s"])
        try:
            speeds = [float(e["speed_m_s"]) for e in entries]
            zones = [
                SocialZone(np.asarray(e["center"], float), e["a"], e["b"], e["theta_rad"])
                for e in entries
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: malformed zone entry ({exc})") from exc
        return cls(
            np.asarray(speeds),
            tuple(zones),
            provenance=payload.get("provenance", {}),
            warnings=tuple(payload.get("warnings", [])),
        )


def to_complement(records, r_max: float = DEFAULT_R_MAX) -> np.ndarray:
    """Map (los_angle, distance, ref_speed) records to (x', y', speed).

    The complementary radius is r_max - distance (distance clamped to
    [0, r_max] first), embedded as Cartesian coordinates along the LOS
    angle. Rows: x', y', speed. Accepts an (n, 3) array or a sequence of
    record objects with los_angle/distance/ref_speed attributes.
    """
    arr = _records_as_array(records)
    if arr.shape[0] == 0:
        return np.empty((0, 3))
    los, dist, speed = arr[:, 0], arr[:, 1], arr[:, 2]
    r_prime = r_max - np.clip(dist, 0.0, r_max)
    return np.stack([r_prime * np.cos(los), r_prime * np.sin(los), speed], axis=1)


def _records_as_array(records) -> np.ndarray:
    if isinstance(records, np.ndarray):
        arr = np.asarray(records, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"record array must be (n, 3), got {arr.shape}")
        return arr
    rows = [(r.los_angle, r.distance, r.ref_speed) for r in records]
    return np.asarray(rows, dtype=float).reshape(-1, 3)


# --------------------------------------------------------------------------
# Local Outlier Factor


def lof_scores(points, k: int = DEFAULT_LOF_K) -> np.ndarray:
    """Classic LOF scores (mean neighbor-to-own reachability density ratio).

    k-distance neighborhoods include every point tied at the k-distance.
    Points inside a duplicate cluster larger than k score exactly 1 by
    convention. Scores are deterministic for a given input order.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be a 2D array")
    n = pts.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    if n <= 4096:
        neigh, dists, kdist = _neighborhoods_dense(pts, k)
    else:
        neigh, dists, kdist = _neighborhoods_tree(pts, k)
    return _lof_from_neighborhoods(neigh, dists, kdist)


def _pair_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # One shared distance formula keeps the dense and tree paths (and the
    # brute-force test oracle) bit-comparable.
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def _neighborhoods_dense(pts: np.ndarray, k: int):
    n = pts.shape[0]
    d = _pair_dist(pts[:, None, :], pts[None, :, :])
    np.fill_diagonal(d, np.inf)
    kdist = np.sort(d, axis=1)[:, k - 1]
    neigh, dists = [], []
    for i in range(n):
        mask = d[i] <= kdist[i]
        idx = np.nonzero(mask)[0]
        neigh.append(idx)
        dists.append(d[i, idx])
    return neigh, dists, kdist


def _neighborhoods_tree(pts: np.ndarray, k: int):
    # The tree only shortlists candidates; distances are recomputed with
    # the shared formula so both paths agree to the last few ulps.
    n = pts.shape[0]
    tree = cKDTree(pts)
    m = min(n, k + 16)
    _, cand = tree.query(pts, k=m)
    kdist = np.empty(n)
    neigh, dists = [], []
    for i in range(n):
        idx = cand[i][cand[i] != i]
        dd = _pair_dist(pts[idx], pts[i])
        order = np.argsort(dd, kind="stable")
        kd = dd[order[k - 1]]
        # Candidate list may truncate ties at radius kd; a ball query with
        # a slightly inflated radius recovers every tied neighbor.
        if dd[order[-1]] <= kd * (1 + 1e-12) + 1e-300:
            ball = np.asarray(tree.query_ball_point(pts[i], kd * (1 + 1e-9) + 1e-12))
            idx = ball[ball != i]
            dd = _pair_dist(pts[idx], pts[i])
            kd = np.sort(dd)[k - 1]
        keep = dd <= kd
        neigh.append(idx[keep])
        dists.append(dd[keep])
        kdist[i] = kd
    return neigh, dists, kdist


def _lof_from_neighborhoods(neigh, dists, kdist) -> np.ndarray:
    n = len(neigh)
    lrd = np.empty(n)
    with np.errstate(divide="ignore"):
        for i in range(n):
            reach = np.maximum(kdist[neigh[i]], dists[i])
            mean_reach = reach.sum() / reach.size
            lrd[i] = np.inf if mean_reach == 0.0 else 1.0 / mean_reach
    scores = np.empty(n)
    for i in range(n):
        num = lrd[neigh[i]].sum() / len(neigh[i])
        if np.isinf(num) and np.isinf(lrd[i]):
            scores[i] = 1.0  # duplicate cluster convention
        else:
            scores[i] = num / lrd[i]
    return scores


def remove_outliers(points, fraction: float = DEFAULT_OUTLIER_FRACTION,
                    k: int = DEFAULT_LOF_K):
    """Split points into (inliers, outliers) by top LOF scores.

    ceil(fraction * n) points with the highest scores become outliers;
    exact score ties resolve by input order. Returns copies, not views.
    """
    pts = np.asarray(points, dtype=float)
    if not (0.0 <= fraction < 1.0):
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    n = pts.shape[0]
    if n == 0:
        return pts.copy(), pts.copy()
    n_out = math.ceil(fraction * n)
    if n_out == 0:
        return pts.copy(), pts[:0].copy()
    scores = lof_scores(pts, k=k)
    order = np.argsort(-scores, kind="stable")
    out_idx = np.sort(order[:n_out])
    in_idx = np.sort(order[n_out:])
    return pts[in_idx].copy(), pts[out_idx].copy()


# --------------------------------------------------------------------------
# Convex hull and slicing


@dataclass(frozen=True, eq=False)
class ConvexHull3:
    """Triangulated 3D convex hull: vertices plus outward-oriented faces."""

    vertices: np.ndarray  # (v, 3)
    faces: np.ndarray     # (f, 3) indices into vertices, CCW seen from outside

    @property
    def edge_count(self) -> int:
        e = np.vstack([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return len({(min(a, b), max(a, b)) for a, b in e})

    def face_planes(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals and offsets: n . x <= off inside."""
        p0 = self.vertices[self.faces[:, 0]]
        p1 = self.vertices[self.faces[:, 1]]
        p2 = self.vertices[self.faces[:, 2]]
        nrm = np.cross(p1 - p0, p2 - p0)
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        return nrm, np.sum(nrm * p0, axis=1)

    def max_signed_distance(self, points) -> float:
        """Largest signed distance of any point to any face plane (<= 0 means inside)."""
        nrm, off = self.face_planes()
        d = np.asarray(points, float) @ nrm.T - off
        return float(d.max())


def convex_hull_3d(points) -> ConvexHull3:
    """Convex hull of >= 4 non-coplanar 3D points, faces oriented outward."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (n, 3)")
    if pts.shape[0] < 4:
        raise DegeneracyError("need at least 4 points for a 3D hull")
    try:
        hull = _SciHull(pts)
    except QhullError as exc:
        raise DegeneracyError(f"degenerate input for 3D hull: {exc}") from exc
    vert_idx = hull.vertices
    remap = np.full(pts.shape[0], -1, dtype=int)
    remap[vert_idx] = np.arange(len(vert_idx))
    faces = remap[hull.simplices]
    # qhull's simplex winding is arbitrary; flip triangles whose cross
    # product disagrees with the outward facet normal.
    vertices = pts[vert_idx]
    p0, p1, p2 = (vertices[faces[:, i]] for i in range(3))
    tri_norm = np.cross(p1 - p0, p2 - p0)
    flip = np.sum(tri_norm * hull.equations[:, :3], axis=1) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return ConvexHull3(vertices=vertices, faces=faces)


def slice_at_speed(hull: ConvexHull3, speed: float) -> np.ndarray:
    """Cross-section polygon of the hull at plane z = speed, CCW (p, 2).

    The plane must lie strictly between the hull's z extremes.
    """
    z = hull.vertices[:, 2]
    z_min, z_max = float(z.min()), float(z.max())
    if not (z_min < speed < z_max):
        raise EmptySliceError(
            f"slice z={speed} outside hull z-range ({z_min}, {z_max})"
        )
    tol = 1e-12 * max(z_max - z_min, 1.0)
    pts = [hull.vertices[np.abs(z - speed) <= tol][:, :2]]
    edges = np.vstack([hull.faces[:, [0, 1]], hull.faces[:, [1, 2]], hull.faces[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    za, zb = z[edges[:, 0]] - speed, z[edges[:, 1]] - speed
    crossing = (za * zb < 0) & (np.abs(za) > tol) & (np.abs(zb) > tol)
    if crossing.any():
        ea, eb = edges[crossing, 0], edges[crossing, 1]
        w = za[crossing] / (za[crossing] - zb[crossing])
        pts.append(
            hull.vertices[ea, :2] + w[:, None] * (hull.vertices[eb, :2] - hull.vertices[ea, :2])
        )
    section = np.vstack(pts)
    if section.shape[0] < 3:
        raise DegeneracyError(f"slice at z={speed} is degenerate")
    try:
        poly = _SciHull(section)
    except QhullError as exc:
        raise DegeneracyError(f"slice at z={speed} is degenerate: {exc}") from exc
    return section[poly.vertices]  # scipy orders 2D hull vertices CCW


# --------------------------------------------------------------------------
# Minimum enclosing ellipse


def _khachiyan_core(pts: np.ndarray, tol: float, max_iter: int):
    """Dual ascent with Wolfe-Atwood drop steps; returns (matrix, center)
    of the near-optimal ellipse {x : (x-c)' A (x-c) <= 1} (unscaled).

    Stops early when the duality gap stalls at its floating-point floor
    (near-circular supports plateau around 1e-8, far below the area
    accuracy this fit needs).
    """
    n, d = pts.shape
    q = np.column_stack([pts, np.ones(n)])
    u = np.full(n, 1.0 / n)
    dp1 = d + 1
    best_eps = np.inf
    prev_best = np.inf
    check_every = 512
    for it in range(max_iter):
        x = q.T @ (q * u[:, None])
        try:
            inv_x = np.linalg.inv(x)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError("collinear input for enclosing ellipse") from exc
        m = np.einsum("ij,jk,ik->i", q, inv_x, q)
        j_add = int(np.argmax(m))
        eps_add = m[j_add] / dp1 - 1.0
        support = u > 1e-14
        m_sup = np.where(support, m, np.inf)
        j_drop = int(np.argmin(m_sup))
        eps_drop = 1.0 - m[j_drop] / dp1
        eps = max(eps_add, eps_drop)
        best_eps = min(best_eps, eps)
        if eps <= tol:
            break
        if it > 0 and it % check_every == 0:
            if best_eps > 0.7 * prev_best:
                break  # gap stalled
            prev_best = best_eps
        if eps_add >= eps_drop:
            j = j_add
            kappa = (m[j] - dp1) / (dp1 * (m[j] - 1.0))
        else:
            j = j_drop
            kappa = max(
                (m[j] - dp1) / (dp1 * (m[j] - 1.0)),
                -u[j] / (1.0 - u[j]),
            )
        u *= 1.0 - kappa
        u[j] += kappa
        np.clip(u, 0.0, None, out=u)
        u /= u.sum()
    center = u @ pts
    shape = (pts.T @ (pts * u[:, None]) - np.outer(center, center)) * d
    try:
        a_mat = np.linalg.inv(shape)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("collinear input for enclosing ellipse") from exc
    return a_mat, center


def min_enclosing_ellipse(points, tol: float = 1e-9,
                          max_iter: int = 100_000) -> SocialZone:
    """Minimum-area enclosing ellipse of >= 3 non-collinear 2D points.

    Khachiyan's dual-ascent iteration with Wolfe-Atwood drop steps. For
    large inputs an active-set outer loop fits a small working set of
    directional extremes and grows it by the worst violator, which is
    exact at termination. A final rescale puts the farthest input point
    exactly on the boundary. Deterministic for a given input order.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (n, 2)")
    n = pts.shape[0]
    if n < 3:
        raise DegeneracyError("need at least 3 points for an enclosing ellipse")

    work_cap = 256
    if n <= work_cap:
        a_mat, center = _khachiyan_core(pts, tol, max_iter)
    else:
        angles = np.linspace(0.0, np.pi, 64, endpoint=False)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        proj = pts @ dirs.T
        idx = set(np.argmax(proj, axis=0)) | set(np.argmin(proj, axis=0))
        work = sorted(idx)
        a_mat = center = None
        for _ in range(200):
            try:
                a_mat, center = _khachiyan_core(pts[work], tol, max_iter)
            except DegeneracyError:
                extra = np.argsort(np.linalg.norm(pts - pts.mean(axis=0), axis=1))[-8:]
                merged = sorted(set(work) | set(int(i) for i in extra))
                if merged == work:
                    raise
                work = merged
                continue
            delta = pts - center
            vals = np.einsum("ij,jk,ik->i", delta, a_mat, delta)
            j = int(np.argmax(vals))
            if vals[j] <= 1.0 + 1e-10 or j in work:
                break
            work = sorted(set(work) | {j})
        if a_mat is None:
            raise DegeneracyError("enclosing ellipse did not converge")

    # Rescale so the farthest point sits exactly on the boundary; near
    # convergence this changes the area by O(tol).
    delta = pts - center
    radius2 = np.einsum("ij,jk,ik->i", delta, a_mat, delta).max()
    if radius2 <= 0.0:
        raise DegeneracyError("degenerate point configuration")
    a_mat = a_mat / radius2
    evals, evecs = np.linalg.eigh(a_mat)
    if evals[0] <= 0.0:
        raise DegeneracyError("collinear input for enclosing ellipse")
    semi = 1.0 / np.sqrt(evals)  # descending: semi[0] is the major axis
    major_dir = evecs[:, 0]
    theta = wrap_angle(math.atan2(major_dir[1], major_dir[0]))
    if theta <= -np.pi / 2:
        theta += np.pi
    elif theta > np.pi / 2:
        theta -= np.pi
    return SocialZone(center=center, a=float(semi[0]), b=float(semi[1]), theta=float(theta))


# --------------------------------------------------------------------------
# End-to-end model construction


def build_zone_model(
    records,
    speeds=DEFAULT_SPEED_GRID,
    k: int = DEFAULT_LOF_K,
    fraction: float = DEFAULT_OUTLIER_FRACTION,
    r_max: float = DEFAULT_R_MAX,
    boundary_samples: int = 256,
) -> ZoneModel:
    """Fit one social zone per requested speed from encounter records.

    Speeds whose slice fails (not enough data, degenerate section) are
    skipped with a warning instead of aborting the whole model. The
    complementary-space ellipse is converted back to body-frame meters
    by mapping sampled boundary points through r = r_max - r' and
    re-fitting, because the complement map does not preserve ellipses.
    """
    arr = _records_as_array(records)
    warnings: list[str] = []
    provenance = {
        "record_count": int(arr.shape[0]),
        "lof_k": int(k),
        "outlier_fraction": float(fraction),
        "r_max": float(r_max),
    }

    def _empty(reason: str) -> ZoneModel:
        warnings.append(reason)
        logger.warning("%s", reason)
        provenance["inlier_count"] = 0
        return ZoneModel(np.empty(0), (), provenance=provenance, warnings=tuple(warnings))

    if arr.shape[0] == 0:
        return _empty("no records; zone model is empty")

    cloud = to_complement(arr, r_max=r_max)
    k_eff = k
    if cloud.shape[0] <= k_eff:
        k_eff = cloud.shape[0] - 1
        if k_eff >= 1:
            msg = f"only {cloud.shape[0]} records; reducing LOF k to {k_eff}"
            warnings.append(msg)
            logger.warning("%s", msg)
    if k_eff >= 1 and fraction > 0.0:
        inliers, _ = remove_outliers(cloud, fraction=fraction, k=k_eff)
    else:
        inliers = cloud
    provenance["inlier_count"] = int(inliers.shape[0])

    try:
        hull = convex_hull_3d(inliers)
    except (DegeneracyError, ValueError) as exc:
        return _empty(f"cannot build hull: {exc}")

    fitted_speeds: list[float] = []
    fitted_zones: list[SocialZone] = []
    for speed in speeds:
        try:
            polygon = slice_at_speed(hull, float(speed))
            comp_zone = min_enclosing_ellipse(polygon)
            body = _complement_ellipse_to_body(comp_zone, r_max, boundary_samples)
            zone = min_enclosing_ellipse(body)
        except (DegeneracyError, EmptySliceError) as exc:
            msg = f"speed {speed} m/s skipped: {exc}"
            warnings.append(msg)
            logger.warning("%s", msg)
            continue
        fitted_speeds.append(float(speed))
        fitted_zones.append(zone)
    provenance["speeds_requested"] = [float(s) for s in speeds]
    provenance["speeds_fitted"] = fitted_speeds
    return ZoneModel(
        np.asarray(fitted_speeds),
        tuple(fitted_zones),
        provenance=provenance,
        warnings=tuple(warnings),
    )


def _complement_ellipse_to_body(comp_zone: SocialZone, r_max: float,
                                boundary_samples: int) -> np.ndarray:
    """Map complementary-space ellipse boundary to body-frame points.

    A boundary point at complementary radius r' and bearing phi sits at
    true distance r_max - r' along the same bearing (clamped at the
    pedestrian position for r' beyond r_max).
    """
    boundary = comp_zone.as_ellipse().boundary_points(boundary_samples)
    r_prime = np.linalg.norm(boundary, axis=1)
    phi = np.arctan2(boundary[:, 1], boundary[:, 0])
    r = np.maximum(r_max - r_prime, 0.0)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
