"""Darning regions: closed compact sets that lattice edges must avoid.

A region supports three exact predicates (point membership, closed
segment intersection, Euclidean distance) plus an axis-aligned bounding
box.  All predicates treat the region as a closed set: boundary points
are inside and boundary-touching segments intersect.

Scalar predicates are the reference semantics.  Shapes with closed-form
tests (ball, box, halfspace polytope) also provide vectorised batch
variants used by the lattice builder; the batch code must agree with the
scalar code bit for bit, which ``tests/test_geometry.py`` enforces.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

# Absolute floating-point slack for boundary classification.  Comparisons
# that decide "touching" are padded by this amount; coordinates at desk
# scale are O(10), so the pad is far below one ulp of any geometry we
# build while still absorbing rounding in derived quantities.
GEOM_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid region construction or query."""


@dataclass(frozen=True)
class Extent:
    """Half-width of the smallest origin-centred box holding K and x0."""

    k0: int


def _as_point(p, dim: int) -> np.ndarray:
    q = np.asarray(p, dtype=float)
    if q.shape != (dim,):
        raise GeometryError(f"expected a point of dimension {dim}, got shape {q.shape}")
    return q


def _as_points(pts, dim: int) -> np.ndarray:
    q = np.atleast_2d(np.asarray(pts, dtype=float))
    if q.shape[1] != dim:
        raise GeometryError(f"expected points of dimension {dim}, got shape {q.shape}")
    return q


class DarningRegion:
    """Base class; subclasses fill in the scalar predicates."""

    dim: int

    # -- scalar reference API -------------------------------------------------
    def contains(self, p) -> bool:
        raise NotImplementedError

    def segment_intersects(self, p, q) -> bool:
        raise NotImplementedError

    def distance(self, p) -> float:
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    # -- batch API; default is the scalar loop --------------------------------
    def contains_many(self, pts) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        return np.fromiter((self.contains(p) for p in pts), dtype=bool, count=len(pts))

    def segments_intersect_many(self, P, Q) -> np.ndarray:
        P = _as_points(P, self.dim)
        Q = _as_points(Q, self.dim)
        if P.shape != Q.shape:
            raise GeometryError("segment endpoint arrays must have the same shape")
        return np.fromiter(
            (self.segment_intersects(p, q) for p, q in zip(P, Q)),
            dtype=bool,
            count=len(P),
        )

    def distance_many(self, pts) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        return np.fromiter((self.distance(p) for p in pts), dtype=float, count=len(pts))

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(DarningRegion):
    """Closed Euclidean ball."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        if len(c) < 2:
            raise GeometryError("regions live in dimension >= 2")
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, p) -> bool:
        # scalar goes through the batch kernel so both stay bitwise equal
        return bool(self.contains_many(_as_point(p, self.dim)[None, :])[0])

    def contains_many(self, pts) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        d2 = ((pts - np.asarray(self.center)) ** 2).sum(axis=1)
        return d2 <= (self.radius + GEOM_TOL) ** 2

    def _seg_dist2(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        w = Q - P
        pc = c - P
        ww = (w * w).sum(axis=1)
        t = np.zeros(len(P))
        nz = ww > 0
        t[nz] = np.clip((pc[nz] * w[nz]).sum(axis=1) / ww[nz], 0.0, 1.0)
        m = P + t[:, None] * w
        return ((m - c) ** 2).sum(axis=1)

    def segment_intersects(self, p, q) -> bool:
        return bool(self.segments_intersect_many([p], [q])[0])

    def segments_intersect_many(self, P, Q) -> np.ndarray:
        P = _as_points(P, self.dim)
        Q = _as_points(Q, self.dim)
        return self._seg_dist2(P, Q) <= (self.radius + GEOM_TOL) ** 2

    def distance(self, p) -> float:
        return float(self.distance_many(_as_point(p, self.dim)[None, :])[0])

    def distance_many(self, pts) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        d = np.linalg.norm(pts - np.asarray(self.center), axis=1) - self.radius
        return np.maximum(d, 0.0)

    def bounding_box(self):
        c = np.asarray(self.center)
        r = self.radius
        return c - r, c + r

    def to_config(self) -> dict:
        return {"shape": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class AxisBox(DarningRegion):
    """Closed axis-aligned box [lo, hi]."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi):
            raise GeometryError("box corners must share a dimension")
        if len(lo) < 2:
            raise GeometryError("regions live in dimension >= 2")
        if not all(a < b for a, b in zip(lo, hi)):
            raise GeometryError("box must satisfy lo < hi componentwise")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, p) -> bool:
        return bool(self.contains_many(_as_point(p, self.dim)[None, :])[0])

    def contains_many(self, pts) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        lo = np.asarray(self.lo) - GEOM_TOL
        hi = np.asarray(self.hi) + GEOM_TOL
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def segment_intersects(self, p, q) -> bool:
        return bool(self.segments_intersect_many([p], [q])[0])

    def segments_intersect_many(self, P, Q) -> np.ndarray:
        # Slab clipping: the segment meets the closed box iff the parameter
        # intervals of all axis slabs have a common point in [0, 1].
        P = _as_points(P, self.dim)
        Q = _as_points(Q, self.dim)
        w = Q - P
        t0 = np.zeros(len(P))
        t1 = np.ones(len(P))
        alive = np.ones(len(P), dtype=bool)
        for i in range(self.dim):
            lo = self.lo[i] - GEOM_TOL
            hi = self.hi[i] + GEOM_TOL
            wi = w[:, i]
            pi = P[:, i]
            par = wi == 0.0
            alive &= ~par | ((pi >= lo) & (pi <= hi))
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (lo - pi) / wi
                tb = (hi - pi) / wi
            lo_t = np.where(wi > 0, ta, tb)
            hi_t = np.where(wi > 0, tb, ta)
            upd = alive & ~par
            t0 = np.where(upd, np.maximum(t0, lo_t), t0)
            t1 = np.where(upd, np.minimum(t1, hi_t), t1)
        return alive & (t0 <= t1 + GEOM_TOL)

    def distance(self, p) -> float:
        return float(self.distance_many(_as_point(p, self.dim)[None, :])[0])

    def distance_many(self, pts) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        gap = np.maximum(np.asarray(self.lo) - pts, 0.0)
        gap = np.maximum(gap, pts - np.asarray(self.hi))
        return np.linalg.norm(gap, axis=1)

    def bounding_box(self):
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)

    def to_config(self) -> dict:
        return {"shape": "axis_box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class HalfspacePolytope(DarningRegion):
    """Bounded intersection of halfspaces ``normals @ x <= offsets``."""

    normals: tuple[tuple[float, ...], ...]
    offsets: tuple[float, ...]
    _bbox: tuple = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        A = np.asarray(self.normals, dtype=float)
        b = np.asarray(self.offsets, dtype=float)
        if A.ndim != 2 or A.shape[1] < 2:
            raise GeometryError("normals must be an (m, d) array with d >= 2")
        if b.shape != (A.shape[0],):
            raise GeometryError("offsets must match the number of normals")
        if A.shape[0] > 32:
            raise GeometryError("at most 32 halfspaces supported")
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise GeometryError("zero normal vector")
        object.__setattr__(self, "normals", tuple(tuple(row) for row in A))
        object.__setattr__(self, "offsets", tuple(b))
        object.__setattr__(self, "_bbox", self._probe_bounding_box(A, b))

    @staticmethod
    def _probe_bounding_box(A: np.ndarray, b: np.ndarray):
        # Boundedness probe: maximise +/- each coordinate by linear
        # programming; an unbounded direction means the halfspaces do not
        # close up into a compact region.
        from scipy.optimize import linprog

        d = A.shape[1]
        lo = np.empty(d)
        hi = np.empty(d)
        for i in range(d):
            for sign, out in ((1.0, hi), (-1.0, lo)):
                c = np.zeros(d)
                c[i] = -sign
                res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * d, method="highs")
                if res.status == 3:
                    raise GeometryError("halfspace polytope is unbounded")
                if not res.success:
                    raise GeometryError(f"halfspace polytope is empty or degenerate: {res.message}")
                out[i] = sign * (-res.fun)
        return lo, hi

    @property
    def dim(self) -> int:
        return len(self.normals[0])

    def _Ab(self):
        return np.asarray(self.normals), np.asarray(self.offsets)

    def contains(self, p) -> bool:
        return bool(self.contains_many(_as_point(p, self.dim)[None, :])[0])

    def contains_many(self, pts) -> np.ndarray:
        pts = _as_points(pts, self.dim)
        A, b = self._Ab()
        return np.all(pts @ A.T <= b + GEOM_TOL, axis=1)

    def segment_intersects(self, p, q) -> bool:
        return bool(self.segments_intersect_many([p], [q])[0])

    def segments_intersect_many(self, P, Q) -> np.ndarray:
        P = _as_points(P, self.dim)
        Q = _as_points(Q, self.dim)
        A, b = self._Ab()
        w = Q - P
        t0 = np.zeros(len(P))
        t1 = np.ones(len(P))
        alive = np.ones(len(P), dtype=bool)
        fp = P @ A.T - b  # constraint value at t=0
        fw = w @ A.T  # slope along the segment
        for k in range(A.shape[0]):
            s = fw[:, k]
            v0 = fp[:, k]
            par = s == 0.0
            alive &= ~par | (v0 <= GEOM_TOL)
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = -(v0 - GEOM_TOL) / s
            upd = alive & ~par
            t1 = np.where(upd & (s > 0), np.minimum(t1, tc), t1)
            t0 = np.where(upd & (s < 0), np.maximum(t0, tc), t0)
        return alive & (t0 <= t1 + GEOM_TOL)

    def distance(self, p) -> float:
        p = _as_point(p, self.dim)
        A, b = self._Ab()
        if self.contains(p):
            return 0.0
        # Exact projection by active-set enumeration: the nearest point lies
        # on some face, i.e. it is the projection of p onto the affine hull
        # of an active constraint subset of size <= d that is feasible.
        d = self.dim
        best = math.inf
        m = A.shape[0]
        for size in range(1, d + 1):
            for rows in itertools.combinations(range(m), size):
                As = A[list(rows)]
                bs = b[list(rows)]
                G = As @ As.T
                try:
                    lam = np.linalg.solve(G, As @ p - bs)
                except np.linalg.LinAlgError:
                    continue
                x = p - As.T @ lam
                if np.all(A @ x <= b + 1e-9):
                    best = min(best, float(np.linalg.norm(x - p)))
        if not math.isfinite(best):
            raise GeometryError("projection onto polytope failed")
        return best

    def bounding_box(self):
        lo, hi = self._bbox
        return lo.copy(), hi.copy()

    def to_config(self) -> dict:
        return {
            "shape": "halfspace_polytope",
            "normals": [list(row) for row in self.normals],
            "offsets": list(self.offsets),
        }


def _seg_point_dist2(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    w = b - a
    ww = float(np.dot(w, w))
    if ww == 0.0:
        return float(np.dot(p - a, p - a))
    t = min(1.0, max(0.0, float(np.dot(p - a, w)) / ww))
    m = a + t * w
    return float(np.dot(p - m, p - m))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p, q, a, b) -> bool:
    """Closed segment-segment intersection test with GEOM_TOL slack."""
    d1 = _orient(p, q, a)
    d2 = _orient(p, q, b)
    d3 = _orient(a, b, p)
    d4 = _orient(a, b, q)
    eps = GEOM_TOL * max(
        1.0, abs(p[0]), abs(p[1]), abs(q[0]), abs(q[1]), abs(a[0]), abs(a[1]), abs(b[0]), abs(b[1])
    )
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True
    # Degenerate contact: an endpoint lies (within tolerance) on the other
    # segment, covering collinear overlap as well.
    t2 = eps * eps
    return (
        _seg_point_dist2(np.asarray(a, float), np.asarray(p, float), np.asarray(q, float)) <= t2
        or _seg_point_dist2(np.asarray(b, float), np.asarray(p, float), np.asarray(q, float)) <= t2
        or _seg_point_dist2(np.asarray(p, float), np.asarray(a, float), np.asarray(b, float)) <= t2
        or _seg_point_dist2(np.asarray(q, float), np.asarray(a, float), np.asarray(b, float)) <= t2
    )


@dataclass(frozen=True)
class Polygon2D(DarningRegion):
    """Closed simple polygon in the plane, vertices in loop order."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2 or V.shape[0] < 3:
            raise GeometryError("polygon needs at least three 2-d vertices")
        object.__setattr__(self, "vertices", tuple(tuple(row) for row in V))
        area2 = 0.0
        n = len(V)
        for i in range(n):
            a, b = V[i], V[(i + 1) % n]
            area2 += a[0] * b[1] - b[0] * a[1]
        if abs(area2) <= GEOM_TOL:
            raise GeometryError("polygon is degenerate (zero area)")
        for i in range(n):
            a1, b1 = V[i], V[(i + 1) % n]
            for k in range(i + 1, n):
                if k == i or (k + 1) % n == i or (i + 1) % n == k:
                    continue
                a2, b2 = V[k], V[(k + 1) % n]
                if _segments_cross(a1, b1, a2, b2):
                    raise GeometryError("polygon edges self-intersect")

    @property
    def dim(self) -> int:
        return 2

    def _edges(self):
        V = np.asarray(self.vertices)
        return [(V[i], V[(i + 1) % len(V)]) for i in range(len(V))]

    def _on_boundary(self, p: np.ndarray) -> bool:
        t2 = (GEOM_TOL * max(1.0, abs(p[0]), abs(p[1]))) ** 2
        return any(_seg_point_dist2(p, a, b) <= t2 for a, b in self._edges())

    def contains(self, p) -> bool:
        p = _as_point(p, 2)
        if self._on_boundary(p):
            return True
        # Crossing-number test with the half-open edge rule, robust because
        # exact boundary hits were already handled above.
        inside = False
        for a, b in self._edges():
            if (a[1] > p[1]) != (b[1] > p[1]):
                xc = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
                if p[0] < xc:
                    inside = not inside
        return inside

    def segment_intersects(self, p, q) -> bool:
        p = _as_point(p, 2)
        q = _as_point(q, 2)
        if self.contains(p) or self.contains(q):
            return True
        return any(_segments_cross(p, q, a, b) for a, b in self._edges())

    def distance(self, p) -> float:
        p = _as_point(p, 2)
        if self.contains(p):
            return 0.0
        return math.sqrt(min(_seg_point_dist2(p, a, b) for a, b in self._edges()))

    def bounding_box(self):
        V = np.asarray(self.vertices)
        return V.min(axis=0), V.max(axis=0)

    def to_config(self) -> dict:
        return {"shape": "polygon", "vertices": [list(v) for v in self.vertices]}


def extent(region: DarningRegion | None, x0) -> Extent:
    """Smallest integer half-width k0 with K and x0 inside [-k0, k0]^d."""
    x0 = np.asarray(x0, dtype=float)
    reach = float(np.max(np.abs(x0))) if x0.size else 0.0
    if region is not None:
        lo, hi = region.bounding_box()
        reach = max(reach, float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
    k0 = max(1, math.ceil(reach - GEOM_TOL))
    return Extent(k0=k0)


def region_from_config(cfg: dict | None) -> DarningRegion | None:
    """Build a region from its JSON form; ``None`` means the debug empty region."""
    if cfg is None:
        return None
    if not isinstance(cfg, dict) or "shape" not in cfg:
        raise GeometryError("region config must be an object with a 'shape' key")
    shape = cfg["shape"]
    try:
        if shape == "ball":
            return Ball(center=tuple(cfg["center"]), radius=cfg["radius"])
        if shape == "axis_box":
            return AxisBox(lo=tuple(cfg["lo"]), hi=tuple(cfg["hi"]))
        if shape == "halfspace_polytope":
            return HalfspacePolytope(
                normals=tuple(tuple(r) for r in cfg["normals"]),
                offsets=tuple(cfg["offsets"]),
            )
        if shape == "polygon":
            return Polygon2D(vertices=tuple(tuple(v) for v in cfg["vertices"]))
    except KeyError as exc:
        raise GeometryError(f"region config for shape '{shape}' is missing key {exc}") from exc
    raise GeometryError(f"unknown region shape '{shape}'")
