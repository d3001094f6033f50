"""Darned lattice graphs.

Level ``j`` places vertices on the grid ``2**-j * Z^d`` inside the window
``[-W, W]^d``, drops every grid point lying in the darning region K, and
collapses K to a single extra vertex (the star).  Adjacency:

* two surviving grid neighbours are joined iff the straight segment
  between them misses K entirely;
* a surviving vertex is joined to the star iff at least one of its 2d
  incident grid edges (including edges leaving the window) meets K, and
  such a vertex carries exactly one star edge regardless of how many of
  its edges meet K.

The vertex measure is ``2**(-j*d) / (2*d)`` times the graph degree, so
full-degree interior vertices carry the grid cell volume and the star's
mass shrinks like ``2**-j`` as the mesh refines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import connected_components

from .geometry import DarningRegion, GEOM_TOL


class LatticeBuildError(ValueError):
    """The requested lattice cannot be built faithfully."""


@dataclass
class DarnedLattice:
    """Immutable-by-convention graph container (CSR adjacency).

    Regular vertices come first in lexicographic coordinate order; the
    star, when present, is the last vertex id.  ``coords`` holds integer
    grid coordinates of the regular vertices (positions are
    ``coords * 2**-level``); the star has no coordinates.
    """

    dim: int
    level: int
    window_radius: float
    region: DarningRegion | None
    coords: np.ndarray  # (n_regular, dim) int32
    indptr: np.ndarray  # (n_vertices + 1,) int64
    indices: np.ndarray  # (2 * n_edges,) int32
    star_id: int | None

    @property
    def spacing(self) -> float:
        return 2.0 ** -self.level

    @property
    def n_regular(self) -> int:
        return len(self.coords)

    @property
    def n_vertices(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def has_star(self) -> bool:
        return self.star_id is not None

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr).astype(np.int64)

    @cached_property
    def measure(self) -> np.ndarray:
        unit = self.spacing**self.dim / (2 * self.dim)
        return unit * self.degrees

    @property
    def total_measure(self) -> float:
        return float(self.measure.sum())

    @property
    def star_degree(self) -> int:
        if not self.has_star:
            return 0
        return int(self.degrees[self.star_id])

    def positions(self) -> np.ndarray:
        return self.coords * self.spacing

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    @cached_property
    def _grid(self) -> np.ndarray:
        """Dense coord -> vertex id lookup; -1 marks dropped grid points."""
        R = int(round(self.window_radius * 2**self.level))
        side = 2 * R + 1
        grid = np.full(side**self.dim, -1, dtype=np.int64)
        grid[self._ravel(self.coords, R, side)] = np.arange(self.n_regular)
        return grid.reshape((side,) * self.dim)

    @staticmethod
    def _ravel(coords: np.ndarray, R: int, side: int) -> np.ndarray:
        idx = np.zeros(len(coords), dtype=np.int64)
        for i in range(coords.shape[1]):
            idx = idx * side + (coords[:, i].astype(np.int64) + R)
        return idx

    def vertex_at(self, point) -> int:
        """Vertex id at an exact grid position (error if absent)."""
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise LatticeBuildError(
                f"point {point} has shape {p.shape}, expected ({self.dim},)"
            )
        units = p / self.spacing
        k = np.rint(units).astype(np.int64)
        if np.max(np.abs(units - k)) > 1e-9:
            raise LatticeBuildError(f"point {point} is not on the level-{self.level} grid")
        R = int(round(self.window_radius * 2**self.level))
        if np.max(np.abs(k)) > R:
            raise LatticeBuildError(f"point {point} lies outside the window")
        vid = int(self._grid[tuple(k + R)])
        if vid < 0:
            raise LatticeBuildError(f"grid point {point} was removed (inside the region)")
        return vid

    @cached_property
    def distance_to_region(self) -> np.ndarray:
        """Euclidean distance from each vertex to K; the star sits at 0."""
        out = np.zeros(self.n_vertices)
        if self.region is not None:
            out[: self.n_regular] = self.region.distance_many(self.positions())
        return out

    @cached_property
    def interior_mask(self) -> np.ndarray:
        """Vertices unaware of darning and window: all 2d lattice
        neighbours present over clear segments.  A star-adjacent vertex
        can reach graph degree 2d (one star edge standing in for the
        blocked lattice edge), so degree alone is not enough."""
        mask = self.degrees == 2 * self.dim
        if self.has_star:
            mask[self.star_id] = False
            mask[self.neighbors(self.star_id)] = False
        return mask

    def summary(self) -> dict:
        interior = self.interior_mask
        return {
            "dimension": self.dim,
            "level": self.level,
            "window_radius": self.window_radius,
            "num_vertices": int(self.n_vertices),
            "num_regular": int(self.n_regular),
            "num_edges": int(self.n_edges),
            "star_degree": int(self.star_degree),
            "m_total": self.total_measure,
            "m_complement_Sj": float(self.measure[~interior].sum()),
            "region": None if self.region is None else self.region.to_config(),
        }


def _axis_ranges(dim: int, R: int, ext_axis: int) -> list[np.ndarray]:
    """Per-axis integer ranges; the extended axis gains one layer each side."""
    ranges = []
    for i in range(dim):
        if i == ext_axis:
            ranges.append(np.arange(-R - 1, R + 1, dtype=np.int32))
        else:
            ranges.append(np.arange(-R, R + 1, dtype=np.int32))
    return ranges


def _cartesian(ranges: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*ranges, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _segment_hits_region(region: DarningRegion, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Exact segment tests, run only where the segment bbox meets K's bbox."""
    n = len(P)
    out = np.zeros(n, dtype=bool)
    lo, hi = region.bounding_box()
    pad = GEOM_TOL
    seg_lo = np.minimum(P, Q)
    seg_hi = np.maximum(P, Q)
    near = np.all(seg_hi >= lo - pad, axis=1) & np.all(seg_lo <= hi + pad, axis=1)
    if near.any():
        out[near] = region.segments_intersect_many(P[near], Q[near])
    return out


def build_lattice(
    region: DarningRegion | None,
    level: int,
    window_radius: float,
    *,
    require_connected: bool = True,
) -> DarnedLattice:
    """Construct the level-``level`` darned lattice on ``[-W, W]^d``.

    ``region=None`` is the debug mode: the plain window lattice with no
    star vertex.  The window must contain K with one grid cell to spare,
    and the window radius must be a positive multiple of the grid spacing.
    """
    if level < 0:
        raise LatticeBuildError("level must be a nonnegative integer")
    h = 2.0**-level
    R_float = window_radius / h
    R = int(round(R_float))
    if R < 1 or abs(R_float - R) > 1e-9:
        raise LatticeBuildError(
            f"window radius {window_radius} must be a positive multiple of the spacing {h}"
        )
    if region is None:
        raise LatticeBuildError(
            "build_lattice needs a region; use build_plain_lattice for debug mode"
        )
    lo, hi = region.bounding_box()
    if max(np.max(np.abs(lo)), np.max(np.abs(hi))) + 2 * h > window_radius + GEOM_TOL:
        raise LatticeBuildError(
            "window too small: the region must fit inside the window with "
            "a margin of two grid cells"
        )
    return _build_known_dim(region, region.dim, level, window_radius, R, require_connected)


def build_plain_lattice(dim: int, level: int, window_radius: float) -> DarnedLattice:
    """Debug helper: the plain window lattice (no region, no star)."""
    if dim < 2:
        raise LatticeBuildError("dimension must be at least 2")
    h = 2.0**-level
    R = int(round(window_radius / h))
    if R < 1 or abs(window_radius / h - R) > 1e-9:
        raise LatticeBuildError(
            f"window radius {window_radius} must be a positive multiple of the spacing {h}"
        )
    return _build_known_dim(None, dim, level, window_radius, R, require_connected=True)


def _build_known_dim(region, dim, level, window_radius, R, require_connected):
    if dim < 2:
        raise LatticeBuildError("dimension must be at least 2")
    h = 2.0**-level
    side = 2 * R + 1
    base = [np.arange(-R, R + 1, dtype=np.int32)] * dim
    grid_coords = _cartesian(base)
    pos = grid_coords * h

    if region is not None:
        in_k = region.contains_many(pos)
    else:
        in_k = np.zeros(len(pos), dtype=bool)
    regular = ~in_k
    n_regular = int(regular.sum())
    if n_regular == 0:
        raise LatticeBuildError("no lattice vertices survive outside the region")

    vid = np.full(len(grid_coords), -1, dtype=np.int64)
    vid[regular] = np.arange(n_regular)

    coords = grid_coords[regular]
    star_id = n_regular if region is not None else None

    def ravel(c: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(c), dtype=np.int64)
        for i in range(dim):
            idx = idx * side + (c[:, i].astype(np.int64) + R)
        return idx

    edge_u: list[np.ndarray] = []
    edge_v: list[np.ndarray] = []
    star_adj = np.zeros(n_regular, dtype=bool)

    for axis in range(dim):
        left = _cartesian(_axis_ranges(dim, R, axis))
        right = left.copy()
        right[:, axis] += 1
        if region is not None:
            cross = _segment_hits_region(region, left * h, right * h)
        else:
            cross = np.zeros(len(left), dtype=bool)

        left_in = left[:, axis] >= -R
        right_in = right[:, axis] <= R
        lv = np.full(len(left), -1, dtype=np.int64)
        rv = np.full(len(left), -1, dtype=np.int64)
        lv[left_in] = vid[ravel(left[left_in])]
        rv[right_in] = vid[ravel(right[right_in])]

        both = (lv >= 0) & (rv >= 0) & ~cross
        edge_u.append(lv[both])
        edge_v.append(rv[both])

        touch = cross & (lv >= 0)
        star_adj[lv[touch]] = True
        touch = cross & (rv >= 0)
        star_adj[rv[touch]] = True

    u = np.concatenate(edge_u)
    v = np.concatenate(edge_v)
    if region is not None:
        s = np.flatnonzero(star_adj).astype(np.int64)
        if len(s) == 0:
            raise LatticeBuildError(
                "no lattice edge meets the region at this level; refine the mesh"
            )
        u = np.concatenate([u, s])
        v = np.concatenate([v, np.full(len(s), star_id, dtype=np.int64)])

    n_vertices = n_regular + (1 if region is not None else 0)
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    adj = sp.coo_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n_vertices, n_vertices)
    ).tocsr()
    adj.sort_indices()

    g = DarnedLattice(
        dim=dim,
        level=level,
        window_radius=float(window_radius),
        region=region,
        coords=np.ascontiguousarray(coords, dtype=np.int32),
        indptr=adj.indptr.astype(np.int64),
        indices=adj.indices.astype(np.int32),
        star_id=star_id,
    )

    if require_connected:
        n_comp, labels = connected_components(adj, directed=False)
        if n_comp != 1:
            sizes = np.bincount(labels)
            raise LatticeBuildError(
                f"lattice is disconnected ({n_comp} components, sizes {sorted(sizes, reverse=True)[:5]}); "
                "enlarge the window or refine the level"
            )
    return g


@njit(cache=True)
def _bfs_hops(indptr, indices, source, n):
    dist = np.full(n, -1, np.int32)
    queue = np.empty(n, np.int32)
    head = 0
    tail = 0
    dist[source] = 0
    queue[tail] = source
    tail += 1
    while head < tail:
        vtx = queue[head]
        head += 1
        dv = dist[vtx]
        for k in range(indptr[vtx], indptr[vtx + 1]):
            u = indices[k]
            if dist[u] < 0:
                dist[u] = dv + 1
                queue[tail] = u
                tail += 1
    return dist


@dataclass
class MetricTable:
    """Graph distances from one source, in length units (hops * spacing)."""

    source: int
    hops: np.ndarray
    spacing: float

    @property
    def distances(self) -> np.ndarray:
        return self.hops * self.spacing


def graph_distance(g: DarnedLattice, source: int) -> MetricTable:
    """BFS distances from ``source``; every edge has length ``2**-j``."""
    if not 0 <= source < g.n_vertices:
        raise ValueError(f"source {source} out of range")
    hops = _bfs_hops(g.indptr, g.indices, source, g.n_vertices)
    return MetricTable(source=source, hops=hops, spacing=g.spacing)


def quotient_metric(g: DarnedLattice, x: int, y: int) -> float:
    """Metric of the collapsed space: Euclidean distance shortcut through K.

    rho(x, y) = min(|x - y|, dist(x, K) + dist(y, K)); the star sits at
    distance dist(x, K) from x.
    """
    if x == g.star_id and y == g.star_id:
        return 0.0
    dK = g.distance_to_region
    if x == g.star_id:
        return float(dK[y])
    if y == g.star_id:
        return float(dK[x])
    p = g.coords[x] * g.spacing
    q = g.coords[y] * g.spacing
    euclid = float(np.linalg.norm(p - q))
    if g.region is None:
        return euclid
    return min(euclid, float(dK[x] + dK[y]))


def quotient_metric_table(g: DarnedLattice, source: int) -> np.ndarray:
    """Vector of quotient-metric distances from ``source`` to every vertex."""
    dK = g.distance_to_region
    out = np.empty(g.n_vertices)
    if source == g.star_id:
        out[:] = dK
        out[source] = 0.0
        return out
    p = g.coords[source] * g.spacing
    diff = g.positions() - p
    euclid = np.linalg.norm(diff, axis=1)
    if g.region is None:
        out[: g.n_regular] = euclid
        return out
    out[: g.n_regular] = np.minimum(euclid, dK[source] + dK[: g.n_regular])
    if g.has_star:
        out[g.star_id] = dK[source]
    return out


def interior_set(g: DarnedLattice) -> tuple[np.ndarray, float]:
    """Full-degree vertex ids and the measure of their complement."""
    mask = g.interior_mask
    ids = np.flatnonzero(mask)
    return ids, float(g.measure[~mask].sum())


def lattice_points_in_region(region: DarningRegion, level: int, window_radius: float) -> np.ndarray:
    """Grid points of the window lying inside K (the removed set K_j)."""
    h = 2.0**-level
    R = int(round(window_radius / h))
    base = [np.arange(-R, R + 1, dtype=np.int32)] * region.dim
    grid_coords = _cartesian(base)
    mask = region.contains_many(grid_coords * h)
    return grid_coords[mask]


def star_degree_scaling(
    region: DarningRegion,
    levels: range | list[int],
    window_radius: float,
) -> dict:
    """Star degree per level and the slope of log2(degree) against level.

    The star degree counts boundary-touching vertices, a (d-1)-dimensional
    quantity, so the slope should sit near d - 1.
    """
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("need at least two levels for a slope")
    degs = []
    for j in levels:
        g = build_lattice(region, j, window_radius)
        degs.append(g.star_degree)
    slope, intercept = np.polyfit(np.asarray(levels, dtype=float), np.log2(degs), 1)
    return {
        "levels": levels,
        "star_degrees": degs,
        "slope": float(slope),
        "intercept": float(intercept),
        "dimension": region.dim,
    }
