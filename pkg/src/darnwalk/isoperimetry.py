"""Discrete isoperimetric ratios on darned lattices.

For a finite vertex set A the boundary measure is the number of edges
leaving A times the unit edge weight h^d / (2d), and the profile ratio

    ratio(A) = cut(A) / (h * m(A)^((d-1)/d))

is scale-free: a fixed local configuration (say a 2x3 block wedged into
a window corner) produces the same ratio at every level.  The package
certifies a positive uniform lower bound empirically by minimising the
ratio over structured families:

- every connected induced subgraph up to a size cap (exact enumeration,
  each set generated once from its minimal vertex),
- graph-metric balls around a center set, radius by radius,
- hop neighbourhoods of the star vertex, reported both raw and with the
  set measure augmented by the mass of the removed lattice points, the
  comparison quantity the collapsed case calls for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .lattice import DarnedLattice, graph_distance, lattice_points_in_region
from .rng import stream_key, uniform


def edge_weight_unit(g: DarnedLattice) -> float:
    return g.spacing**g.dim / (2.0 * g.dim)


def _root_power(m: float, d: int) -> float:
    if d == 2:
        return math.sqrt(m)
    return m ** ((d - 1.0) / d)


def set_measure(g: DarnedLattice, ids) -> float:
    ids = np.asarray(list(ids), dtype=int)
    return float(g.measure[ids].sum())


def cut_weight(g: DarnedLattice, ids) -> float:
    """Measure of the edge boundary of the vertex set."""
    ids = np.asarray(list(ids), dtype=int)
    if len(ids) == 0:
        raise ValueError("empty set")
    if len(np.unique(ids)) != len(ids):
        raise ValueError("duplicate vertices in set")
    if len(ids) == g.n_vertices:
        raise ValueError("set is the whole vertex set; complement is empty")
    mask = np.zeros(g.n_vertices, dtype=bool)
    mask[ids] = True
    nbrs = np.concatenate([g.neighbors(int(v)) for v in ids])
    cross = int((~mask[nbrs]).sum())
    return cross * edge_weight_unit(g)


def iso_ratio(g: DarnedLattice, ids) -> float:
    """cut(A) / (h * m(A)^((d-1)/d)); exact square root in two dimensions."""
    ids = np.asarray(list(ids), dtype=int)
    cut = cut_weight(g, ids)
    if cut == 0.0:
        raise ValueError("set has empty boundary (covers a whole component)")
    m = set_measure(g, ids)
    return cut / (g.spacing * _root_power(m, g.dim))


@njit(cache=True, parallel=True)
def _esu_min_kernel(
    indptr,
    indices,
    measure,
    edge_w,
    norm,
    d2,
    dpow,
    cap,
    ext_cap,
    touch_cap,
    star_id,
    out_ratio_f,
    out_sets_f,
    out_ratio_s,
    out_sets_s,
    out_count,
    out_count_s,
    out_err,
):
    # Connected-subgraph enumeration rooted at each vertex v, extension
    # candidates restricted to ids above v, so every connected set is
    # produced exactly once from its minimal vertex.  Sets containing
    # star_id are tracked apart from star-free ones.
    n = indptr.size - 1
    for v in prange(n):
        for k in range(cap):
            out_ratio_f[v, k] = np.inf
            out_ratio_s[v, k] = np.inf
            out_count[v, k] = 0
            out_count_s[v, k] = 0
        seen = np.zeros(n, np.uint8)
        sub = np.empty(cap, np.int64)
        exts = np.empty((cap, ext_cap), np.int64)
        elen = np.empty(cap, np.int64)
        eptr = np.empty(cap, np.int64)
        tstart = np.empty(cap, np.int64)
        touched = np.empty(touch_cap, np.int64)
        msum = np.empty(cap, np.float64)
        csum = np.empty(cap, np.int64)
        hasst = np.empty(cap, np.uint8)
        sub[0] = v
        msum[0] = measure[v]
        csum[0] = indptr[v + 1] - indptr[v]
        hasst[0] = 1 if v == star_id else 0
        root = math.sqrt(msum[0]) if d2 else msum[0] ** dpow
        r0 = edge_w * csum[0] / (norm * root)
        if hasst[0] == 1:
            out_ratio_s[v, 0] = r0
            out_sets_s[v, 0, 0] = v
            out_count_s[v, 0] = 1
        else:
            out_ratio_f[v, 0] = r0
            out_sets_f[v, 0, 0] = v
        out_count[v, 0] = 1
        seen[v] = 1
        tpos = 0
        ne = 0
        bad = False
        for i in range(indptr[v], indptr[v + 1]):
            u = indices[i]
            if seen[u] == 0:
                seen[u] = 1
            if u > v:
                if ne >= ext_cap:
                    bad = True
                    break
                exts[0, ne] = u
                ne += 1
        if bad:
            out_err[v] = 1
            continue
        elen[0] = ne
        eptr[0] = 0
        depth = 0
        while depth >= 0:
            if eptr[depth] < elen[depth] and depth + 1 < cap:
                w = exts[depth, eptr[depth]]
                eptr[depth] += 1
                nd = depth + 1
                sub[nd] = w
                hasst[nd] = 1 if (hasst[depth] == 1 or w == star_id) else 0
                msum[nd] = msum[depth] + measure[w]
                degw = indptr[w + 1] - indptr[w]
                inedges = 0
                for i in range(indptr[w], indptr[w + 1]):
                    u = indices[i]
                    for s in range(nd):
                        if sub[s] == u:
                            inedges += 1
                            break
                csum[nd] = csum[depth] + degw - 2 * inedges
                root = math.sqrt(msum[nd]) if d2 else msum[nd] ** dpow
                r = edge_w * csum[nd] / (norm * root)
                out_count[v, nd] += 1
                if hasst[nd] == 1:
                    out_count_s[v, nd] += 1
                    if r < out_ratio_s[v, nd]:
                        out_ratio_s[v, nd] = r
                        for s in range(nd + 1):
                            out_sets_s[v, nd, s] = sub[s]
                elif r < out_ratio_f[v, nd]:
                    out_ratio_f[v, nd] = r
                    for s in range(nd + 1):
                        out_sets_f[v, nd, s] = sub[s]
                if nd + 1 < cap:
                    ne2 = 0
                    for i2 in range(eptr[depth], elen[depth]):
                        exts[nd, ne2] = exts[depth, i2]
                        ne2 += 1
                    tstart[nd] = tpos
                    for i in range(indptr[w], indptr[w + 1]):
                        u = indices[i]
                        if seen[u] == 0:
                            if tpos >= touch_cap:
                                bad = True
                                break
                            seen[u] = 1
                            touched[tpos] = u
                            tpos += 1
                            if u > v:
                                if ne2 >= ext_cap:
                                    bad = True
                                    break
                                exts[nd, ne2] = u
                                ne2 += 1
                    if bad:
                        break
                    elen[nd] = ne2
                    eptr[nd] = 0
                    depth = nd
            else:
                if depth >= 1:
                    while tpos > tstart[depth]:
                        tpos -= 1
                        seen[touched[tpos]] = 0
                depth -= 1
        if bad:
            out_err[v] = 1


@njit(cache=True, parallel=True)
def _ball_kernel(indptr, indices, centers, max_r, measure, edge_w, norm, d2, dpow, out_ratio):
    n = indptr.size - 1
    for ci in prange(len(centers)):
        c = centers[ci]
        hop = np.full(n, -1, np.int32)
        q = np.empty(n, np.int64)
        hop[c] = 0
        q[0] = c
        head = 0
        tail = 1
        while head < tail:
            x = q[head]
            head += 1
            if hop[x] >= max_r:
                break
            for i in range(indptr[x], indptr[x + 1]):
                u = indices[i]
                if hop[u] < 0:
                    hop[u] = hop[x] + 1
                    q[tail] = u
                    tail += 1
        msum = 0.0
        degsum = 0
        e_in = 0
        idx = 0
        for r in range(max_r + 1):
            while idx < tail and hop[q[idx]] == r:
                x = q[idx]
                idx += 1
                msum += measure[x]
                degsum += indptr[x + 1] - indptr[x]
                for i in range(indptr[x], indptr[x + 1]):
                    u = indices[i]
                    hu = hop[u]
                    if 0 <= hu and (hu < r or (hu == r and u < x)):
                        e_in += 1
            cross = degsum - 2 * e_in
            if cross > 0:
                root = math.sqrt(msum) if d2 else msum**dpow
                out_ratio[ci, r] = edge_w * cross / (norm * root)
            else:
                out_ratio[ci, r] = np.inf


@dataclass(frozen=True)
class IsoRecord:
    """Minimum profile ratio within one family slice."""

    family: str
    param: int
    min_ratio: float
    argmin: tuple[int, ...]
    n_sets: int
    contains_star: bool | None = None


@dataclass
class IsoReport:
    """Family-by-family minima plus the collapsed-set comparison data."""

    dim: int
    level: int
    records: list[IsoRecord] = field(default_factory=list)
    kj_count: int = 0
    kj_measure: float = 0.0
    partial: bool = False

    @property
    def min_ratio(self) -> float:
        finite = [r.min_ratio for r in self.records]
        return min(finite) if finite else math.inf

    def min_over(self, contains_star: bool) -> float:
        vals = [r.min_ratio for r in self.records if r.contains_star is contains_star]
        return min(vals) if vals else math.inf

    def by_family(self, family: str) -> list[IsoRecord]:
        return [r for r in self.records if r.family == family]


def _split_records(family, param, ratio_f, arg_f, n_f, ratio_s, arg_s, n_s, split):
    """One global record (winner flagged) plus optional per-class records."""
    records = []
    if not (math.isfinite(ratio_f) or math.isfinite(ratio_s)):
        return records
    if ratio_s < ratio_f:
        records.append(IsoRecord(family, param, ratio_s, arg_s, n_f + n_s, True))
    else:
        records.append(IsoRecord(family, param, ratio_f, arg_f, n_f + n_s, False))
    if split:
        if math.isfinite(ratio_f):
            records.append(IsoRecord(family + "_free", param, ratio_f, arg_f, n_f, False))
        if math.isfinite(ratio_s):
            records.append(IsoRecord(family + "_star", param, ratio_s, arg_s, n_s, True))
    return records


def connected_minima(g: DarnedLattice, cap: int = 6, *, split: bool = False) -> list[IsoRecord]:
    """Exact minima over every connected induced subgraph of size <= cap."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    n = g.n_vertices
    max_deg = int(g.degrees.max())
    ext_cap = (cap + 1) * max_deg + 8
    touch_cap = (cap + 2) * max_deg + 8
    out_ratio_f = np.empty((n, cap))
    out_sets_f = np.full((n, cap, cap), -1, dtype=np.int64)
    out_ratio_s = np.empty((n, cap))
    out_sets_s = np.full((n, cap, cap), -1, dtype=np.int64)
    out_count = np.zeros((n, cap), dtype=np.int64)
    out_count_s = np.zeros((n, cap), dtype=np.int64)
    out_err = np.zeros(n, dtype=np.uint8)
    _esu_min_kernel(
        g.indptr,
        g.indices,
        g.measure,
        edge_weight_unit(g),
        g.spacing,
        g.dim == 2,
        (g.dim - 1.0) / g.dim,
        cap,
        ext_cap,
        touch_cap,
        g.star_id if g.has_star else -1,
        out_ratio_f,
        out_sets_f,
        out_ratio_s,
        out_sets_s,
        out_count,
        out_count_s,
        out_err,
    )
    if out_err.any():
        raise RuntimeError("enumeration buffers overflowed; raise the caps")
    records = []
    for k in range(cap):
        fi = int(out_ratio_f[:, k].argmin())
        si = int(out_ratio_s[:, k].argmin())
        n_star = int(out_count_s[:, k].sum())
        n_free = int(out_count[:, k].sum()) - n_star
        records.extend(
            _split_records(
                "connected",
                k + 1,
                float(out_ratio_f[fi, k]),
                tuple(int(x) for x in out_sets_f[fi, k, : k + 1]),
                n_free,
                float(out_ratio_s[si, k]),
                tuple(int(x) for x in out_sets_s[si, k, : k + 1]),
                n_star,
                split,
            )
        )
    return records


def default_ball_centers(g: DarnedLattice, max_interior: int = 256) -> np.ndarray:
    """Star, every deficient-degree vertex, and a strided interior sample."""
    picks = []
    if g.has_star:
        picks.append(g.star_id)
    picks.extend(np.flatnonzero(g.degrees[: g.n_regular] < 2 * g.dim).tolist())
    interior = np.flatnonzero(g.interior_mask)
    if len(interior):
        stride = max(1, len(interior) // max_interior)
        picks.extend(interior[::stride][:max_interior].tolist())
    return np.unique(np.asarray(picks, dtype=np.int64))


def _ball_matrix(g: DarnedLattice, max_radius: int, centers=None):
    if centers is None:
        centers = (
            np.arange(g.n_vertices, dtype=np.int64)
            if g.n_vertices <= 20_000
            else default_ball_centers(g)
        )
    centers = np.asarray(centers, dtype=np.int64)
    out = np.empty((len(centers), max_radius + 1))
    _ball_kernel(
        g.indptr,
        g.indices,
        centers,
        max_radius,
        g.measure,
        edge_weight_unit(g),
        g.spacing,
        g.dim == 2,
        (g.dim - 1.0) / g.dim,
        out,
    )
    return centers, out


def _ball_records(g, centers, out, radii, split):
    """Records for the requested radii; a ball holds the star exactly when
    its center is within the radius of the star in hop distance."""
    hops_star = graph_distance(g, g.star_id).hops if g.has_star else None
    records = []
    for r in radii:
        col = out[:, r]
        if hops_star is None:
            star_mask = np.zeros(len(centers), dtype=bool)
        else:
            star_mask = hops_star[centers] <= r
        ratio_f, arg_f, n_f = math.inf, (), 0
        ratio_s, arg_s, n_s = math.inf, (), 0
        free = np.where(star_mask, np.inf, col)
        star = np.where(star_mask, col, np.inf)
        fi = int(free.argmin())
        si = int(star.argmin())
        if np.isfinite(free[fi]):
            ratio_f, arg_f = float(free[fi]), (int(centers[fi]),)
            n_f = int(np.isfinite(free).sum())
        if np.isfinite(star[si]):
            ratio_s, arg_s = float(star[si]), (int(centers[si]),)
            n_s = int(np.isfinite(star).sum())
        records.extend(
            _split_records("ball", r, ratio_f, arg_f, n_f, ratio_s, arg_s, n_s, split)
        )
    return records


def ball_minima(
    g: DarnedLattice, max_radius: int = 16, centers=None, *, split: bool = False
) -> list[IsoRecord]:
    """Minima over graph-metric balls, one record per radius."""
    centers, out = _ball_matrix(g, max_radius, centers)
    return _ball_records(g, centers, out, range(max_radius + 1), split)


def region_lattice_mass(g: DarnedLattice) -> tuple[int, float]:
    """Count and measure of the lattice points swallowed by the region,
    each carrying the plain-vertex weight h^d."""
    if g.region is None:
        return 0, 0.0
    pts = lattice_points_in_region(g.region, g.level, g.window_radius)
    return len(pts), len(pts) * g.spacing**g.dim


def star_neighborhood_records(g: DarnedLattice, max_hops: int = 2) -> list[IsoRecord]:
    """Hop balls around the star; the augmented variant adds the mass of
    the removed lattice points to m(A) before taking the root, matching
    the comparison set (A minus the star) union the swallowed points."""
    if not g.has_star:
        raise ValueError("graph has no star vertex")
    hops = graph_distance(g, g.star_id).hops
    _, kj_measure = region_lattice_mass(g)
    records = []
    for hcap in range(max_hops + 1):
        ids = np.flatnonzero(hops <= hcap)
        cut = cut_weight(g, ids)
        if cut == 0.0:
            continue
        m_raw = set_measure(g, ids)
        m_aug = m_raw - float(g.measure[g.star_id]) + kj_measure
        records.append(
            IsoRecord(
                family="star",
                param=hcap,
                min_ratio=cut / (g.spacing * _root_power(m_raw, g.dim)),
                argmin=tuple(int(x) for x in ids[:8]),
                n_sets=1,
                contains_star=True,
            )
        )
        records.append(
            IsoRecord(
                family="star_augmented",
                param=hcap,
                min_ratio=cut / (g.spacing * _root_power(m_aug, g.dim)),
                argmin=tuple(int(x) for x in ids[:8]),
                n_sets=1,
                contains_star=True,
            )
        )
    return records


def random_connected_sets(g: DarnedLattice, count: int, size: int, seed: int = 0):
    """Seeded connected sets of a fixed size, grown one frontier vertex at
    a time.  Counter-based draws keep the family reproducible."""
    if size < 1 or size > g.n_vertices - 1:
        raise ValueError("size must be in [1, n_vertices - 1]")
    if count < 0:
        raise ValueError("count must be nonnegative")
    n = g.n_vertices
    out = []
    for i in range(count):
        key = stream_key(seed, i)
        ctr = 0
        v0 = min(int(uniform(key, ctr) * n), n - 1)
        ctr += 1
        chosen = [v0]
        in_set = {v0}
        frontier: list[int] = []
        in_frontier = set()
        for u in g.neighbors(v0):
            u = int(u)
            if u not in in_frontier:
                frontier.append(u)
                in_frontier.add(u)
        while len(chosen) < size and frontier:
            idx = min(int(uniform(key, ctr) * len(frontier)), len(frontier) - 1)
            ctr += 1
            w = frontier[idx]
            frontier[idx] = frontier[-1]
            frontier.pop()
            in_frontier.discard(w)
            chosen.append(w)
            in_set.add(w)
            for u in g.neighbors(w):
                u = int(u)
                if u not in in_set and u not in in_frontier:
                    frontier.append(u)
                    in_frontier.add(u)
        out.append(tuple(sorted(chosen)))
    return out


def random_connected_minima(
    g: DarnedLattice, count: int, size: int, seed: int = 0, *, split: bool = False
) -> list[IsoRecord]:
    """Minimum ratio over a seeded sample of connected sets of one size."""
    ratio_f, arg_f, n_f = math.inf, (), 0
    ratio_s, arg_s, n_s = math.inf, (), 0
    star = g.star_id if g.has_star else -1
    for ids in random_connected_sets(g, count, size, seed):
        r = iso_ratio(g, ids)
        if star in ids:
            n_s += 1
            if r < ratio_s:
                ratio_s, arg_s = r, ids
        else:
            n_f += 1
            if r < ratio_f:
                ratio_f, arg_f = r, ids
    return _split_records(
        "random_connected", size, ratio_f, arg_f, n_f, ratio_s, arg_s, n_s, split
    )


def enumerate_family(
    g: DarnedLattice,
    family: str,
    *,
    budget: int | None = None,
    seed: int = 0,
    ball_centers=None,
    split: bool = True,
    **params,
) -> IsoReport:
    """Family-by-family minima with the star/star-free split.

    When a budget (maximum number of candidate sets) is given and the
    family is larger, the report keeps the slices that fit and is marked
    partial instead of failing.
    """
    report = IsoReport(dim=g.dim, level=g.level)
    if family == "all_connected_up_to":
        cap = int(params.pop("n", 6))
        if cap > 8:
            raise ValueError("connected enumeration is capped at size 8")
        records = connected_minima(g, cap, split=split)
        report.records, report.partial = _trim_to_budget(records, budget)
    elif family == "metric_balls":
        radii = sorted(int(r) for r in params.pop("radii", range(17)))
        if any(r < 0 for r in radii):
            raise ValueError("radii must be nonnegative")
        centers, out = _ball_matrix(g, max(radii), ball_centers)
        records = _ball_records(g, centers, out, radii, split)
        report.records, report.partial = _trim_to_budget(records, budget)
    elif family == "random_connected":
        count = int(params.pop("count"))
        size = int(params.pop("size"))
        if budget is not None and count > budget:
            count = budget
            report.partial = True
        report.records = random_connected_minima(g, count, size, seed, split=split)
    elif family == "star_neighborhoods":
        hops = int(params.pop("hops", 2))
        records = star_neighborhood_records(g, hops)
        report.records, report.partial = _trim_to_budget(records, budget)
    else:
        raise ValueError(f"unknown family {family!r}")
    if params:
        raise TypeError(f"unused family parameters: {sorted(params)}")
    report.kj_count, report.kj_measure = region_lattice_mass(g)
    return report


def _trim_to_budget(records: list[IsoRecord], budget: int | None):
    """Keep whole slices (grouped by param) while the cumulative number of
    evaluated sets stays within budget."""
    if budget is None:
        return records, False
    kept: list[IsoRecord] = []
    used = 0
    params_seen = []
    for rec in records:
        if rec.param not in params_seen:
            params_seen.append(rec.param)
    for p in params_seen:
        slice_recs = [r for r in records if r.param == p]
        slice_sets = max(r.n_sets for r in slice_recs)
        if used + slice_sets > budget:
            return kept, True
        kept.extend(slice_recs)
        used += slice_sets
    return kept, False


def isoperimetry_report(
    g: DarnedLattice,
    connected_cap: int = 6,
    ball_radius: int = 16,
    star_hops: int = 2,
    ball_centers=None,
) -> IsoReport:
    report = IsoReport(dim=g.dim, level=g.level)
    if connected_cap > 0:
        report.records.extend(connected_minima(g, connected_cap))
    if ball_radius >= 0:
        report.records.extend(ball_minima(g, ball_radius, centers=ball_centers))
    if g.has_star and star_hops >= 0:
        report.records.extend(star_neighborhood_records(g, star_hops))
    report.kj_count, report.kj_measure = region_lattice_mass(g)
    return report
