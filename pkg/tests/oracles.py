"""Independent reference implementations used to pin the production code.

Everything here is written from the definitions, in the slowest obvious
way, sharing no code path with the package internals: dict-of-sets graph
construction, frozenset enumeration, Fraction arithmetic with a symbolic
epsilon for the partition modulus, and dense linear algebra oracles.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

STAR = "*"


# ---------------------------------------------------------------------------
# graph construction from first principles


def brute_force_lattice(region, level: int, window_radius: float) -> dict:
    """Vertices, edges, star edges and measure of a darned lattice.

    Grid points live in integer units; a vertex is any in-window grid
    point outside the closed region, a regular edge any grid segment
    between surviving vertices that misses the region, and a vertex gets
    one star edge as soon as any of its 2d full-lattice unit segments
    meets the region.
    """
    d = region.dim if region is not None else 2
    h = 2.0**-level
    R = int(round(window_radius / h))
    kept = set()
    for k in itertools.product(range(-R, R + 1), repeat=d):
        p = [ki * h for ki in k]
        if region is None or not region.contains(p):
            kept.add(k)
    edges = set()
    star_flag = {}
    units = []
    for i in range(d):
        e = [0] * d
        e[i] = 1
        units.append(tuple(e))
    for k in kept:
        touches = False
        for e in units:
            for sgn in (1, -1):
                nb = tuple(ki + sgn * ei for ki, ei in zip(k, e))
                if region is not None and region.segment_intersects(
                    [ki * h for ki in k], [ni * h for ni in nb]
                ):
                    touches = True
        star_flag[k] = touches
        for e in units:
            nb = tuple(ki + ei for ki, ei in zip(k, e))
            if nb in kept and (
                region is None
                or not region.segment_intersects(
                    [ki * h for ki in k], [ni * h for ni in nb]
                )
            ):
                edges.add(frozenset((k, nb)))
    star_edges = {frozenset((k, STAR)) for k, f in star_flag.items() if f}
    degree = {k: 0 for k in kept}
    for e in edges:
        for k in e:
            degree[k] += 1
    for k, f in star_flag.items():
        if f:
            degree[k] += 1
    star_degree = len(star_edges)
    unit = Fraction(1, 2**level) ** d / (2 * d)
    measure = {k: unit * degree[k] for k in kept}
    if star_degree:
        measure[STAR] = unit * star_degree
    return {
        "dim": d,
        "level": level,
        "vertices": kept,
        "edges": edges,
        "star_edges": star_edges,
        "star_degree": star_degree,
        "degree": degree,
        "measure": measure,
        "total_measure": sum(measure.values(), Fraction(0)),
    }


def production_edge_set(g) -> tuple[set, set]:
    """The builder's edges re-expressed in grid-coordinate tuples."""
    coords = [tuple(int(c) for c in row) for row in g.coords]
    name = {i: coords[i] for i in range(g.n_regular)}
    if g.has_star:
        name[g.star_id] = STAR
    regular = set()
    star = set()
    for u in range(g.n_vertices):
        for v in g.neighbors(u):
            e = frozenset((name[u], name[int(v)]))
            if STAR in e:
                star.add(e)
            else:
                regular.add(e)
    return regular, star


# ---------------------------------------------------------------------------
# connected-set enumeration by frozenset growth


def connected_sets(adj: dict, max_size: int) -> dict[int, set[frozenset]]:
    """All connected vertex sets up to max_size, keyed by size."""
    out = {s: set() for s in range(1, max_size + 1)}
    frontier = {frozenset((v,)) for v in adj}
    out[1] = set(frontier)
    for size in range(2, max_size + 1):
        nxt = set()
        for s in frontier:
            reach = set().union(*(adj[v] for v in s)) - s
            for w in reach:
                nxt.add(s | {w})
        out[size] = nxt
        frontier = nxt
    return out


def adjacency_dict(g) -> dict:
    return {u: set(int(v) for v in g.neighbors(u)) for u in range(g.n_vertices)}


def iso_ratio_reference(g, ids) -> float:
    """ratio(A) from the definition, no shared helpers."""
    ids = set(int(v) for v in ids)
    d, h = g.dim, g.spacing
    cross = 0
    for u in ids:
        for v in g.neighbors(u):
            if int(v) not in ids:
                cross += 1
    cut = cross * h**d / (2 * d)
    m = sum(float(g.measure[v]) for v in ids)
    return cut / (h * m ** ((d - 1) / d))


# ---------------------------------------------------------------------------
# partition modulus oracle over Q[eps]
#
# Times are (Fraction, int) pairs q + n*eps with eps infinitesimal; this
# makes strict inequalities exact.  Every float is a dyadic rational, so
# Fraction(t) is lossless on real simulated paths too.


def _q(x) -> tuple[Fraction, int]:
    return (Fraction(x), 0)


def _le(a, b) -> bool:
    return a[0] < b[0] or (a[0] == b[0] and a[1] <= b[1])


def _add(a, b) -> tuple[Fraction, int]:
    return (a[0] + b[0], a[1] + b[1])


def _max(a, b):
    return b if _le(a, b) else a


def wrho_oracle(times, verts, T, theta, rho) -> float:
    """Exact modulus: min over partitions of the max interval diameter.

    A cut before jump k either sits exactly on the jump (mode E: the new
    interval starts with the arriving vertex k) or strictly inside the
    preceding holding interval (mode I: vertex k-1 is still current at
    the cut, so it lands in both intervals).  Interior gaps must be
    >= theta; the tail interval may be shorter, except that a terminal
    jump exactly at T may be isolated by one last cut at T, itself a
    full theta after its predecessor.  Feasibility of a cut pattern is
    decided by greedy earliest placement in Q[eps].
    """
    n = len(times)
    if n == 0:
        return 0.0
    th = _q(theta)
    qt = [Fraction(float(t)) for t in times]
    qT = Fraction(float(T))

    def diameter(vs) -> float:
        best = 0.0
        vl = sorted(set(int(v) for v in vs))
        for i in range(len(vl)):
            for j in range(i + 1, len(vl)):
                best = max(best, rho(vl[i], vl[j]))
        return best

    def feasible(combo, modes, terminal) -> bool:
        prev = _q(0)
        for k, mode in zip(combo, modes):
            lo = _add(prev, th)
            if mode == "E":
                pos = (qt[k], 0)
                if not _le(lo, pos):
                    return False
            else:
                pos = _max(lo, (qt[k - 1], 1))
                if not _le(pos, (qt[k], -1)):
                    return False
            prev = pos
        if terminal and not _le(_add(prev, th), (qT, 0)):
            return False
        return True

    best = diameter(verts[:n])  # the trivial one-interval partition
    cells = list(range(1, n))
    for r in range(1, len(cells) + 1):
        for combo in itertools.combinations(cells, r):
            for modes in itertools.product("EI", repeat=r):
                for terminal in (False, True):
                    if terminal and qt[n - 1] != qT:
                        continue
                    if terminal and combo[-1] == n - 1 and modes[-1] == "E":
                        continue  # an E cut there already sits at T
                    if not feasible(combo, modes, terminal):
                        continue
                    # interval ending at a cut in cell k holds events
                    # ..k-1 either way; the next one starts at k (E) or
                    # k-1 (I, pre-jump vertex shared)
                    bounds = [(0, None)]
                    for k, mode in zip(combo, modes):
                        s, _ = bounds[-1]
                        bounds[-1] = (s, k)
                        bounds.append((k if mode == "E" else k - 1, None))
                    s, _ = bounds[-1]
                    bounds[-1] = (s, n - 1 if terminal else n)
                    worst = 0.0
                    for s, e in bounds:
                        worst = max(worst, diameter(verts[s:e]))
                    best = min(best, worst)
    # terminal cut alone, no interior cuts
    if n >= 2 and qt[n - 1] == qT and _le(th, (qT, 0)):
        best = min(best, diameter(verts[: n - 1]))
    return best


def quotient_rho(g):
    """Scalar quotient metric on vertex ids, recomputed per call.

    rho(x, y) = min(|x - y|, dist(x, K) + dist(y, K)) with the star at
    distance dist(x, K) from x and 0 from itself.
    """
    pos = g.positions()

    def dK(v: int) -> float:
        if g.region is None:
            return math.inf
        return 0.0 if v == g.star_id else g.region.distance(pos[v])

    def rho(u: int, v: int) -> float:
        if u == v:
            return 0.0
        if u == g.star_id or v == g.star_id:
            return dK(u) + dK(v)
        return min(float(np.linalg.norm(pos[u] - pos[v])), dK(u) + dK(v))

    return rho


# ---------------------------------------------------------------------------
# linear-algebra oracles


def dense_transition(g, t: float, rate_mode: str = "paper") -> np.ndarray:
    """P_t = expm(t L) on a small graph, straight from the generator."""
    n = g.n_vertices
    deg = g.degrees.astype(float)
    A = np.zeros((n, n))
    for u in range(n):
        for v in g.neighbors(u):
            A[u, int(v)] += 1.0 / deg[u]
    rate = 4.0**g.level * (g.dim if rate_mode == "matched" else 1.0)
    L = rate * (A - np.eye(n))
    return scipy.linalg.expm(t * L)


def harmonic_hitting(g, targets, stop, start: int) -> float:
    """P[jump chain reaches targets before stop], by sparse solve."""
    n = g.n_vertices
    t_mask = np.zeros(n, bool)
    t_mask[np.asarray(list(targets), int)] = True
    s_mask = np.zeros(n, bool)
    s_mask[np.asarray(list(stop), int)] = True
    interior = ~(t_mask | s_mask)
    if not interior[start]:
        return 1.0 if t_mask[start] else 0.0
    ids = np.flatnonzero(interior)
    idx = -np.ones(n, np.int64)
    idx[ids] = np.arange(ids.size)
    rows, cols, vals = [], [], []
    b = np.zeros(ids.size)
    for u in ids:
        nbrs = g.neighbors(int(u))
        w = 1.0 / len(nbrs)
        rows.append(idx[u])
        cols.append(idx[u])
        vals.append(1.0)
        for v in nbrs:
            v = int(v)
            if t_mask[v]:
                b[idx[u]] += w
            elif not s_mask[v]:
                rows.append(idx[u])
                cols.append(idx[v])
                vals.append(-w)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(ids.size, ids.size))
    p = spla.spsolve(A, b)
    return float(p[idx[start]])
