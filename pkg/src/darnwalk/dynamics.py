"""Continuous-time random walks on darned lattices.

The walk holds at every vertex for an exponential time with a constant
level rate, then jumps to a uniformly chosen neighbour.  With the level
rate ``4**j`` the interior motion approximates a Brownian motion with
per-coordinate variance rate ``1/d``; the "matched" rate ``d * 4**j``
rescales time so the limit carries the standard per-coordinate rate 1.

Each path consumes its own counter-based random stream: jump ``n`` reads
counters ``2n`` (holding time, by inversion of the exponential CDF) and
``2n + 1`` (neighbour choice).  Results are therefore independent of
thread count and chunking.  Paths that reach the window face are
censored there and reported separately; ``window_mode="conservative"``
instead keeps walking on the truncated graph (face vertices simply have
fewer neighbours), which is the exact dynamic the series oracle in
:mod:`darnwalk.spectral` integrates.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import numba
from numba import njit, prange

from .lattice import DarnedLattice, quotient_metric_table

_U1 = np.uint64(1)
_U2 = np.uint64(2)
_U11 = np.uint64(11)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_UGAMMA = np.uint64(0x9E3779B97F4A7C15)
_UM1 = np.uint64(0xBF58476D1CE4E5B9)
_UM2 = np.uint64(0x94D049BB133111EB)
_D53 = 2.0**-53


def _apply_thread_cap() -> None:
    cap = os.environ.get("DARNWALK_THREADS")
    if cap:
        try:
            n = max(1, int(cap))
        except ValueError:
            return
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> _U30)) * _UM1
    z = (z ^ (z >> _U27)) * _UM2
    return z ^ (z >> _U31)


@njit(inline="always")
def _stream_key(seed, stream):
    return _mix(_mix(seed) + stream * _UGAMMA)


@njit(inline="always")
def _u01(key, counter):
    return (_mix(key + (counter + _U1) * _UGAMMA) >> _U11) * _D53


@njit(cache=True)
def _rng_probe(seed, streams, counters):
    """Test hook: raw uniforms for given (stream, counter) pairs."""
    out = np.empty(len(streams))
    for i in range(len(streams)):
        key = _stream_key(seed, streams[i])
        out[i] = _u01(key, counters[i])
    return out


@njit(cache=True, parallel=True)
def _ensemble_kernel(
    indptr,
    indices,
    rate,
    T,
    start,
    seed,
    base_stream,
    n_paths,
    marg_times,
    censor,
    face_mask,
    star_id,
    rho,
    marg_vertex,
    exit_flag,
    exit_time,
    hit_star,
    sup_rho,
    n_jumps,
):
    nt = marg_times.size
    for p in prange(n_paths):
        key = _stream_key(seed, base_stream + np.uint64(p))
        ctr = np.uint64(0)
        v = start
        t = 0.0
        sup = rho[v]
        hs = 0.0 if v == star_id else np.nan
        ex = False
        ext = np.nan
        if censor and face_mask[v]:
            ex = True
            ext = 0.0
        k = 0
        nj = 0
        while not ex:
            u_hold = _u01(key, ctr)
            u_move = _u01(key, ctr + _U1)
            ctr += _U2
            tn = t - math.log1p(-u_hold) / rate
            while k < nt and marg_times[k] < tn:
                marg_vertex[p, k] = v
                k += 1
            if tn > T:
                break
            deg = indptr[v + 1] - indptr[v]
            idx = int(u_move * deg)
            if idx >= deg:
                idx = deg - 1
            v = indices[indptr[v] + idx]
            t = tn
            nj += 1
            r = rho[v]
            if r > sup:
                sup = r
            if v == star_id and math.isnan(hs):
                hs = t
            if censor and face_mask[v]:
                ex = True
                ext = t
        exit_flag[p] = ex
        exit_time[p] = ext
        hit_star[p] = hs
        sup_rho[p] = sup
        n_jumps[p] = nj


@njit(cache=True, parallel=True)
def _hitting_kernel(
    indptr,
    indices,
    rate,
    T,
    start,
    seed,
    base_stream,
    n_paths,
    target_mask,
    stop_mask,
    censor,
    face_mask,
    result,
    when,
):
    # result codes: 1 hit target, 0 reached stop set, -1 ran past T,
    # -2 censored at the window face.
    for p in prange(n_paths):
        key = _stream_key(seed, base_stream + np.uint64(p))
        ctr = np.uint64(0)
        v = start
        t = 0.0
        code = np.int8(-1)
        tt = np.nan
        if target_mask[v]:
            code = np.int8(1)
            tt = 0.0
        elif stop_mask[v]:
            code = np.int8(0)
            tt = 0.0
        elif censor and face_mask[v]:
            code = np.int8(-2)
            tt = 0.0
        else:
            while True:
                u_hold = _u01(key, ctr)
                u_move = _u01(key, ctr + _U1)
                ctr += _U2
                tn = t - math.log1p(-u_hold) / rate
                if tn > T:
                    break
                deg = indptr[v + 1] - indptr[v]
                idx = int(u_move * deg)
                if idx >= deg:
                    idx = deg - 1
                v = indices[indptr[v] + idx]
                t = tn
                if target_mask[v]:
                    code = np.int8(1)
                    tt = t
                    break
                if stop_mask[v]:
                    code = np.int8(0)
                    tt = t
                    break
                if censor and face_mask[v]:
                    code = np.int8(-2)
                    tt = t
                    break
        result[p] = code
        when[p] = tt


@njit(cache=True, parallel=True)
def _paths_kernel(
    indptr,
    indices,
    rate,
    T,
    start,
    seed,
    base_stream,
    n_paths,
    censor,
    face_mask,
    max_events,
    times_out,
    verts_out,
    n_events,
    exit_flag,
):
    for p in prange(n_paths):
        key = _stream_key(seed, base_stream + np.uint64(p))
        ctr = np.uint64(0)
        v = start
        t = 0.0
        times_out[p, 0] = 0.0
        verts_out[p, 0] = v
        n = 1
        ex = censor and face_mask[v]
        while not ex:
            u_hold = _u01(key, ctr)
            u_move = _u01(key, ctr + _U1)
            ctr += _U2
            tn = t - math.log1p(-u_hold) / rate
            if tn > T:
                break
            deg = indptr[v + 1] - indptr[v]
            idx = int(u_move * deg)
            if idx >= deg:
                idx = deg - 1
            v = indices[indptr[v] + idx]
            t = tn
            if n >= max_events:
                n = -1
                break
            times_out[p, n] = t
            verts_out[p, n] = v
            n += 1
            if censor and face_mask[v]:
                ex = True
        n_events[p] = n
        exit_flag[p] = ex


@njit(inline="always")
def _rho_pair(w, u, pos, distk, star_id):
    if w == u:
        return 0.0
    if w == star_id:
        return distk[u]
    if u == star_id:
        return distk[w]
    s = 0.0
    for i in range(pos.shape[1]):
        df = pos[w, i] - pos[u, i]
        s += df * df
    e = math.sqrt(s)
    ds = distk[w] + distk[u]
    return e if e < ds else ds


@njit(cache=True)
def _kmin_sweep(times, verts, n, delta, pos, distk, star_id, kmin, dvert, dmult, dlast):
    """For each prefix end k', the smallest k such that events k..k'-1
    stay within pairwise quotient distance delta, written to kmin[k'].

    Sliding window: when a newly added vertex sits further than delta
    from some content vertices, the window start must pass the last
    occurrence of every such offender; the surviving pairs were already
    within delta, so nothing needs recomputing after eviction.
    """
    lo = 0
    nd = 0
    kmin[0] = 0
    for idx in range(n):
        w = verts[idx]
        found = -1
        for i in range(nd):
            if dvert[i] == w:
                found = i
                break
        if found >= 0:
            dmult[found] += 1
            dlast[found] = idx
        else:
            need = lo - 1
            for i in range(nd):
                if _rho_pair(w, dvert[i], pos, distk, star_id) > delta:
                    if dlast[i] > need:
                        need = dlast[i]
            lo_req = need + 1
            while lo < lo_req:
                ev = verts[lo]
                for i in range(nd):
                    if dvert[i] == ev:
                        dmult[i] -= 1
                        if dmult[i] == 0:
                            nd -= 1
                            dvert[i] = dvert[nd]
                            dmult[i] = dmult[nd]
                            dlast[i] = dlast[nd]
                        break
                lo += 1
            dvert[nd] = w
            dmult[nd] = 1
            dlast[nd] = idx
            nd += 1
        kmin[idx + 1] = lo


@njit(inline="always")
def _pos_less(av, af, bv, bf):
    # positions are (value, flag) pairs, flag 0 = attainable, 1 = only
    # approachable from above; attainable wins at equal value
    return av < bv or (av == bv and af < bf)


@njit(cache=True)
def _osc_feasible(times, n, T, theta, kmin, dEv, dEf, dEset, dIv, dIf, dIset, qE, qI):
    """Can [0, T] be partitioned into intervals of length >= theta whose
    visited sets each have quotient diameter within the kmin tolerance?

    Partitions are 0 = t_0 < ... < t_m < T <= t_{m+1} with every gap at
    least theta; intervals are half-open on the right.  Dynamic program
    over cut placements: a cut before event k' sits either exactly at
    the jump time (mode E: the next interval starts with the arriving
    vertex) or strictly inside the preceding holding interval (mode I:
    the next interval also carries the pre-jump vertex, shifting its
    content window back by one event).  Each state keeps the smallest
    achievable cut position; sliding-window minima over the admissible
    previous cuts make the sweep linear.  The overshoot past T leaves
    the final interval length unconstrained, except that a partition
    point may also land exactly on a terminal jump at T.
    """
    if kmin[n] == 0:
        return True
    for k in range(1, n):
        dEset[k] = 0
        dIset[k] = 0
    hE = 0
    tE = 0
    hI = 0
    tI = 0
    for kp in range(1, n):
        if kp >= 2:
            ks = kp - 1
            if dEset[ks]:
                while tE > hE and not _pos_less(
                    dEv[qE[tE - 1]], dEf[qE[tE - 1]], dEv[ks], dEf[ks]
                ):
                    tE -= 1
                qE[tE] = ks
                tE += 1
            if dIset[ks]:
                while tI > hI and not _pos_less(
                    dIv[qI[tI - 1]], dIf[qI[tI - 1]], dIv[ks], dIf[ks]
                ):
                    tI -= 1
                qI[tI] = ks
                tI += 1
        while tE > hE and qE[hE] < kmin[kp]:
            hE += 1
        while tI > hI and qI[hI] < kmin[kp] + 1:
            hI += 1
        has = False
        bv = 0.0
        bf = np.uint8(0)
        if tE > hE:
            bv = dEv[qE[hE]]
            bf = dEf[qE[hE]]
            has = True
        if tI > hI:
            cv = dIv[qI[hI]]
            cf = dIf[qI[hI]]
            if not has or _pos_less(cv, cf, bv, bf):
                bv = cv
                bf = cf
                has = True
        L = times[kp - 1]
        R = times[kp]
        init_ok = kmin[kp] == 0
        eset = np.uint8(0)
        if R < T:
            if init_ok and R >= theta:
                eset = np.uint8(1)
            elif has:
                sv = bv + theta
                if R > sv or (R == sv and bf == 0):
                    eset = np.uint8(1)
        iv = 0.0
        iflag = np.uint8(0)
        iset = np.uint8(0)
        if init_ok:
            if theta > L:
                lv = theta
                lf = np.uint8(0)
            else:
                lv = L
                lf = np.uint8(1)
            if lv < R:
                iv = lv
                iflag = lf
                iset = np.uint8(1)
        if has:
            sv = bv + theta
            if sv > L:
                lv = sv
                lf = bf
            else:
                lv = L
                lf = np.uint8(1)
            if lv < R and (iset == 0 or _pos_less(lv, lf, iv, iflag)):
                iv = lv
                iflag = lf
                iset = np.uint8(1)
        dEv[kp] = R
        dEf[kp] = np.uint8(0)
        dEset[kp] = eset
        dIv[kp] = iv
        dIf[kp] = iflag
        dIset[kp] = iset
    kt = kmin[n]
    k0 = kt if kt > 1 else 1
    for k in range(k0, n):
        if dEset[k]:
            return True
    k0 = kt + 1 if kt + 1 > 1 else 1
    for k in range(k0, n):
        if dIset[k]:
            return True
    if times[n - 1] == T:
        km1 = kmin[n - 1]
        if km1 == 0 and T >= theta:
            return True
        k0 = km1 if km1 > 1 else 1
        for k in range(k0, n):
            if dEset[k]:
                s = dEv[k] + theta
                if T > s or (T == s and dEf[k] == 0):
                    return True
        k0 = km1 + 1 if km1 + 1 > 1 else 1
        for k in range(k0, n):
            if dIset[k]:
                s = dIv[k] + theta
                if T > s or (T == s and dIf[k] == 0):
                    return True
    return False


@njit(cache=True, parallel=True)
def _osc_grid_kernel(times, verts, n_events, T, thetas, deltas, pos, distk, star_id, out):
    n_paths = n_events.size
    for p in prange(n_paths):
        n = n_events[p]
        kmin = np.empty(n + 1, np.int64)
        dvert = np.empty(n, np.int64)
        dmult = np.empty(n, np.int64)
        dlast = np.empty(n, np.int64)
        dEv = np.empty(n, np.float64)
        dEf = np.empty(n, np.uint8)
        dEset = np.empty(n, np.uint8)
        dIv = np.empty(n, np.float64)
        dIf = np.empty(n, np.uint8)
        dIset = np.empty(n, np.uint8)
        qE = np.empty(n, np.int64)
        qI = np.empty(n, np.int64)
        tp = times[p]
        vp = verts[p]
        for b in range(deltas.size):
            _kmin_sweep(tp, vp, n, deltas[b], pos, distk, star_id, kmin, dvert, dmult, dlast)
            for a in range(thetas.size):
                if not _osc_feasible(
                    tp, n, T, thetas[a], kmin, dEv, dEf, dEset, dIv, dIf, dIset, qE, qI
                ):
                    out[p, a, b] = 1


@dataclass(frozen=True)
class WalkConfig:
    """Simulation parameters shared by a path ensemble."""

    T_max: float
    seed: int
    num_paths: int = 1
    rate_mode: str = "paper"
    window_mode: str = "censor"

    def __post_init__(self):
        if self.T_max <= 0:
            raise ValueError("T_max must be positive")
        if self.num_paths < 1:
            raise ValueError("num_paths must be at least 1")
        if self.rate_mode not in ("paper", "matched"):
            raise ValueError(f"unknown rate_mode '{self.rate_mode}'")
        if self.window_mode not in ("censor", "conservative"):
            raise ValueError(f"unknown window_mode '{self.window_mode}'")

    def rate(self, g: DarnedLattice) -> float:
        return level_rate(g, self.rate_mode)


def level_rate(g: DarnedLattice, rate_mode: str = "paper") -> float:
    base = 2.0 ** (2 * g.level)
    return base if rate_mode == "paper" else g.dim * base


def face_mask(g: DarnedLattice) -> np.ndarray:
    """Vertices on the window face (any coordinate at +-W)."""
    R = int(round(g.window_radius * 2**g.level))
    mask = np.zeros(g.n_vertices, dtype=bool)
    mask[: g.n_regular] = (np.abs(g.coords) == R).any(axis=1)
    return mask


def step_kernel(g: DarnedLattice, v: int) -> tuple[np.ndarray, np.ndarray]:
    """One-step roadmap at ``v``: neighbour ids and their uniform weights."""
    nbrs = g.neighbors(v)
    if len(nbrs) == 0:
        raise ValueError(f"vertex {v} has no neighbours")
    return nbrs, np.full(len(nbrs), 1.0 / len(nbrs))


@dataclass
class WalkPath:
    """One realised trajectory: arrival times and vertices, cadlag."""

    times: np.ndarray
    vertices: np.ndarray
    T: float
    hit_star_time: float
    exited_window: bool
    seed: int
    stream: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.vertices = np.asarray(self.vertices, dtype=np.int64)
        if len(self.times) != len(self.vertices) or len(self.times) == 0:
            raise ValueError("times and vertices must align and be nonempty")
        if self.times[0] != 0.0 or (np.diff(self.times) <= 0).any():
            raise ValueError("times must start at 0 and strictly increase")
        if self.times[-1] > self.T:
            raise ValueError("events past T")

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1

    @property
    def start(self) -> int:
        return int(self.vertices[0])

    @property
    def final_vertex(self) -> int:
        return int(self.vertices[-1])

    def vertex_at(self, t: float) -> int:
        if t < 0 or t > self.T:
            raise ValueError("time outside [0, T]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.vertices[k])


def _star_or_minus_one(g: DarnedLattice) -> int:
    return g.star_id if g.has_star else -1


def _check_start(g: DarnedLattice, start: int) -> None:
    if not 0 <= start < g.n_vertices:
        raise ValueError(f"start vertex {start} out of range")


def _event_buffer_size(rate: float, T: float) -> int:
    mean = rate * T
    return int(mean + 12.0 * math.sqrt(mean + 1.0)) + 64


def sample_path(g: DarnedLattice, cfg: WalkConfig, start: int, stream: int = 0) -> WalkPath:
    """Simulate one path; ``(cfg.seed, stream)`` pins it bitwise."""
    _check_start(g, start)
    _apply_thread_cap()
    rate = cfg.rate(g)
    censor = cfg.window_mode == "censor"
    fmask = face_mask(g)
    max_events = _event_buffer_size(rate, cfg.T_max)
    while True:
        times = np.zeros((1, max_events))
        verts = np.zeros((1, max_events), dtype=np.int64)
        n_events = np.zeros(1, dtype=np.int64)
        exited = np.zeros(1, dtype=bool)
        _paths_kernel(
            g.indptr,
            g.indices,
            rate,
            cfg.T_max,
            np.int64(start),
            np.uint64(cfg.seed & ((1 << 64) - 1)),
            np.uint64(stream),
            1,
            censor,
            fmask,
            max_events,
            times,
            verts,
            n_events,
            exited,
        )
        n = int(n_events[0])
        if n > 0:
            break
        max_events *= 2
    vs = verts[0, :n].copy()
    ts = times[0, :n].copy()
    star = _star_or_minus_one(g)
    hits = np.flatnonzero(vs == star) if star >= 0 else np.array([], dtype=int)
    hit_time = float(ts[hits[0]]) if len(hits) else math.nan
    return WalkPath(
        times=ts,
        vertices=vs,
        T=cfg.T_max,
        hit_star_time=hit_time,
        exited_window=bool(exited[0]),
        seed=cfg.seed,
        stream=stream,
    )


@dataclass
class EnsembleStats:
    """Streaming per-path statistics for one ensemble."""

    marginal_times: np.ndarray
    marginal_vertex: np.ndarray  # (num_paths, n_times), -1 once censored
    exited: np.ndarray
    exit_time: np.ndarray
    hit_star_time: np.ndarray
    sup_rho: np.ndarray
    n_jumps: np.ndarray
    start: int
    rate: float

    @property
    def num_paths(self) -> int:
        return len(self.exited)

    @property
    def exit_fraction(self) -> float:
        return float(self.exited.mean())


def simulate_ensemble(
    g: DarnedLattice,
    cfg: WalkConfig,
    start: int,
    marginal_times=(),
    *,
    base_stream: int = 0,
    rho_source: int | None = None,
    rho_table: np.ndarray | None = None,
) -> EnsembleStats:
    """Run ``cfg.num_paths`` independent paths, keeping O(1) state per path.

    ``sup_rho`` tracks the running maximum of the quotient metric from
    ``rho_source`` (default: the start vertex) over the path's lifetime.
    Passing ``rho_table`` replaces that metric with an arbitrary per-vertex
    score, e.g. a negated clearance so the maximum tracks the closest
    approach to a set.
    """
    _check_start(g, start)
    _apply_thread_cap()
    mt = np.asarray(sorted(marginal_times), dtype=float)
    if mt.size and (mt[0] < 0 or mt[-1] > cfg.T_max):
        raise ValueError("marginal times must lie in [0, T_max]")
    rate = cfg.rate(g)
    if rho_table is not None:
        rho = np.asarray(rho_table, dtype=float)
        if rho.shape != (g.n_vertices,):
            raise ValueError("rho_table must assign one value per vertex")
    else:
        rho = quotient_metric_table(g, start if rho_source is None else rho_source)
    censor = cfg.window_mode == "censor"
    fmask = face_mask(g)
    n = cfg.num_paths
    marg_vertex = np.full((n, mt.size), -1, dtype=np.int64)
    exit_flag = np.zeros(n, dtype=bool)
    exit_time = np.zeros(n)
    hit_star = np.zeros(n)
    sup_rho = np.zeros(n)
    n_jumps = np.zeros(n, dtype=np.int64)
    _ensemble_kernel(
        g.indptr,
        g.indices,
        rate,
        cfg.T_max,
        np.int64(start),
        np.uint64(cfg.seed & ((1 << 64) - 1)),
        np.uint64(base_stream),
        n,
        mt,
        censor,
        fmask,
        np.int64(_star_or_minus_one(g)),
        rho,
        marg_vertex,
        exit_flag,
        exit_time,
        hit_star,
        sup_rho,
        n_jumps,
    )
    return EnsembleStats(
        marginal_times=mt,
        marginal_vertex=marg_vertex,
        exited=exit_flag,
        exit_time=exit_time,
        hit_star_time=hit_star,
        sup_rho=sup_rho,
        n_jumps=n_jumps,
        start=start,
        rate=rate,
    )


@dataclass
class MarginalSample:
    """Vertex occupation counts at fixed times over an ensemble."""

    times: np.ndarray
    counts: np.ndarray  # (n_times, n_vertices) int64
    num_paths: int
    n_exited: int

    def fractions(self, k: int = 0) -> np.ndarray:
        alive = self.counts[k].sum()
        if alive == 0:
            raise ValueError("no surviving paths at this time")
        return self.counts[k] / alive


def marginal(g: DarnedLattice, cfg: WalkConfig, start: int, times) -> MarginalSample:
    """Occupation counts at each requested time; censored paths excluded."""
    if np.isscalar(times):
        times = [times]
    stats = simulate_ensemble(g, cfg, start, marginal_times=times)
    nt = stats.marginal_times.size
    counts = np.zeros((nt, g.n_vertices), dtype=np.int64)
    for k in range(nt):
        col = stats.marginal_vertex[:, k]
        alive = col[col >= 0]
        counts[k] = np.bincount(alive, minlength=g.n_vertices)
    return MarginalSample(
        times=stats.marginal_times,
        counts=counts,
        num_paths=cfg.num_paths,
        n_exited=int(stats.exited.sum()),
    )


@dataclass
class HittingStats:
    """First-passage outcome counts for a target set."""

    n_hit: int
    n_stopped: int
    n_censored: int
    n_exited: int
    num_paths: int
    mean_hit_time: float

    @property
    def n_decided(self) -> int:
        return self.n_hit + self.n_stopped

    @property
    def probability(self) -> float:
        if self.n_decided == 0:
            raise ValueError("no decided paths")
        return self.n_hit / self.n_decided

    @property
    def standard_error(self) -> float:
        n = self.n_decided
        p = self.probability
        return math.sqrt(max(p * (1.0 - p), 1e-300) / n)


def hitting_stats(
    g: DarnedLattice,
    cfg: WalkConfig,
    start: int,
    targets,
    stop=None,
) -> HittingStats:
    """Probability of reaching ``targets`` before ``stop`` / T / the face."""
    _check_start(g, start)
    _apply_thread_cap()
    target_mask = np.zeros(g.n_vertices, dtype=bool)
    target_mask[np.asarray(list(targets), dtype=int)] = True
    stop_mask = np.zeros(g.n_vertices, dtype=bool)
    if stop is not None:
        stop_mask[np.asarray(list(stop), dtype=int)] = True
    rate = cfg.rate(g)
    censor = cfg.window_mode == "censor"
    fmask = face_mask(g)
    n = cfg.num_paths
    result = np.zeros(n, dtype=np.int8)
    when = np.zeros(n)
    _hitting_kernel(
        g.indptr,
        g.indices,
        rate,
        cfg.T_max,
        np.int64(start),
        np.uint64(cfg.seed & ((1 << 64) - 1)),
        np.uint64(0),
        n,
        target_mask,
        stop_mask,
        censor,
        fmask,
        result,
        when,
    )
    hit = result == 1
    return HittingStats(
        n_hit=int(hit.sum()),
        n_stopped=int((result == 0).sum()),
        n_censored=int((result == -1).sum()),
        n_exited=int((result == -2).sum()),
        num_paths=n,
        mean_hit_time=float(when[hit].mean()) if hit.any() else math.nan,
    )


def _rho_arrays(g: DarnedLattice):
    pos = np.zeros((g.n_vertices, g.dim))
    pos[: g.n_regular] = g.positions()
    if g.region is None:
        distk = np.full(g.n_vertices, np.inf)
    else:
        distk = g.distance_to_region.copy()
    return pos, distk


def _osc_workspaces(n: int):
    return (
        np.empty(n, np.float64),
        np.empty(n, np.uint8),
        np.empty(n, np.uint8),
        np.empty(n, np.float64),
        np.empty(n, np.uint8),
        np.empty(n, np.uint8),
        np.empty(n, np.int64),
        np.empty(n, np.int64),
    )


def oscillation_exceeds(g: DarnedLattice, path: WalkPath, theta: float, delta: float) -> bool:
    """Exact decision: is the path modulus at scale theta above delta?

    The modulus is the infimum, over partitions of [0, T] into half-open
    intervals of length at least theta (the final point may overshoot
    T), of the largest quotient-metric diameter any interval sweeps.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    pos, distk = _rho_arrays(g)
    n = len(path.vertices)
    star = np.int64(_star_or_minus_one(g))
    kmin = np.empty(n + 1, np.int64)
    dvert = np.empty(n, np.int64)
    dmult = np.empty(n, np.int64)
    dlast = np.empty(n, np.int64)
    _kmin_sweep(path.times, path.vertices, n, delta, pos, distk, star, kmin, dvert, dmult, dlast)
    return not _osc_feasible(path.times, n, path.T, theta, kmin, *_osc_workspaces(n))


def oscillation_modulus(g: DarnedLattice, path: WalkPath, theta: float) -> float:
    """Exact modulus value at scale theta.

    Every interval diameter is a pairwise quotient distance of visited
    vertices (or zero), so the infimum sits in that finite candidate set
    and bisection over it with the exact exceedance decision finds it.
    """
    distinct = np.unique(path.vertices)
    pos, distk = _rho_arrays(g)
    star = _star_or_minus_one(g)
    vals = {0.0}
    for a in range(len(distinct)):
        for b in range(a + 1, len(distinct)):
            vals.add(_rho_pair(distinct[a], distinct[b], pos, distk, star))
    cand = sorted(vals)
    lo, hi = 0, len(cand) - 1
    if oscillation_exceeds(g, path, theta, cand[hi]):
        return float(np.inf)  # unreachable: the full-path diameter always works
    while lo < hi:
        mid = (lo + hi) // 2
        if oscillation_exceeds(g, path, theta, cand[mid]):
            lo = mid + 1
        else:
            hi = mid
    return float(cand[lo])


def path_statistics(g: DarnedLattice, paths, thetas=(0.05,)) -> list[dict]:
    """Per-path sup distance, escape flag, and modulus over a theta grid."""
    out = []
    for path in paths:
        rho = quotient_metric_table(g, path.start)
        entry = {
            "sup_rho": float(rho[path.vertices].max()),
            "exited_window": bool(path.exited_window),
            "hit_star_time": path.hit_star_time,
            "modulus": {float(th): oscillation_modulus(g, path, th) for th in thetas},
        }
        out.append(entry)
    return out


@dataclass
class OscillationCounts:
    """Exceedance counts of the path modulus over a (theta, delta) grid."""

    thetas: np.ndarray
    deltas: np.ndarray
    exceed_counts: np.ndarray  # (n_theta, n_delta) over non-exited paths
    n_paths_used: int
    n_exited: int


def oscillation_grid(
    g: DarnedLattice,
    cfg: WalkConfig,
    start: int,
    thetas,
    deltas,
    *,
    chunk: int = 1024,
    base_stream: int = 0,
) -> OscillationCounts:
    """Empirical P[w_rho > delta] on a grid, streaming paths in chunks."""
    _check_start(g, start)
    _apply_thread_cap()
    thetas = np.asarray(sorted(thetas), dtype=float)
    deltas = np.asarray(sorted(deltas), dtype=float)
    if thetas.size == 0 or deltas.size == 0 or thetas[0] <= 0:
        raise ValueError("need positive theta and at least one delta")
    rate = cfg.rate(g)
    censor = cfg.window_mode == "censor"
    fmask = face_mask(g)
    pos, distk = _rho_arrays(g)
    star = np.int64(_star_or_minus_one(g))
    max_events = _event_buffer_size(rate, cfg.T_max)
    counts = np.zeros((thetas.size, deltas.size), dtype=np.int64)
    used = 0
    exited_total = 0
    seed = np.uint64(cfg.seed & ((1 << 64) - 1))
    done = 0
    while done < cfg.num_paths:
        m = min(chunk, cfg.num_paths - done)
        times = np.zeros((m, max_events))
        verts = np.zeros((m, max_events), dtype=np.int64)
        n_events = np.zeros(m, dtype=np.int64)
        exited = np.zeros(m, dtype=bool)
        _paths_kernel(
            g.indptr,
            g.indices,
            rate,
            cfg.T_max,
            np.int64(start),
            seed,
            np.uint64(base_stream + done),
            m,
            censor,
            fmask,
            max_events,
            times,
            verts,
            n_events,
            exited,
        )
        if (n_events < 0).any():
            max_events *= 2
            continue
        keep = ~exited
        exited_total += int(exited.sum())
        if keep.any():
            tk = np.ascontiguousarray(times[keep])
            vk = np.ascontiguousarray(verts[keep])
            nk = n_events[keep]
            flags = np.zeros((len(nk), thetas.size, deltas.size), dtype=np.uint8)
            _osc_grid_kernel(tk, vk, nk, cfg.T_max, thetas, deltas, pos, distk, star, flags)
            counts += flags.sum(axis=0, dtype=np.int64)
            used += len(nk)
        done += m
    return OscillationCounts(
        thetas=thetas,
        deltas=deltas,
        exceed_counts=counts,
        n_paths_used=used,
        n_exited=exited_total,
    )
