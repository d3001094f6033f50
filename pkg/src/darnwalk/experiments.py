"""Desk-scale numerical studies on darned lattices.

Four drivers sit on top of the simulation and kernel layers:

- level_consistency: two-sample distances between marginals at consecutive
  levels, gated by an exact-kernel chi-square check where the graph is
  small enough to uniformize.
- tightness_probe: excursion and path-modulus tail probabilities on an
  (M, theta, delta) grid, compared across levels.
- star_occupation: mass outside the full-degree set, with the level-3
  fraction cross-checked against the exact kernel row.
- bmd_comparison: annulus hitting probabilities against the classical
  closed forms, plus per-coordinate variance rates under both clocks.

``run`` executes a validated config end to end and writes JSON reports,
CSV tables, and a manifest.  Everything is a pure function of the config
and master seed; wall-clock timings go to a separate sidecar so reruns
are bitwise identical.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator
from scipy.stats import chi2

from .dynamics import WalkConfig, hitting_stats, oscillation_grid, simulate_ensemble
from .geometry import region_from_config
from .lattice import (
    DarnedLattice,
    build_lattice,
    build_plain_lattice,
    quotient_metric_table,
)
from .rng import derive_seed
from .spectral import transition_rows

SCHEMA_VERSION = 1
GATE_SIZE_LIMIT = 100_000

EXPERIMENT_NAMES = (
    "level_consistency",
    "tightness_probe",
    "star_occupation",
    "bmd_comparison",
)

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": [
        "dim",
        "region",
        "levels",
        "window",
        "x0",
        "T",
        "num_paths",
        "seed",
        "experiments",
        "out_dir",
    ],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "dim": {"type": "integer", "minimum": 2, "maximum": 4},
        "region": {"oneOf": [{"type": "null"}, {"type": "object"}]},
        "levels": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1, "maximum": 12},
            "minItems": 1,
            "uniqueItems": True,
        },
        "window": {"type": "number", "exclusiveMinimum": 0},
        "x0": {
            "oneOf": [
                {"type": "array", "items": {"type": "number"}, "minItems": 1},
                {"const": "star"},
            ]
        },
        "T": {"type": "number", "exclusiveMinimum": 0},
        "num_paths": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "experiments": {
            "type": "array",
            "items": {"enum": list(EXPERIMENT_NAMES)},
            "uniqueItems": True,
        },
        "out_dir": {"type": "string", "minLength": 1},
        "rate_mode": {"enum": ["paper", "matched"]},
        "window_mode": {"enum": ["censor", "conservative"]},
        "t_grid": {
            "type": "array",
            "items": {"type": "number", "minimum": 0},
            "minItems": 1,
        },
        "consistency_t": {"type": "number", "exclusiveMinimum": 0},
        "escape_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "bin_width": {"type": "number", "exclusiveMinimum": 0},
        "star_delta": {"type": "number", "exclusiveMinimum": 0},
        "M_grid": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 1,
        },
        "theta_grid": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 1,
        },
        "delta1_grid": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 1,
        },
        "tightness_paths": {"type": "integer", "minimum": 1},
        "annulus_paths": {"type": "integer", "minimum": 1},
        "annulus_outer": {"type": "number", "exclusiveMinimum": 0},
        "annulus_T": {"type": "number", "exclusiveMinimum": 0},
        "variance_paths": {"type": "integer", "minimum": 1},
        "variance_t": {"type": "number", "exclusiveMinimum": 0},
        "variance_level": {"type": "integer", "minimum": 1},
        "variance_margin": {"type": "number", "minimum": 0},
        "variance_x0": {"type": "array", "items": {"type": "number"}},
    },
}

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "dim": 2,
    "region": {"shape": "ball", "center": [0.0, 0.0], "radius": 0.25},
    "levels": [3, 4, 5, 6],
    "window": 4.0,
    "x0": [0.5, 0.0],
    "T": 1.0,
    "num_paths": 100_000,
    "seed": 0,
    "experiments": ["level_consistency"],
    "out_dir": "runs/default",
    "rate_mode": "paper",
    "window_mode": "censor",
    "t_grid": [0.25, 0.5, 1.0],
    "consistency_t": 1.0,
    "escape_threshold": 0.01,
    "bin_width": 0.5,
    "star_delta": 0.2,
    "M_grid": [2.0, 2.5, 3.0],
    "theta_grid": [0.05, 0.1],
    "delta1_grid": [0.75, 1.0],
    "tightness_paths": 10_000,
    "annulus_paths": 2000,
    "annulus_outer": 1.0,
    "annulus_T": 8.0,
    "variance_paths": 100_000,
    "variance_t": 0.125,
    "variance_margin": 0.1,
}


class ConfigError(ValueError):
    """Raised when a run config fails validation; message lists JSON pointers."""


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully defaulted experiment configuration."""

    data: dict

    def __getattr__(self, name):
        try:
            return self.data[name]
        except KeyError:
            raise AttributeError(name) from None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("/: config must be a JSON object")
        merged = dict(_DEFAULTS)
        merged.update(raw)
        if "variance_x0" not in merged:
            d = merged.get("dim", 2)
            if isinstance(d, int):
                # keep several sigma of clearance from the darned region at
                # variance_t, otherwise conditioning on avoidance clips the
                # displacement tail and biases the rate low
                merged["variance_x0"] = [2.0] + [0.0] * (d - 1)
        validator = Draft202012Validator(RUN_CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(merged), key=lambda e: list(e.absolute_path))
        if errors:
            lines = [f"{_pointer(e.absolute_path)}: {e.message}" for e in errors]
            raise ConfigError("invalid config:\n" + "\n".join(lines))
        cfg = cls(data=merged)
        cfg._cross_checks()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"/: config file is not valid JSON ({e})") from None
        return cls.from_dict(raw)

    def _cross_checks(self):
        d = self.data
        dim, levels, W, T = d["dim"], sorted(d["levels"]), d["window"], d["T"]
        region = self.region_object()
        if d["x0"] == "star":
            if region is None:
                raise ConfigError("/x0: star start needs a region")
            extra = set(d["experiments"]) - {"level_consistency"}
            if extra:
                raise ConfigError(
                    "/x0: star start is supported for level_consistency only"
                )
        else:
            x0 = d["x0"]
            if len(x0) != dim:
                raise ConfigError(f"/x0: expected {dim} coordinates, got {len(x0)}")
            scale = 2 ** min(levels)
            units = [c * scale for c in x0]
            if any(abs(u - round(u)) > 1e-9 for u in units):
                raise ConfigError(
                    f"/x0: must lie on the level-{min(levels)} grid (dyadic with 2^-{min(levels)} steps)"
                )
            if max(abs(c) for c in x0) >= W:
                raise ConfigError("/x0: must lie strictly inside the window")
            if region is not None and region.contains(np.asarray(x0, dtype=float)):
                raise ConfigError("/x0: lies inside the darning region")
        if region is None:
            needs_star = {"star_occupation", "bmd_comparison"} & set(d["experiments"])
            if needs_star:
                raise ConfigError(
                    f"/region: experiments {sorted(needs_star)} require a darning region"
                )
        if any(t > T for t in d["t_grid"]):
            raise ConfigError("/t_grid: marginal times must not exceed T")
        if d["consistency_t"] > T:
            raise ConfigError("/consistency_t: must not exceed T")

    def region_object(self):
        return region_from_config(self.data["region"])

    def canonical(self) -> dict:
        return json.loads(json.dumps(self.data, sort_keys=True))

    def config_hash(self) -> str:
        import hashlib

        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def sorted_levels(self) -> list[int]:
        return sorted(self.data["levels"])


def build_level(cfg: RunConfig, level: int, graphs: dict | None = None) -> DarnedLattice:
    """Graph for one level, cached across experiments of a run."""
    if graphs is not None and level in graphs:
        return graphs[level]
    region = cfg.region_object()
    if region is None:
        g = build_plain_lattice(cfg.dim, level, cfg.window)
    else:
        g = build_lattice(region, level, cfg.window)
    if graphs is not None:
        graphs[level] = g
    return g


def start_vertex(cfg: RunConfig, g: DarnedLattice) -> int:
    if cfg.x0 == "star":
        return g.star_id
    return g.vertex_at(cfg.x0)


# --------------------------------------------------------------------------
# two-sample machinery


def ks_distance(a, b) -> float:
    """Two-sample KS statistic; +inf entries model censored mass and keep
    full denominators."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    grid = np.unique(np.concatenate([a[np.isfinite(a)], b[np.isfinite(b)]]))
    if grid.size == 0:
        return 0.0
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    """Large-sample two-sample KS critical value c(alpha)*sqrt((n+m)/(n*m))."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def total_variation(counts_a, counts_b) -> float:
    ca = np.asarray(counts_a, dtype=float)
    cb = np.asarray(counts_b, dtype=float)
    return 0.5 * float(np.abs(ca / ca.sum() - cb / cb.sum()).sum())


def chi_square_gate(observed, probs, alpha: float = 0.01, min_expected: float = 5.0):
    """Pearson test of MC occupation counts against exact cell probabilities.

    Cells with expected count below ``min_expected`` are pooled; if the pool
    itself stays small it merges into the smallest retained cell.
    """
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(probs, dtype=float)
    n = obs.sum()
    exp = p * n
    big = exp >= min_expected
    o_cells = list(obs[big])
    e_cells = list(exp[big])
    pool_o = float(obs[~big].sum())
    pool_e = float(exp[~big].sum())
    if pool_e > 0 or pool_o > 0:
        if pool_e >= min_expected or not e_cells:
            o_cells.append(pool_o)
            e_cells.append(pool_e)
        else:
            k = int(np.argmin(e_cells))
            o_cells[k] += pool_o
            e_cells[k] += pool_e
    o = np.asarray(o_cells)
    e = np.asarray(e_cells)
    if len(e) < 2 or (e <= 0).any():
        raise ValueError("too few cells with positive expectation")
    stat = float(np.sum((o - e) ** 2 / e))
    dof = len(e) - 1
    pval = float(chi2.sf(stat, dof))
    return {
        "statistic": stat,
        "dof": dof,
        "p_value": pval,
        "alpha": alpha,
        "passed": bool(pval >= alpha),
        "n_cells": len(e),
    }


# --------------------------------------------------------------------------
# marginal sampling shared by the drivers


@dataclass
class _LevelMarginals:
    level: int
    graph: DarnedLattice
    start: int
    times: np.ndarray
    vertices: np.ndarray  # (paths, nt), -1 once censored
    exited: np.ndarray
    n_exited: int
    seed: int

    @property
    def escape_fraction(self) -> float:
        return self.n_exited / len(self.exited)


def _sample_level(cfg: RunConfig, g: DarnedLattice, label: str, n_paths: int) -> _LevelMarginals:
    seed = derive_seed(cfg.seed, label)
    wcfg = WalkConfig(
        T_max=cfg.T,
        seed=seed,
        num_paths=n_paths,
        rate_mode=cfg.rate_mode,
        window_mode=cfg.window_mode,
    )
    start = start_vertex(cfg, g)
    stats = simulate_ensemble(g, wcfg, start, marginal_times=cfg.t_grid)
    return _LevelMarginals(
        level=g.level,
        graph=g,
        start=start,
        times=stats.marginal_times,
        vertices=stats.marginal_vertex,
        exited=stats.exited,
        n_exited=int(stats.exited.sum()),
        seed=seed,
    )


def _region_anchor(cfg: RunConfig) -> np.ndarray:
    region = cfg.region_object()
    if region is None:
        return np.zeros(cfg.dim)
    lo, hi = region.bounding_box()
    return (np.asarray(lo) + np.asarray(hi)) / 2.0


def _rho_sample(lm: _LevelMarginals, k: int) -> np.ndarray:
    """Quotient distance from the start; censored paths become +inf."""
    rho = quotient_metric_table(lm.graph, lm.start)
    col = lm.vertices[:, k]
    out = np.full(col.shape, np.inf)
    alive = col >= 0
    out[alive] = rho[col[alive]]
    return out


def _coord_samples(cfg: RunConfig, lm: _LevelMarginals, k: int) -> np.ndarray:
    """(paths, dim) coordinates; the star maps to the region anchor point,
    censored paths to +inf."""
    g = lm.graph
    col = lm.vertices[:, k]
    out = np.full((col.size, g.dim), np.inf)
    star = g.star_id if g.has_star else -2
    regular = (col >= 0) & (col != star)
    out[regular] = g.coords[col[regular]] * g.spacing
    if g.has_star:
        out[col == star] = _region_anchor(cfg)
    return out


def _bin_codes(cfg: RunConfig, lm: _LevelMarginals, k: int) -> np.ndarray:
    """Coarse spatial bin index per path; star and censored get their own
    codes so the histograms stay comparable across levels."""
    g = lm.graph
    W, width, d = cfg.window, cfg.bin_width, cfg.dim
    nb = int(math.ceil(2 * W / width))
    col = lm.vertices[:, k]
    codes = np.full(col.shape, nb**d + 1, dtype=np.int64)  # censored
    star = g.star_id if g.has_star else -2
    regular = (col >= 0) & (col != star)
    pos = g.coords[col[regular]] * g.spacing
    bins = np.clip(((pos + W) / width).astype(np.int64), 0, nb - 1)
    flat = np.zeros(len(bins), dtype=np.int64)
    for i in range(d):
        flat = flat * nb + bins[:, i]
    codes[regular] = flat
    if g.has_star:
        codes[col == star] = nb**d  # collapsed point
    return codes


def _base_report(cfg: RunConfig, name: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": name,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "rate_mode": cfg.rate_mode,
        "dim": cfg.dim,
    }


# --------------------------------------------------------------------------
# level consistency


def level_consistency(cfg: RunConfig, graphs: dict | None = None) -> dict:
    """Distributional distance between marginals at consecutive levels.

    The verdict is blocked unless the exact-kernel chi-square gate passes
    at the smallest level where uniformization is feasible; an escape
    fraction above the configured threshold aborts with guidance.
    """
    report = _base_report(cfg, "level_consistency")
    levels = cfg.sorted_levels
    t_grid = sorted(cfg.t_grid)
    report["levels"] = levels
    report["t_grid"] = t_grid
    samples: dict[int, _LevelMarginals] = {}
    per_level = {}
    for j in levels:
        g = build_level(cfg, j, graphs)
        lm = _sample_level(cfg, g, f"level_consistency/level={j}", cfg.num_paths)
        samples[j] = lm
        per_level[str(j)] = {
            "n_paths": cfg.num_paths,
            "n_exited": lm.n_exited,
            "escape_fraction": lm.escape_fraction,
            "stream_seed": lm.seed,
        }
    report["per_level"] = per_level
    worst = max(samples.values(), key=lambda lm: lm.escape_fraction)
    if worst.escape_fraction > cfg.escape_threshold:
        report["verdict"] = "aborted"
        report["message"] = (
            f"escape fraction {worst.escape_fraction:.4f} at level {worst.level} "
            f"exceeds threshold {cfg.escape_threshold}; enlarge the window "
            f"(window={cfg.window}) so paths stay observable"
        )
        return report

    gate_level = next((j for j in levels if samples[j].graph.n_vertices <= GATE_SIZE_LIMIT), None)
    if gate_level is None:
        report["gate"] = {"skipped": True, "reason": "all levels too large to uniformize"}
        gate_ok = False
    else:
        lm = samples[gate_level]
        positive = [t for t in t_grid if t > 0]
        gate_t = min(positive, key=lambda t: abs(t - 0.25)) if positive else None
        if gate_t is None:
            report["gate"] = {"skipped": True, "reason": "no positive marginal time"}
            gate_ok = False
        else:
            k = t_grid.index(gate_t)
            col = lm.vertices[:, k]
            counts = np.bincount(col[col >= 0], minlength=lm.graph.n_vertices)
            row = transition_rows(lm.graph, [gate_t], [lm.start], cfg.rate_mode)[0, 0]
            gate = chi_square_gate(counts, row)
            gate.update({"level": gate_level, "t": gate_t})
            report["gate"] = gate
            gate_ok = gate["passed"]

    pairs = []
    trend: dict[str, dict] = {}
    for t_idx, t in enumerate(t_grid):
        seq = []
        for j_lo, j_hi in zip(levels[:-1], levels[1:]):
            a = _rho_sample(samples[j_lo], t_idx)
            b = _rho_sample(samples[j_hi], t_idx)
            ks = ks_distance(a, b)
            crit = ks_critical(a.size, b.size)
            ca = _coord_samples(cfg, samples[j_lo], t_idx)
            cb = _coord_samples(cfg, samples[j_hi], t_idx)
            ks_coords = [ks_distance(ca[:, i], cb[:, i]) for i in range(cfg.dim)]
            bins_a = np.bincount(_bin_codes(cfg, samples[j_lo], t_idx))
            bins_b = np.bincount(_bin_codes(cfg, samples[j_hi], t_idx))
            width = max(len(bins_a), len(bins_b))
            tv = total_variation(
                np.pad(bins_a, (0, width - len(bins_a))),
                np.pad(bins_b, (0, width - len(bins_b))),
            )
            seq.append(ks)
            pairs.append(
                {
                    "t": t,
                    "j_lo": j_lo,
                    "j_hi": j_hi,
                    "ks_rho": ks,
                    "critical_1pct": crit,
                    "below_critical": bool(ks < crit),
                    "ks_coords": ks_coords,
                    "tv_bins": tv,
                }
            )
        n_up = sum(1 for u, v in zip(seq[:-1], seq[1:]) if v > u)
        trend[repr(t)] = {
            "ks_sequence": seq,
            "n_inversions": n_up,
            "monotone_ok": bool(n_up <= 1),
        }
    report["pairs"] = pairs
    report["trend"] = trend

    vt = min(t_grid, key=lambda t: abs(t - cfg.consistency_t))
    vpairs = [p for p in pairs if p["t"] == vt]
    verdict_ok = (
        bool(vpairs)
        and trend[repr(vt)]["monotone_ok"]
        and vpairs[-1]["below_critical"]
    )
    report["verdict_t"] = vt
    if not gate_ok:
        report["verdict"] = "blocked"
        report["message"] = "exact-kernel gate failed or unavailable; no verdict"
    else:
        report["verdict"] = "pass" if verdict_ok else "fail"
    return report


def null_calibration(cfg: RunConfig, level: int | None = None, t: float | None = None) -> dict:
    """Same level, disjoint seeds: the KS statistic should sit below the
    critical value; a sanity check on the two-sample machinery."""
    j = level if level is not None else cfg.sorted_levels[0]
    t = t if t is not None else max(cfg.t_grid)
    g = build_level(cfg, j, None)
    out = {}
    sams = []
    for tag in ("a", "b"):
        lm = _sample_level(cfg, g, f"null_calibration/{tag}/level={j}", cfg.num_paths)
        k = int(np.argmin(np.abs(lm.times - t)))
        t = float(lm.times[k])
        sams.append(_rho_sample(lm, k))
    ks = ks_distance(*sams)
    crit = ks_critical(len(sams[0]), len(sams[1]))
    out.update(
        {
            "level": j,
            "t": t,
            "ks_rho": ks,
            "critical_1pct": crit,
            "below_critical": bool(ks < crit),
        }
    )
    return out


# --------------------------------------------------------------------------
# tightness probe


def tightness_probe(cfg: RunConfig, graphs: dict | None = None) -> dict:
    """Tail probabilities of the path excursion and modulus across levels.

    For each level: P[sup rho > M] on the M grid and P[w_rho > delta] on
    the (theta, delta) grid.  The verdict checks that no statistic grows
    with the level beyond twice its combined standard error.
    """
    report = _base_report(cfg, "tightness_probe")
    levels = cfg.sorted_levels
    n = cfg.tightness_paths
    report["levels"] = levels
    report["n_paths"] = n
    report["M_grid"] = list(cfg.M_grid)
    report["theta_grid"] = list(cfg.theta_grid)
    report["delta1_grid"] = list(cfg.delta1_grid)
    sup_rows = []
    mod_rows = []
    for j in levels:
        g = build_level(cfg, j, graphs)
        start = start_vertex(cfg, g)
        seed = derive_seed(cfg.seed, f"tightness/level={j}/sup")
        wcfg = WalkConfig(
            T_max=cfg.T,
            seed=seed,
            num_paths=n,
            rate_mode=cfg.rate_mode,
            window_mode=cfg.window_mode,
        )
        stats = simulate_ensemble(g, wcfg, start)
        for M in cfg.M_grid:
            count = int((stats.sup_rho > M).sum())
            p = count / n
            sup_rows.append(
                {
                    "level": j,
                    "M": M,
                    "count": count,
                    "n": n,
                    "probability": p,
                    "se": math.sqrt(max(p * (1 - p), 0.0) / n),
                    "n_exited": int(stats.exited.sum()),
                }
            )
        seed2 = derive_seed(cfg.seed, f"tightness/level={j}/modulus")
        wcfg2 = WalkConfig(
            T_max=cfg.T,
            seed=seed2,
            num_paths=n,
            rate_mode=cfg.rate_mode,
            window_mode=cfg.window_mode,
        )
        osc = oscillation_grid(g, wcfg2, start, cfg.theta_grid, cfg.delta1_grid)
        for a, th in enumerate(osc.thetas):
            for b, de in enumerate(osc.deltas):
                used = osc.n_paths_used
                count = int(osc.exceed_counts[a, b])
                p = count / used if used else 0.0
                mod_rows.append(
                    {
                        "level": j,
                        "theta": float(th),
                        "delta": float(de),
                        "count": count,
                        "n": used,
                        "probability": p,
                        "se": math.sqrt(max(p * (1 - p), 0.0) / used) if used else None,
                        "n_exited": osc.n_exited,
                    }
                )
    report["sup_tail"] = sup_rows
    report["modulus_tail"] = mod_rows

    def _no_growth(rows, key_fields):
        checks = []
        keys = sorted({tuple(r[f] for f in key_fields) for r in rows})
        for key in keys:
            grp = sorted(
                (r for r in rows if tuple(r[f] for f in key_fields) == key),
                key=lambda r: r["level"],
            )
            base = grp[0]
            worst = max(grp, key=lambda r: r["probability"])
            growth = worst["probability"] - base["probability"]
            se = math.sqrt((base["se"] or 0.0) ** 2 + (worst["se"] or 0.0) ** 2)
            checks.append(
                {
                    **dict(zip(key_fields, key)),
                    "base_level": base["level"],
                    "base_probability": base["probability"],
                    "max_level": worst["level"],
                    "max_probability": worst["probability"],
                    "growth": growth,
                    "allowance": 2 * se,
                    "ok": bool(growth <= 2 * se + 1e-15),
                }
            )
        return checks

    sup_checks = _no_growth(sup_rows, ("M",))
    mod_checks = _no_growth(mod_rows, ("theta", "delta"))
    report["sup_checks"] = sup_checks
    report["modulus_checks"] = mod_checks
    report["verdict"] = (
        "pass" if all(c["ok"] for c in sup_checks + mod_checks) else "fail"
    )
    return report


# --------------------------------------------------------------------------
# star occupation


def star_occupation(cfg: RunConfig, graphs: dict | None = None) -> dict:
    """Mass outside the full-degree set per level and time.

    Times below the mixing floor (2^j delta)^(-2/d) are excluded with a
    warning.  Consecutive levels must shrink the fraction by at least a
    factor 0.75; at the smallest feasible level the Monte Carlo fraction
    is checked against the exact kernel row within three standard errors.
    """
    report = _base_report(cfg, "star_occupation")
    levels = cfg.sorted_levels
    t_grid = sorted(cfg.t_grid)
    delta = cfg.star_delta
    report["levels"] = levels
    report["t_grid"] = t_grid
    report["star_delta"] = delta
    rows = []
    samples = {}
    for j in levels:
        g = build_level(cfg, j, graphs)
        if not g.has_star:
            raise ValueError("star occupation needs a darned graph")
        lm = _sample_level(cfg, g, f"star_occupation/level={j}", cfg.num_paths)
        samples[j] = lm
        floor = (2**j * delta) ** (-2.0 / cfg.dim)
        outside = ~g.interior_mask
        for k, t in enumerate(t_grid):
            col = lm.vertices[:, k]
            alive = col >= 0
            cnt = int(outside[col[alive]].sum()) + int((~alive).sum())
            p = cnt / cfg.num_paths
            rows.append(
                {
                    "level": j,
                    "t": t,
                    "count": cnt,
                    "n": cfg.num_paths,
                    "fraction": p,
                    "se": math.sqrt(max(p * (1 - p), 0.0) / cfg.num_paths),
                    "included": bool(t >= floor),
                    "floor": floor,
                }
            )
    report["fractions"] = rows
    excluded = [r for r in rows if not r["included"]]
    if excluded:
        report["warning"] = (
            f"{len(excluded)} (level, t) cells below the mixing floor were "
            "excluded from the decay check"
        )

    ratio_checks = []
    for j_lo, j_hi in zip(levels[:-1], levels[1:]):
        for t in t_grid:
            lo = next(r for r in rows if r["level"] == j_lo and r["t"] == t)
            hi = next(r for r in rows if r["level"] == j_hi and r["t"] == t)
            if not (lo["included"] and hi["included"]):
                continue
            if lo["fraction"] == 0.0:
                ok = hi["fraction"] == 0.0
                ratio = None
            else:
                ratio = hi["fraction"] / lo["fraction"]
                ok = ratio <= 0.75
            ratio_checks.append(
                {"j_lo": j_lo, "j_hi": j_hi, "t": t, "ratio": ratio, "ok": bool(ok)}
            )
    report["ratio_checks"] = ratio_checks

    oracle_level = next(
        (j for j in levels if samples[j].graph.n_vertices <= GATE_SIZE_LIMIT), None
    )
    oracle_checks = []
    if oracle_level is not None:
        lm = samples[oracle_level]
        g = lm.graph
        outside = ~g.interior_mask
        included_ts = [
            r["t"] for r in rows if r["level"] == oracle_level and r["included"]
        ]
        if included_ts:
            rows_exact = transition_rows(g, included_ts, [lm.start], cfg.rate_mode)
            for ti, t in enumerate(included_ts):
                exact = float(rows_exact[ti, 0][outside].sum())
                mc = next(
                    r for r in rows if r["level"] == oracle_level and r["t"] == t
                )
                se = math.sqrt(max(exact * (1 - exact), 1e-300) / cfg.num_paths)
                diff = abs(mc["fraction"] - exact)
                oracle_checks.append(
                    {
                        "level": oracle_level,
                        "t": t,
                        "exact": exact,
                        "mc": mc["fraction"],
                        "abs_diff": diff,
                        "tolerance": 3 * se,
                        "ok": bool(diff <= 3 * se),
                    }
                )
    report["oracle_checks"] = oracle_checks
    ok = all(c["ok"] for c in ratio_checks) and all(c["ok"] for c in oracle_checks)
    report["verdict"] = "pass" if ok and ratio_checks else ("fail" if ratio_checks else "no-data")
    return report


# --------------------------------------------------------------------------
# comparison against the collapsed diffusion


def annulus_target(x_norm: float, inner: float, outer: float, dim: int) -> float:
    """P[hit inner sphere before outer] for the classical diffusion."""
    if not inner < x_norm < outer:
        raise ValueError("start must lie inside the annulus")
    if dim == 2:
        return math.log(outer / x_norm) / math.log(outer / inner)
    a = x_norm ** (2 - dim) - outer ** (2 - dim)
    b = inner ** (2 - dim) - outer ** (2 - dim)
    return a / b


def annulus_hitting(
    cfg: RunConfig, level: int, graphs: dict | None = None, rate_mode: str | None = None
) -> dict:
    """MC probability of reaching the collapsed point before radius
    ``annulus_outer``, against the closed form, tolerance 3*SE + 0.1*2^-j."""
    region = cfg.region_object()
    if region is None:
        raise ValueError("annulus comparison needs a darning region")
    lo, hi = region.bounding_box()
    center = (np.asarray(lo) + np.asarray(hi)) / 2.0
    if np.abs(center).max() > 1e-12:
        raise ValueError("annulus comparison expects a region centred at 0")
    inner = float(hi[0])  # ball radius read off the bounding box
    outer = cfg.annulus_outer
    g = build_level(cfg, level, graphs)
    start = start_vertex(cfg, g)
    x_norm = float(np.linalg.norm(np.asarray(cfg.x0, dtype=float)))
    target = annulus_target(x_norm, inner, outer, cfg.dim)
    pos = g.coords[: g.n_regular] * g.spacing
    stop_ids = np.flatnonzero(np.linalg.norm(pos, axis=1) >= outer - 1e-12)
    mode = rate_mode or cfg.rate_mode
    seed = derive_seed(cfg.seed, f"bmd/annulus/level={level}/{mode}")
    wcfg = WalkConfig(
        T_max=cfg.annulus_T,
        seed=seed,
        num_paths=cfg.annulus_paths,
        rate_mode=mode,
        window_mode=cfg.window_mode,
    )
    hs = hitting_stats(g, wcfg, start, targets=[g.star_id], stop=stop_ids)
    p = hs.probability
    se = hs.standard_error
    tol = 3 * se + 0.1 * 2.0**-level
    return {
        "level": level,
        "rate_mode": mode,
        "inner": inner,
        "outer": outer,
        "x_norm": x_norm,
        "n_paths": cfg.annulus_paths,
        "n_decided": hs.n_decided,
        "n_censored": hs.n_censored,
        "probability": p,
        "se": se,
        "target": target,
        "abs_err": abs(p - target),
        "tolerance": tol,
        "ok": bool(abs(p - target) <= tol),
    }


def variance_rate(
    cfg: RunConfig, level: int, rate_mode: str, graphs: dict | None = None
) -> dict:
    """Per-coordinate variance rate of the displacement at a fixed time,
    conditioned on keeping clear of the darning region and the window."""
    g = build_level(cfg, level, graphs)
    t = cfg.variance_t
    x0 = np.asarray(cfg.variance_x0, dtype=float)
    start = g.vertex_at(x0)
    margin = cfg.variance_margin
    seed = derive_seed(cfg.seed, f"bmd/variance/level={level}/{rate_mode}")
    wcfg = WalkConfig(
        T_max=t,
        seed=seed,
        num_paths=cfg.variance_paths,
        rate_mode=rate_mode,
        window_mode=cfg.window_mode,
    )
    clearance = -g.distance_to_region if g.region is not None else None
    stats = simulate_ensemble(
        g,
        wcfg,
        start,
        marginal_times=[t],
        rho_table=clearance,
    )
    col = stats.marginal_vertex[:, 0]
    keep = (col >= 0) & ~stats.exited
    if clearance is not None:
        keep &= stats.sup_rho < -margin
        if g.has_star:
            keep &= col != g.star_id
    kept = int(keep.sum())
    if kept < 2:
        raise ValueError("conditioning removed almost every path; lower the margin")
    disp = g.coords[col[keep]] * g.spacing - x0
    var = disp.var(axis=0, ddof=1)
    rates = var / t
    target = 1.0 / cfg.dim if rate_mode == "paper" else 1.0
    rel = np.abs(rates - target) / target
    return {
        "level": level,
        "rate_mode": rate_mode,
        "t": t,
        "x0": [float(c) for c in x0],
        "margin": margin,
        "n_paths": cfg.variance_paths,
        "n_kept": kept,
        "n_conditioned_out": cfg.variance_paths - kept,
        "rates": [float(r) for r in rates],
        "target": target,
        "max_rel_err": float(rel.max()),
        "rel_se": math.sqrt(2.0 / (kept - 1)),
        "ok": bool(rel.max() <= 0.05),
    }


def bmd_comparison(cfg: RunConfig, graphs: dict | None = None) -> dict:
    """Quantitative match against the collapsed diffusion: annulus hitting
    probability at the finest level and variance rates under both clocks."""
    report = _base_report(cfg, "bmd_comparison")
    level = cfg.sorted_levels[-1]
    report["annulus"] = annulus_hitting(cfg, level, graphs)
    var_level = cfg.data.get("variance_level", min(level, 5))
    report["variance"] = [
        variance_rate(cfg, var_level, mode, graphs) for mode in ("paper", "matched")
    ]
    ok = report["annulus"]["ok"] and all(v["ok"] for v in report["variance"])
    report["verdict"] = "pass" if ok else "fail"
    return report


# --------------------------------------------------------------------------
# orchestration

EXPERIMENTS = {
    "level_consistency": level_consistency,
    "tightness_probe": tightness_probe,
    "star_occupation": star_occupation,
    "bmd_comparison": bmd_comparison,
}


def _clean(obj):
    """JSON-ready copy; rejects NaN/Inf so bad fields fail loudly."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if not math.isfinite(f):
            raise ValueError(f"non-finite value {f!r} in report")
        return f
    if isinstance(obj, np.ndarray):
        return [_clean(x) for x in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_clean(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    raise TypeError(f"cannot serialize {type(obj)!r}")


def write_json(path: Path, obj) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def _csv_table(name: str, report: dict) -> tuple[list[str], list[list]]:
    if name == "level_consistency":
        dim = report["dim"]
        header = ["t", "j_lo", "j_hi", "ks_rho", "critical_1pct", "below_critical", "tv_bins"]
        header += [f"ks_coord_{i}" for i in range(dim)]
        rows = [
            [p["t"], p["j_lo"], p["j_hi"], p["ks_rho"], p["critical_1pct"],
             int(p["below_critical"]), p["tv_bins"], *p["ks_coords"]]
            for p in report.get("pairs", [])
        ]
        return header, rows
    if name == "tightness_probe":
        header = ["kind", "level", "M", "theta", "delta", "count", "n", "probability"]
        rows = [
            ["sup", r["level"], r["M"], None, None, r["count"], r["n"], r["probability"]]
            for r in report.get("sup_tail", [])
        ] + [
            ["modulus", r["level"], None, r["theta"], r["delta"], r["count"], r["n"], r["probability"]]
            for r in report.get("modulus_tail", [])
        ]
        return header, rows
    if name == "star_occupation":
        header = ["level", "t", "count", "n", "fraction", "included"]
        rows = [
            [r["level"], r["t"], r["count"], r["n"], r["fraction"], int(r["included"])]
            for r in report.get("fractions", [])
        ]
        return header, rows
    if name == "bmd_comparison":
        header = ["quantity", "rate_mode", "level", "value", "target", "tolerance", "ok"]
        rows = []
        a = report.get("annulus")
        if a:
            rows.append(
                ["annulus_hitting", a["rate_mode"], a["level"], a["probability"],
                 a["target"], a["tolerance"], int(a["ok"])]
            )
        for v in report.get("variance", []):
            for i, r in enumerate(v["rates"]):
                rows.append(
                    [f"variance_rate_coord_{i}", v["rate_mode"], v["level"], r,
                     v["target"], 0.05 * v["target"], int(v["ok"])]
                )
        return header, rows
    raise KeyError(name)


def _versions() -> dict:
    import numba
    import scipy

    try:
        pkg = metadata.version("darnwalk")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "darnwalk": pkg,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def run(config, *, force: bool = False) -> int:
    """Execute every experiment in the config; returns a process exit code.

    Reruns with the same config and seed are either skipped (the manifest
    already matches and all artifacts exist) or reproduce the artifacts
    bitwise.  Wall-clock timings live in ``timings.json``, which is the
    single non-reproducible output.
    """
    if isinstance(config, RunConfig):
        cfg = config
    elif isinstance(config, dict):
        cfg = RunConfig.from_dict(config)
    else:
        cfg = RunConfig.from_file(config)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        try:
            old = json.loads(manifest_path.read_text())
        except json.JSONDecodeError:
            old = {}
        if old.get("config_hash") == chash:
            arts = [a for e in old.get("experiments", {}).values() for a in e.get("artifacts", [])]
            statuses = [e.get("status") for e in old.get("experiments", {}).values()]
            if all((out / a).exists() for a in arts) and all(s == "ok" for s in statuses):
                return 0

    graphs: dict[int, DarnedLattice] = {}
    entries: dict[str, dict] = {}
    timings: dict[str, float] = {}
    failed = False
    for name in cfg.experiments:
        fn = EXPERIMENTS[name]
        t0 = time.perf_counter()
        artifacts = []
        try:
            rep = fn(cfg, graphs)
            write_json(out / f"{name}.json", rep)
            artifacts.append(f"{name}.json")
            header, rows = _csv_table(name, rep)
            write_csv(out / f"{name}.csv", header, rows)
            artifacts.append(f"{name}.csv")
            status = "ok"
            verdict = rep.get("verdict")
        except Exception as e:  # deliberate: partial failure keeps going
            status = f"error: {type(e).__name__}: {e}"
            verdict = None
            failed = True
        timings[name] = time.perf_counter() - t0
        entries[name] = {
            "status": status,
            "verdict": verdict,
            "artifacts": artifacts,
        }
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.canonical(),
        "config_hash": chash,
        "versions": _versions(),
        "experiments": entries,
        "timing_sidecar": "timings.json",
    }
    write_json(manifest_path, manifest)
    write_json(out / "timings.json", {"wall_seconds": timings})
    return 1 if failed else 0
