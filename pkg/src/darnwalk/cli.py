"""Command-line interface.

Subcommands map one-to-one onto the library layers: build-graph,
simulate, heat-kernel, generator-check, isoperimetry, converge, run.
Every command reads/writes plain JSON and RFC-4180 CSV; graphs travel as
self-contained binary dumps.  DARNWALK_THREADS caps worker threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .dynamics import WalkConfig, _apply_thread_cap, sample_path, simulate_ensemble
from .experiments import ConfigError, RunConfig, run as run_experiments, write_csv, write_json
from .geometry import GeometryError
from .graphio import GraphFormatError, load_graph, save_graph
from .isoperimetry import enumerate_family, region_lattice_mass
from .lattice import (
    DarnedLattice,
    LatticeBuildError,
    build_lattice,
    quotient_metric_table,
)
from .spectral import Monomial, RadialBump, SquaredNorm, generator_gap, transition_rows


def _parse_levels(text: str) -> list[int]:
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"bad level range {text!r}")
        return list(range(lo, hi + 1))
    return [int(p) for p in text.split(",") if p]


def _parse_floats(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p]


def _graph_from_args(args) -> DarnedLattice:
    return load_graph(args.graph)


def _build_from_config(cfg: RunConfig, level: int) -> DarnedLattice:
    return build_lattice(cfg.region_object(), level, cfg.window)


def _resolve_source(g: DarnedLattice, token: str) -> int:
    if token == "star":
        if not g.has_star:
            raise ValueError("graph has no star vertex")
        return g.star_id
    if token == "origin":
        return g.vertex_at([0.0] * g.dim)
    if token.startswith("@"):
        return g.vertex_at(_parse_floats(token[1:]))
    return int(token)


def _default_x0(dim: int) -> list[float]:
    return [0.5] + [0.0] * (dim - 1)


# --------------------------------------------------------------------------
# subcommands


def _cmd_build_graph(args) -> int:
    cfg = RunConfig.from_file(args.config)
    levels = cfg.sorted_levels
    level = args.level if args.level is not None else levels[0]
    g = _build_from_config(cfg, level)
    save_graph(g, args.out)
    if args.summary:
        write_json(Path(args.summary), g.summary())
    print(f"wrote level-{level} graph ({g.n_vertices} vertices) to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    g = _graph_from_args(args)
    x0 = args.x0 if args.x0 else ",".join(str(c) for c in _default_x0(g.dim))
    start = g.star_id if x0 == "star" else g.vertex_at(_parse_floats(x0))
    times = sorted(_parse_floats(args.marginal_times)) if args.marginal_times else []
    wcfg = WalkConfig(
        T_max=args.T,
        seed=args.seed,
        num_paths=args.paths,
        rate_mode=args.rate_mode,
        window_mode=args.window_mode,
    )
    stats = simulate_ensemble(g, wcfg, start, marginal_times=times)
    outside = ~g.interior_mask
    marginals = []
    for k, t in enumerate(stats.marginal_times):
        col = stats.marginal_vertex[:, k]
        alive = col >= 0
        star_frac = (
            float((col[alive] == g.star_id).mean()) if g.has_star and alive.any() else 0.0
        )
        out_frac = (int(outside[col[alive]].sum()) + int((~alive).sum())) / args.paths
        pos = g.coords[col[alive & (col != (g.star_id if g.has_star else -1))]]
        if len(pos):
            disp = pos * g.spacing - np.asarray(
                g.coords[start] * g.spacing if start < g.n_regular else [0.0] * g.dim
            )
            msd = float((disp**2).sum(axis=1).mean())
        else:
            msd = None
        marginals.append(
            {
                "t": float(t),
                "star_fraction": star_frac,
                "outside_full_degree_fraction": out_frac,
                "mean_squared_displacement": msd,
                "n_alive": int(alive.sum()),
            }
        )
    hit = stats.hit_star_time
    hits = hit[~np.isnan(hit)]
    report = {
        "level": g.level,
        "dim": g.dim,
        "n_paths": args.paths,
        "T": args.T,
        "seed": args.seed,
        "rate_mode": args.rate_mode,
        "window_mode": args.window_mode,
        "start_vertex": int(start),
        "exit_fraction": stats.exit_fraction,
        "mean_jumps": float(stats.n_jumps.mean()),
        "star_hit_fraction": float(len(hits) / args.paths) if g.has_star else 0.0,
        "mean_star_hit_time": float(hits.mean()) if len(hits) else None,
        "marginals": marginals,
    }
    write_json(Path(args.out), report)
    if args.dump_paths:
        header = ["path", "t", "vertex"] + ["xyz"[i] for i in range(g.dim)]
        rows = []
        for p in range(args.paths):
            pcfg = WalkConfig(
                T_max=args.T,
                seed=args.seed,
                num_paths=1,
                rate_mode=args.rate_mode,
                window_mode=args.window_mode,
            )
            path = sample_path(g, pcfg, start, stream=p)
            for t, v in zip(path.times, path.vertices):
                if g.has_star and v == g.star_id:
                    coords = [None] * g.dim
                else:
                    coords = [float(c) for c in g.coords[v] * g.spacing]
                rows.append([p, float(t), int(v), *coords])
        write_csv(Path(args.dump_paths), header, rows)
    print(f"simulated {args.paths} paths on level {g.level}; report at {args.out}")
    return 0


def _cmd_heat_kernel(args) -> int:
    g = _graph_from_args(args)
    sources = [_resolve_source(g, tok) for tok in args.sources]
    if not sources:
        raise ValueError("no sources given")
    t = args.t
    rows_p = transition_rows(g, [t], sources, args.rate_mode)[0]
    dens = rows_p / g.measure
    d = g.dim
    out_rows = []
    for si, x in enumerate(sources):
        rho = quotient_metric_table(g, x)
        shape = np.exp(-(rho**2) / (64.0 * t)) + np.exp(-(2.0**g.level) * rho / 4.0)
        ratio = dens[si] * t ** (d / 2.0) / shape
        for y in range(g.n_vertices):
            out_rows.append(
                [int(x), y, float(rho[y]), float(dens[si, y]), float(ratio[y])]
            )
    write_csv(Path(args.out), ["x_id", "y_id", "rho", "p", "bound_ratio"], out_rows)
    print(f"wrote {len(out_rows)} kernel rows to {args.out}")
    return 0


_TEST_FUNCTIONS = {
    "bump": lambda dim: RadialBump(),
    "squared": lambda dim: SquaredNorm(),
}


def _make_function(token: str, dim: int):
    if token.startswith("monomial:"):
        expo = [int(p) for p in token.split(":", 1)[1].split(",")]
        return Monomial(tuple(expo))
    try:
        return _TEST_FUNCTIONS[token](dim)
    except KeyError:
        raise ValueError(f"unknown test function {token!r}") from None


def _cmd_generator_check(args) -> int:
    if args.config:
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig.from_dict(
            {"window": args.window, "levels": _parse_levels(args.levels)}
        )
    func = _make_function(args.f, cfg.dim)
    rows = []
    for j in _parse_levels(args.levels):
        g = _build_from_config(cfg, j)
        gap = generator_gap(g, func, rate_mode=args.rate_mode)
        rows.append(
            [
                j,
                args.rate_mode,
                gap["max_gap"],
                gap["argmax_vertex"],
                gap["n_compared"],
                gap["star_generator"],
            ]
        )
    write_csv(
        Path(args.out),
        ["level", "rate_mode", "max_gap", "argmax_vertex", "n_compared", "star_generator"],
        rows,
    )
    print(f"wrote generator gaps for levels {args.levels} to {args.out}")
    return 0


def _parse_family(token: str):
    name, _, spec = token.partition(":")
    if name == "connected":
        return ("all_connected_up_to", {"n": int(spec or 6)})
    if name == "balls":
        if ".." in spec:
            a, b = spec.split("..", 1)
            radii = list(range(int(a), int(b) + 1))
        else:
            radii = [int(p) for p in spec.split(";") if p] or list(range(17))
        return ("metric_balls", {"radii": radii})
    if name == "star":
        return ("star_neighborhoods", {"hops": int(spec or 2)})
    if name == "random":
        count, size = spec.split("x")
        return ("random_connected", {"count": int(count), "size": int(size)})
    raise ValueError(f"unknown family token {token!r}")


def _cmd_isoperimetry(args) -> int:
    g = _graph_from_args(args)
    out = {"level": g.level, "dim": g.dim, "families": {}}
    overall = math.inf
    star_min = math.inf
    free_min = math.inf
    for token in args.families.split(","):
        fam, params = _parse_family(token)
        rep = enumerate_family(
            g, fam, budget=args.budget, seed=args.seed, **params
        )
        out["families"][token] = {
            "partial": rep.partial,
            "records": [dataclasses.asdict(r) for r in rep.records],
        }
        overall = min(overall, rep.min_ratio)
        star_min = min(star_min, rep.min_over(True))
        free_min = min(free_min, rep.min_over(False))
    kj_count, kj_measure = region_lattice_mass(g)
    out["min_ratio"] = overall if math.isfinite(overall) else None
    out["min_ratio_star"] = star_min if math.isfinite(star_min) else None
    out["min_ratio_free"] = free_min if math.isfinite(free_min) else None
    out["kj_count"] = kj_count
    out["kj_measure"] = kj_measure
    write_json(Path(args.out), out)
    print(f"wrote isoperimetry minima to {args.out}")
    return 0


def _cmd_converge(args) -> int:
    cfg = RunConfig.from_file(args.config)
    data = dict(cfg.data)
    data["experiments"] = ["level_consistency"]
    if args.out_dir:
        data["out_dir"] = args.out_dir
    return run_experiments(RunConfig.from_dict(data), force=args.force)


def _cmd_run(args) -> int:
    return run_experiments(args.config, force=args.force)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="darnwalk",
        description="Darned-lattice graphs, random walks on them, and kernel checks.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="construct a graph and dump it")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--summary", default=None, help="also write a JSON summary")
    p.set_defaults(fn=_cmd_build_graph)

    p = sub.add_parser("simulate", help="run a path ensemble on a dumped graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--marginal-times", default="")
    p.add_argument("--x0", default=None, help="comma-separated point or 'star'")
    p.add_argument("--rate-mode", choices=["paper", "matched"], default="paper")
    p.add_argument("--window-mode", choices=["censor", "conservative"], default="censor")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--dump-paths",
        default=None,
        help="CSV of every jump event; meant for small ensembles",
    )
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("heat-kernel", help="exact kernel rows with bound ratios")
    p.add_argument("--graph", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument(
        "--sources",
        required=True,
        nargs="+",
        help="space-separated: star, origin, @x,y or vertex ids",
    )
    p.add_argument("--rate-mode", choices=["paper", "matched"], default="paper")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_heat_kernel)

    p = sub.add_parser("generator-check", help="sup |L f - target| per level")
    p.add_argument("--f", required=True, help="bump, squared, or monomial:e1,e2[,e3]")
    p.add_argument("--levels", required=True, help="e.g. 4..8 or 3,5,7")
    p.add_argument("--config", default=None, help="region/dim/window config")
    p.add_argument("--window", type=float, default=2.0)
    p.add_argument("--rate-mode", choices=["paper", "matched"], default="paper")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_generator_check)

    p = sub.add_parser("isoperimetry", help="profile-ratio minima over set families")
    p.add_argument("--graph", required=True)
    p.add_argument(
        "--families",
        required=True,
        help="e.g. connected:6,balls:1..16,star:2,random:1000x8",
    )
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_isoperimetry)

    p = sub.add_parser("converge", help="level-consistency study from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=_cmd_converge)

    p = sub.add_parser("run", help="execute every experiment in a config")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=_cmd_run)

    return ap


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (
        ConfigError,
        GeometryError,
        LatticeBuildError,
        GraphFormatError,
        ValueError,
        OSError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
