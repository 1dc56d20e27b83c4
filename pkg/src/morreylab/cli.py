"""Command-line runner: ``morreylab <subcommand> [flags]``.

Settings come from defaults, then an optional ``--config`` file of ``key = value``
lines, then explicit flags. Every run writes ``summary.json`` to the output
directory next to its CSV/JSON artifacts.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from .config import GLOBAL_OPTIONS, SCHEMAS, ExperimentConfig, parse_flat

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _flag(key):
    return "--" + key.replace("_", "-")


def _add_options(parser, options, suppress=True):
    for key, opt in options.items():
        kw = dict(dest=key, help=f"{opt.help} (default: {opt.default!r})")
        if suppress:
            kw["default"] = argparse.SUPPRESS
        if opt.type == "bool":
            parser.add_argument(_flag(key), action="store_const", const=True, **kw)
        elif opt.type == "list[str]":
            parser.add_argument(_flag(key), action="append", **kw)
        else:
            parser.add_argument(_flag(key), **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morreylab",
                                     description="Numerical experiments on planar quasiconvexity.")
    _add_options(parser, GLOBAL_OPTIONS)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", default=None, help="flat key = value config file")
        _add_options(p, GLOBAL_OPTIONS)
        _add_options(p, schema)
    return parser


def config_from_args(argv) -> ExperimentConfig:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    name = ns.pop("subcommand")
    if name is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)
    values = {}
    path = ns.pop("config", None)
    if path:
        with open(path) as fh:
            values = parse_flat(fh.read())
        sub = values.pop("subcommand", name)
        if sub != name:
            raise ValueError(f"config file is for {sub!r}, not {name!r}")
    values.update(ns)
    return ExperimentConfig(name, values)


# ---------------------------------------------------------------------------


def _path(cfg, key):
    p = cfg[key]
    return p if os.path.isabs(p) else os.path.join(cfg["out_dir"], p)


def jsonable(x):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else str(float(x))
    return x


def run_scan(cfg):
    from .convexity import ScanGrid, rank_one_scan
    from .energy import parse_energy

    W = parse_energy(cfg["energy"])
    grid = ScanGrid(cfg["a_max"], cfg["a_steps"], cfg["dtheta"])
    rep = rank_one_scan(W, grid, cfg["tol"], cfg["workers"], keep_full=cfg["full"])
    rep.write_csv(_path(cfg, "out"))
    return {"energy": W.spec(), "min_lh": rep.min_value, "argmin": rep.argmin,
            "negative": rep.n_negative, "evaluated": rep.n_evaluated, "failed": rep.n_failed}


def run_laminate_search(cfg):
    from .energy import parse_energy
    from .laminates import search_driver

    energies = [parse_energy(e) for e in cfg["energy"]]
    ck = _path(cfg, "checkpoint") if cfg["checkpoint"] else None
    rep = search_driver(energies, cfg["a_list"], cfg["n_list"], cfg["trials"], cfg["seed"],
                        cfg["workers"], cfg["tol"], checkpoint=ck, keep_gaps=False,
                        resolution=cfg["resolution"])
    data = rep.to_json()
    with open(_path(cfg, "out"), "w") as fh:
        json.dump(jsonable(data), fh, indent=2)
    for i, (k, r) in enumerate(rep.records.items()):
        if r.witness:
            with open(os.path.join(cfg["out_dir"], f"witness_{i}.txt"), "w") as fh:
                fh.write(r.witness)
    return {k: {"min_gap": r.min_gap, "trial": r.trial, "negative": r.n_negative}
            for k, r in rep.records.items()}


def run_families(cfg):
    import csv

    from . import families as fam
    from .energy import parse_energy, s1_magic_plus

    rng = np.random.default_rng(cfg["seed"])
    kind, n = cfg["kind"], cfg["points"]
    rows, stats = [], []
    for k in range(cfg["profiles"]):
        if kind == "smooth":
            prof = fam.random_smooth_profile(rng, cfg["a1"], cfg["a2"])
            W = parse_energy(cfg["energy"])
            x = np.arange(n) / n
            F = prof.gradient(x)
            h = 1e-5
            dS = (s1_magic_plus(prof.gradient(x + h)) - s1_magic_plus(prof.gradient(x - h))) / (2 * h)
            resid = np.hypot(dS[:, 0, 0], dS[:, 1, 0])
            rows += [(k, *vals) for vals in zip(x, prof.f(x), prof.df(x), W.value(F), resid)]
            E = fam.smooth_laminate_energy(prof, energy=W)
            stats.append({"energy": E, "closed_form": fam.smooth_laminate_closed_form(cfg["a1"], cfg["a2"])})
        elif kind in ("radial-expanding", "radial-contracting"):
            rkind = kind.split("-")[1]
            prof = fam.random_radial_profile(rng, rkind)
            W = parse_energy(cfg["energy"])
            res, g = fam.radial_el_residual(prof, W.name, W.params.get("p"), n=n, return_grid=True)
            rows += [(k, *vals) for vals in zip(g["r"], g["v"], g["dv"], g["integrand"], g["residual"])]
            stats.append({"el_residual": res})
        else:
            raise ValueError(f"unknown kind {kind!r}")
    with open(_path(cfg, "out"), "w", newline="") as fh:
        w = csv.writer(fh)
        first = "x" if kind == "smooth" else "r"
        w.writerow(["profile", first, "f" if kind == "smooth" else "v", "derivative", "integrand", "residual"])
        for r in rows:
            w.writerow([r[0], *(f"{v:.17g}" for v in r[1:])])
    return {"kind": kind, "profiles": stats}


def run_pinn(cfg):
    from .pinn import AdamSchedule, QuadratureGrid, adam_train, dump_field, laminate_structure

    a = cfg["f0"]
    F0 = np.diag([a, 1 / a])
    sched = AdamSchedule.scaled(cfg["iters"], lr=cfg["lr"])
    if cfg["decay_at"]:
        sched.decay_at = tuple(cfg["decay_at"])
    grid = QuadratureGrid(cfg["grid"])
    res = adam_train(F0, grid, cfg["seed"], sched)
    if cfg["dump_field"]:
        dump_field(res.ansatz, grid, _path(cfg, "dump_field"))
    off, var = laminate_structure(res.ansatz, grid)
    return {"energy": res.best_energy, "homogeneous": res.homogeneous, "gap": res.gap,
            "iterations": sched.iters, "rejections": res.rejections,
            "off_11_l2": off, "variation_11": var}


def run_fem(cfg):
    from .energy import parse_energy
    from .fem import MaterialMap, minimize
    from .fem.experiments import save_nodal

    material = MaterialMap(cfg["cstar"]) if cfg["cstar"] > 0 else None
    energy = None if material else parse_energy(cfg["energy"])
    init = cfg["init"]
    if init != "homogeneous" and not init.startswith("random") and not os.path.exists(init):
        init = os.path.join(cfg["out_dir"], init)
    out = minimize(cfg["domain"], cfg["levels"], energy, cfg["a"], init, cfg["seed"], material,
                   max_iter=cfg["max_iter"], tol=cfg["tol"])
    out.write_fields(_path(cfg, "out"))
    if cfg["save_field"]:
        save_nodal(_path(cfg, "save_field"), out.problem.mesh, out.result.u)
    return out.summary()


def run_curl(cfg):
    from .curl import compatible_projection, minimize_i2, write_curl_csv

    out = minimize_i2(cfg["lc"], cfg["a"], cfg["levels"], cfg["init"], cfg["seed"],
                      max_iter=cfg["max_iter"])
    write_curl_csv(out, _path(cfg, "out"))
    summary = out.summary()
    if cfg["project"]:
        theta, fem = compatible_projection(out.problem, out.result.u)
        summary["projection_energy"] = fem.total_energy(theta)
        summary["projection_gap"] = fem.gap(theta)
        summary["projection_homogeneous"] = fem.homogeneous_energy()
    return summary


RUNNERS = {"scan": run_scan, "laminate-search": run_laminate_search, "families": run_families,
           "pinn": run_pinn, "fem": run_fem, "curl": run_curl}


def run(cfg: ExperimentConfig) -> dict:
    os.makedirs(cfg["out_dir"], exist_ok=True)
    with open(os.path.join(cfg["out_dir"], "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    t0 = time.perf_counter()
    result = RUNNERS[cfg.subcommand](cfg)
    summary = {"subcommand": cfg.subcommand, "seed": cfg["seed"],
               "wall_time": time.perf_counter() - t0, "result": result}
    with open(os.path.join(cfg["out_dir"], "summary.json"), "w") as fh:
        json.dump(jsonable(summary), fh, indent=2)
    return summary


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        build_parser().print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = config_from_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    except (ValueError, OSError) as e:
        print(f"morreylab: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        summary = run(cfg)
    except Exception as e:  # noqa: BLE001 - report module diagnostics and fail
        print(f"morreylab {cfg.subcommand}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(jsonable(summary), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
