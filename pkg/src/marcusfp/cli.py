"""Command-line entry point.

Commands: simulate, solve, compare, transform-check.  Every run is
driven by one JSON config; outputs land in a directory named by the
config hash so identical configs produce identical artifacts.
Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 comparison
failed its tolerance.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import fpe, levy, sde, transform, validate
from .config import RunConfig, build_sigma, load_config
from .density import DensityGrid, GridSpec, gaussian_on_grid
from .errors import ConfigError, Instability, NonConvergence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_TOLERANCE = 4


def _json_dump(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def _run_dir(cfg: RunConfig, command: str, out_override, force: bool) -> str:
    base = out_override if out_override else cfg.out_dir()
    path = os.path.join(base, f"{command}-{cfg.digest()}")
    if os.path.exists(path):
        if not force:
            raise ConfigError("out", f"run directory {path} exists; "
                                     f"pass --force to overwrite")
    else:
        os.makedirs(path)
    return path


def cmd_simulate(cfg: RunConfig, out_dir: str) -> int:
    model = cfg.build_model()
    plan = cfg.build_plan()
    try:
        ens = sde.simulate(model, plan, mode=cfg.sim_mode())
    except (NonConvergence, FloatingPointError) as e:
        _json_dump({"error": str(e)}, os.path.join(out_dir, "summary.json"))
        print(f"simulate failed: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    ens.to_csv(os.path.join(out_dir, "ensemble.csv"))
    ens.to_binary(os.path.join(out_dir, "ensemble.bin"))
    _json_dump({"nPaths": ens.n_paths, "nFlagged": ens.n_flagged,
                "seed": ens.seed, "epsilon": ens.epsilon,
                "times": list(ens.times)},
               os.path.join(out_dir, "summary.json"))
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out_dir: str) -> int:
    model = cfg.build_model()
    spec = cfg.build_grid()
    plan_doc = cfg.section("plan")
    horizon = float(plan_doc.get("horizon", 1.0))
    save = plan_doc.get("saveTimes", [horizon])
    opts = cfg.solve_opts()
    init = opts["initial"] or {"mean": 0.0, "sd": 1.0}
    p0 = gaussian_on_grid(spec, init["mean"], init["sd"]).normalized()
    q = cfg.quad_params()
    ctl = fpe.StepControl(delta=q["delta"], ymax=q["ymax"],
                          n_quad=q["n_quad"], dt=opts["dt"],
                          save_times=save, interp=opts["interp"])
    try:
        res = fpe.solve(model, p0, horizon, ctl)
    except (Instability, NonConvergence) as e:
        _json_dump({"error": str(e)}, os.path.join(out_dir, "manifest.json"))
        print(f"solve failed: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    times = []
    for i, snap in enumerate(res.snapshots):
        snap.to_csv(os.path.join(out_dir, f"density_{i:04d}.csv"))
        times.append(snap.time)
    _json_dump({"times": times,
                "grid": {"xmin": spec.xmin, "xmax": spec.xmax, "n": spec.n},
                "leakBudget": res.leak, "maxNegativity": res.max_negativity,
                "dtUsed": res.dt_used, "config": cfg.doc},
               os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


def _load_density_csv(path: str) -> DensityGrid:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    x, v = data[:, 0], data[:, 1]
    dx = x[1] - x[0]
    spec = GridSpec(float(x[0] - 0.5 * dx), float(x[-1] + 0.5 * dx), len(x))
    return DensityGrid(spec, np.maximum(v, 0.0))


def cmd_compare(cfg: RunConfig, out_dir: str) -> int:
    c = cfg.section("compare")
    for key in ("fileA", "fileB"):
        if key not in c:
            raise ConfigError(f"compare.{key}", "required field is missing")
        if not isinstance(c[key], str):
            raise ConfigError(f"compare.{key}", "expected a file path")
    pa = _load_density_csv(c["fileA"])
    pb = _load_density_csv(c["fileB"])
    pa.leak = float(c.get("leakA", 0.0))
    pb.leak = float(c.get("leakB", 0.0))
    n_paths = c.get("nPathsA")
    report = validate.compare(pa, pb, mc_paths=n_paths)
    _json_dump(json.loads(report.to_json()),
               os.path.join(out_dir, "report.json"))
    print(f"{'metric':<16}{'value':>14}")
    print(f"{'L1':<16}{report.l1_distance:>14.6g}")
    print(f"{'KS':<16}{report.ks_statistic:>14.6g}")
    print(f"{'tolerance':<16}{report.tolerance:>14.6g}")
    print(f"{'verdict':<16}{'pass' if report.verdict else 'fail':>14}")
    return EXIT_OK if report.verdict else EXIT_TOLERANCE


def _sample_xy(sig, rng, n: int):
    """Random (x, y) probe points adapted to each coefficient's geometry."""
    name = sig.name
    if "sin" in name:
        k = rng.integers(-1, 1, n)  # intervals (-pi,0) and (0,pi)
        x = k * math.pi + rng.uniform(0.05, math.pi - 0.05, n)
        y = rng.uniform(-3.0, 3.0, n)
    elif "x^2" in name:
        x = rng.uniform(-5.0, 5.0, n)
        room = np.arctan(x)
        y = rng.uniform(-0.5 * math.pi - room + 0.1,
                        0.5 * math.pi - room - 0.1)
    elif sig.zeros:
        mag = 10.0 ** rng.uniform(-2, 1, n)
        x = np.where(rng.random(n) < 0.5, -mag, mag)
        y = rng.uniform(-3.0, 3.0, n)
    else:
        x = rng.uniform(-10.0, 10.0, n)
        y = rng.uniform(-3.0, 3.0, n)
    return x, y


def transform_identity_report(sig, atlas, n: int, seed: int,
                              oracle_subsample: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    x, y = _sample_xy(sig, rng, n)
    zt = atlas.h_tilde_vec(x, y)
    chain = np.abs(np.array([atlas.h_forward(v) for v in zt])
                   - np.array([atlas.h_forward(v) for v in x]) - y)
    y2 = rng.uniform(-1.0, 1.0, n)
    group = np.abs(atlas.h_tilde_vec(zt, y2) - atlas.h_tilde_vec(x, y + y2))
    if sig.zeros:
        iv = np.searchsorted(np.array(sig.zeros), x)
        izt = np.searchsorted(np.array(sig.zeros), zt)
        confined = bool(np.all(iv == izt))
    else:
        confined = True
    m = oracle_subsample if oracle_subsample else n
    ode = transform.marcus_map_ode_vec(sig, x[:m], y[:m])
    oracle = np.abs(zt[:m] - ode)
    return {"sigma": sig.name, "n": n,
            "maxChainError": float(chain.max()),
            "maxGroupError": float(group.max()),
            "maxOracleError": float(oracle.max()),
            "confined": confined}


def cmd_transform_check(cfg: RunConfig, out_dir: str) -> int:
    model_doc = cfg.model_spec()
    c = cfg.section("transformCheck")
    n = int(c.get("n", 10000))
    seed = int(c.get("seed", 0))
    tol = float(c.get("tol", 1e-7))
    sig, atlas, _ = build_sigma(model_doc.get("sigma", {"name": "linear"}))
    rep = transform_identity_report(sig, atlas, n, seed)
    rep["tol"] = tol
    ok = (rep["maxChainError"] <= tol and rep["maxGroupError"] <= tol
          and rep["maxOracleError"] <= tol and rep["confined"])
    rep["pass"] = ok
    _json_dump(rep, os.path.join(out_dir, "report.json"))
    for k, v in sorted(rep.items()):
        print(f"{k:<16}{v!r:>22}")
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="marcusfp",
        description="Simulate and solve 1-D Marcus SDEs with Levy noise")
    ap.add_argument("command", choices=["simulate", "solve", "compare",
                                        "transform-check"])
    ap.add_argument("--config", required=True, help="JSON run config")
    ap.add_argument("--out", default=None, help="output base directory")
    ap.add_argument("--force", action="store_true",
                    help="overwrite an existing run directory")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker threads (reserved; runs are single-process)")
    args = ap.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        cfg = load_config(args.config)
        out_dir = _run_dir(cfg, args.command, args.out, args.force)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "solve":
            return cmd_solve(cfg, out_dir)
        if args.command == "compare":
            return cmd_compare(cfg, out_dir)
        return cmd_transform_check(cfg, out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
