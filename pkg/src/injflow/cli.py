"""Experiment runner: reproducible presets plus projection and gap tools.

Exit codes: 0 success, 1 numeric failure, 2 usage error.  Every preset
emits plot-ready CSV (or JSON with --format json) plus a summary.json; all
outputs are byte-identical for a fixed seed, except the summary's wall_time
field.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics, projection, training
from ._util import as_rng
from .errors import (
    InjectiveFlowError,
    InvalidArgumentError,
    InvalidConfigError,
    NumericError,
)
from .expansive import random_well_conditioned
from .geometry import CompactSampleSet
from .network import InjectiveNetwork

FLOAT_FMT = "%.17g"
PRESETS = ("gap-visualization", "layerwise-toy", "trefoil-obstruction",
           "projection-bench")


def _write_table(out_dir: Path, name: str, columns, rows, fmt: str) -> Path:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if fmt == "csv":
        path = out_dir / f"{name}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")
    elif fmt == "json":
        path = out_dir / f"{name}.json"
        payload = {"columns": list(columns),
                   "rows": [[float(FLOAT_FMT % v) for v in row] for row in rows]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    else:
        raise InvalidArgumentError(f"unknown format {fmt!r}")
    return path


def _write_points(out_dir: Path, name: str, points, fmt: str) -> Path:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    columns = [f"x{i}" for i in range(pts.shape[1])]
    return _write_table(out_dir, name, columns, pts, fmt)


def _write_summary(out_dir: Path, preset: str, seed: int, wall_time: float,
                   metrics_dict: dict) -> Path:
    path = out_dir / "summary.json"
    payload = {"preset": preset, "seed": seed, "wall_time": wall_time,
               "metrics": metrics_dict}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    return path


# --- presets -----------------------------------------------------------------


def _preset_gap_visualization(params: dict, out_dir: Path, fmt: str, seed: int) -> dict:
    count = int(params.get("count", 201))
    kx = np.linspace(-1.0, 1.0, count)[:, None]
    amp = 0.8

    def f_map(x):
        return np.column_stack([x[:, 0], amp * np.sin(np.pi * x[:, 0])])

    fx = f_map(kx)
    _write_points(out_dir, "f_samples", fx, fmt)
    w = np.linspace(-1.0, 1.0, count)[:, None]
    alphas = (0.0, 0.5, 1.0)
    rows = []
    lowers, uppers = [], []
    for i, alpha in enumerate(alphas, start=1):
        def g_map(ws, _a=alpha):
            ws = np.atleast_2d(np.asarray(ws, dtype=float))
            return np.column_stack([ws[:, 0], _a * amp * np.sin(np.pi * ws[:, 0])])

        _write_points(out_dir, f"g{i}_samples", g_map(w), fmt)
        gap = metrics.estimate_embedding_gap(kx, fx, g_map, w, family="affine")
        check = metrics.wasserstein_bound_check(kx, fx, g_map, w, gap,
                                                tolerance=0.01)
        rows.append([i, gap.lower, gap.upper, check.w2, float(check.passed)])
        lowers.append(gap.lower)
        uppers.append(gap.upper)
    _write_table(out_dir, "gap_intervals",
                 ["step", "lower", "upper", "w2", "bound_ok"], rows, fmt)
    return {
        "lowers": lowers,
        "uppers": uppers,
        "monotone_decreasing": bool(
            all(lowers[i] >= lowers[i + 1] - 1e-12 for i in range(2))
            and all(uppers[i] >= uppers[i + 1] - 1e-12 for i in range(2))),
        "final_lower": lowers[-1],
        "final_upper": uppers[-1],
        "bound_checks_passed": bool(all(r[4] == 1.0 for r in rows)),
    }


def _preset_layerwise_toy(params: dict, out_dir: Path, fmt: str, seed: int) -> dict:
    phase1 = int(params.get("phase1_steps", 2400))
    phase2 = int(params.get("phase2_steps", 600))
    net, result = training.run_layerwise_toy(seed=seed, phase1_steps=phase1,
                                             phase2_steps=phase2)
    result.trace.to_csv(out_dir / "trace.csv")
    target = training.arc_target()
    t_grid = np.linspace(-1.0, 1.0, 512)[:, None]
    _write_points(out_dir, "target_samples", target.map_points(t_grid), fmt)
    _write_points(out_dir, "generated_samples", net.forward(t_grid), fmt)
    checkpoint = params.get("checkpoint")
    if checkpoint:
        net.save_checkpoint(Path(checkpoint))
    final = result.trace.final
    return {
        "phase1_directed_supinf": result.record_at_phase_end("manifold").directed_supinf,
        "final_directed_supinf": final.directed_supinf,
        "final_sliced_w2": final.sliced_w2,
        "frozen_intact": bool(result.frozen_intact),
    }


def _preset_trefoil_obstruction(params: dict, out_dir: Path, fmt: str,
                                seed: int) -> dict:
    result = training.run_obstruction_experiment(
        seed=seed,
        steps_manifold=int(params.get("steps_manifold", 2500)),
        steps_density=int(params.get("steps_density", 3500)),
        batch_size=int(params.get("batch_size", 256)),
        lipschitz_log_interval=int(params.get("lipschitz_log_interval", 50)),
    )
    result.treatment.to_csv(out_dir / "treatment_trace.csv")
    result.control.to_csv(out_dir / "control_trace.csv")
    return result.summary


def _preset_projection_bench(params: dict, out_dir: Path, fmt: str,
                             seed: int) -> dict:
    trials = int(params.get("trials", 500))
    fixed_n = params.get("n")
    dims = [int(fixed_n)] * 4 if fixed_n else [1, 2, 3, 5]
    rng = as_rng(seed)
    rows = []
    oracle_gap_max = -np.inf
    preimage_gap_max = 0.0
    for k in range(trials):
        n = dims[k % len(dims)]
        b = random_well_conditioned(n, rng)
        d = rng.uniform(0.5, 2.0, size=n)
        y = rng.normal(0.0, 1.5, size=2 * n)
        # Enforce a no-tie margin so instances are unambiguous.
        for i in range(n):
            while abs(y[i] - y[i + n]) < 1e-3:
                y[i + n] = rng.normal(0.0, 1.5)
        res = projection.relu_pseudo_inverse(b, d, y)
        oracle_min, minimizers = projection.brute_force_relu_projection(b, d, y)
        gap = res.residual - oracle_min
        pre_gap = min(np.linalg.norm(res.x - m) for m in minimizers)
        oracle_gap_max = max(oracle_gap_max, gap)
        preimage_gap_max = max(preimage_gap_max, pre_gap)
        rows.append([n, res.residual, oracle_min, gap, pre_gap,
                     float(len(minimizers))])
    _write_table(out_dir, "bench",
                 ["n", "residual", "oracle_min", "gap", "preimage_gap",
                  "n_minimizers"], rows, fmt)
    return {
        "trials": trials,
        "oracle_gap_max": float(oracle_gap_max),
        "preimage_gap_max": float(preimage_gap_max),
    }


_PRESET_RUNNERS = {
    "gap-visualization": _preset_gap_visualization,
    "layerwise-toy": _preset_layerwise_toy,
    "trefoil-obstruction": _preset_trefoil_obstruction,
    "projection-bench": _preset_projection_bench,
}


# --- subcommands ---------------------------------------------------------------


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as err:
        raise _UsageError(f"malformed config: {err.msg}",
                          extra={"line": err.lineno, "column": err.colno}) from err
    except OSError as err:
        raise _UsageError(f"cannot read config: {err}") from err
    if not isinstance(cfg, dict):
        raise _UsageError("config must be a JSON object")
    return cfg


class _UsageError(Exception):
    def __init__(self, message: str, extra: dict | None = None):
        super().__init__(message)
        self.extra = extra or {}


def _cmd_run(args) -> int:
    if args.preset not in PRESETS:
        raise _UsageError(f"unknown preset {args.preset!r}; "
                          f"choose from {', '.join(PRESETS)}")
    params = {}
    if args.config:
        params.update(_load_config(args.config))
    # Explicit flags override config-file values.
    for key in ("trials", "n", "phase1_steps", "phase2_steps",
                "steps_manifold", "steps_density"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if args.checkpoint:
        params["checkpoint"] = args.checkpoint
    seed = args.seed if args.seed is not None else int(params.get("seed", 0))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    summary = _PRESET_RUNNERS[args.preset](params, out_dir, args.format, seed)
    wall = time.perf_counter() - start
    for value in summary.values():
        if isinstance(value, float) and not np.isfinite(value):
            summary = {**summary, "warning": "non-finite metric present"}
            break
    _write_summary(out_dir, args.preset, seed, wall, summary)
    return 0


def _cmd_project(args) -> int:
    net = InjectiveNetwork.load_checkpoint(args.checkpoint)
    queries = CompactSampleSet.from_csv(args.queries).points
    if queries.shape[1] != net.ambient_dim:
        raise InvalidArgumentError(
            f"queries have dimension {queries.shape[1]}, "
            f"network ambient dimension is {net.ambient_dim}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    m, n = net.ambient_dim, net.latent_dim
    columns = ([f"query{i}" for i in range(m)]
               + [f"preimage{i}" for i in range(n)]
               + [f"rangepoint{i}" for i in range(m)]
               + ["residual", "tie_flag"])
    rows = []
    for y in queries:
        res = projection.project_to_range(net, y)
        rows.append(np.concatenate([y, res.x, res.y_hat,
                                    [res.residual, float(res.tie_flag)]]))
    _write_table(out_dir, "projections", columns, rows, args.format)
    return 0


def _cmd_gap(args) -> int:
    pairs = np.loadtxt(args.pairs, delimiter=",", skiprows=1, ndmin=2)
    net = InjectiveNetwork.load_checkpoint(args.checkpoint)
    latent = CompactSampleSet.from_csv(args.latent).points
    o, m = net.latent_dim, net.ambient_dim
    if pairs.shape[1] <= m:
        raise InvalidArgumentError(
            "pairs CSV must hold parameter columns followed by "
            f"{m} target coordinates")
    n = pairs.shape[1] - m
    x, fx = pairs[:, :n], pairs[:, n:]
    if latent.shape[1] != o:
        raise InvalidArgumentError(
            f"latent samples have dimension {latent.shape[1]}, expected {o}")

    def g_map(ws):
        return np.atleast_2d(np.asarray(net.forward(ws), dtype=float))

    gap = metrics.estimate_embedding_gap(x, fx, g_map, latent, family=args.family)
    check = metrics.wasserstein_bound_check(x, fx, g_map, latent, gap,
                                            tolerance=args.tolerance)
    mu_f = metrics.EmpiricalMeasure.uniform(fx)
    mu_g = metrics.EmpiricalMeasure.uniform(g_map(latent))
    if len(mu_f) + len(mu_g) <= metrics.EXACT_W2_MAX_POINTS:
        w2_key, w2_val = "w2_exact", metrics.wasserstein2_exact(mu_f, mu_g)
    else:
        w2_key, w2_val = "w2_sliced", metrics.wasserstein2_sliced(
            mu_f, mu_g, seed=args.seed or 0)
    payload = {
        "lower": gap.lower,
        "upper": gap.upper,
        w2_key: w2_val,
        "bound_check": {"w2": check.w2, "upper": check.upper,
                        "tolerance": check.tolerance,
                        "passed": check.passed, "method": check.method},
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "gap.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="injflow",
        description="Injective flow experiments: presets, range projection, "
                    "embedding-gap diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment preset")
    run.add_argument("preset", help=f"one of: {', '.join(PRESETS)}")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default="./out")
    run.add_argument("--config", default=None, help="JSON config file")
    run.add_argument("--checkpoint", default=None,
                     help="write the trained network checkpoint here")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--n", type=int, default=None)
    run.add_argument("--phase1-steps", dest="phase1_steps", type=int, default=None)
    run.add_argument("--phase2-steps", dest="phase2_steps", type=int, default=None)
    run.add_argument("--steps-manifold", dest="steps_manifold", type=int, default=None)
    run.add_argument("--steps-density", dest="steps_density", type=int, default=None)

    proj = sub.add_parser("project", help="project query points onto a "
                                          "checkpointed network's range")
    proj.add_argument("--checkpoint", required=True)
    proj.add_argument("--queries", required=True, help="CSV of query points")
    proj.add_argument("--out", default="./out")
    proj.add_argument("--format", choices=("csv", "json"), default="csv")

    gap = sub.add_parser("gap", help="embedding-gap interval between target "
                                     "pairs and a checkpointed network")
    gap.add_argument("--pairs", required=True,
                     help="CSV: parameter columns then target coordinates")
    gap.add_argument("--latent", required=True, help="CSV of latent samples")
    gap.add_argument("--checkpoint", required=True)
    gap.add_argument("--out", default="./out")
    gap.add_argument("--family", choices=("affine", "small-flow"), default="affine")
    gap.add_argument("--tolerance", type=float, default=0.01)
    gap.add_argument("--seed", type=int, default=None)
    return parser


def _error_record(kind: str, message: str, extra: dict | None = None) -> None:
    record = {"error": {"type": kind, "message": message}}
    if extra:
        record["error"].update(extra)
    print(json.dumps(record), file=sys.stderr)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "project":
            return _cmd_project(args)
        if args.command == "gap":
            return _cmd_gap(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as err:
        _error_record("usage", str(err), err.extra)
        return 2
    except (InvalidArgumentError, InvalidConfigError) as err:
        _error_record("usage", str(err))
        return 2
    except NumericError as err:
        _error_record("numeric", str(err),
                      {"stage": err.stage_index} if err.stage_index is not None else None)
        return 1
    except InjectiveFlowError as err:
        _error_record("numeric", str(err))
        return 1


if __name__ == "__main__":
    sys.exit(main())
