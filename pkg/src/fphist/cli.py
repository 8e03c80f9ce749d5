"""Command-line experiment runner.

Verbs
-----
run       simulate, partition, estimate and score one configuration
sweep     repeat ``run`` over values of M, k, tau or alpha
catalog   list benchmark problems
validate  check a configuration without computing anything

A configuration is a JSON object whose keys match :class:`ExperimentConfig`;
command-line flags override it. Every report embeds the resolved
configuration. On failure a JSON object ``{"error": ..., "message": ...}``
is printed to stdout and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .estimator import build_estimate, self_integral, slice_estimate, tail_mass, write_slice_csv
from .exceptions import ConfigError, FPHistError
from .metrics import DEFAULT_N_EVAL, build_tree, default_box, error_report
from .partition import BTC, GESSAMAN, HyperRect, check_sizes, large_cell_fraction, partition_stats
from .reference import catalog, get_problem
from .sde import DEFAULT_CHUNK, EulerConfig, simulate

REPORT_FORMAT = "fphist.report"
REPORT_VERSION = 1
LEDGER_VERSION = 1
LEDGER_COLUMNS = [
    "schema_version",
    "problem",
    "rule",
    "M",
    "k",
    "tau",
    "seed",
    "l1",
    "linf",
    "tail",
    "wall_time",
]
SWEEP_AXES = ("M", "k", "tau", "alpha")
EXIT_CONFIG = 2
EXIT_RUNTIME = 1

# keys that change where or how fast a run executes but not its results
_EXECUTION_KEYS = ("output", "ledger", "n_jobs", "chunk_size")


@dataclasses.dataclass
class ExperimentConfig:
    """All user-visible knobs of one run.

    ``params`` overrides catalog parameters (``alpha``, ``epsilon``, ``beta``,
    ``T``, ...). Give either ``steps`` or ``tau``; both must satisfy
    ``tau * steps == T``. ``box`` is ``[lo, hi]`` for a cube or a list of
    per-axis ``[lo, hi]`` pairs; it defaults to the bounding box of the
    bounded leaves. ``k_of_M`` sets ``k`` from ``M`` during sweeps, either
    ``"sqrt"`` or ``"pow:<exponent>"``.
    """

    problem: str = "example1"
    params: dict = dataclasses.field(default_factory=dict)
    rule: str = GESSAMAN
    M: int = 4096
    k: int = 64
    steps: int | None = None
    tau: float | None = None
    seed: int = 0
    remainder: str = "error"
    n_eval: int = DEFAULT_N_EVAL
    box: list | None = None
    gamma: float | None = None
    snapshots: list = dataclasses.field(default_factory=list)
    slice_points: int = 101
    k_of_M: str | None = None
    output: str = "fphist_out"
    ledger: str | None = None
    n_jobs: int = 1
    chunk_size: int = DEFAULT_CHUNK

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class ResolvedRun:
    config: ExperimentConfig
    bench: object
    steps: int
    tau: float
    box: HyperRect | None


def _int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def _box(spec, dim):
    if spec is None:
        return None
    arr = np.asarray(spec, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (dim, 1))
    if arr.shape != (dim, 2):
        raise ConfigError(f"box must be [lo, hi] or {dim} pairs [lo, hi]")
    if not np.isfinite(arr).all() or np.any(arr[:, 0] >= arr[:, 1]):
        raise ConfigError("box bounds must be finite with lo < hi")
    return HyperRect(arr[:, 0], arr[:, 1])


def k_from_m(m, rule):
    """``k`` as a function of ``M``: ``"sqrt"`` or ``"pow:<p>"``, rounded."""
    if rule == "sqrt":
        p = 0.5
    elif isinstance(rule, str) and rule.startswith("pow:"):
        try:
            p = float(rule[4:])
        except ValueError:
            raise ConfigError(f"bad k_of_M {rule!r}") from None
    else:
        raise ConfigError(f"k_of_M must be 'sqrt' or 'pow:<p>', got {rule!r}")
    return max(1, int(round(m**p)))


def resolve(cfg):
    """Check every precondition of ``cfg`` without simulating anything."""
    if not isinstance(cfg.params, dict):
        raise ConfigError("params must be an object")
    bench = get_problem(cfg.problem, **cfg.params)
    horizon = bench.problem.horizon
    if cfg.rule not in (GESSAMAN, BTC):
        raise ConfigError(f"rule must be 'gessaman' or 'btc', got {cfg.rule!r}")
    if cfg.remainder not in ("error", "spread"):
        raise ConfigError(f"remainder must be 'error' or 'spread', got {cfg.remainder!r}")
    m = _int(cfg.M, "M")
    if cfg.k_of_M is not None:
        cfg.k = k_from_m(m, cfg.k_of_M)
    k = _int(cfg.k, "k")
    seed = _int(cfg.seed, "seed", minimum=0)
    if seed > 2**64 - 1:
        raise ConfigError("seed must fit in 64 bits")
    _int(cfg.n_eval, "n_eval")
    _int(cfg.n_jobs, "n_jobs")
    _int(cfg.chunk_size, "chunk_size")
    _int(cfg.slice_points, "slice_points", minimum=2)

    if cfg.steps is None and cfg.tau is None:
        tau = bench.tau
        steps = int(round(horizon / tau))
    elif cfg.steps is None:
        tau = float(cfg.tau)
        if not tau > 0:
            raise ConfigError("tau must be positive")
        steps = int(round(horizon / tau))
    else:
        steps = _int(cfg.steps, "steps")
        tau = horizon / steps if cfg.tau is None else float(cfg.tau)
    if steps < 1 or not math.isclose(tau * steps, horizon, rel_tol=1e-9):
        raise ConfigError(f"tau * J must equal T: tau={tau}, J={steps}, T={horizon}")
    tau = horizon / steps

    snaps = [_int(j, "snapshot step", minimum=0) for j in cfg.snapshots]
    if any(j > steps for j in snaps):
        raise ConfigError(f"snapshot steps must lie in [0, {steps}]")
    if cfg.gamma is not None and not float(cfg.gamma) > 0:
        raise ConfigError("gamma must be positive")
    box = _box(cfg.box, bench.problem.dim)
    if cfg.gamma is not None and box is None:
        raise ConfigError("gamma needs an explicit box")
    check_sizes(cfg.rule, m, k, bench.problem.dim, cfg.remainder)
    cfg.M, cfg.k, cfg.seed, cfg.steps, cfg.tau = m, k, seed, steps, tau
    cfg.snapshots = sorted(set(snaps))
    return ResolvedRun(cfg, bench, steps, tau, box)


def _dump(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _default_slices(est, box, points):
    if box is None:
        try:
            box = default_box(est)
        except ValueError:
            box = HyperRect.cube(-1.0, 1.0, est.dim)
    axes_list = [(0,)] if est.dim == 1 else [(0, 1)]
    out = []
    for axes in axes_list:
        grids = [np.linspace(box.lower[a], box.upper[a], points) for a in axes]
        values, grids = slice_estimate(est, axes, grids)
        out.append((axes, grids, values))
    return out


def _append_ledger(path, row):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEDGER_COLUMNS)
        if new:
            writer.writeheader()
        writer.writerow(row)


def public_config(cfg):
    """Resolved configuration without execution-only keys."""
    data = cfg.to_dict()
    for key in _EXECUTION_KEYS:
        data.pop(key, None)
    return data


def execute(resolved):
    """Run a resolved configuration and write its artifacts. Returns the report."""
    cfg = resolved.config
    bench = resolved.bench
    out = Path(cfg.output)
    start = time.perf_counter()
    terminal, snaps = simulate(
        bench.problem,
        EulerConfig(resolved.steps, cfg.M, cfg.seed),
        snapshots=cfg.snapshots,
        n_jobs=cfg.n_jobs,
        chunk_size=cfg.chunk_size,
    )
    tree = build_tree(terminal, cfg.rule, cfg.k, cfg.remainder)
    meta = {"problem": bench.identifier, "seed": cfg.seed, "steps": resolved.steps}
    est = build_estimate(tree, anchor=terminal.points.mean(axis=0), metadata=meta)

    ref = bench.reference()
    errors = None
    box = resolved.box
    if ref is not None and tree.bounded_mask().any():
        rep = error_report(est, ref, cfg.n_eval, box, cfg.seed)
        errors = rep.to_dict()
        box = rep.box
    elif box is None and tree.bounded_mask().any():
        box = default_box(est)

    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "partition.json", tree.to_dict())
    _dump(out / "estimate.json", est.to_dict())
    for axes, grids, values in _default_slices(est, box, cfg.slice_points):
        name = "slice_" + "_".join(f"x{a}" for a in axes) + ".csv"
        (out / "slices").mkdir(exist_ok=True)
        write_slice_csv(out / "slices" / name, axes, grids, values)

    snapshot_rows = []
    for j, sample in snaps.items():
        snap_tree = build_tree(sample, cfg.rule, cfg.k, cfg.remainder)
        snap_est = build_estimate(snap_tree, anchor=sample.points.mean(axis=0), metadata={**meta, "step": j})
        _dump(out / "snapshots" / f"j{j:04d}" / "partition.json", snap_tree.to_dict())
        _dump(out / "snapshots" / f"j{j:04d}" / "estimate.json", snap_est.to_dict())
        snapshot_rows.append({"step": j, "time": j * resolved.tau, "n_leaves": snap_tree.n_leaves})

    stats = partition_stats(tree, box) if box is not None else None
    if stats is not None:
        stats["count_histogram"] = {str(c): n for c, n in stats["count_histogram"].items()}
    diagnostics = None
    if cfg.gamma is not None:
        diagnostics = {
            "gamma": float(cfg.gamma),
            "leaf_ratio": tree.n_leaves / cfg.M,
            "large_cell_fraction": large_cell_fraction(tree, box, cfg.gamma),
        }
    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config": public_config(cfg),
        "problem": {
            "identifier": bench.identifier,
            "dim": bench.problem.dim,
            "horizon": bench.problem.horizon,
            "params": bench.params,
            "has_reference": ref is not None,
        },
        "n_leaves": tree.n_leaves,
        "self_integral": float(self_integral(est)),
        "tail_mass": float(tail_mass(est)),
        "tail_mass_exact": str(tail_mass(est)),
        "errors": errors,
        "partition_stats": stats,
        "diagnostics": diagnostics,
        "snapshots": snapshot_rows,
    }
    _dump(out / "report.json", report)
    wall = time.perf_counter() - start
    ledger = Path(cfg.ledger) if cfg.ledger else out / "ledger.csv"
    _append_ledger(
        ledger,
        {
            "schema_version": LEDGER_VERSION,
            "problem": bench.identifier,
            "rule": cfg.rule,
            "M": cfg.M,
            "k": cfg.k,
            "tau": repr(resolved.tau),
            "seed": cfg.seed,
            "l1": "" if errors is None else repr(errors["l1"]),
            "linf": "" if errors is None else repr(errors["linf"]),
            "tail": repr(float(tail_mass(est))),
            "wall_time": f"{wall:.3f}",
        },
    )
    return report, wall


# ---------------------------------------------------------------- plumbing


def _load_config(path, overrides):
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    params = dict(data.get("params") or {})
    for key in ("alpha", "epsilon", "beta", "T"):
        value = overrides.pop(key, None)
        if value is not None:
            params[key] = value
    data["params"] = params
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def _config_flags(p):
    p.add_argument("--config", "-c", help="JSON configuration file")
    p.add_argument("--problem", help="catalog identifier")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--T", dest="T", type=float, help="time horizon")
    p.add_argument("--rule", choices=(GESSAMAN, BTC))
    p.add_argument("-M", "--samples", dest="M", type=int)
    p.add_argument("-k", dest="k", type=int, help="samples per cell")
    p.add_argument("-J", "--steps", dest="steps", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--remainder", choices=("error", "spread"))
    p.add_argument("--n-eval", dest="n_eval", type=int)
    p.add_argument("--box", nargs=2, type=float, metavar=("LO", "HI"), help="cube [LO, HI]^d")
    p.add_argument("--gamma", type=float)
    p.add_argument("--snapshots", nargs="*", type=int, metavar="J")
    p.add_argument("--slice-points", dest="slice_points", type=int)
    p.add_argument("--k-of-M", dest="k_of_M", help="'sqrt' or 'pow:<p>'")
    p.add_argument("--output", "-o")
    p.add_argument("--ledger", help="results ledger CSV (default: <output>/ledger.csv)")
    p.add_argument("--jobs", dest="n_jobs", type=int, help="worker threads for simulation")
    p.add_argument("--chunk-size", dest="chunk_size", type=int, help="trajectories per work item")


_CONFIG_KEYS = (
    "problem alpha epsilon beta T rule M k steps tau seed remainder n_eval box gamma "
    "snapshots slice_points k_of_M output ledger n_jobs chunk_size"
).split()


def _overrides(args):
    return {key: getattr(args, key, None) for key in _CONFIG_KEYS}


def _fail(exc, code):
    payload = exc.to_dict() if isinstance(exc, FPHistError) else {
        "error": type(exc).__name__,
        "message": str(exc),
    }
    print(json.dumps(payload))
    return code


def _summary(report, wall=None):
    errs = report["errors"] or {}
    return {
        "n_leaves": report["n_leaves"],
        "tail_mass": report["tail_mass"],
        "l1": errs.get("l1"),
        "l1_total": errs.get("l1_total"),
        "linf": errs.get("linf"),
        "wall_time": wall,
    }


def cmd_run(args):
    try:
        resolved = resolve(_load_config(args.config, _overrides(args)))
    except (FPHistError, ValueError, TypeError) as exc:
        return _fail(exc, EXIT_CONFIG)
    try:
        report, wall = execute(resolved)
    except (FPHistError, ValueError, ArithmeticError) as exc:
        return _fail(exc, EXIT_RUNTIME)
    print(json.dumps({"output": str(resolved.config.output), **_summary(report, round(wall, 3))}))
    return 0


def cmd_validate(args):
    try:
        resolved = resolve(_load_config(args.config, _overrides(args)))
    except (FPHistError, ValueError, TypeError) as exc:
        return _fail(exc, EXIT_CONFIG)
    print(json.dumps({"valid": True, "config": resolved.config.to_dict()}, indent=2))
    return 0


def cmd_catalog(args):
    rows = [
        {
            "id": b.identifier,
            "dim": b.problem.dim,
            "T": b.problem.horizon,
            "tau": b.tau,
            "has_reference": b.analytic is not None,
            "params": b.params,
            "description": b.description,
        }
        for b in catalog()
    ]
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        for r in rows:
            flag = "exact" if r["has_reference"] else "-"
            print(f"{r['id']:<20} d={r['dim']:<2} T={r['T']:<5g} tau={r['tau']:<6g} {flag:<6} {r['description']}")
    return 0


def _sweep_value(axis, raw):
    if axis in ("M", "k"):
        return int(float(raw))
    return float(raw)


def _one_sweep_run(base, axis, value, seed, outdir, ledger):
    data = dict(base)
    data["params"] = dict(base.get("params") or {})
    if axis == "alpha":
        data["params"]["alpha"] = value
    elif axis == "tau":
        data["tau"] = value
        data["steps"] = None
    else:
        data[axis] = value
        if axis == "k":
            data["k_of_M"] = None
    data["seed"] = seed
    data["output"] = str(outdir)
    data["ledger"] = str(ledger)
    row = {"axis": axis, "value": value, "seed": seed, "output": str(outdir)}
    cfg = None
    try:
        cfg = ExperimentConfig.from_dict(data)
        resolved = resolve(cfg)
        row.update(tau=resolved.tau)
        report, wall = execute(resolved)
    except (FPHistError, ValueError, ArithmeticError, TypeError) as exc:
        if cfg is not None:
            row.update(M=cfg.M, k=cfg.k)
        row.update(status="error", error=type(exc).__name__, message=str(exc))
        return row
    row.update(M=cfg.M, k=cfg.k)
    row.update(status="ok", error="", message="", **_summary(report, round(wall, 3)))
    return row


SUMMARY_COLUMNS = [
    "axis", "value", "seed", "M", "k", "tau", "status", "error",
    "l1", "l1_total", "linf", "tail_mass", "n_leaves", "wall_time", "message", "output",
]


def cmd_sweep(args):
    try:
        base_cfg = _load_config(args.config, _overrides(args))
        base = base_cfg.to_dict()
        values = [_sweep_value(args.axis, v) for v in args.values]
        seeds = args.seeds if args.seeds else [base_cfg.seed]
        if args.axis == "M" and base_cfg.k_of_M is None and not args.fixed_k:
            base["k_of_M"] = "sqrt"
    except (FPHistError, ValueError, TypeError) as exc:
        return _fail(exc, EXIT_CONFIG)
    root = Path(base_cfg.output)
    root.mkdir(parents=True, exist_ok=True)
    ledger = Path(base_cfg.ledger) if base_cfg.ledger else root / "ledger.csv"
    jobs = [
        (base, args.axis, v, s, root / f"{args.axis}={v:g}" / f"seed{s}", ledger)
        for v in values
        for s in seeds
    ]
    if args.parallel and args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(_one_sweep_run, *zip(*jobs)))
    else:
        rows = [_one_sweep_run(*job) for job in jobs]
    with open(root / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in SUMMARY_COLUMNS})
    _dump(
        root / "summary.json",
        {
            "axis": args.axis,
            "values": values,
            "seed_policy": f"every value runs with the same seeds {list(seeds)}",
            "base_config": public_config(base_cfg),
            "rows": rows,
        },
    )
    failed = sum(r["status"] != "ok" for r in rows)
    print(json.dumps({"output": str(root), "runs": len(rows), "failed": failed}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fphist", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a configuration without running it")
    _config_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    _config_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", nargs="*", default=[], help="values of the swept parameter")
    p.add_argument("--seeds", nargs="*", type=int, help="seeds run for every value")
    p.add_argument("--fixed-k", action="store_true", help="keep k fixed when sweeping M")
    p.add_argument("--parallel", type=int, default=0, help="run sweep points in N processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("catalog", help="list benchmark problems")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
