"""Monte-Carlo error norms against a reference density, plus consistency and
step-size diagnostics.

Leaf ``r`` draws its evaluation points from its own counter-based stream keyed
by ``(seed, r)``, so errors do not depend on evaluation order or chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _rng
from .estimator import DensityEstimate, build_estimate, tail_mass
from .exceptions import ScheduleError
from .partition import BTC, GESSAMAN, HyperRect, build_btc, build_gessaman, large_cell_fraction
from .sde import EulerConfig, sample_initial, simulate, simulate_terminal

__all__ = [
    "ErrorReport",
    "default_box",
    "mc_l1_error",
    "mc_linf_error",
    "error_report",
    "consistency_diagnostics",
    "tau_convergence_probe",
    "flow_error_probe",
    "build_tree",
]

DEFAULT_N_EVAL = 16
_CHUNK_POINTS = 1 << 20


@dataclass(frozen=True, eq=False)
class ErrorReport:
    """Errors of one estimate against a reference density.

    ``l1`` integrates over bounded leaves only. ``ref_tail_mass`` is the
    reference mass outside them, where the estimate is zero, so
    ``l1_total = l1 + ref_tail_mass`` estimates the L1 error on all of R^d.
    ``tail_mass`` is the sample fraction in unbounded leaves.
    """

    l1: float
    linf: float
    box: HyperRect
    n_eval: int
    tail_mass: float
    ref_tail_mass: float
    l1_total: float
    seed: int

    def to_dict(self):
        return {
            "l1": self.l1,
            "l1_total": self.l1_total,
            "linf": self.linf,
            "tail_mass": self.tail_mass,
            "ref_tail_mass": self.ref_tail_mass,
            "box": self.box.to_dict(),
            "n_eval": self.n_eval,
            "seed": self.seed,
        }


def _as_density(f):
    if isinstance(f, DensityEstimate):
        return f.evaluate
    return f


def _leaf_points(key, leaf_ids, lower, upper, n_eval):
    """``n_eval`` uniform points in each box; returns ``(L, n_eval, d)``."""
    d = lower.shape[1]
    counters = np.arange(n_eval * d, dtype=np.uint64)
    u = _rng.uniforms(key, np.asarray(leaf_ids, dtype=np.uint64)[:, None], counters[None, :])
    u = u.reshape(len(leaf_ids), n_eval, d)
    pts = lower[:, None, :] + u * (upper - lower)[:, None, :]
    # keep rounding from pushing a point onto the half-open upper face
    return np.minimum(pts, np.nextafter(upper, lower)[:, None, :])


def _leaf_sweep(est, ref, leaf_ids, lower, upper, n_eval, seed):
    """Per-leaf mean |est - ref|, max |est - ref| and mean ref."""
    key = _rng.stream_key(seed, _rng.DOMAIN_METRICS)
    ref = _as_density(ref)
    d = lower.shape[1]
    step = max(1, _CHUNK_POINTS // max(1, n_eval * d))
    mean_abs = np.empty(len(leaf_ids))
    max_abs = np.empty(len(leaf_ids))
    mean_ref = np.empty(len(leaf_ids))
    for s in range(0, len(leaf_ids), step):
        sl = slice(s, s + step)
        pts = _leaf_points(key, leaf_ids[sl], lower[sl], upper[sl], n_eval)
        r = np.asarray(ref(pts.reshape(-1, d)), dtype=float).reshape(pts.shape[:2])
        e = est.values[leaf_ids[sl]][:, None]
        diff = np.abs(e - r)
        mean_abs[sl] = diff.mean(axis=1)
        max_abs[sl] = diff.max(axis=1)
        mean_ref[sl] = r.mean(axis=1)
    return mean_abs, max_abs, mean_ref


def default_box(est):
    """Bounding box of the bounded leaves of ``est``."""
    tree = est.tree
    bounded = tree.bounded_mask()
    if not bounded.any():
        raise ValueError("estimate has no bounded leaves; pass an explicit box")
    return HyperRect(tree.leaf_lower[bounded].min(axis=0), tree.leaf_upper[bounded].max(axis=0))


def _bounded_sums(est, ref, n_eval, seed):
    tree = est.tree
    ids = np.flatnonzero(tree.bounded_mask())
    if len(ids) == 0:
        return 0.0, 0.0
    mean_abs, _, mean_ref = _leaf_sweep(
        est, ref, ids, tree.leaf_lower[ids], tree.leaf_upper[ids], n_eval, seed
    )
    vol = tree.leaf_volumes()[ids]
    return float(np.sum(vol * mean_abs)), float(np.sum(vol * mean_ref))


def mc_l1_error(est, ref, n_eval=DEFAULT_N_EVAL, seed=0):
    """Monte-Carlo L1 distance over the bounded leaves of ``est``.

    Each bounded leaf contributes ``vol * mean |est - ref|`` over ``n_eval``
    uniform points. Unbounded leaves are skipped; see :func:`error_report`
    for the reference mass they carry.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be at least 1")
    return _bounded_sums(est, ref, n_eval, seed)[0]


def mc_linf_error(est, ref, n_eval=DEFAULT_N_EVAL, box=None, seed=0):
    """Max of ``|est - ref|`` over ``n_eval`` uniform points in each
    ``leaf & box`` for leaves meeting ``box`` (default: :func:`default_box`)."""
    if n_eval < 1:
        raise ValueError("n_eval must be at least 1")
    box = default_box(est) if box is None else box
    if not box.is_bounded():
        raise ValueError("mc_linf_error needs a finite box")
    tree = est.tree
    lo = np.maximum(tree.leaf_lower, box.lower)
    hi = np.minimum(tree.leaf_upper, box.upper)
    ids = np.flatnonzero(np.all(lo < hi, axis=1))
    if len(ids) == 0:
        return 0.0
    _, max_abs, _ = _leaf_sweep(est, ref, ids, lo[ids], hi[ids], n_eval, seed)
    return float(max_abs.max())


def error_report(est, ref, n_eval=DEFAULT_N_EVAL, box=None, seed=0):
    """L1 and L-infinity errors of ``est`` with mass bookkeeping."""
    box = default_box(est) if box is None else box
    l1, ref_bounded = _bounded_sums(est, ref, n_eval, seed)
    linf = mc_linf_error(est, ref, n_eval, box, seed)
    ref_tail = max(0.0, 1.0 - ref_bounded)
    return ErrorReport(
        l1=l1,
        linf=linf,
        box=box,
        n_eval=int(n_eval),
        tail_mass=float(tail_mass(est)),
        ref_tail_mass=ref_tail,
        l1_total=l1 + ref_tail,
        seed=int(seed),
    )


def build_tree(samples, rule, k, remainder="error"):
    """Partition ``samples`` with the named rule."""
    if rule == GESSAMAN:
        return build_gessaman(samples, k, remainder=remainder)
    if rule == BTC:
        return build_btc(samples, k)
    raise ValueError(f"unknown rule {rule!r}; expected 'gessaman' or 'btc'")


def _check_schedule(schedule):
    schedule = [(int(m), int(k)) for m, k in schedule]
    for m, k in schedule:
        if not 1 <= k < m:
            raise ScheduleError(f"need 1 <= k_M < M, got M={m}, k={k}")
    for (m0, k0), (m1, k1) in zip(schedule, schedule[1:]):
        if m1 <= m0:
            raise ScheduleError(f"M must increase along the schedule ({m0} -> {m1})")
        if k1 <= k0:
            raise ScheduleError(f"k_M must increase along the schedule ({k0} -> {k1})")
        if k1 / m1 > k0 / m0:
            raise ScheduleError(f"k_M / M must not increase ({k0}/{m0} -> {k1}/{m1})")
    return schedule


def consistency_diagnostics(
    schedule,
    rule,
    bench,
    box,
    gamma,
    seeds=(0,),
    n_eval=DEFAULT_N_EVAL,
    remainder="spread",
    steps=None,
):
    """Empirical surrogates of the consistency conditions along ``schedule``.

    For each ``(M, k_M)`` and seed: the leaf-count ratio ``R / M``, the sample
    fraction in leaves whose box-clipped diameter exceeds ``gamma`` and, when
    ``bench`` has an exact solution, L1 and L-infinity errors. Returns one
    dict per schedule entry with per-seed lists and medians.
    """
    schedule = _check_schedule(schedule)
    problem = bench.problem
    steps = bench.steps if steps is None else steps
    ref = bench.reference()
    rows = []
    for m, k in schedule:
        per_seed = {"large_fraction": [], "l1": [], "l1_total": [], "linf": []}
        n_leaves = None
        for seed in seeds:
            sample = simulate_terminal(problem, EulerConfig(steps, m, seed))
            tree = build_tree(sample, rule, k, remainder)
            n_leaves = tree.n_leaves
            per_seed["large_fraction"].append(large_cell_fraction(tree, box, gamma))
            if ref is not None:
                est = build_estimate(tree, anchor=sample.points.mean(axis=0))
                rep = error_report(est, ref, n_eval, box, seed)
                per_seed["l1"].append(rep.l1)
                per_seed["l1_total"].append(rep.l1_total)
                per_seed["linf"].append(rep.linf)
        row = {"M": m, "k": k, "n_leaves": n_leaves, "leaf_ratio": n_leaves / m}
        for name, vals in per_seed.items():
            row[name] = vals
            row[f"{name}_median"] = float(np.median(vals)) if vals else None
        rows.append(row)
    return rows


def tau_convergence_probe(
    bench,
    n_samples,
    k,
    taus,
    seed=0,
    rule=GESSAMAN,
    n_eval=DEFAULT_N_EVAL,
    remainder="error",
    plateau_rtol=0.05,
    metric="l1_total",
):
    """Total L1 error of the full pipeline for decreasing step sizes.

    The error splits into a time-discretization part of order ``tau`` and a
    statistical part fixed by ``(M, k)``; once the latter dominates, errors
    stop improving. ``plateau_tau`` is the last step size that still improved
    on its predecessor by more than ``plateau_rtol`` (``None`` if every
    refinement helped), judged on ``metric`` (``"l1_total"`` or ``"l1"``).
    """
    if metric not in ("l1", "l1_total"):
        raise ValueError("metric must be 'l1' or 'l1_total'")
    taus = [float(t) for t in taus]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("taus must be strictly decreasing")
    ref = bench.reference()
    if ref is None:
        raise ValueError(f"{bench.identifier} has no exact solution")
    horizon = bench.problem.horizon
    rows = []
    for tau in taus:
        steps = int(round(horizon / tau))
        if steps < 1 or not math.isclose(steps * tau, horizon, rel_tol=1e-9):
            raise ValueError(f"tau={tau} does not divide the horizon {horizon}")
        sample = simulate_terminal(bench.problem, EulerConfig(steps, n_samples, seed))
        tree = build_tree(sample, rule, k, remainder)
        est = build_estimate(tree, anchor=sample.points.mean(axis=0))
        rep = error_report(est, ref, n_eval, None, seed)
        rows.append({"tau": tau, "steps": steps, "l1": rep.l1, "l1_total": rep.l1_total})
    plateau = None
    for prev, cur in zip(rows, rows[1:]):
        if cur[metric] > prev[metric] * (1.0 - plateau_rtol):
            plateau = prev["tau"]
            break
    return {"rows": rows, "metric": metric, "plateau_tau": plateau}


def flow_error_probe(problem, flow, taus, n_samples=64, seed=0):
    """Max terminal error of the Euler chain against an exact flow map.

    Meant for problems with zero diffusion, where Euler-Maruyama reduces to the
    explicit Euler ODE scheme. ``flow(x0, t)`` maps ``(n, d)`` starting points
    to their exact positions at time ``t``. Each row carries the ratio of the
    previous error to the current one.
    """
    x0 = sample_initial(problem.initial, n_samples, seed).points
    exact = flow(x0, problem.horizon)
    rows = []
    for tau in taus:
        steps = int(round(problem.horizon / tau))
        if steps < 1 or not math.isclose(steps * tau, problem.horizon, rel_tol=1e-9):
            raise ValueError(f"tau={tau} does not divide the horizon {problem.horizon}")
        terminal, _ = simulate(problem, EulerConfig(steps, n_samples, seed))
        err = float(np.max(np.abs(terminal.points - exact)))
        ratio = rows[-1]["error"] / err if rows and err > 0 else None
        rows.append({"tau": tau, "steps": steps, "error": err, "ratio": ratio})
    return rows
