import math
from fractions import Fraction

import numpy as np
import pytest

from _oracles import gessaman_n
from fphist import metrics
from fphist.estimator import build_estimate, tail_mass
from fphist.exceptions import ScheduleError
from fphist.metrics import (
    consistency_diagnostics,
    default_box,
    error_report,
    flow_error_probe,
    mc_l1_error,
    mc_linf_error,
    tau_convergence_probe,
)
from fphist.partition import HyperRect, build_btc, build_gessaman
from fphist.reference import get_problem, ou_solution
from fphist.sde import EulerConfig, InitialDensity, SdeProblem, simulate_terminal


def zero(x):
    return np.zeros(len(x))


def gauss_estimate(m=4096, k=64, d=2, seed=0, rule="gessaman"):
    x = np.random.default_rng(seed).normal(size=(m, d))
    tree = build_gessaman(x, k) if rule == "gessaman" else build_btc(x, k)
    return build_estimate(tree)


def test_self_distance_is_zero():
    est = gauss_estimate()
    assert mc_l1_error(est, est) == 0.0
    assert mc_l1_error(est, est.evaluate) == 0.0
    assert mc_linf_error(est, est) == 0.0


def test_constant_integrand_is_exact():
    tree = build_gessaman(np.array([[0.0], [1.0], [2.0], [3.0]]), 1)
    est = build_estimate(tree).with_values([0.0, 0.25, 0.0, 0.0])
    assert mc_l1_error(est, zero, n_eval=3) == 0.25


def test_linf_of_zero_estimate_finds_the_peak():
    est = build_estimate(build_btc(np.zeros((1, 2)), 1))
    t = 0.5
    mode = np.full(2, 1 - math.exp(-t))

    def ref(x):
        return ou_solution(0.5, 1.0, 2, t, x)

    box = HyperRect(mode - 0.05, mode + 0.05)
    peak = float(ref(mode))
    got = mc_linf_error(est, ref, n_eval=4000, box=box)
    assert peak * (1 - 1e-3) <= got <= peak


def test_aligned_piecewise_constant_is_exact_sum():
    est = gauss_estimate(seed=1)
    other = est.with_values(np.random.default_rng(2).uniform(0, 1, est.tree.n_leaves))
    bounded = est.tree.bounded_mask()
    exact = np.sum(est.tree.leaf_volumes()[bounded] * np.abs(est.values - other.values)[bounded])
    assert mc_l1_error(est, other, n_eval=1) == pytest.approx(exact, rel=1e-12)


def test_symmetry_and_triangle_on_common_partition():
    rng = np.random.default_rng(3)
    a = gauss_estimate(seed=3)
    b = a.with_values(rng.uniform(0, 1, a.tree.n_leaves))
    c = a.with_values(rng.uniform(0, 1, a.tree.n_leaves))
    ab, ba = mc_l1_error(a, b, 4, seed=5), mc_l1_error(b, a, 4, seed=5)
    assert ab == pytest.approx(ba, rel=1e-12)
    assert mc_l1_error(a, c, 4) <= ab + mc_l1_error(b, c, 4) + 1e-12


def test_triangle_inequality_with_smooth_reference():
    # different partitions of one sample; MC noise bounded by 3 sigma over seeds
    x = np.random.default_rng(4).normal(size=(4096, 2))
    a = build_estimate(build_gessaman(x, 64))
    b = build_estimate(build_btc(x, 64))

    def ref(p):
        return np.exp(-0.5 * np.sum(p**2, axis=1)) / (2 * math.pi)

    slack = []
    for seed in range(5):
        lhs = mc_l1_error(a, ref, 16, seed)
        rhs = mc_l1_error(a, b, 16, seed) + mc_l1_error(b, ref, 16, seed)
        slack.append(rhs - lhs)
    slack = np.array(slack)
    assert slack.mean() > -3 * slack.std() / math.sqrt(len(slack))


def test_tail_mass_is_exact():
    est = gauss_estimate(m=4096, k=64)
    rep = error_report(est, zero, box=HyperRect.cube(-3, 3, 2))
    unbounded = int((~est.tree.bounded_mask()).sum())
    assert Fraction(rep.tail_mass) == Fraction(unbounded * 64, 4096) == tail_mass(est)


def test_error_report_fields():
    bench = get_problem("example1")
    s = simulate_terminal(bench.problem, EulerConfig(bench.steps, 4096, 0))
    est = build_estimate(build_gessaman(s, 64))
    rep = error_report(est, bench.reference())
    for v in (rep.l1, rep.linf, rep.l1_total, rep.ref_tail_mass, rep.tail_mass):
        assert math.isfinite(v) and v >= 0
    assert rep.box.is_bounded()
    assert rep.l1_total == pytest.approx(rep.l1 + rep.ref_tail_mass)
    data = rep.to_dict()
    assert data["n_eval"] == 16 and data["box"]["lower"] == list(default_box(est).lower)


def test_metrics_do_not_depend_on_chunking(monkeypatch):
    est = gauss_estimate(m=2**12, k=2**4, rule="btc")
    ref = est.with_values(est.values * 0.5)

    def smooth(p):
        return np.exp(-np.sum(p**2, axis=1))

    full = (mc_l1_error(est, smooth, 8, 3), mc_linf_error(est, smooth, 8, None, 3))
    monkeypatch.setattr(metrics, "_CHUNK_POINTS", 40)
    assert (mc_l1_error(est, smooth, 8, 3), mc_linf_error(est, smooth, 8, None, 3)) == full
    assert mc_l1_error(est, ref, 2, 0) == mc_l1_error(est, ref, 2, 0)


def test_seed_changes_points():
    est = gauss_estimate()

    def smooth(p):
        return np.exp(-np.sum(p**2, axis=1))

    assert mc_l1_error(est, smooth, 4, 0) != mc_l1_error(est, smooth, 4, 1)


def test_bad_arguments():
    est = gauss_estimate()
    with pytest.raises(ValueError):
        mc_l1_error(est, zero, n_eval=0)
    with pytest.raises(ValueError):
        mc_linf_error(est, zero, box=HyperRect.whole_space(2))
    with pytest.raises(ValueError):
        default_box(build_estimate(build_btc(np.zeros((1, 2)), 1)))


# --------------------------------------------------------------- diagnostics


def test_single_entry_schedule():
    bench = get_problem("example1")
    rows = consistency_diagnostics([(256, 16)], "gessaman", bench, HyperRect.cube(-4, 6, 2), 1.0)
    assert len(rows) == 1
    row = rows[0]
    assert row["n_leaves"] == 16 and row["leaf_ratio"] == 16 / 256
    assert 0 <= row["large_fraction_median"] <= 1
    assert row["l1_median"] > 0


@pytest.mark.parametrize(
    "schedule",
    [[(256, 16), (1024, 16)], [(1024, 32), (256, 16)], [(256, 16), (512, 64)], [(16, 16)]],
)
def test_schedule_errors(schedule):
    bench = get_problem("example1")
    with pytest.raises(ScheduleError):
        consistency_diagnostics(schedule, "gessaman", bench, HyperRect.cube(-4, 6, 2), 1.0)


def test_leaf_ratio_column_strictly_decreasing():
    bench = get_problem("example1")
    schedule = [(2**e, 2 ** (e // 2)) for e in (8, 10, 12)]
    rows = consistency_diagnostics(schedule, "gessaman", bench, HyperRect.cube(-4, 6, 2), 1.0)
    ratios = [r["leaf_ratio"] for r in rows]
    assert ratios == [gessaman_n(m, k, 2) ** 2 / m for m, k in schedule]
    assert ratios[0] == 1 / 16 and ratios[1] == 36 / 1024
    assert all(b < a for a, b in zip(ratios, ratios[1:]))


def test_diagnostics_without_reference():
    bench = get_problem("example3")
    rows = consistency_diagnostics([(256, 16)], "btc", bench, HyperRect.cube(-3, 3, 8), 1.0, steps=2)
    assert rows[0]["l1"] == [] and rows[0]["l1_median"] is None


def test_flow_probe_first_order():
    problem = SdeProblem(
        dim=1,
        horizon=1.0,
        drift=lambda x: -x,
        diffusion=lambda x: np.zeros((x.shape[0], 1, 1)),
        initial=InitialDensity.uniform_hypercube([0.5], [2.0]),
    )
    rows = flow_error_probe(problem, lambda x0, t: x0 * math.exp(-t), [0.1, 0.05, 0.025])
    ratios = [r["ratio"] for r in rows[1:]]
    assert rows[0]["ratio"] is None
    assert all(abs(r - 2.0) <= 0.1 for r in ratios)


def test_tau_probe_validation_and_single_row():
    bench = get_problem("example1")
    with pytest.raises(ValueError):
        tau_convergence_probe(bench, 1024, 16, [0.05, 0.1])
    with pytest.raises(ValueError):
        tau_convergence_probe(bench, 1024, 16, [0.03])
    with pytest.raises(ValueError):
        tau_convergence_probe(get_problem("example3"), 1024, 16, [0.1])
    out = tau_convergence_probe(bench, 1024, 16, [0.1])
    assert len(out["rows"]) == 1 and out["plateau_tau"] is None


@pytest.mark.slow
def test_tau_probe_trend_on_ou():
    bench = get_problem("example1")
    taus = [0.1, 0.05, 0.025]
    out = tau_convergence_probe(bench, 2**20, 2**10, taus, seed=0, metric="l1")
    l1 = [r["l1"] for r in out["rows"]]
    assert l1[0] > l1[1] > l1[2]
    assert out["plateau_tau"] in (None, 0.05)
    total = tau_convergence_probe(bench, 2**20, 2**10, taus[:2], seed=0)
    # total error is dominated by the statistical tail term, which does not move with tau
    assert abs(total["rows"][1]["l1_total"] - total["rows"][0]["l1_total"]) < 0.01
