import math

import numpy as np
import pytest

from fphist.exceptions import UnknownProblemError
from fphist.reference import (
    AnalyticSolution,
    catalog,
    get_problem,
    heat_solution,
    ou_moments,
    ou_solution,
    problem_ids,
)

RNG = np.random.default_rng(20240601)


def laplacian(f, x, h):
    out = -2.0 * x.shape[-1] * f(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        out = out + f(x + e) + f(x - e)
    return out / h**2


def heat_residuals(diffusivity, n=100, d=5, alpha=1 / (2 * math.pi)):
    """Relative residual of dp/dt = diffusivity * Laplacian(p) at random (t, x).

    Both sides are divided by ``p / (64 * var)``, the size of each term, so
    the measure stays meaningful near the radius where the Laplacian vanishes.
    """
    ts = RNG.uniform(0.05, 1.0, n)
    out = []
    for t in ts:
        var = alpha + t / 32
        x = RNG.normal(size=d) * math.sqrt(var) * 1.5
        ht, hx = 1e-4, 1e-3 * math.sqrt(var)
        dpdt = (heat_solution(alpha, d, t + ht, x) - heat_solution(alpha, d, t - ht, x)) / (2 * ht)
        lap = laplacian(lambda y: heat_solution(alpha, d, t, y), x, hx)
        scale = heat_solution(alpha, d, t, x) / (64 * var)
        out.append(abs(dpdt - diffusivity * lap) / scale)
    return np.array(out)


# ---------------------------------------------------------------- examples


def test_ou_initial_value_at_origin():
    assert ou_solution(0.5, 1.0, 2, 0.0, np.zeros(2)) == pytest.approx(1 / math.pi, rel=1e-14)


def test_ou_long_time_peak():
    eps, d = 0.3, 2
    m, _ = ou_moments(0.5, eps, 60.0)
    assert ou_solution(0.5, eps, d, 60.0, np.full(d, m)) == pytest.approx((2 * math.pi * eps**2) ** (-d / 2), rel=1e-12)


def test_heat_value_at_origin():
    alpha = 1 / (2 * math.pi)
    expected = (1 + 0.3 * math.pi / 16) ** (-2.5)
    assert heat_solution(alpha, 5, 0.3, np.zeros(5)) == pytest.approx(expected, rel=1e-14)


def test_heat_initial_is_gaussian():
    alpha, d = 0.3, 3
    x = RNG.normal(size=(20, d))
    p0 = (2 * math.pi * alpha) ** (-d / 2) * np.exp(-np.sum(x**2, axis=1) / (2 * alpha))
    np.testing.assert_allclose(heat_solution(alpha, d, 0.0, x), p0, rtol=1e-13)


def test_heat_is_radial():
    x = RNG.normal(size=5)
    q = np.linalg.qr(RNG.normal(size=(5, 5)))[0]
    assert heat_solution(0.2, 5, 0.4, x) == pytest.approx(heat_solution(0.2, 5, 0.4, q @ x), rel=1e-12)


@pytest.mark.parametrize("bench_id", ["example1", "example2"])
def test_analytic_start_equals_initial_density(bench_id):
    bench = get_problem(bench_id)
    x = RNG.normal(size=(10, bench.problem.dim)) * 0.3
    np.testing.assert_allclose(bench.analytic.pdf(0.0, x), bench.problem.initial.pdf(x), rtol=1e-10)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ou_solution(0.0, 1.0, 2, 0.1, np.zeros(2))
    with pytest.raises(ValueError):
        heat_solution(0.1, 2, -1.0, np.zeros(2))
    with pytest.raises(ValueError):
        ou_solution(0.5, 1.0, 2, 0.1, np.zeros(3))


# ---------------------------------------------------------------- residuals


def test_ou_moment_odes():
    h = 1e-4
    for _ in range(100):
        alpha, eps, beta = RNG.uniform(0.05, 16), RNG.uniform(0.01, 4), RNG.uniform(-2, 2)
        t = RNG.uniform(0.01, 3)
        m, c = ou_moments(alpha, eps, t, beta)
        mp, cp = ou_moments(alpha, eps, t + h, beta)
        mm, cm = ou_moments(alpha, eps, t - h, beta)
        assert abs((mp - mm) / (2 * h) - (-m + beta)) <= 1e-6 * max(1.0, abs(beta))
        assert abs((cp - cm) / (2 * h) - (-2 * c + 2 * eps**2)) <= 1e-6 * max(1.0, alpha, eps**2)


def test_ou_solves_fokker_planck():
    # dp/dt = -div((beta - x) p) + eps^2 Laplacian(p) = d p - (beta - x).grad p + eps^2 Lap p
    alpha, eps, beta, d = 0.5, 1.0, 1.0, 2
    h = 1e-4
    for _ in range(100):
        t = RNG.uniform(0.05, 2)
        x = RNG.normal(size=d) + 0.5

        def p(y, s=t):
            return ou_solution(alpha, eps, d, s, y, beta)

        dpdt = (p(x, t + h) - p(x, t - h)) / (2 * h)
        grad = np.array([(p(x + h * e) - p(x - h * e)) / (2 * h) for e in np.eye(d)])
        rhs = d * p(x) - (beta - x) @ grad + eps**2 * laplacian(p, x, 1e-3)
        assert abs(dpdt - rhs) <= 1e-4 * p(x)


def test_heat_solves_its_pde():
    assert heat_residuals(1 / 64).max() < 1e-4


def test_heat_residual_check_detects_wrong_constant():
    assert heat_residuals(1 / 32, n=10).min() > 1e-2


# ------------------------------------------------------------ normalization


def test_ou_grid_normalization():
    g = np.linspace(-6, 6, 1201)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    total = ou_solution(0.5, 1.0, 2, 0.5, pts).sum() * (g[1] - g[0]) ** 2
    assert abs(total - 1) < 1e-3


def test_heat_grid_normalization_2d():
    g = np.linspace(-3, 3, 601)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    total = heat_solution(0.1, 2, 0.3, pts).sum() * (g[1] - g[0]) ** 2
    assert abs(total - 1) < 1e-3


@pytest.mark.parametrize(
    "density,d,half",
    [
        (lambda x: heat_solution(1 / (2 * math.pi), 5, 0.3, x), 5, 3.0),
        (lambda x: ou_solution(0.5, 1.0, 3, 0.5, x), 3, 6.0),
    ],
)
def test_mc_normalization(density, d, half):
    n = 10**6
    x = RNG.uniform(-half, half, size=(n, d))
    vals = density(x + (0.4 if d == 3 else 0.0)) * (2 * half) ** d
    mean, se = vals.mean(), vals.std() / math.sqrt(n)
    assert abs(mean - 1) < 3 * se


# ------------------------------------------------------------------ catalog


def test_catalog_contents():
    ids = problem_ids()
    for name in ["example1", "example2", "example3", "example4"] + [f"example1-setup-{s}" for s in "abcd"]:
        assert name in ids
    assert len(catalog()) == len(ids)


def test_setup_c():
    b = get_problem("example1-setup-c")
    assert (b.problem.dim, b.problem.horizon, b.tau) == (2, 1.0, 0.01)
    assert b.params["alpha"] == 1 / 20 and b.params["epsilon"] == 1.0


def test_example3_drift():
    b = get_problem("example3")
    x = RNG.normal(size=(1, 8))
    x[0, 5:8] = 1.0
    np.testing.assert_array_equal(b.problem.drift(x)[0], [0, 0, 2, 2, 2, 1, 1, 1])
    assert b.analytic is None and b.reference() is None


def test_example3_diffusion_scales_with_norm():
    b = get_problem("example3")
    x = np.array([[3.0, 4.0, 0, 0, 0, 0, 0, 0]])
    np.testing.assert_allclose(b.problem.diffusion(x)[0], 0.6 * np.eye(8))


def test_example4_diffusion_at_zero():
    b = get_problem("example4")
    x = RNG.normal(size=(1, 8))
    x[0, 0] = 0.0
    s = b.problem.diffusion(x)[0]
    expected = 0.1 * np.eye(8)
    expected[7, 7] = 0.2
    np.testing.assert_allclose(s, expected)
    x[0, 0] = 1.0
    assert b.problem.diffusion(x)[0][7, 0] == pytest.approx(0.1 * (math.pi / 4) ** 2)


def test_example4_rotation_drift():
    b = get_problem("example4")
    x = np.arange(1.0, 9.0)[None]
    np.testing.assert_allclose(b.problem.drift(x)[0], [0, 0, 2, 2, math.sin(5), 6, 8, -7])


def test_overrides_and_unknown_ids():
    b = get_problem("example1", alpha=0.25)
    assert b.analytic.alpha == 0.25
    with pytest.raises(UnknownProblemError):
        get_problem("example9")
    with pytest.raises(UnknownProblemError):
        get_problem("example2", epsilon=1.0)


def test_analytic_covariance_accessors():
    sol = AnalyticSolution("heat_gaussian", 5, 0.1)
    np.testing.assert_allclose(sol.cov(0.32), 0.11 * np.eye(5))
    ou = AnalyticSolution("ou_gaussian", 2, 0.5, 1.0)
    np.testing.assert_allclose(ou.mean(0.5), np.full(2, 1 - math.exp(-0.5)))
