"""Closed-form Fokker-Planck solutions and the benchmark problem catalog."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import UnknownProblemError
from .sde import InitialDensity, SdeProblem

__all__ = [
    "AnalyticSolution",
    "BenchmarkProblem",
    "ou_solution",
    "heat_solution",
    "ou_moments",
    "catalog",
    "get_problem",
    "problem_ids",
]


def _points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = np.full(d, float(x))
    if x.shape[-1] != d:
        raise ValueError(f"points must have dimension {d}, got shape {x.shape}")
    return x


def ou_moments(alpha, epsilon, t, beta=1.0):
    """Scalar mean and variance per coordinate of the Gaussian OU solution.

    The mean starts at 0 and relaxes toward ``beta``; the variance relaxes
    from ``alpha`` toward ``epsilon**2``.
    """
    decay = math.exp(-t)
    mean = (1.0 - decay) * beta
    var = alpha * decay**2 + epsilon**2 * (1.0 - decay**2)
    return mean, var


def ou_solution(alpha, epsilon, d, t, x, beta=1.0):
    """Density at time ``t`` of ``dX = (beta - X) dt + sqrt(2) eps dW`` with
    ``X_0 ~ N(0, alpha Id)``.
    """
    if alpha <= 0 or epsilon <= 0 or t < 0:
        raise ValueError("need alpha > 0, epsilon > 0, t >= 0")
    x = _points(x, d)
    mean, var = ou_moments(alpha, epsilon, t, beta)
    r2 = np.sum((x - mean) ** 2, axis=-1)
    return np.exp(-0.5 * r2 / var) / (2.0 * math.pi * var) ** (d / 2)


def heat_solution(alpha, d, t, x):
    """Density of ``X_0 + (sqrt(2)/8) W_t`` with ``X_0 ~ N(0, alpha Id)``:
    ``(2 pi alpha + pi t / 16)^(-d/2) exp(-16 |x|^2 / (32 alpha + t))``."""
    if alpha <= 0 or t < 0:
        raise ValueError("need alpha > 0 and t >= 0")
    x = _points(x, d)
    r2 = np.sum(x**2, axis=-1)
    return (2.0 * math.pi * alpha + math.pi * t / 16.0) ** (-d / 2) * np.exp(
        -16.0 * r2 / (32.0 * alpha + t)
    )


@dataclass(frozen=True)
class AnalyticSolution:
    """Gaussian solution ``p(t, x)`` with isotropic covariance."""

    kind: str
    dim: int
    alpha: float
    epsilon: float | None = None
    beta: float = 1.0

    def pdf(self, t, x):
        if self.kind == "ou_gaussian":
            return ou_solution(self.alpha, self.epsilon, self.dim, t, x, self.beta)
        return heat_solution(self.alpha, self.dim, t, x)

    def mean(self, t):
        if self.kind == "ou_gaussian":
            return np.full(self.dim, ou_moments(self.alpha, self.epsilon, t, self.beta)[0])
        return np.zeros(self.dim)

    def cov(self, t):
        if self.kind == "ou_gaussian":
            var = ou_moments(self.alpha, self.epsilon, t, self.beta)[1]
        else:
            var = self.alpha + t / 32.0
        return var * np.eye(self.dim)

    def at(self, t):
        """The density ``x -> p(t, x)``."""
        return lambda x: self.pdf(t, x)


@dataclass(frozen=True, eq=False)
class BenchmarkProblem:
    """A catalog entry: SDE data, a default step size and, when known, the
    exact solution."""

    identifier: str
    problem: SdeProblem
    tau: float
    analytic: AnalyticSolution | None = None
    params: dict = field(default_factory=dict)
    description: str = ""

    @property
    def steps(self):
        return int(round(self.problem.horizon / self.tau))

    def reference(self):
        """Exact density at the horizon, or ``None``."""
        if self.analytic is None:
            return None
        return self.analytic.at(self.problem.horizon)


def _constant_diffusion(scale, d):
    mat = scale * np.eye(d)

    def diffusion(x):
        return np.broadcast_to(mat, (x.shape[0], d, d))

    return diffusion


def _example1(identifier, d=2, T=0.5, tau=0.01, alpha=0.5, epsilon=1.0, beta=1.0):
    shift = np.full(d, float(beta))

    def drift(x):
        return shift - x

    problem = SdeProblem(
        dim=d,
        horizon=T,
        drift=drift,
        diffusion=_constant_diffusion(math.sqrt(2.0) * epsilon, d),
        initial=InitialDensity.gaussian(np.zeros(d), alpha * np.eye(d)),
        name=identifier,
    )
    analytic = AnalyticSolution("ou_gaussian", d, alpha, epsilon, beta)
    params = dict(d=d, T=T, tau=tau, alpha=alpha, epsilon=epsilon, beta=beta)
    return BenchmarkProblem(identifier, problem, tau, analytic, params, "OU drift -x + beta")


def _example2(identifier, d=5, T=0.3, tau=0.01, alpha=1.0 / (2.0 * math.pi)):
    def drift(x):
        return np.zeros_like(x)

    problem = SdeProblem(
        dim=d,
        horizon=T,
        drift=drift,
        diffusion=_constant_diffusion(math.sqrt(2.0) / 8.0, d),
        initial=InitialDensity.gaussian(np.zeros(d), alpha * np.eye(d)),
        name=identifier,
    )
    analytic = AnalyticSolution("heat_gaussian", d, alpha)
    params = dict(d=d, T=T, tau=tau, alpha=alpha)
    return BenchmarkProblem(identifier, problem, tau, analytic, params, "pure diffusion")


def _example3(identifier, T=0.2, tau=0.01, alpha=1.0 / (2.0 * math.pi)):
    d = 8

    def drift(x):
        out = np.zeros_like(x)
        out[:, 2:5] = 2.0
        out[:, 5:8] = x[:, 5:8]
        return out

    eye = np.eye(d)

    def diffusion(x):
        scale = (1.0 + np.sqrt(np.sum(x * x, axis=1))) / 10.0
        return scale[:, None, None] * eye

    problem = SdeProblem(
        dim=d,
        horizon=T,
        drift=drift,
        diffusion=diffusion,
        initial=InitialDensity.gaussian(np.zeros(d), alpha * eye),
        name=identifier,
    )
    params = dict(d=d, T=T, tau=tau, alpha=alpha)
    return BenchmarkProblem(identifier, problem, tau, None, params, "coupled drift, norm-scaled noise")


def _example4(identifier, T=1.0, tau=0.01, half_width=0.5):
    d = 8

    def drift(x):
        out = np.zeros_like(x)
        out[:, 2] = 2.0
        out[:, 3] = 2.0
        out[:, 4] = np.sin(x[:, 4])
        out[:, 5] = x[:, 5]
        out[:, 6] = x[:, 7]
        out[:, 7] = -x[:, 6]
        return out

    def diffusion(x):
        n = x.shape[0]
        a2 = np.arctan(x[:, 0]) ** 2
        out = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        out[:, 7, 0] = a2
        out[:, 7, 7] = 2.0 + a2
        return 0.1 * out

    problem = SdeProblem(
        dim=d,
        horizon=T,
        drift=drift,
        diffusion=diffusion,
        initial=InitialDensity.uniform_hypercube(-half_width, half_width, dim=d),
        name=identifier,
    )
    params = dict(d=d, T=T, tau=tau, half_width=half_width)
    return BenchmarkProblem(identifier, problem, tau, None, params, "rotation drift, arctan noise")


_SETUPS = {
    "a": dict(alpha=16.0, epsilon=4.0),
    "b": dict(alpha=16.0, epsilon=0.01),
    "c": dict(alpha=1.0 / 20.0, epsilon=1.0),
    "d": dict(alpha=1.0 / 20.0, epsilon=0.01),
}

_FACTORIES = {
    "example1": (_example1, {}),
    "example1a": (_example1, {}),
    "example1b": (_example1, dict(T=1.0, alpha=1.0 / (4.0 * math.pi), epsilon=0.2)),
    "example2": (_example2, {}),
    "example3": (_example3, {}),
    "example4": (_example4, {}),
}
for _name, _setup in _SETUPS.items():
    _FACTORIES[f"example1-setup-{_name}"] = (_example1, dict(d=2, T=1.0, tau=0.01, **_setup))


def problem_ids():
    return list(_FACTORIES)


def get_problem(identifier, **overrides):
    """Catalog entry ``identifier`` with parameter overrides (e.g. ``alpha``)."""
    try:
        factory, defaults = _FACTORIES[identifier]
    except KeyError:
        raise UnknownProblemError(
            f"unknown problem {identifier!r}; known: {', '.join(_FACTORIES)}"
        ) from None
    params = {**defaults, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return factory(identifier, **params)
    except TypeError as exc:
        raise UnknownProblemError(f"bad parameters for {identifier!r}: {exc}") from None


def catalog():
    """Every benchmark problem with its default parameters."""
    return [get_problem(name) for name in _FACTORIES]
