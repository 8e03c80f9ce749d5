"""SDE problems and the explicit Euler-Maruyama particle sampler.

Drift and diffusion callables are vectorized over particles: ``drift`` maps an
``(n, d)`` array to ``(n, d)`` and ``diffusion`` maps it to ``(n, d, d)``.
Noise for trajectory ``m`` comes from a counter-based stream keyed by
``(seed, m)``; results are bit-identical for any chunking or worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _rng
from .exceptions import NumericalBlowup

__all__ = [
    "InitialDensity",
    "SdeProblem",
    "EulerConfig",
    "SampleSet",
    "euler_step",
    "sample_initial",
    "simulate",
    "simulate_terminal",
    "wiener_increments",
]

DEFAULT_CHUNK = 16384


def _weighted_columns(mat, vec):
    """Row-wise ``mat @ vec`` with a fixed summation order.

    ``mat`` is ``(n, d, d)`` or ``(d, d)``; ``vec`` is ``(n, d)``. Summing
    columns explicitly keeps every row's arithmetic independent of the batch.
    """
    d = vec.shape[1]
    if mat.ndim == 2:
        out = mat[None, :, 0] * vec[:, 0:1]
        for j in range(1, d):
            out = out + mat[None, :, j] * vec[:, j : j + 1]
        return out
    out = mat[:, :, 0] * vec[:, 0:1]
    for j in range(1, d):
        out = out + mat[:, :, j] * vec[:, j : j + 1]
    return out


@dataclass(frozen=True, eq=False)
class InitialDensity:
    """Initial law ``p_0``: a Gaussian or a uniform law on a box.

    Use the :meth:`gaussian`, :meth:`point_mass` and :meth:`uniform_hypercube`
    constructors rather than the raw fields.
    """

    kind: str
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    _factor: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def gaussian(cls, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = mean.shape[0]
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        if cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        w, v = np.linalg.eigh(cov)
        if w.min() < -1e-12 * max(1.0, np.abs(w).max()):
            raise ValueError("covariance must be positive semi-definite")
        factor = v * np.sqrt(np.clip(w, 0.0, None))
        return cls("gaussian", mean=mean, cov=cov, _factor=factor)

    @classmethod
    def point_mass(cls, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls.gaussian(x, np.zeros((x.size, x.size)))

    @classmethod
    def uniform_hypercube(cls, lower, upper, dim=None):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if dim is not None:
            lower = np.broadcast_to(lower, (dim,)).copy()
            upper = np.broadcast_to(upper, (dim,)).copy()
        lower, upper = np.atleast_1d(lower), np.atleast_1d(upper)
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have the same shape")
        if not np.all(lower < upper):
            raise ValueError("uniform_hypercube needs lower < upper componentwise")
        return cls("uniform_hypercube", lower=lower, upper=upper)

    @property
    def dim(self):
        return (self.mean if self.kind == "gaussian" else self.lower).shape[0]

    def pdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "uniform_hypercube":
            inside = np.all((x >= self.lower) & (x <= self.upper), axis=1)
            return inside / np.prod(self.upper - self.lower)
        # singular covariances have no Lebesgue density
        from scipy.stats import multivariate_normal

        return np.atleast_1d(multivariate_normal(self.mean, self.cov).pdf(x))

    def draw(self, key, trajectories):
        """Draws for the given trajectory indices from stream slot 0."""
        trajectories = np.asarray(trajectories, dtype=np.uint64)
        d = self.dim
        counters = np.arange(d, dtype=np.uint64)
        if self.kind == "uniform_hypercube":
            u = _rng.uniforms(key, trajectories[:, None], counters[None, :])
            return self.lower + u * (self.upper - self.lower)
        z = _rng.normals(key, trajectories[:, None], counters[None, :])
        return self.mean + _weighted_columns(self._factor, z)

    def to_dict(self):
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}
        return {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class SdeProblem:
    """Data of ``dX = b(X) dt + sigma(X) dW`` on ``[0, T]`` with ``X_0 ~ p_0``."""

    dim: int
    horizon: float
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    initial: InitialDensity
    name: str = "custom"

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.initial.dim != self.dim:
            raise ValueError(
                f"initial density has dimension {self.initial.dim}, problem has {self.dim}"
            )
        probe = self.initial.draw(_rng.stream_key(0, _rng.DOMAIN_AUX), np.arange(8))
        self.coefficients(probe)

    def coefficients(self, x):
        """Evaluate drift and diffusion at ``x`` (n, d), checking shape and finiteness."""
        n, d = x.shape
        b = np.asarray(self.drift(x), dtype=float)
        s = np.asarray(self.diffusion(x), dtype=float)
        if b.shape != (n, d):
            raise ValueError(f"drift returned shape {b.shape}, expected {(n, d)}")
        if s.shape != (n, d, d):
            raise ValueError(f"diffusion returned shape {s.shape}, expected {(n, d, d)}")
        bad = ~(np.isfinite(b).all(axis=1) & np.isfinite(s).all(axis=(1, 2)))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NumericalBlowup(
                f"non-finite drift/diffusion at x={x[i].tolist()}", point=x[i], trajectory=i
            )
        return b, s


@dataclass(frozen=True)
class EulerConfig:
    """Number of Euler steps ``J``, sample size ``M`` and RNG seed.

    The step size is derived from the problem horizon, see :meth:`step_size`.
    """

    steps: int
    samples: int
    seed: int = 0

    def __post_init__(self):
        for name in ("steps", "samples"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if not 0 <= int(self.seed) <= _rng.MAX_SEED:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def step_size(self, horizon):
        return horizon / self.steps


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Immutable ``(M, d)`` sample with its provenance."""

    points: np.ndarray
    seed: int | None = None
    steps: int | None = None
    problem: str | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-D array")
        if not np.isfinite(pts).all():
            raise ValueError("sample contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def euler_step(y, tau, problem, dw):
    """One explicit Euler step ``y + tau * b(y) + sigma(y) @ dw``.

    ``y`` and ``dw`` are ``(d,)`` or ``(n, d)``.
    """
    y = np.asarray(y, dtype=float)
    dw = np.asarray(dw, dtype=float)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    b, s = problem.coefficients(y2)
    out = y2 + tau * b + _weighted_columns(s, np.broadcast_to(np.atleast_2d(dw), y2.shape))
    return out[0] if single else out


def wiener_increments(key, trajectories, step, dim, tau):
    """``N(0, tau Id)`` increments for Euler step ``step`` (0-based)."""
    trajectories = np.asarray(trajectories, dtype=np.uint64)
    counters = np.uint64((step + 1) * dim) + np.arange(dim, dtype=np.uint64)
    return np.sqrt(tau) * _rng.normals(key, trajectories[:, None], counters[None, :])


def sample_initial(density, m, seed=0):
    """``m`` i.i.d. draws from ``density``; identical to the starting points of
    :func:`simulate` with the same seed."""
    key = _rng.stream_key(seed, _rng.DOMAIN_SDE)
    return SampleSet(density.draw(key, np.arange(m)), seed=seed, steps=0)


def _run_chunk(problem, tau, key, lo, hi, steps, keep):
    idx = np.arange(lo, hi, dtype=np.uint64)
    y = problem.initial.draw(key, idx)
    kept = {0: y.copy()} if 0 in keep else {}
    for j in range(steps):
        dw = wiener_increments(key, idx, j, problem.dim, tau)
        try:
            y = euler_step(y, tau, problem, dw)
        except NumericalBlowup as exc:
            raise NumericalBlowup(
                f"trajectory {lo + exc.trajectory} at step {j}: {exc}",
                point=exc.point,
                trajectory=lo + exc.trajectory,
                step=j,
            ) from None
        if j + 1 in keep:
            kept[j + 1] = y.copy()
    bad = ~np.isfinite(y).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalBlowup(f"trajectory {lo + i} diverged", point=y[i], trajectory=lo + i)
    return y, kept


def simulate(problem, config, snapshots=(), n_jobs=1, chunk_size=DEFAULT_CHUNK):
    """Run ``M`` Euler trajectories to step ``J``.

    Returns the terminal :class:`SampleSet` and a dict mapping each requested
    snapshot step index ``j`` (``0 <= j <= J``) to the sample at that step.
    """
    keep = {int(j) for j in snapshots}
    if any(j < 0 or j > config.steps for j in keep):
        raise ValueError(f"snapshot steps must lie in [0, {config.steps}]")
    tau = config.step_size(problem.horizon)
    key = _rng.stream_key(config.seed, _rng.DOMAIN_SDE)
    bounds = [
        (lo, min(lo + chunk_size, config.samples))
        for lo in range(0, config.samples, chunk_size)
    ]

    def work(b):
        return _run_chunk(problem, tau, key, b[0], b[1], config.steps, keep)

    if n_jobs is not None and n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]

    meta = dict(seed=config.seed, problem=problem.name)
    terminal = SampleSet(np.concatenate([p[0] for p in parts]), steps=config.steps, **meta)
    snaps = {
        j: SampleSet(np.concatenate([p[1][j] for p in parts]), steps=j, **meta)
        for j in sorted(keep)
    }
    return terminal, snaps


def simulate_terminal(problem, config, n_jobs=1, chunk_size=DEFAULT_CHUNK):
    """Terminal Euler sample ``D^J_M`` for ``problem``."""
    return simulate(problem, config, n_jobs=n_jobs, chunk_size=chunk_size)[0]
