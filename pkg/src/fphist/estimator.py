"""Piecewise-constant histogram densities on data-dependent partitions.

On leaf ``R_r`` holding ``n_r`` of the ``M`` samples the estimate equals
``n_r / (M * vol(R_r))``. Leaves of infinite volume get density 0, so the
mass sampled into them is lost rather than renormalized; :func:`self_integral`
and :func:`tail_mass` account for it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ZeroVolumeError
from .partition import BTC, GESSAMAN, PartitionTree, build_btc, build_gessaman, locate

__all__ = [
    "DensityEstimate",
    "HistogramDensity",
    "build_estimate",
    "evaluate",
    "slice_estimate",
    "self_integral",
    "tail_mass",
    "write_slice_csv",
]

ESTIMATE_FORMAT = "fphist.estimate"
ESTIMATE_VERSION = 1


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Leaf values of a histogram density over ``tree``.

    ``values[r]`` is the density on leaf ``r``. ``anchor`` is the default
    point for slices (the sample mean for fitted estimates).
    """

    tree: PartitionTree
    values: np.ndarray
    anchor: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != (self.tree.n_leaves,):
            raise ValueError(f"need one value per leaf ({self.tree.n_leaves}), got {vals.shape}")
        if (vals < 0).any() or not np.isfinite(vals).all():
            raise ValueError("density values must be finite and nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.anchor is None:
            object.__setattr__(self, "anchor", np.zeros(self.tree.dim))

    @property
    def dim(self):
        return self.tree.dim

    def __call__(self, x):
        return evaluate(self, x)

    def evaluate(self, x):
        return evaluate(self, x)

    def slice(self, axes, grids, anchor=None):
        return slice_estimate(self, axes, grids, anchor)

    def with_values(self, values):
        """Same partition, different leaf values."""
        return DensityEstimate(self.tree, values, self.anchor, dict(self.metadata))

    def to_dict(self):
        tree = self.tree
        bounded = tree.bounded_mask()
        leaves = []
        for r in range(tree.n_leaves):
            rect = tree.leaf(r).to_dict()
            rect["value"] = float(self.values[r])
            rect["count"] = int(tree.leaf_counts[r])
            rect["bounded"] = bool(bounded[r])
            leaves.append(rect)
        return {
            "format": ESTIMATE_FORMAT,
            "version": ESTIMATE_VERSION,
            "rule": tree.rule,
            "dim": tree.dim,
            "n_samples": tree.n_samples,
            "k": tree.k,
            "metadata": self.metadata,
            "anchor": [float(v) for v in self.anchor],
            "self_integral": float(self_integral(self)),
            "tail_mass": float(tail_mass(self)),
            "leaves": leaves,
        }


def build_estimate(tree, anchor=None, metadata=None):
    """Histogram estimate ``n_r / (M * vol(R_r))`` on the leaves of ``tree``."""
    vol = tree.leaf_volumes()
    bounded = tree.bounded_mask()
    if (vol[bounded] <= 0).any():
        r = int(np.flatnonzero(bounded & (vol <= 0))[0])
        raise ZeroVolumeError(f"bounded leaf {r} has zero volume: {tree.leaf(r)!r}")
    values = np.zeros(tree.n_leaves)
    values[bounded] = tree.leaf_counts[bounded] / (tree.n_samples * vol[bounded])
    meta = {"rule": tree.rule, "M": tree.n_samples, "k": tree.k}
    meta.update(metadata or {})
    return DensityEstimate(tree, values, anchor, meta)


def evaluate(est, x):
    """Estimated density at ``x`` (a point or an ``(n, d)`` array)."""
    idx = locate(est.tree, x)
    return est.values[idx] if np.ndim(idx) else float(est.values[idx])


def slice_estimate(est, axes, grids, anchor=None):
    """Restrict the estimate to a line or plane through ``anchor``.

    Parameters
    ----------
    axes : int or sequence of one or two ints
        Free coordinate axes (0-based).
    grids : array or sequence of arrays
        Increasing breakpoints for each free axis.
    anchor : array of shape (d,), optional
        Values of the fixed coordinates; defaults to ``est.anchor``.

    Returns
    -------
    values : ndarray of shape ``tuple(len(g) for g in grids)``
    grids : list of ndarrays
    """
    axes = [int(a) for a in np.atleast_1d(axes)]
    if not 1 <= len(axes) <= 2 or len(set(axes)) != len(axes):
        raise ValueError("slices need one or two distinct free axes")
    if any(a < 0 or a >= est.dim for a in axes):
        raise ValueError(f"axes must lie in [0, {est.dim})")
    if len(axes) == 1 and np.ndim(grids) == 1:
        grids = [grids]
    grids = [np.asarray(g, dtype=float) for g in grids]
    if len(grids) != len(axes):
        raise ValueError("need one grid per free axis")
    for g in grids:
        if g.ndim != 1 or not np.isfinite(g).all() or np.any(np.diff(g) <= 0):
            raise ValueError("grid breakpoints must be finite and strictly increasing")
    anchor = est.anchor if anchor is None else np.asarray(anchor, dtype=float)
    if anchor.shape != (est.dim,) or not np.isfinite(anchor).all():
        raise ValueError("anchor must be a finite point of dimension d")
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.tile(anchor, (mesh[0].size, 1))
    for a, coord in zip(axes, mesh):
        pts[:, a] = coord.ravel()
    return evaluate(est, pts).reshape(mesh[0].shape), grids


def write_slice_csv(path, axes, grids, values):
    """Write a slice as long-format CSV: one column per free axis plus density."""
    axes = [int(a) for a in np.atleast_1d(axes)]
    mesh = np.meshgrid(*grids, indexing="ij")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{a}" for a in axes] + ["density"])
        for row in zip(*(m.ravel() for m in mesh), values.ravel()):
            writer.writerow([repr(float(v)) for v in row])


def self_integral(est, exact=False):
    """Mass of the estimate, ``sum(value * vol)`` over bounded leaves.

    With ``exact=True`` the mass is returned as a :class:`~fractions.Fraction`
    computed from leaf counts, which is valid for estimates produced by
    :func:`build_estimate`.
    """
    tree = est.tree
    bounded = tree.bounded_mask()
    if exact:
        return Fraction(int(tree.leaf_counts[bounded].sum()), tree.n_samples)
    return float(np.sum(est.values[bounded] * tree.leaf_volumes()[bounded]))


def tail_mass(est):
    """Sample fraction in unbounded leaves, as an exact fraction."""
    tree = est.tree
    return Fraction(int(tree.leaf_counts[~tree.bounded_mask()].sum()), tree.n_samples)


class HistogramDensity(DensityMixin, BaseEstimator):
    """Histogram density estimator on a data-dependent partition.

    Parameters
    ----------
    rule : {"gessaman", "btc"}
        Splitting rule.
    k : int
        Samples per cell.
    remainder : {"error", "spread"}
        Gessaman only; see :func:`fphist.partition.build_gessaman`.

    Attributes
    ----------
    tree_ : PartitionTree
    estimate_ : DensityEstimate
    n_features_in_ : int
    """

    def __init__(self, rule="gessaman", k=64, remainder="error"):
        self.rule = rule
        self.k = k
        self.remainder = remainder

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.rule == GESSAMAN:
            tree = build_gessaman(X, self.k, remainder=self.remainder)
        elif self.rule == BTC:
            tree = build_btc(X, self.k)
        else:
            raise ValueError(f"unknown rule {self.rule!r}")
        self.tree_ = tree
        self.estimate_ = build_estimate(tree, anchor=X.mean(axis=0))
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "estimate_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, estimator was fitted with {self.n_features_in_}"
            )
        return X

    def predict(self, X):
        """Density values at the rows of ``X``."""
        X = self._check(X)
        return evaluate(self.estimate_, X)

    def apply(self, X):
        """Leaf index of each row of ``X``."""
        X = self._check(X)
        return locate(self.tree_, X)

    def score_samples(self, X):
        """Log density; ``-inf`` in unbounded cells."""
        with np.errstate(divide="ignore"):
            return np.log(self.predict(X))

    def score(self, X, y=None):
        return float(np.sum(self.score_samples(X)))
