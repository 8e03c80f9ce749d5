"""Data-dependent partitions of R^d into statistically equivalent cells.

Both rules grow a complete tree level by level. Every node on one level has
the same branching factor ``B`` and children are stored contiguously, so the
children of node ``j`` on level ``i`` are nodes ``B*j .. B*j + B - 1`` on level
``i + 1``. Cells are half-open boxes ``[a, b)`` whose bounds may be infinite.

Cuts sit at the midpoint of the two order statistics that straddle the
requested rank, which leaves every sample strictly inside its cell.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import DegenerateDataError, DivisibilityError, PowerOfTwoError

__all__ = [
    "HyperRect",
    "Level",
    "PartitionTree",
    "gessaman_branching",
    "check_sizes",
    "build_gessaman",
    "build_btc",
    "locate",
    "partition_stats",
]

PARTITION_FORMAT = "fphist.partition"
PARTITION_VERSION = 1

GESSAMAN = "gessaman"
BTC = "btc"


def _json_bound(v):
    return None if math.isinf(v) else float(v)


@dataclass(frozen=True, eq=False)
class HyperRect:
    """Axis-aligned box ``prod_i [lower_i, upper_i)``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if np.isnan(lo).any() or np.isnan(hi).any() or not np.all(lo < hi):
            raise ValueError("every axis needs lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def whole_space(cls, dim):
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def cube(cls, lo, hi, dim):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def edges(self):
        return self.upper - self.lower

    def is_bounded(self):
        return bool(np.isfinite(self.lower).all() and np.isfinite(self.upper).all())

    def volume(self):
        return float(np.prod(self.edges))

    def diameter(self):
        return float(np.sqrt(np.sum(self.edges**2)))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x < self.upper), axis=-1)

    def intersects(self, other):
        """True when the intersection has positive volume."""
        return bool(np.all(np.maximum(self.lower, other.lower) < np.minimum(self.upper, other.upper)))

    def clip(self, other):
        """Intersection with ``other``, or ``None`` when it has zero volume."""
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        if not np.all(lo < hi):
            return None
        return HyperRect(lo, hi)

    def to_dict(self):
        return {
            "lower": [_json_bound(v) for v in self.lower],
            "upper": [_json_bound(v) for v in self.upper],
        }

    @classmethod
    def from_dict(cls, data):
        lo = [-np.inf if v is None else v for v in data["lower"]]
        hi = [np.inf if v is None else v for v in data["upper"]]
        return cls(np.array(lo, dtype=float), np.array(hi, dtype=float))

    def __repr__(self):
        spans = ", ".join(f"[{a:g}, {b:g})" for a, b in zip(self.lower, self.upper))
        return f"HyperRect({spans})"


@dataclass(frozen=True, eq=False)
class Level:
    """Cells on one tree level.

    ``axis`` and ``cuts`` describe how each cell is split into the next level
    and are ``None`` on the leaf level.
    """

    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray
    axis: np.ndarray | None = None
    cuts: np.ndarray | None = None

    def __len__(self):
        return self.counts.shape[0]

    @property
    def branching(self):
        return 1 if self.cuts is None else self.cuts.shape[1] + 1


@dataclass(frozen=True, eq=False)
class PartitionTree:
    """Complete tree of hyper-rectangles whose leaves tile R^d."""

    rule: str
    dim: int
    n_samples: int
    k: int
    levels: tuple

    @property
    def leaf_level(self):
        return self.levels[-1]

    @property
    def height(self):
        return len(self.levels) - 1

    @property
    def n_leaves(self):
        return len(self.leaf_level)

    @property
    def leaf_lower(self):
        return self.leaf_level.lower

    @property
    def leaf_upper(self):
        return self.leaf_level.upper

    @property
    def leaf_counts(self):
        return self.leaf_level.counts

    def leaf(self, i):
        return HyperRect(self.leaf_lower[i], self.leaf_upper[i])

    def leaves(self):
        return [self.leaf(i) for i in range(self.n_leaves)]

    def bounded_mask(self):
        return np.isfinite(self.leaf_lower).all(axis=1) & np.isfinite(self.leaf_upper).all(axis=1)

    def leaf_volumes(self):
        return np.prod(self.leaf_upper - self.leaf_lower, axis=1)

    def locate(self, x):
        return locate(self, x)

    def to_dict(self):
        levels = []
        for lev in self.levels[:-1]:
            levels.append({"axis": lev.axis.tolist(), "cuts": lev.cuts.tolist()})
        leaves = [
            {
                "lower": [_json_bound(v) for v in lo],
                "upper": [_json_bound(v) for v in hi],
                "count": int(c),
            }
            for lo, hi, c in zip(self.leaf_lower, self.leaf_upper, self.leaf_counts)
        ]
        return {
            "format": PARTITION_FORMAT,
            "version": PARTITION_VERSION,
            "rule": self.rule,
            "dim": self.dim,
            "n_samples": self.n_samples,
            "k": self.k,
            "height": self.height,
            "n_leaves": self.n_leaves,
            "levels": levels,
            "leaves": leaves,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != PARTITION_FORMAT:
            raise ValueError("not a serialized partition")
        d = int(data["dim"])
        lower = np.full((1, d), -np.inf)
        upper = np.full((1, d), np.inf)
        levels = []
        for spec in data["levels"]:
            axis = np.asarray(spec["axis"], dtype=np.intp)
            cuts = np.asarray(spec["cuts"], dtype=float).reshape(len(axis), -1)
            levels.append((lower, upper, axis, cuts))
            lower, upper = _child_bounds(lower, upper, axis, cuts)
        counts = np.array([leaf["count"] for leaf in data["leaves"]], dtype=np.int64)
        # internal counts are sums over each node's children
        built = [Level(lower, upper, counts)]
        for lo, hi, axis, cuts in reversed(levels):
            b = cuts.shape[1] + 1
            counts = counts.reshape(-1, b).sum(axis=1)
            built.append(Level(lo, hi, counts, axis, cuts))
        return cls(data["rule"], d, int(data["n_samples"]), int(data["k"]), tuple(reversed(built)))


def _child_bounds(lower, upper, axis, cuts):
    """Bounds of all children on the next level, in child order."""
    n, b = cuts.shape[0], cuts.shape[1] + 1
    rows = np.arange(n)
    parent_lo = lower[rows, axis]
    parent_hi = upper[rows, axis]
    edges = np.concatenate([parent_lo[:, None], cuts, parent_hi[:, None]], axis=1)
    child_lower = np.repeat(lower, b, axis=0)
    child_upper = np.repeat(upper, b, axis=0)
    child_rows = np.arange(n * b)
    child_axis = np.repeat(axis, b)
    child_lower[child_rows, child_axis] = edges[:, :-1].ravel()
    child_upper[child_rows, child_axis] = edges[:, 1:].ravel()
    return child_lower, child_upper


def _as_points(samples):
    pts = getattr(samples, "points", samples)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("samples must be a non-empty (M, d) array")
    if not np.isfinite(pts).all():
        raise ValueError("samples must be finite")
    return pts


def _split_level(x, owner, lower, upper, counts, axis, ranks):
    """Split every cell of one level at the given within-cell ranks.

    ``owner[m]`` is the level position of sample ``m``; ``ranks`` is an
    ``(L, B-1)`` array of increasing ranks in ``(0, count)``. Returns the cut
    matrix, next-level owners and child counts.
    """
    m = x.shape[0]
    sample_idx = np.arange(m)
    vals = x[sample_idx, axis[owner]]
    # ties in value fall back to sample index, so order is total and stable
    order = np.lexsort((sample_idx, vals, owner))
    sorted_vals = vals[order]
    sorted_owner = owner[order]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = starts[:, None] + ranks
    below = sorted_vals[pos - 1]
    above = sorted_vals[pos]
    tied = below == above
    if tied.any():
        cell, j = np.argwhere(tied)[0]
        raise DegenerateDataError(
            f"duplicate coordinate {below[cell, j]!r} on axis {axis[cell]} straddles "
            f"an equal-count cut in cell {cell}"
        )
    cuts = 0.5 * (below + above)
    # adjacent doubles can round the midpoint down onto the lower sample
    cuts = np.where(cuts <= below, above, cuts)

    within = sample_idx - starts[sorted_owner]
    child = (within[:, None] >= ranks[sorted_owner]).sum(axis=1)
    b = ranks.shape[1] + 1
    new_owner = np.empty(m, dtype=np.intp)
    new_owner[order] = sorted_owner * b + child
    edges = np.concatenate([np.zeros((len(counts), 1), dtype=np.int64), ranks, counts[:, None]], axis=1)
    child_counts = np.diff(edges, axis=1).ravel()
    return cuts, new_owner, child_counts


def _grow(x, rule, k, plan):
    """Build a tree; ``plan(level, lower, upper, counts)`` returns
    ``(axis, ranks)`` for the level or ``None`` to stop."""
    m, d = x.shape
    lower = np.full((1, d), -np.inf)
    upper = np.full((1, d), np.inf)
    counts = np.array([m], dtype=np.int64)
    owner = np.zeros(m, dtype=np.intp)
    levels = []
    depth = 0
    while True:
        step = plan(depth, lower, upper, counts)
        if step is None:
            break
        axis, ranks = step
        cuts, owner, child_counts = _split_level(x, owner, lower, upper, counts, axis, ranks)
        levels.append(Level(lower, upper, counts, axis, cuts))
        lower, upper = _child_bounds(lower, upper, axis, cuts)
        counts = child_counts
        depth += 1
    levels.append(Level(lower, upper, counts))
    observed = np.bincount(owner, minlength=len(counts))
    assert np.array_equal(observed, counts), "cell bookkeeping diverged from data"
    return PartitionTree(rule, d, m, int(k), tuple(levels))


def gessaman_branching(n_samples, k, dim):
    """Smallest ``N`` with ``N**dim >= n_samples / k``."""
    q = Fraction(int(n_samples), int(k))
    n = max(1, round(float(q) ** (1.0 / dim)))
    while n**dim < q:
        n += 1
    while n > 1 and (n - 1) ** dim >= q:
        n -= 1
    return n


def build_gessaman(samples, k, remainder="error"):
    """Gessaman's rule: ``d`` rounds of equal-count slab splits.

    Round ``i`` cuts every cell into ``N`` slabs perpendicular to axis ``i``,
    with ``N = ceil((M / k) ** (1 / d))``.

    Parameters
    ----------
    samples : SampleSet or array of shape (M, d)
    k : int
        Target number of samples per leaf.
    remainder : {"error", "spread"}
        ``"error"`` requires ``M == k * N**d`` so every leaf holds exactly
        ``k`` samples. ``"spread"`` accepts any ``M >= N**d`` and distributes
        remainders so sibling slabs differ by at most one sample.
    """
    x = _as_points(samples)
    m, d = x.shape
    k = int(k)
    if not 1 <= k <= m:
        raise DivisibilityError(f"need 1 <= k <= M, got k={k}, M={m}")
    if remainder not in ("error", "spread"):
        raise ValueError(f"remainder must be 'error' or 'spread', got {remainder!r}")
    n = gessaman_branching(m, k, d)
    if remainder == "error" and m != k * n**d:
        raise DivisibilityError(
            f"Gessaman's rule needs M = k * N^d exactly; M={m}, k={k}, d={d}, N={n}, "
            f"k * N^d = {k * n**d}"
        )
    if m < n**d:
        raise DivisibilityError(f"M={m} samples cannot fill N^d={n**d} cells")

    def plan(depth, lower, upper, counts):
        if n == 1 or depth == d:
            return None
        q = np.arange(1, n)
        ranks = q[None, :] * (counts[:, None] // n) + np.minimum(q[None, :], counts[:, None] % n)
        return np.full(len(counts), depth, dtype=np.intp), ranks

    return _grow(x, GESSAMAN, k, plan)


def _log2_exact(value, name):
    value = int(value)
    if value < 1 or value & (value - 1):
        raise PowerOfTwoError(f"{name}={value} is not a power of two")
    return value.bit_length() - 1


def btc_split_axes(lower, upper):
    """Index of a longest edge per cell; lowest index wins ties, unbounded
    edges count as infinite."""
    return np.argmax(upper - lower, axis=1)


def build_btc(samples, k):
    """Binary tree cuboid rule: median splits across a longest edge.

    Needs ``M = 2**N`` and ``k = 2**n`` with ``n <= N``; the tree has height
    ``N - n`` and ``M / k`` leaves of exactly ``k`` samples.
    """
    x = _as_points(samples)
    m = x.shape[0]
    big = _log2_exact(m, "M")
    small = _log2_exact(k, "k")
    if small > big:
        raise PowerOfTwoError(f"k={k} exceeds M={m}")
    kappa = big - small

    def plan(depth, lower, upper, counts):
        if depth == kappa:
            return None
        return btc_split_axes(lower, upper), (counts // 2)[:, None]

    return _grow(x, BTC, k, plan)


def check_sizes(rule, n_samples, k, dim, remainder="error"):
    """Raise the builder's error if ``(M, k)`` cannot be partitioned by ``rule``.

    Lets callers reject a configuration before simulating any samples.
    """
    m, k = int(n_samples), int(k)
    if rule == BTC:
        if _log2_exact(k, "k") > _log2_exact(m, "M"):
            raise PowerOfTwoError(f"k={k} exceeds M={m}")
        return
    if rule != GESSAMAN:
        raise ValueError(f"unknown rule {rule!r}; expected 'gessaman' or 'btc'")
    if not 1 <= k <= m:
        raise DivisibilityError(f"need 1 <= k <= M, got k={k}, M={m}")
    n = gessaman_branching(m, k, dim)
    if remainder == "error" and m != k * n**dim:
        raise DivisibilityError(
            f"Gessaman's rule needs M = k * N^d exactly; M={m}, k={k}, d={dim}, N={n}, "
            f"k * N^d = {k * n**dim}"
        )
    if m < n**dim:
        raise DivisibilityError(f"M={m} samples cannot fill N^d={n**dim} cells")


def locate(tree, x):
    """Leaf index of the half-open cell containing each point.

    Binary search over the ordered cuts of each visited node; a point lying on
    a cut belongs to the upper cell.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != tree.dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, tree has {tree.dim}")
    pos = np.zeros(pts.shape[0], dtype=np.intp)
    rows = np.arange(pts.shape[0])
    for lev in tree.levels[:-1]:
        ncut = lev.cuts.shape[1]
        vals = pts[rows, lev.axis[pos]]
        lo = np.zeros_like(pos)
        hi = np.full_like(pos, ncut)
        for _ in range(max(1, ncut).bit_length()):
            active = lo < hi
            mid = (lo + hi) // 2
            go_right = lev.cuts[pos, np.minimum(mid, ncut - 1)] <= vals
            lo = np.where(active & go_right, mid + 1, lo)
            hi = np.where(active & ~go_right, mid, hi)
        pos = pos * (ncut + 1) + lo
    return int(pos[0]) if single else pos


def clipped_diameters(tree, box):
    """Diameter of each leaf clipped to ``box``; NaN where they do not overlap."""
    lo = np.maximum(tree.leaf_lower, box.lower)
    hi = np.minimum(tree.leaf_upper, box.upper)
    overlap = np.all(lo < hi, axis=1)
    diam = np.sqrt(np.sum(np.where(overlap[:, None], hi - lo, 0.0) ** 2, axis=1))
    return np.where(overlap, diam, np.nan)


def partition_stats(tree, box):
    """Size and shape diagnostics of ``tree`` restricted to a finite ``box``."""
    if not box.is_bounded():
        raise ValueError("partition_stats needs a finite box")
    diam = clipped_diameters(tree, box)
    hit = ~np.isnan(diam)
    hist = Counter(int(c) for c in tree.leaf_counts)
    return {
        "n_leaves": tree.n_leaves,
        "n_bounded": int(tree.bounded_mask().sum()),
        "n_intersecting": int(hit.sum()),
        "max_diameter": float(diam[hit].max()) if hit.any() else 0.0,
        "mean_diameter": float(diam[hit].mean()) if hit.any() else 0.0,
        "count_histogram": dict(sorted(hist.items())),
    }


def large_cell_fraction(tree, box, gamma):
    """Fraction of samples in leaves whose box-clipped diameter exceeds ``gamma``."""
    diam = clipped_diameters(tree, box)
    big = np.nan_to_num(diam, nan=0.0) > gamma
    return float(tree.leaf_counts[big].sum()) / tree.n_samples
