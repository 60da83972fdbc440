"""Dimension estimates read off an occupancy tree.

* :func:`dyadic_dimension` -- liminf proxy of ``log2`` of the minimum
  occupied-children count per level.
* :func:`box_dimension` -- least-squares slope of ``log M_n`` against
  ``n log 2``.
* :func:`lower_dimension` -- smallest growth exponent of descendant counts
  ``M(a, b)`` between two levels, cubes standing in for balls.
* :func:`intermediate_dim_at_scale` / :func:`intermediate_profile` --
  threshold exponent at which the cheapest cover by dyadic cubes with
  diameters between ``delta^(1/theta)`` and ``delta`` costs exactly one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from ._workers import parallel_map
from .dyadic import DyadicCube, OccupancyTree, _members
from .errors import DomainError, InfeasibleScaleError, InputError

DEFAULT_BURN_IN = 4
S_TOLERANCE = 1e-6


@dataclass(frozen=True)
class LevelCounts:
    dim: int
    counts: tuple[int, ...]          # M_n, n = 0..n_max
    min_branching: tuple[int, ...]   # N_n, n = 0..n_max-1

    @property
    def n_max(self) -> int:
        return len(self.counts) - 1


def level_counts(tree: OccupancyTree) -> LevelCounts:
    counts = tuple(tree.level_count(n) for n in range(tree.n_max + 1))
    mins = tuple(tree.min_branching(n) for n in range(tree.n_max))
    return LevelCounts(tree.dim, counts, mins)


@dataclass(frozen=True)
class DyadicDimension:
    estimate: float
    burn_in: int
    trace: tuple[float, ...]   # log2 N_n for every n < n_max

    @property
    def argmin_level(self) -> int:
        tail = self.trace[self.burn_in:]
        return self.burn_in + int(np.argmin(tail))


def dyadic_dimension(counts: LevelCounts, burn_in: int = DEFAULT_BURN_IN) -> DyadicDimension:
    if not 0 <= burn_in < counts.n_max - 1:
        raise InputError(
            f"burn_in must lie in [0, n_max - 1) = [0, {counts.n_max - 1})"
        )
    trace = tuple(math.log2(b) for b in counts.min_branching)
    return DyadicDimension(min(trace[burn_in:]), burn_in, trace)


@dataclass(frozen=True)
class BoxFit:
    slope: float
    intercept: float
    residual: float      # root mean square, in log2 units
    levels: tuple[int, int]


def box_dimension(counts: LevelCounts, fit_range: tuple[int, int] | None = None) -> BoxFit:
    """Least-squares slope of ``(n, log2 M_n)`` over ``fit_range`` (inclusive)."""
    if fit_range is None:
        fit_range = (min(DEFAULT_BURN_IN, counts.n_max - 2), counts.n_max)
    lo, hi = fit_range
    if not (0 <= lo and hi <= counts.n_max and hi - lo + 1 >= 3):
        raise InputError(f"degenerate fit range {fit_range} for n_max={counts.n_max}")
    x = np.arange(lo, hi + 1, dtype=float)
    y = np.array([math.log2(counts.counts[n]) for n in range(lo, hi + 1)])
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    return BoxFit(slope, intercept, float(np.sqrt(np.mean(resid ** 2))), (lo, hi))


@dataclass(frozen=True)
class LowerDimension:
    estimate: float
    witness: DyadicCube
    pair: tuple[int, int]
    slopes: dict = field(repr=False)           # (a, b) -> slope
    min_descendants: dict = field(repr=False)  # (a, b) -> m(a, b)


def default_window(n_max: int, burn_in: int = DEFAULT_BURN_IN) -> list[tuple[int, int]]:
    """Pairs ``(a, a + g)`` with a single gap ``g = (n_max - burn_in) // 2``."""
    burn_in = min(burn_in, n_max - 1)
    gap = max(1, (n_max - burn_in) // 2)
    return [(a, a + gap) for a in range(burn_in, n_max - gap + 1)]


def descendant_counts(tree: OccupancyTree, a: int, b: int):
    """Occupied level-``b`` descendants of each partial level-``a`` cube.

    Returns the per-partial-cube counts (aligned with ``tree.partial[a]``)
    and the common count ``2^(d(b-a))`` of cubes inside full subtrees, or
    ``None`` if level ``a`` has no such cube.
    """
    d = tree.dim
    parents = tree.partial[a]
    out = np.zeros(parents.shape[0], dtype=np.int64)
    if parents.shape[0]:
        anc = tree.partial[b] >> np.uint64(d * (b - a))
        np.add.at(out, _members(parents, anc), 1)
        for j in range(a + 1, b + 1):
            roots = tree.full[j]
            if roots.shape[0]:
                anc = roots >> np.uint64(d * (j - a))
                np.add.at(out, _members(parents, anc), 1 << (d * (b - j)))
    full_count = (1 << (d * (b - a))) if tree.has_full_at(a) else None
    return out, full_count


def _first_full_cube(tree: OccupancyTree, level: int) -> DyadicCube:
    for j in range(level + 1):
        if tree.full[j].shape[0]:
            code = int(tree.full[j][0]) << (tree.dim * (level - j))
            return DyadicCube.from_code(level, code, tree.dim)
    raise DomainError(f"no full cube at level {level}")


def lower_dimension(
    tree: OccupancyTree,
    window: Sequence[tuple[int, int]] | None = None,
    burn_in: int = DEFAULT_BURN_IN,
) -> LowerDimension:
    """Infimum over ``window`` of ``log2 m(a, b) / (b - a)``.

    ``m(a, b)`` is the minimum, over occupied level-``a`` cubes, of the number
    of occupied level-``b`` descendants.  Cubes replace balls, so each pair's
    slope is off by ``O(1 / (b - a))`` from the ball-based quantity.
    """
    if window is None:
        window = default_window(tree.n_max, burn_in)
    window = list(window)
    if not window:
        raise InputError("empty level-pair window")
    slopes, mins = {}, {}
    best = None
    for a, b in window:
        if not 0 <= a < b <= tree.n_max:
            raise InputError(f"window pair {(a, b)} outside 0 <= a < b <= {tree.n_max}")
        per_cube, full_count = descendant_counts(tree, a, b)
        candidates = []
        if per_cube.shape[0]:
            i = int(np.argmin(per_cube))
            candidates.append(
                (int(per_cube[i]), DyadicCube.from_code(a, int(tree.partial[a][i]), tree.dim))
            )
        if full_count is not None:
            candidates.append((full_count, _first_full_cube(tree, a)))
        m, witness = min(candidates, key=lambda c: c[0])
        slope = math.log2(m) / (b - a)
        slopes[a, b] = slope
        mins[a, b] = m
        if best is None or slope < best[0]:
            best = (slope, witness, (a, b))
    return LowerDimension(best[0], best[1], best[2], slopes, mins)


# covers -------------------------------------------------------------------

def _level_weights(dim: int, s, a: int, b: int, exact: bool):
    """``(sqrt(d) 2^-j)^s`` for ``j`` in ``[a, b]``."""
    if not exact:
        s = float(s)
        return {j: (math.sqrt(dim) * 2.0 ** -j) ** s for j in range(a, b + 1)}
    s = Fraction(s)
    if s.denominator != 1:
        raise InputError("exact cover costs need an integer exponent s")
    k = int(s)
    root = math.isqrt(dim)
    if root * root == dim:
        base = Fraction(root) ** k
    elif k % 2 == 0:
        base = Fraction(dim) ** (k // 2)
    else:
        raise InputError(f"(sqrt({dim}))^{k} is irrational; exact mode unavailable")
    return {j: base / Fraction(2) ** (j * k) for j in range(a, b + 1)}


def _group_sum(index: np.ndarray, values: np.ndarray, size: int, dtype):
    out = np.zeros(size, dtype=dtype)
    if dtype is object:
        out[:] = 0
        np.add.at(out, index, values)
    elif index.shape[0]:
        out += np.bincount(index, weights=values, minlength=size)
    return out


def cover_cost(tree: OccupancyTree, s, level_range: tuple[int, int], exact: bool = False):
    """Cheapest ``sum |U|^s`` over covers by occupied cubes with levels in ``[a, b]``.

    Computed bottom-up: a level-``b`` cube costs its own weight, a coarser one
    the smaller of its own weight and the sum over its occupied children.
    With ``exact`` the result is a :class:`~fractions.Fraction` (integer
    ``s`` only).
    """
    a, b = level_range
    if not 0 <= a <= b <= tree.n_max:
        raise InfeasibleScaleError(
            f"level range {level_range} outside [0, {tree.n_max}]",
            required_n_max=b if b > tree.n_max else None,
        )
    if s < 0:
        raise InputError("cover exponent must be non-negative")
    w = _level_weights(tree.dim, s, a, b, exact)
    dtype = object if exact else float
    d = tree.dim
    nchild = 1 << d

    full_cost = {b: w[b]}
    for j in range(b - 1, a - 1, -1):
        full_cost[j] = min(w[j], nchild * full_cost[j + 1])

    cost = np.full(tree.partial[b].shape[0], w[b], dtype=dtype)
    for j in range(b - 1, a - 1, -1):
        parents = tree.partial[j]
        sums = _group_sum(
            _members(parents, tree.partial[j + 1] >> np.uint64(d)), cost,
            parents.shape[0], dtype,
        )
        roots = tree.full[j + 1]
        if roots.shape[0]:
            nfull = np.bincount(
                _members(parents, roots >> np.uint64(d)), minlength=parents.shape[0]
            )
            if dtype is object:
                nfull = nfull.astype(object)
            sums = sums + nfull * full_cost[j + 1]
        if dtype is object:
            cost = np.array([min(w[j], v) for v in sums], dtype=object)
        else:
            cost = np.minimum(w[j], sums)

    total = sum(cost.tolist()) if dtype is object else float(cost.sum())
    n_full_a = sum(int(tree.full[j].shape[0]) << (d * (a - j)) for j in range(a + 1))
    if n_full_a:
        total = total + n_full_a * full_cost[a]
    return total


def scale_levels(dim: int, theta: float, delta: float) -> tuple[int, int]:
    """Levels whose cube diameters are closest (log scale) to ``delta`` and ``delta^(1/theta)``."""
    if not 0.0 < theta <= 1.0:
        raise InputError(f"theta must lie in (0, 1], got {theta}")
    if not 0.0 < delta < 1.0:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    half_log_d = 0.5 * math.log2(dim)
    inv = -math.log2(delta)
    a = math.floor(half_log_d + inv + 0.5 + 1e-9)
    b = math.floor(half_log_d + inv / theta + 0.5 + 1e-9)
    return a, b


@dataclass(frozen=True)
class ScaleEstimate:
    theta: float
    delta: float
    a: int
    b: int
    s: float
    cost_below: float   # cover cost just below s (>= 1 unless s == 0)
    cost_above: float   # cover cost just above s (<= 1 unless s == d)


def intermediate_dim_at_scale(tree: OccupancyTree, theta: float, delta: float) -> ScaleEstimate:
    """Exponent ``s`` in ``[0, d]`` at which the restricted cover cost equals one.

    Returns 0 if even ``s = 0`` is cheap enough and ``d`` if the cost at
    ``s = d`` is still at least one (the ``sqrt(d)`` diameter offset can push
    the unconstrained root slightly above ``d``).
    """
    a, b = scale_levels(tree.dim, theta, delta)
    if b > tree.n_max or a < 0:
        raise InfeasibleScaleError(
            f"theta={theta}, delta={delta} needs levels [{a}, {b}] "
            f"but the tree stops at n_max={tree.n_max}",
            required_n_max=b,
        )
    dim = tree.dim

    def g(s):
        return cover_cost(tree, s, (a, b)) - 1.0

    if g(0.0) <= 0.0:
        s_star = 0.0
    elif g(float(dim)) >= 0.0:
        s_star = float(dim)
    else:
        s_star = brentq(g, 0.0, float(dim), xtol=S_TOLERANCE / 4, rtol=1e-12)
    lo = max(0.0, s_star - S_TOLERANCE)
    hi = min(float(dim), s_star + S_TOLERANCE)
    return ScaleEstimate(
        theta, delta, a, b, float(s_star),
        cover_cost(tree, lo, (a, b)), cover_cost(tree, hi, (a, b)),
    )


def finest_feasible_delta(tree: OccupancyTree, theta: float) -> float:
    """Smallest ``delta = 2^-k`` whose fine level still fits in the tree."""
    best = None
    k = 1
    while True:
        _, b = scale_levels(tree.dim, theta, 2.0 ** -k)
        if b > tree.n_max:
            break
        best = 2.0 ** -k
        k += 1
    if best is None:
        raise InfeasibleScaleError(
            f"no feasible delta for theta={theta}", required_n_max=b
        )
    return best


@dataclass(frozen=True)
class DimensionProfile:
    thetas: tuple[float, ...]
    deltas: tuple[float, ...]
    estimates: dict              # (theta, delta) -> ScaleEstimate
    lower: dict                  # theta -> min over finest half of the delta grid
    upper: dict                  # theta -> max over it

    def rows(self):
        for theta in self.thetas:
            for delta in self.deltas:
                yield self.estimates[theta, delta]


def intermediate_profile(
    tree: OccupancyTree,
    thetas: Sequence[float],
    deltas: Sequence[float],
) -> DimensionProfile:
    thetas = tuple(float(t) for t in thetas)
    deltas = tuple(sorted((float(x) for x in deltas), reverse=True))
    if not thetas or not deltas:
        raise InputError("theta and delta grids must be nonempty")
    pairs = [(t, x) for t in thetas for x in deltas]
    results = parallel_map(lambda p: intermediate_dim_at_scale(tree, *p), pairs)
    estimates = dict(zip(pairs, results))
    finest = deltas[len(deltas) // 2:]
    lower = {t: min(estimates[t, x].s for x in finest) for t in thetas}
    upper = {t: max(estimates[t, x].s for x in finest) for t in thetas}
    return DimensionProfile(thetas, deltas, estimates, lower, upper)


@dataclass(frozen=True)
class ChainCheck:
    dyadic: float
    lower: float
    box: float

    @property
    def holds(self) -> bool:
        return self.dyadic <= self.lower + 1e-12 and self.lower <= self.box + 1e-12


def dimension_chain(tree: OccupancyTree, burn_in: int = DEFAULT_BURN_IN) -> ChainCheck:
    """Estimated ``D(E) <= dim_L E <= dim_B E`` on one tree."""
    counts = level_counts(tree)
    return ChainCheck(
        dyadic_dimension(counts, burn_in).estimate,
        lower_dimension(tree, burn_in=burn_in).estimate,
        box_dimension(counts, (burn_in, tree.n_max)).slope,
    )
