"""Empirical checks of ball-mass decay for cascade measures.

Two regimes are sampled for a measure built at ``(theta, delta, s, t)``:

* ``mid``  -- radii in ``[delta^(1/theta), delta]``, bound shape ``r^t``;
* ``fine`` -- radii in ``[2^(1-n_max), delta^(1/theta))``, bound shape
  ``(delta^(1/theta))^(t-s) r^s``.

The empirical constant of a regime is the largest observed
``mu(B(x, r)) / shape(r)``.  Balls are evaluated through the dyadic cubes of
side about ``r`` that meet them, so constants include that covering slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._workers import parallel_map
from .dyadic import DyadicCube, OccupancyTree
from .errors import DomainError, InfeasibleError, InputError
from .frostman import CascadeMeasure, FrostmanMeasure, construct

RADII_PER_REGIME = 9


def _level_for_radius(r: float) -> int:
    """Level ``n`` with ``2^(-n-1) < r <= 2^-n`` (0 for ``r >= 1``)."""
    if r >= 1.0:
        return 0
    mant, exp = math.frexp(r)    # r = mant * 2^exp, mant in [0.5, 1)
    return 1 - exp if mant == 0.5 else -exp


def ball_mass(measure: CascadeMeasure, x, r: float) -> float:
    """Mass of the level-``n'`` cubes meeting the open ball ``B(x, r)``.

    ``n'`` satisfies ``2^(-n'-1) < r <= 2^(-n')``; at most ``3^d`` candidate
    cubes around ``x`` can meet the ball.
    """
    tree = measure.tree
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != tree.dim:
        raise InputError(f"point has {x.shape[0]} coordinates, tree has dimension {tree.dim}")
    if np.any(x < 0) or np.any(x >= 1):
        raise InputError(f"ball center {tuple(x)} lies outside [0,1)^d")
    r_min = 2.0 ** -tree.n_max
    if not r >= r_min:
        raise DomainError(
            f"radius {r} is below the grid resolution; the smallest admissible radius is {r_min}"
        )
    level = _level_for_radius(float(r))
    size = 1 << level
    base = np.minimum(np.floor(np.ldexp(x, level)).astype(np.int64), size - 1)
    total = 0.0
    for offset in np.ndindex(*(3,) * tree.dim):
        idx = base + np.asarray(offset) - 1
        if np.any(idx < 0) or np.any(idx >= size):
            continue
        cube = DyadicCube(level, tuple(int(i) for i in idx))
        if cube.distance_to(x) < r:
            total += float(measure.cube_mass(cube))
    return total


@dataclass(frozen=True)
class BallWitness:
    x: tuple
    r: float
    mass: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.mass / self.bound


@dataclass(frozen=True)
class DecayReport:
    regime: str            # "mid" or "fine"
    samples: int
    constant: float
    witness: BallWitness | None
    shape: str

    @property
    def empty(self) -> bool:
        return self.samples == 0

    def as_dict(self) -> dict:
        w = self.witness
        return {
            "regime": self.regime, "samples": self.samples, "constant": self.constant,
            "shape": self.shape,
            "witness": None if w is None else {
                "x": list(w.x), "r": w.r, "mass": w.mass, "bound": w.bound,
            },
        }


def _first_leaf(tree: OccupancyTree, cube: DyadicCube) -> DyadicCube:
    """Occupied leaf descendant of ``cube`` with the smallest code."""
    d, n_max = tree.dim, tree.n_max
    code, level = cube.code, cube.level
    if tree.full_root_level(level, code) is not None:
        return DyadicCube.from_code(n_max, code << (d * (n_max - level)), d)
    best = None
    for j in range(level, n_max + 1):
        roots = tree.full[j]
        if not roots.shape[0]:
            continue
        s = d * (j - level)
        k = int(np.searchsorted(roots, np.uint64(code << s)))
        if k < roots.shape[0] and int(roots[k]) < (code + 1) << s:
            leaf = int(roots[k]) << (d * (n_max - j))
            best = leaf if best is None else min(best, leaf)
    if best is None:
        raise DomainError(f"{cube} is not occupied")
    return DyadicCube.from_code(n_max, best, d)


def _random_leaf(tree: OccupancyTree, rng: np.random.Generator) -> DyadicCube:
    q = DyadicCube.root(tree.dim)
    while q.level < tree.n_max:
        if tree.full_root_level(q.level, q.code) is not None:
            rest = tree.n_max - q.level
            idx = rng.integers(0, 1 << rest, size=tree.dim)
            return DyadicCube(tree.n_max, tuple(
                (i << rest) + int(k) for i, k in zip(q.index, idx)
            ))
        kids = tree.children(q)
        q = kids[int(rng.integers(0, len(kids)))]
    return q


def sample_centers(fm: FrostmanMeasure, samples: int = 64, seed: int = 0) -> list[tuple]:
    """Leaf centres: one inside every cover cube plus ``samples`` random leaves."""
    tree = fm.measure.tree
    rng = np.random.default_rng(seed)
    leaves = [_first_leaf(tree, c.cube) for c in fm.cover.cubes]
    leaves += [_random_leaf(tree, rng) for _ in range(samples)]
    seen, out = set(), []
    for q in leaves:
        if q not in seen:
            seen.add(q)
            out.append(q.center)
    return out


def regime_radii(fm: FrostmanMeasure, per_regime: int = RADII_PER_REGIME):
    p = fm.params
    fine_top = p.fine_scale
    mid = np.geomspace(fine_top, p.delta, per_regime)
    lo = 2.0 ** (1 - fm.measure.tree.n_max)
    fine = np.geomspace(lo, fine_top, per_regime + 1)[:-1] if lo < fine_top else np.zeros(0)
    return mid, fine


def decay_report(
    fm: FrostmanMeasure, samples: int = 64, seed: int = 0,
    per_regime: int = RADII_PER_REGIME,
) -> tuple[DecayReport, DecayReport]:
    """Worst observed ratio against the mid and fine bound shapes."""
    p = fm.params
    if fm.measure.params != p:
        raise InputError("measure and parameters disagree")
    centers = sample_centers(fm, samples, seed)
    if not centers:
        raise InputError("no ball centres to sample")
    mid_r, fine_r = regime_radii(fm, per_regime)
    coarse = p.fine_scale ** (p.t - p.s)
    shapes = [
        ("mid", mid_r, lambda r: r ** p.t, "r^t"),
        ("fine", fine_r, lambda r: coarse * r ** p.s, "(delta^(1/theta))^(t-s) r^s"),
    ]
    reports = []
    for name, radii, shape, label in shapes:
        jobs = [(x, float(r)) for x in centers for r in radii]

        def evaluate(job, shape=shape):
            x, r = job
            return ball_mass(fm.measure, x, r), shape(r)

        results = parallel_map(evaluate, jobs)
        best, witness = 0.0, None
        for (x, r), (mass, bound) in zip(jobs, results):
            ratio = mass / bound
            if witness is None or ratio > best:
                best, witness = ratio, BallWitness(tuple(x), r, mass, bound)
        reports.append(DecayReport(name, len(jobs), best, witness, label))
    return reports[0], reports[1]


def reproduce(fm: FrostmanMeasure, witness: BallWitness, report: DecayReport) -> float:
    """Recompute the ratio of a witness ball."""
    p = fm.params
    mass = ball_mass(fm.measure, witness.x, witness.r)
    if report.regime == "mid":
        bound = witness.r ** p.t
    else:
        bound = p.fine_scale ** (p.t - p.s) * witness.r ** p.s
    return mass / bound


@dataclass(frozen=True)
class StabilityRow:
    delta: float
    total_mass: float
    mid: DecayReport
    fine: DecayReport


@dataclass(frozen=True)
class StabilityReport:
    theta: float
    s: float
    t: float
    rows: tuple[StabilityRow, ...]

    @staticmethod
    def _spread(values) -> float:
        values = [v for v in values if v > 0]
        return max(values) / min(values) if values else float("nan")

    @staticmethod
    def _slope(deltas, values) -> float:
        pts = [(math.log(1 / d), math.log(v)) for d, v in zip(deltas, values) if v > 0]
        if len(pts) < 2:
            return float("nan")
        xs, ys = np.array(pts).T
        return float(np.polyfit(xs, ys, 1)[0])

    @property
    def deltas(self):
        return [row.delta for row in self.rows]

    @property
    def totals(self):
        return [row.total_mass for row in self.rows]

    @property
    def mid_ratio(self) -> float:
        return self._spread(r.mid.constant for r in self.rows)

    @property
    def fine_ratio(self) -> float:
        return self._spread(r.fine.constant for r in self.rows if not r.fine.empty)

    @property
    def mid_slope(self) -> float:
        return self._slope(self.deltas, [r.mid.constant for r in self.rows])

    @property
    def fine_slope(self) -> float:
        rows = [r for r in self.rows if not r.fine.empty]
        return self._slope([r.delta for r in rows], [r.fine.constant for r in rows])

    @property
    def total_min(self) -> float:
        return min(self.totals)

    @property
    def total_decay(self) -> float:
        """``T`` at the coarsest scale divided by ``T`` at the finest."""
        return self.totals[0] / self.totals[-1]

    @property
    def premise_failed(self) -> bool:
        """Cover sums collapse (``T`` shrinks by 10x or more) across the grid."""
        return self.total_decay >= 10.0


def constant_stability(
    tree: OccupancyTree, theta: float, s: float, t: float, deltas,
    samples: int = 64, seed: int = 0,
) -> StabilityReport:
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if len(deltas) < 4:
        raise InputError("the delta grid needs at least 4 values")
    rows = []
    for delta in deltas:
        fm = construct(tree, theta, delta, s, t)
        mid, fine = decay_report(fm, samples, seed)
        rows.append(StabilityRow(delta, float(fm.total_mass), mid, fine))
    return StabilityReport(float(theta), float(s), float(t), tuple(rows))
