import math
from fractions import Fraction

import numpy as np
import pytest

from frostdim.dyadic import DyadicCube, OccupancyTree, build_from_points
from frostdim.errors import DomainError, InputError
from frostdim.frostman import construct
from frostdim.sets import DigitSet, realize
from frostdim.verify import (
    BallWitness,
    ball_mass,
    constant_stability,
    decay_report,
    regime_radii,
    reproduce,
    sample_centers,
)


def full_interval(n_max=10):
    return realize(DigitSet(2, (frozenset({0, 1}),)), n_max)


def digit_set(n_max):
    return realize(DigitSet(4, (frozenset({0, 3}),)), n_max)


def skewed(n_max=6):
    levels = [[0], [0], [0], [0, 1], [0, 1, 2]]
    for n in range(5, n_max + 1):
        levels.append([c << (n - 4) for c in levels[4]])
    return OccupancyTree.from_levels(1, n_max, [np.array(v, dtype=np.uint64) for v in levels])


# ball mass -------------------------------------------------------------------------

def test_ball_mass_examples():
    fm = construct(full_interval(), 0.5, 0.25, 1, 1)
    assert ball_mass(fm.measure, [0.5], 0.25) == pytest.approx(0.5, abs=1e-15)
    assert ball_mass(fm.measure, [0.5], 1.0) == pytest.approx(1.0, abs=1e-15)
    point = construct(build_from_points([[0.1]], 10), 0.5, 0.25, 0.5, 0.5)
    assert ball_mass(point.measure, [0.9], 0.25) == 0.0


def test_ball_mass_radius_below_grid():
    fm = construct(full_interval(8), 0.5, 0.25, 1, 1)
    with pytest.raises(DomainError) as err:
        ball_mass(fm.measure, [0.5], 2.0 ** -9)
    assert str(2.0 ** -8) in str(err.value)
    with pytest.raises(InputError):
        ball_mass(fm.measure, [1.5], 0.25)
    with pytest.raises(InputError):
        ball_mass(fm.measure, [0.5, 0.5], 0.25)


def test_ball_mass_monotone_in_radius():
    tree = digit_set(16)
    fm = construct(tree, 0.5, 2.0 ** -4, 0.3, 0.4)
    radii = np.geomspace(2.0 ** -16, 1.0, 60)
    for x in sample_centers(fm, samples=20, seed=3):
        masses = [ball_mass(fm.measure, x, r) for r in radii]
        assert all(b >= a - 1e-15 for a, b in zip(masses, masses[1:]))


def test_skewed_tree_hand_ratios():
    fm = construct(skewed(), 0.5, 0.25, 1, 1)
    x = (8.5 / 64,)                 # first leaf of the cover cube (4, 2)
    assert x in sample_centers(fm, samples=0)
    # r = 1/8: level-3 cubes 0, 1, 2 meet the ball; masses 2/3, 1/3, 0
    assert ball_mass(fm.measure, x, 2.0 ** -3) == pytest.approx(1.0, abs=1e-15)
    # r = 1/16: level-4 cubes 1, 2, 3 meet the ball; masses 1/3, 1/3, 0
    assert ball_mass(fm.measure, x, 2.0 ** -4) == pytest.approx(2 / 3, abs=1e-15)
    mid, _ = decay_report(fm, samples=0)
    for r, ratio in ((2.0 ** -3, 8.0), (2.0 ** -4, 32 / 3)):
        w = BallWitness(x, r, ball_mass(fm.measure, x, r), r)
        assert reproduce(fm, w, mid) == pytest.approx(ratio, rel=1e-14)


# decay reports -------------------------------------------------------------------

def test_radii_lie_in_their_regimes():
    fm = construct(full_interval(12), 0.5, 2.0 ** -3, 1, 1)
    mid, fine = regime_radii(fm)
    assert mid.min() == pytest.approx(2.0 ** -6) and mid.max() == pytest.approx(2.0 ** -3)
    assert fine.min() == pytest.approx(2.0 ** -11) and fine.max() < 2.0 ** -6
    assert len(mid) == len(fine) == 9


def test_centers_lie_in_occupied_leaves():
    tree = digit_set(14)
    fm = construct(tree, 0.5, 2.0 ** -3, 0.3, 0.4)
    for x in sample_centers(fm, samples=30, seed=1):
        leaf = tree.n_max
        k = int(math.floor(x[0] * 2 ** leaf))
        assert tree.is_occupied(DyadicCube(leaf, (k,)))


def test_witness_reproduces_ratio():
    fm = construct(digit_set(16), 0.5, 2.0 ** -4, 0.3, 0.4)
    for report in decay_report(fm, samples=16, seed=2):
        assert report.constant > 0
        assert reproduce(fm, report.witness, report) == report.constant


def test_reports_are_deterministic_for_a_seed():
    fm = construct(digit_set(16), 0.5, 2.0 ** -4, 0.3, 0.4)
    a = decay_report(fm, samples=16, seed=5)
    b = decay_report(fm, samples=16, seed=5)
    assert [r.as_dict() for r in a] == [r.as_dict() for r in b]


def test_full_interval_constants_at_most_four():
    fm = construct(full_interval(12), 0.5, 0.25, 1, 1)
    mid, fine = decay_report(fm, samples=64, seed=0)
    assert mid.constant <= 4 and fine.constant <= 4


def test_full_interval_constants_within_cube_cover_slack():
    # at most three level-n' cubes of side below 2r meet a ball, so ratios stay under 6
    fm = construct(full_interval(12), 0.5, 0.25, 1, 1)
    mid, fine = decay_report(fm, samples=64, seed=0)
    assert mid.constant <= 6 and fine.constant <= 6


def test_single_point_has_huge_constant():
    delta = 2.0 ** -4
    fm = construct(build_from_points([[0.3]], 16), 0.5, delta, 0.5, 0.5)
    mid, _ = decay_report(fm, samples=4)
    assert mid.constant >= delta ** -0.5
    assert ball_mass(fm.measure, (0.3,), delta) == pytest.approx(1.0)


def test_equal_exponents_collapse_fine_shape():
    for tree, t in ((full_interval(12), 1.0), (digit_set(16), 0.4)):
        fm = construct(tree, 0.5, 2.0 ** -3, t, t)
        mid, fine = decay_report(fm, samples=32, seed=0)
        w = fine.witness
        assert w.bound == pytest.approx(w.r ** t, rel=1e-14)
        # the two regimes meet at r = delta^(1/theta) up to a factor 2^t
        r = fm.params.fine_scale
        for x in sample_centers(fm, samples=32):
            at_mid = ball_mass(fm.measure, x, r) / r ** t
            at_fine = ball_mass(fm.measure, x, r / 2) / (r / 2) ** t
            assert at_fine <= 2 ** t * at_mid * (1 + 1e-12)


# stability --------------------------------------------------------------------------

def test_full_interval_stability():
    rep = constant_stability(full_interval(20), 0.5, 1, 1, [2.0 ** -k for k in range(2, 9)], samples=32)
    assert rep.mid_ratio <= 4 and rep.fine_ratio <= 4
    assert all(t == pytest.approx(1.0, abs=1e-12) for t in rep.totals)


def test_stability_needs_four_deltas():
    with pytest.raises(InputError):
        constant_stability(full_interval(12), 0.5, 1, 1, [0.25, 0.125, 2.0 ** -4])


def test_digit_set_constant_times_mass_bounded():
    deltas = [2.0 ** -k for k in range(2, 9)]
    rep = constant_stability(digit_set(24), 0.5, 0.3, 0.4, deltas, samples=32)
    products = [row.mid.constant * row.total_mass for row in rep.rows]
    assert max(products) <= 8 * products[0]
    assert not rep.premise_failed


def test_supercritical_exponent_reports_failed_premise():
    deltas = [2.0 ** -k for k in range(2, 9)]
    rep = constant_stability(digit_set(24), 0.5, 0.3, 0.9, deltas, samples=8)
    assert rep.premise_failed and rep.total_decay >= 10
