import math
import random
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frostdim.dyadic import (
    DyadicCube,
    OccupancyTree,
    ancestor,
    build_from_oracle,
    build_from_points,
    deinterleave,
    deserialize,
    interleave,
    occupied_children_count,
    parent,
    serialize,
)
from frostdim.errors import (
    BadMagicError,
    ChecksumError,
    DomainError,
    MonotonicityError,
    NoParentError,
    PointRangeError,
    TruncatedStreamError,
    VersionMismatchError,
)
from frostdim.sets import DigitSet, IFS, SimilarityMap, realize

from oracles import cantor_meets, cantor_occupied, random_tree, ternary_interval_count
from fractions import Fraction


def full_tree(dim, n_max):
    return build_from_oracle(lambda q: True, n_max, dim)


# cubes -----------------------------------------------------------------------

def test_parent_examples():
    assert parent(DyadicCube(3, (5,))) == DyadicCube(2, (2,))
    assert parent(DyadicCube(1, (1, 0))) == DyadicCube(0, (0, 0))
    assert ancestor(DyadicCube(4, (13,)), 4) == DyadicCube(0, (0,))


def test_root_has_no_parent():
    with pytest.raises(NoParentError):
        parent(DyadicCube(0, (0, 0)))


def test_index_range_checked():
    with pytest.raises(ValueError):
        DyadicCube(2, (4,))


@given(
    st.integers(1, 3).flatmap(
        lambda d: st.tuples(
            st.just(d), st.integers(0, 12).flatmap(
                lambda n: st.tuples(st.just(n), st.lists(st.integers(0, 2 ** n - 1), min_size=d, max_size=d))
            )
        )
    ),
    st.integers(0, 7),
)
def test_parent_of_child_is_identity(args, j):
    d, (n, idx) = args
    q = DyadicCube(n, tuple(idx))
    child = q.child(j % (1 << d))
    assert child.parent() == q
    assert child.level == n + 1


@given(st.integers(1, 3), st.integers(0, 15), st.data())
def test_interleave_round_trip(d, n, data):
    idx = data.draw(st.lists(
        st.lists(st.integers(0, 2 ** n - 1), min_size=d, max_size=d), min_size=1, max_size=20
    ))
    arr = np.array(idx, dtype=np.uint64)
    codes = interleave(arr, n)
    assert np.array_equal(deinterleave(codes, d, n), arr)
    for row, code in zip(idx, codes):
        q = DyadicCube(n, tuple(row))
        assert q.code == int(code)
        assert DyadicCube.from_code(n, int(code), d) == q
        assert q.code >> d == q.parent().code if n else True


def test_diameter_is_sqrt_d_side():
    assert DyadicCube(3, (1, 2)).diameter == math.sqrt(2) * 2 ** -3
    assert DyadicCube(5, (1,)).diameter == 2 ** -5


def test_level_tiles_unit_cube():
    rng = np.random.default_rng(0)
    for x in rng.random((50, 2)):
        hits = [q for q in (DyadicCube(3, (i, j)) for i in range(8) for j in range(8)) if q.contains(x)]
        assert len(hits) == 1


def test_half_open_assignment():
    tree = build_from_points([[0.5]], 3)
    assert tree.is_occupied(DyadicCube(1, (1,)))
    assert not tree.is_occupied(DyadicCube(1, (0,)))
    assert DyadicCube.containing([0.25], 2) == DyadicCube(2, (1,))


# construction ------------------------------------------------------------------

def test_points_two_cubes():
    tree = build_from_points([[0.1], [0.9]], 1)
    assert sorted(int(c) for c in tree.occupied_codes(1)) == [0, 1]
    assert occupied_children_count(tree, DyadicCube(0, (0,))) == 2


def test_single_point_chain():
    tree = build_from_points([[0.1]], 2)
    for n in range(2):
        assert tree.level_count(n + 1) == 1
        assert tree.min_branching(n) == 1


def test_uniform_points_fill_level_three():
    pts = np.random.default_rng(1).random((1000, 2))
    tree = build_from_points(pts, 3)
    assert tree.level_count(3) == 64
    cells = {(int(x * 8), int(y * 8)) for x, y in pts}
    assert len(cells) == 64
    for n in range(3):
        for q in tree.cubes(n):
            assert occupied_children_count(tree, q) == 4


def test_point_out_of_range_names_index():
    with pytest.raises(PointRangeError) as err:
        build_from_points([[0.2], [1.0]], 4)
    assert err.value.index == 1


def test_oracle_always_true():
    tree = full_tree(1, 3)
    for n in range(4):
        assert tree.level_count(n) == 2 ** n
    for n in range(3):
        assert all(occupied_children_count(tree, q) == 2 for q in tree.cubes(n))


def cantor_oracle(q):
    lo = Fraction(q.index[0], 2 ** q.level)
    return cantor_meets(lo, lo + Fraction(1, 2 ** q.level))


def test_oracle_cantor_matches_interval_enumeration():
    tree = build_from_oracle(cantor_oracle, 10, 1)
    for n in range(11):
        assert tree.level_count(n) == ternary_interval_count(n, 14) == len(cantor_occupied(n))


def test_oracle_digit_set_counts():
    tree = realize(DigitSet(4, (frozenset({0, 3}),)), 8)
    for k in range(5):
        assert tree.level_count(2 * k) == 2 ** k


def test_oracle_monotonicity_violation_names_cubes():
    def bad(q):
        return q.level != 1 or q.index == (0,) if q.level < 2 else True

    with pytest.raises(MonotonicityError) as err:
        build_from_oracle(bad, 3, 1)
    assert err.value.parent == DyadicCube(1, (1,))
    assert err.value.child.parent() == DyadicCube(1, (1,))


def test_children_count_examples():
    digit = realize(DigitSet(4, (frozenset({0, 3}),)), 8)
    # binary expansions of the 16 admissible 4-digit strings: pairs 00 and 11
    words = {"".join(("00", "11")[int(b)] for b in format(k, "04b")) for k in range(16)}
    for n in range(8):
        prefixes = {w[:n] for w in words}
        for q in digit.cubes(n):
            word = format(q.index[0], f"0{n}b") if n else ""
            expected = sum(word + bit in {w[:n + 1] for w in words} for bit in "01")
            assert word in prefixes
            assert occupied_children_count(digit, q) == expected
        assert {occupied_children_count(digit, q) for q in digit.cubes(n)} == {2 if n % 2 == 0 else 1}
    point = build_from_points([[0.3]], 6)
    assert all(occupied_children_count(point, next(point.cubes(n))) == 1 for n in range(6))
    with pytest.raises(DomainError):
        occupied_children_count(point, DyadicCube(6, (0,)))
    with pytest.raises(DomainError):
        occupied_children_count(point, DyadicCube(1, (1,)))


def test_branching_recount_random_trees():
    rng = random.Random(3)
    for _ in range(30):
        dim = rng.choice([1, 2])
        tree = random_tree(rng, dim, rng.randint(2, 6))
        for n in range(tree.n_max):
            nxt = {int(c) for c in tree.occupied_codes(n + 1)}
            for code in tree.occupied_codes(n):
                kids = sum(((int(code) << dim) | j) in nxt for j in range(1 << dim))
                q = DyadicCube.from_code(n, int(code), dim)
                assert tree.occupied_children_count(q) == kids >= 1
                assert tree.is_occupied(q)
            for c in nxt:
                assert (c >> dim) in {int(x) for x in tree.occupied_codes(n)}
            assert tree.level_count(n) <= 2 ** (dim * n)


def test_full_cube_counts():
    tree = full_tree(2, 6)
    assert [tree.level_count(n) for n in range(7)] == [4 ** n for n in range(7)]


# serialization -------------------------------------------------------------------

def test_round_trip_full_depth_four():
    s = serialize(full_tree(1, 4))
    assert serialize(deserialize(s)) == s
    assert s[:4] == b"DYOT"


def test_corrupted_code_fails_checksum():
    tree = build_from_points([[0.3], [0.7]], 4)
    s = bytearray(serialize(tree))
    s[-5 - 8] ^= 0x01       # low byte of the last level's last code
    with pytest.raises(ChecksumError):
        deserialize(bytes(s))


def test_round_trip_cantor_depth_twenty():
    tree = realize(IFS((SimilarityMap(1 / 3, (0.0,)), SimilarityMap(1 / 3, (2 / 3,)))), 20)
    back = deserialize(serialize(tree))
    assert back == tree
    assert [back.level_count(n) for n in range(21)] == [tree.level_count(n) for n in range(21)]


def test_stream_errors_are_distinct():
    s = serialize(full_tree(1, 4))
    with pytest.raises(TruncatedStreamError):
        deserialize(s[:-7])
    with pytest.raises(BadMagicError):
        deserialize(b"XXXX" + s[4:])
    bumped = s[:4] + struct.pack("<H", 99) + s[6:]
    with pytest.raises(VersionMismatchError):
        deserialize(bumped)
    flipped = bytearray(s)
    flipped[-1] ^= 0x01
    with pytest.raises(ChecksumError):
        deserialize(bytes(flipped))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2), st.integers(1, 6))
def test_round_trip_random(seed, dim, n_max):
    tree = random_tree(random.Random(seed), dim, n_max)
    assert deserialize(serialize(tree)) == tree
