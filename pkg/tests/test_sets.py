import random
from fractions import Fraction

import numpy as np
import pytest

from frostdim.dyadic import DyadicCube, serialize
from frostdim.errors import EmptySetError, PointFileError, SetSpecError
from frostdim.sets import (
    IFS,
    DigitSet,
    PointCloud,
    SequenceSet,
    SimilarityMap,
    ingest_points,
    load_spec,
    parse_points,
    realize,
    sequence_leaf_indices,
)

from oracles import cantor_occupied

CANTOR = IFS((SimilarityMap(1 / 3, (0.0,)), SimilarityMap(1 / 3, (2 / 3,))))


def test_full_binary_digit_set():
    tree = realize(DigitSet(2, (frozenset({0, 1}),)), 5)
    assert [tree.level_count(n) for n in range(6)] == [2 ** n for n in range(6)]


def test_sequence_set_leaf_cells_by_enumeration():
    n_max = 6
    size = 2 ** n_max
    # 1/n for n > size lies in [0, 1/size) together with 0; the point 1 goes to the last cell
    expected = {0} | {min(Fraction(size, n).__floor__(), size - 1) for n in range(1, size + 1)}
    tree = realize(SequenceSet(1), n_max)
    assert {int(c) for c in tree.occupied_codes(n_max)} == expected
    assert 8 in expected


@pytest.mark.parametrize("p, n_max", [(1, 12), (2, 12), (0.5, 8), (1.5, 12)])
def test_sequence_cells_match_brute_force(p, n_max):
    size = 2 ** n_max
    cells = {0}
    k = 1
    while True:
        x = k ** (-p)
        if x < 1 / size:
            break
        cells.add(min(int(x * size), size - 1))
        k += 1
    assert set(sequence_leaf_indices(p, n_max).tolist()) == cells


def test_sequence_dense_near_zero():
    tree = realize(SequenceSet(1), 16)
    for n in range(17):
        assert tree.is_occupied(DyadicCube(n, (0,)))


def test_cantor_ifs_matches_ternary_oracle():
    tree = realize(CANTOR, 12)
    for n in range(13):
        assert sorted(int(c) for c in tree.occupied_codes(n)) == cantor_occupied(n)


def test_binary_digit_occupancy_depends_on_prefix_only():
    spec = DigitSet(2, (frozenset({0}), frozenset({0, 1}), frozenset({1})))
    tree = realize(spec, 12)
    rng = random.Random(5)
    for _ in range(100):
        n = rng.randint(1, 12)
        k = rng.randrange(2 ** n)
        bits = format(k, f"0{n}b")
        allowed = all(int(b) in {0, 1} and (b == "0" if i % 3 == 0 else b == "1" if i % 3 == 2 else True)
                      for i, b in enumerate(bits))
        assert tree.is_occupied(DyadicCube(n, (k,))) == allowed


def test_base_four_digits_in_two_dims():
    spec = DigitSet(2, (frozenset({(0, 0), (1, 1)}),), dim=2)
    tree = realize(spec, 6)
    assert [tree.level_count(n) for n in range(7)] == [2 ** n for n in range(7)]


def test_realize_is_deterministic():
    assert serialize(realize(CANTOR, 14)) == serialize(realize(CANTOR, 14))
    spec = DigitSet(3, (frozenset({0, 2}),))
    assert serialize(realize(spec, 10)) == serialize(realize(spec, 10))


def test_invalid_specs_rejected():
    with pytest.raises(SetSpecError):
        SimilarityMap(0.5, (0.6,))
    with pytest.raises(SetSpecError):
        DigitSet(4, (frozenset(),))
    with pytest.raises(SetSpecError):
        DigitSet(4, (frozenset({4}),))
    with pytest.raises(SetSpecError):
        SequenceSet(0)


def test_parse_points_examples(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("0.25\n0.75\n")
    assert ingest_points(f).points.tolist() == [[0.25], [0.75]]
    f.write_text("1.5")
    with pytest.raises(PointFileError):
        ingest_points(f)
    f.write_text("0\n# comment\n10\n")
    got = ingest_points(f, normalize=True, n_max=8)
    assert np.all((got.points >= 0) & (got.points < 1))
    assert got.points[0, 0] < got.points[1, 0]
    assert got.transform is not None


def test_point_file_errors_carry_line_numbers():
    with pytest.raises(PointFileError) as err:
        parse_points("0.1 0.2\n0.3\n")
    assert err.value.line == 2
    with pytest.raises(PointFileError) as err:
        parse_points("0.1\nabc\n")
    assert err.value.line == 2
    with pytest.raises(EmptySetError):
        parse_points("# nothing\n\n")


def test_spec_files(tmp_path):
    (tmp_path / "c.yaml").write_text(
        "kind: ifs\nmaps:\n  - {ratio: 1/3, offset: [0]}\n  - {ratio: 1/3, offset: [2/3]}\n"
    )
    spec = load_spec(tmp_path / "c.yaml")
    assert serialize(realize(spec, 10)) == serialize(realize(CANTOR, 10))
    (tmp_path / "pts.txt").write_text("0.1\n0.6\n")
    (tmp_path / "p.yaml").write_text("kind: points\npath: pts.txt\n")
    spec = load_spec(tmp_path / "p.yaml")
    assert isinstance(spec, PointCloud)
    assert realize(spec, 3).level_count(3) == 2
    (tmp_path / "bad.yaml").write_text("kind: nope\n")
    with pytest.raises(SetSpecError):
        load_spec(tmp_path / "bad.yaml")
