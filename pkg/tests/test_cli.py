import math

import pytest

from frostdim.cli import main, parse_delta, parse_scalar
from frostdim.dyadic import serialize
from frostdim.sets import DigitSet, realize

from oracles import cantor_occupied

FULL = "kind: digits\nbase: 2\npattern: [[0, 1]]\n"
DIGITS = "kind: digits\nbase: 4\npattern: [[0, 3]]\n"
CANTOR = "kind: ifs\nmaps:\n  - {ratio: 1/3, offset: [0]}\n  - {ratio: 1/3, offset: [2/3]}\n"


def spec(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def fields(path):
    out = {}
    for line in path.read_text().splitlines():
        if ": " in line and not line.startswith("#"):
            key, value = line.split(": ", 1)
            out[key.strip()] = value
    return out


def test_parse_helpers():
    assert parse_scalar("2^-3") == 0.125
    assert parse_delta("2^-2..2^-5") == [0.25, 0.125, 0.0625, 0.03125]
    assert parse_delta("0.5,0.25") == [0.5, 0.25]
    assert len(parse_delta("2^-2..2^-8:4")) == 4


def test_ingest_is_deterministic(tmp_path):
    pts = spec(tmp_path, "points.txt", "0.1 0.2\n0.7 0.3\n0.5 0.9\n")
    assert main(["ingest", "--input", pts, "--n-max", "12", "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["ingest", "--input", pts, "--n-max", "12", "--output-dir", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "points.dyot").read_bytes()
    assert first == (tmp_path / "b" / "points.dyot").read_bytes()
    summary_a = (tmp_path / "a" / "points.summary.txt").read_text().replace("a/points", "")
    summary_b = (tmp_path / "b" / "points.summary.txt").read_text().replace("b/points", "")
    assert summary_a.splitlines()[2:] == summary_b.splitlines()[2:]


def test_ingest_cantor_counts(tmp_path):
    path = spec(tmp_path, "cantor.yaml", CANTOR)
    assert main(["ingest", "--input", path, "--n-max", "12", "--output-dir", str(tmp_path)]) == 0
    rows = [line.split() for line in (tmp_path / "cantor.summary.txt").read_text().splitlines()
            if line.strip() and line.split()[0].isdigit()]
    assert [int(r[1]) for r in rows] == [len(cantor_occupied(n)) for n in range(13)]


def test_ingest_empty_point_file(tmp_path, capsys):
    path = spec(tmp_path, "empty.txt", "")
    assert main(["ingest", "--input", path, "--n-max", "8", "--output-dir", str(tmp_path)]) == 2
    assert "empty point set" in capsys.readouterr().err


def test_missing_input_is_an_input_error(tmp_path):
    assert main(["ingest", "--input", str(tmp_path / "nope.txt"), "--output-dir", str(tmp_path)]) == 2


def test_estimate_all_on_full_interval(tmp_path):
    path = spec(tmp_path, "full.yaml", FULL)
    out = tmp_path / "e"
    assert main(["estimate", "--all", "--input", path, "--n-max", "12", "--output-dir", str(out)]) == 0
    summary = fields(out / "summary.txt")
    assert summary["dyadic_dimension"] == "1"
    assert summary["lower_dimension"] == "1"
    assert summary["box_dimension"].startswith("1 ")
    assert summary["chain dyadic <= lower <= box"] == "holds"
    for theta in ("0.25", "0.5", "0.75", "1"):
        assert summary[f"theta {theta}"].startswith("s_star in [1, 1]")
    for name in ("dyadic.txt", "box.txt", "lower.txt", "profile.txt", "profile.csv"):
        assert "config_hash" in (out / name).read_text()


def test_estimate_dyadic_on_digit_set(tmp_path):
    path = spec(tmp_path, "digits.yaml", DIGITS)
    out = tmp_path / "e"
    assert main(["estimate", "--dyadic", "--input", path, "--n-max", "16", "--output-dir", str(out)]) == 0
    got = fields(out / "dyadic.txt")
    assert float(got["estimate"]) == 0.0
    assert got["trace"].split() == ["1", "0"] * 8


def test_estimate_infeasible_names_required_depth(tmp_path, capsys):
    path = spec(tmp_path, "full.yaml", FULL)
    code = main(["estimate", "--intermediate", "--theta", "0.25", "--delta", "2^-12",
                 "--input", path, "--n-max", "12", "--output-dir", str(tmp_path)])
    assert code == 3
    assert "n_max >= 48" in capsys.readouterr().err


def test_sequence_intermediate_summary(tmp_path):
    path = spec(tmp_path, "seq.yaml", "kind: sequence\nexponent: 1\n")
    out = tmp_path / "e"
    assert main(["estimate", "--intermediate", "--theta", "0.25,0.5,0.75,1", "--input", path,
                 "--n-max", "20", "--output-dir", str(out)]) == 0
    summary = fields(out / "summary.txt")
    for theta, key in ((0.25, "0.25"), (0.5, "0.5"), (0.75, "0.75"), (1.0, "1")):
        low = float(summary[f"theta {key}"].split("[")[1].split(",")[0])
        assert abs(low - theta / (1 + theta)) <= 0.08


def test_construct_and_verify_full_interval(tmp_path):
    tree = tmp_path / "full.dyot"
    tree.write_bytes(serialize(realize(DigitSet(2, (frozenset({0, 1}),)), 12)))
    out = tmp_path / "c"
    assert main(["construct", "--input", str(tree), "--theta", "0.5", "--delta", "0.25",
                 "--s", "1", "--t", "1", "--output-dir", str(out)]) == 0
    info = fields(out / "construct.txt")
    assert info["cover_cubes"] == "4" and info["cover_level 2"] == "4"
    assert float(info["total_mass_T"]) == 1.0
    cover = (out / "cover.csv").read_text().splitlines()
    assert cover[0].startswith("# config_hash=") and len(cover) == 2 + 4
    assert main(["verify", "--input", str(out / "measure.txt"), "--output-dir", str(out)]) == 0
    report = (out / "verify.txt").read_text()
    constants = [float(line.split(": ")[1]) for line in report.splitlines()
                 if line.strip().startswith("constant:")]
    assert len(constants) == 2 and all(0 < c < math.inf for c in constants)
    assert main(["verify", "--input", str(out / "measure.txt"), "--output-dir", str(tmp_path / "v")]) == 0
    assert (tmp_path / "v" / "verify.csv").read_text() == (out / "verify.csv").read_text()


def test_verify_full_interval_constants_at_most_four(tmp_path):
    tree = tmp_path / "full.dyot"
    tree.write_bytes(serialize(realize(DigitSet(2, (frozenset({0, 1}),)), 12)))
    out = tmp_path / "c"
    main(["construct", "--input", str(tree), "--theta", "0.5", "--delta", "0.25",
          "--s", "1", "--t", "1", "--output-dir", str(out)])
    assert main(["verify", "--input", str(out / "measure.txt"), "--output-dir", str(out)]) == 0
    constants = [float(line.split(": ")[1]) for line in (out / "verify.txt").read_text().splitlines()
                 if line.strip().startswith("constant:")]
    assert max(constants) <= 4


def test_verify_detects_tree_mismatch(tmp_path, capsys):
    tree = tmp_path / "full.dyot"
    tree.write_bytes(serialize(realize(DigitSet(2, (frozenset({0, 1}),)), 10)))
    out = tmp_path / "c"
    assert main(["construct", "--input", str(tree), "--theta", "0.5", "--delta", "0.25",
                 "--s", "1", "--t", "1", "--output-dir", str(out)]) == 0
    tree.write_bytes(serialize(realize(DigitSet(4, (frozenset({0, 3}),)), 10)))
    assert main(["verify", "--input", str(out / "measure.txt"), "--output-dir", str(out)]) == 2
    assert "hash mismatch" in capsys.readouterr().err


def test_construct_rejects_bad_parameters(tmp_path, capsys):
    path = spec(tmp_path, "full.yaml", FULL)
    base = ["construct", "--input", path, "--theta", "0.5", "--output-dir", str(tmp_path)]
    assert main(base + ["--n-max", "8", "--delta", "0.25", "--s", "1", "--t", "0.5"]) == 3
    assert main(base + ["--n-max", "3", "--delta", "0.25", "--s", "1", "--t", "1"]) == 3
    assert "n_max >= 4" in capsys.readouterr().err


def test_stability_on_digit_set(tmp_path):
    path = spec(tmp_path, "digits.yaml", DIGITS)
    out = tmp_path / "s"
    assert main(["stability", "--input", path, "--n-max", "24", "--theta", "0.5",
                 "--delta-grid", "2^-2..2^-8", "--s", "0.3", "--t", "0.4", "--samples", "32",
                 "--format", "table", "--output-dir", str(out)]) == 0
    info = fields(out / "stability.txt")
    assert float(info["mid_ratio"]) <= 8 and float(info["fine_ratio"]) <= 8
    assert float(info["T_min"]) >= 0.1
    table = (out / "stability.csv").read_text().splitlines()
    assert len(table) == 2 + 7


def test_outputs_are_reproducible(tmp_path):
    path = spec(tmp_path, "digits.yaml", DIGITS)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["stability", "--input", path, "--n-max", "16", "--theta", "0.5",
                     "--delta", "2^-2..2^-5", "--s", "0.3", "--t", "0.4", "--samples", "8",
                     "--seed", "7", "--output-dir", str(out)]) == 0
        runs.append((out / "stability.csv").read_text())
    assert runs[0] == runs[1]
