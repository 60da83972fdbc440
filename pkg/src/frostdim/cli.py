"""Command-line front end.

Commands: ``ingest``, ``estimate``, ``profile``, ``construct``, ``verify`` and
``stability``.  Every output carries a hash of the run configuration; floats
are printed with 12 significant digits.  Exit codes: 0 success, 1 internal
error, 2 input error, 3 infeasible parameters.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import sys
from pathlib import Path

from . import estimators as est
from .dyadic import OccupancyTree, deserialize, serialize
from .errors import DomainError, FrostdimError, InfeasibleError, InputError
from .frostman import (
    FrostmanMeasure,
    branching_bound,
    construct,
    dump_measure_binary,
    dump_measure_text,
    equality_cover,
    load_measure_text,
    read_measure_header,
    tree_digest,
)
from .sets import ingest_points, realize, spec_from_dict
from .verify import constant_stability, decay_report

DEFAULT_THETAS = "0.25,0.5,0.75,1"
DEFAULT_N_MAX = 24


def fmt(x) -> str:
    if isinstance(x, (bool, str)) or x is None:
        return str(x)
    if isinstance(x, int):
        return str(x)
    return f"{float(x):.12g}"


# argument parsing -----------------------------------------------------------

_POW = re.compile(r"^\s*2\s*\^\s*(-?\d+(?:\.\d+)?)\s*$")


def parse_scalar(text: str) -> float:
    m = _POW.match(text)
    try:
        value = 2.0 ** float(m.group(1)) if m else float(text)
    except ValueError:
        raise InputError(f"cannot read number {text!r}") from None
    return value


def parse_delta(text: str) -> list[float]:
    """A value, a comma list, or a geometric grid ``a..b`` (``a..b:k`` for k points).

    Without ``:k`` the grid steps by factors of two, so both ends must differ
    by a power of two.
    """
    if ".." not in text:
        return [parse_scalar(v) for v in text.split(",") if v.strip()]
    head, _, count = text.partition(":")
    lo_text, _, hi_text = head.partition("..")
    a, b = parse_scalar(lo_text), parse_scalar(hi_text)
    if not (a > 0 and b > 0):
        raise InputError(f"grid ends must be positive: {text!r}")
    if count:
        k = int(count)
        if k < 2:
            raise InputError("a grid needs at least 2 points")
        ratio = (b / a) ** (1.0 / (k - 1))
        return [a * ratio ** i for i in range(k)]
    steps = math.log2(a / b)
    if abs(steps - round(steps)) > 1e-9:
        raise InputError(f"grid {text!r} does not step by powers of two; add ':k'")
    steps = round(steps)
    sign = 1 if steps >= 0 else -1
    return [a * 2.0 ** (-sign * i) for i in range(abs(steps) + 1)]


def parse_thetas(text: str) -> list[float]:
    thetas = [parse_scalar(v) for v in text.split(",") if v.strip()]
    if not thetas:
        raise InputError("empty theta list")
    return thetas


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frostdim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, n_max=True):
        p.add_argument("--input", required=True, help="set spec, point file, tree or measure dump")
        p.add_argument("--output-dir", default=".", help="directory for output files")
        p.add_argument("--format", choices=("text", "table"), default="text")
        if n_max:
            p.add_argument("--n-max", type=int, default=None,
                           help=f"tree depth when realizing a set (default {DEFAULT_N_MAX})")

    p = sub.add_parser("ingest", help="realize a set as an occupancy tree file")
    common(p)
    p.add_argument("--normalize", action="store_true", help="rescale point files into [0,1)^d")

    for name, helptext in (("estimate", "dimension estimates"), ("profile", "intermediate profile")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--theta", default=DEFAULT_THETAS)
        p.add_argument("--delta", "--delta-grid", dest="delta", default=None)
        p.add_argument("--burn-in", type=int, default=est.DEFAULT_BURN_IN)
        if name == "estimate":
            for flag in ("all", "dyadic", "box", "lower", "intermediate"):
                p.add_argument(f"--{flag}", action="store_true")

    p = sub.add_parser("construct", help="build a Frostman measure")
    common(p)
    _measure_args(p)
    p.add_argument("--burn-in", type=int, default=est.DEFAULT_BURN_IN)

    p = sub.add_parser("verify", help="sample ball-mass decay of a measure dump")
    common(p, n_max=False)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stability", help="decay constants across a delta grid")
    common(p)
    _measure_args(p)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _measure_args(p):
    p.add_argument("--theta", required=True)
    p.add_argument("--delta", "--delta-grid", dest="delta", required=True)
    p.add_argument("--s", type=parse_scalar, required=True)
    p.add_argument("--t", type=parse_scalar, required=True)


# helpers --------------------------------------------------------------------

def config_hash(args) -> str:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "output_dir"}
    path = Path(args.input)
    if path.is_file():
        config["input_sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _load_text_spec(path: Path):
    """Set spec if the file is a YAML mapping with ``kind``; else ``None``."""
    import yaml

    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (yaml.YAMLError, UnicodeDecodeError):
        return None
    if isinstance(doc, dict) and "kind" in doc:
        return spec_from_dict(doc, path.parent)
    return None


def load_tree(path, n_max: int | None, normalize: bool = False) -> OccupancyTree:
    """Tree file, set spec or point file, in that order of detection."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file {path} not found")
    data = path.read_bytes()
    if data[:4] == b"DYOT":
        tree = deserialize(data)
        if n_max is not None and n_max != tree.n_max:
            raise InputError(f"tree file has n_max={tree.n_max}, requested {n_max}")
        return tree
    n_max = DEFAULT_N_MAX if n_max is None else n_max
    spec = _load_text_spec(path)
    if spec is not None:
        return realize(spec, n_max)
    from .dyadic import build_from_points

    return build_from_points(ingest_points(path, normalize, n_max).points, n_max)


class Output:
    """Collects report lines; writes files and echoes the summary."""

    def __init__(self, args, command: str):
        self.dir = Path(args.output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(args)
        self.format = args.format
        self.command = command

    def header(self) -> list[str]:
        return [f"# frostdim {self.command}", f"config_hash: {self.hash}"]

    def write(self, name: str, lines: list[str]) -> Path:
        path = self.dir / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def write_table(self, name: str, columns: list[str], rows) -> Path:
        lines = [f"# config_hash={self.hash}", ",".join(columns)]
        lines += [",".join(fmt(v) for v in row) for row in rows]
        return self.write(name, lines)

    def show(self, text_lines: list[str], columns=None, rows=None):
        if self.format == "table" and columns is not None:
            print(f"# config_hash={self.hash}")
            print(",".join(columns))
            for row in rows:
                print(",".join(fmt(v) for v in row))
        else:
            print("\n".join(text_lines))


# commands -------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = Output(args, "ingest")
    tree = load_tree(args.input, args.n_max, args.normalize)
    counts = est.level_counts(tree)
    path = out.dir / (Path(args.input).stem + ".dyot")
    path.write_bytes(serialize(tree))
    rows = [
        (n, counts.counts[n], counts.min_branching[n] if n < tree.n_max else "")
        for n in range(tree.n_max + 1)
    ]
    lines = out.header() + [
        f"tree: {path}", f"dim: {tree.dim}", f"n_max: {tree.n_max}",
        f"tree_sha256: {tree_digest(tree)}", "level  occupied  min_branching",
    ] + [f"{n:5d}  {m}  {b}" for n, m, b in rows]
    out.write(path.stem + ".summary.txt", lines)
    out.show(lines, ["level", "occupied", "min_branching"], rows)
    return 0


def _profile(tree, thetas, delta_arg):
    """Profile on a shared grid, or on each theta's own feasible grid."""
    if delta_arg is not None:
        return [est.intermediate_profile(tree, thetas, parse_delta(delta_arg))]
    profiles = []
    for theta in thetas:
        finest = est.finest_feasible_delta(tree, theta)
        k = round(-math.log2(finest))
        profiles.append(est.intermediate_profile(tree, [theta], [2.0 ** -i for i in range(1, k + 1)]))
    return profiles


def _profile_outputs(out, profiles):
    columns = ["theta", "delta", "a", "b", "s_star", "cost_below", "cost_above"]
    rows = [
        (e.theta, e.delta, e.a, e.b, e.s, e.cost_below, e.cost_above)
        for prof in profiles for e in prof.rows()
    ]
    lines = out.header() + ["record: theta delta a b s_star cost_below cost_above"]
    lines += [" ".join(fmt(v) for v in row) for row in rows]
    summary = []
    for prof in profiles:
        for theta in prof.thetas:
            summary.append(
                f"theta {fmt(theta)}: s_star in [{fmt(prof.lower[theta])}, "
                f"{fmt(prof.upper[theta])}] over the finest half of the delta grid"
            )
    lines += summary
    out.write("profile.txt", lines)
    out.write_table("profile.csv", columns, rows)
    return summary, columns, rows


def cmd_profile(args) -> int:
    out = Output(args, "profile")
    tree = load_tree(args.input, args.n_max)
    summary, columns, rows = _profile_outputs(out, _profile(tree, parse_thetas(args.theta), args.delta))
    out.show(out.header() + summary, columns, rows)
    return 0


def cmd_estimate(args) -> int:
    out = Output(args, "estimate")
    tree = load_tree(args.input, args.n_max)
    chosen = {k for k in ("dyadic", "box", "lower", "intermediate") if getattr(args, k)}
    if args.all or not chosen:
        chosen = {"dyadic", "box", "lower", "intermediate"}
    counts = est.level_counts(tree)
    summary = out.header() + [f"dim: {tree.dim}", f"n_max: {tree.n_max}"]
    table = []
    values = {}
    if "dyadic" in chosen:
        dd = est.dyadic_dimension(counts, args.burn_in)
        values["dyadic"] = dd.estimate
        out.write("dyadic.txt", out.header() + [
            f"estimate: {fmt(dd.estimate)}", f"burn_in: {dd.burn_in}",
            f"argmin_level: {dd.argmin_level}",
            "trace: " + " ".join(fmt(v) for v in dd.trace),
        ])
        summary.append(f"dyadic_dimension: {fmt(dd.estimate)}")
        summary.append("dyadic_trace: " + " ".join(fmt(v) for v in dd.trace))
        table.append(("dyadic", dd.estimate))
    if "box" in chosen:
        box = est.box_dimension(counts)
        values["box"] = box.slope
        out.write("box.txt", out.header() + [
            f"slope: {fmt(box.slope)}", f"intercept: {fmt(box.intercept)}",
            f"residual_rms_log2: {fmt(box.residual)}",
            f"levels: {box.levels[0]} {box.levels[1]}",
        ])
        summary.append(f"box_dimension: {fmt(box.slope)} (residual {fmt(box.residual)})")
        table.append(("box", box.slope))
    if "lower" in chosen:
        low = est.lower_dimension(tree, burn_in=args.burn_in)
        values["lower"] = low.estimate
        out.write("lower.txt", out.header() + [
            f"estimate: {fmt(low.estimate)}", f"pair: {low.pair[0]} {low.pair[1]}",
            f"witness_level: {low.witness.level}",
            "witness_index: " + " ".join(str(i) for i in low.witness.index),
        ] + [f"slope {a} {b}: {fmt(v)}" for (a, b), v in sorted(low.slopes.items())])
        summary.append(f"lower_dimension: {fmt(low.estimate)}")
        table.append(("lower", low.estimate))
    if "intermediate" in chosen:
        lines, _, _ = _profile_outputs(out, _profile(tree, parse_thetas(args.theta), args.delta))
        summary += lines
    if {"dyadic", "lower", "box"} <= chosen:
        chain = est.ChainCheck(values["dyadic"], values["lower"], values["box"])
        summary.append(f"chain dyadic <= lower <= box: {'holds' if chain.holds else 'fails'}")
    out.write("summary.txt", summary)
    out.show(summary, ["estimator", "value"], table)
    return 0


def _tree_for_measure(args, out) -> tuple[OccupancyTree, Path]:
    """The tree and the file it lives in (written by the caller if new)."""
    path = Path(args.input)
    tree = load_tree(path, args.n_max)
    if path.read_bytes()[:4] == b"DYOT":
        return tree, path
    return tree, out.dir / (path.stem + ".dyot")


def cmd_construct(args) -> int:
    out = Output(args, "construct")
    tree, tree_path = _tree_for_measure(args, out)
    thetas, deltas = parse_thetas(args.theta), parse_delta(args.delta)
    if len(thetas) != 1 or len(deltas) != 1:
        raise InputError("construct takes a single --theta and a single --delta")
    fm = construct(tree, thetas[0], deltas[0], args.s, args.t)
    p = fm.params
    if not tree_path.is_file() or tree_path.read_bytes() != serialize(tree):
        tree_path.write_bytes(serialize(tree))
    rel_tree = os.path.relpath(tree_path.resolve(), out.dir.resolve())
    extra = {"config_hash": out.hash, "tree_path": rel_tree}
    (out.dir / "measure.txt").write_text(dump_measure_text(fm.measure, extra), encoding="utf-8")
    (out.dir / "measure.dyom").write_bytes(dump_measure_binary(fm.measure))
    cover_rows = [
        (c.cube.level, " ".join(str(i) for i in c.cube.index), c.diameter, float(c.mass))
        for c in fm.cover.cubes
    ]
    out.write_table("cover.csv", ["level", "index", "diameter", "mass"], cover_rows)
    lines = out.header() + [
        f"theta: {fmt(p.theta)}", f"delta: {fmt(p.delta)}", f"s: {fmt(p.s)}", f"t: {fmt(p.t)}",
        f"m: {p.m}", f"ell: {p.ell}", f"L: {p.top}",
        f"total_mass_T: {fmt(fm.total_mass)}",
        f"cover_cubes: {len(fm.cover)}",
    ]
    levels = sorted({c.cube.level for c in fm.cover.cubes})
    for lv in levels:
        lines.append(f"cover_level {lv}: {sum(1 for c in fm.cover.cubes if c.cube.level == lv)}")
    counts = est.level_counts(tree)
    if args.burn_in < tree.n_max - 1:
        dd = est.dyadic_dimension(counts, args.burn_in).estimate
        if p.s < dd:
            check = branching_bound(tree, p)
            lines.append(f"branching_bound: {'holds' if check.holds else 'fails'} "
                         f"(worst margin {fmt(check.worst_margin)})")
    lines.append(f"measure: {out.dir / 'measure.txt'}")
    out.write("construct.txt", lines)
    out.show(lines, ["level", "index", "diameter", "mass"], cover_rows)
    return 0


def _report_rows(p, total, reports):
    for r in reports:
        w = r.witness
        yield (
            r.regime, r.samples, r.constant,
            "" if w is None else " ".join(fmt(v) for v in w.x),
            "" if w is None else w.r, "" if w is None else w.mass,
            "" if w is None else w.bound, total, p.theta, p.delta, p.s, p.t,
        )


REPORT_COLUMNS = [
    "regime", "samples", "constant", "witness_x", "witness_r", "witness_mass",
    "bound", "T", "theta", "delta", "s", "t",
]


def cmd_verify(args) -> int:
    out = Output(args, "verify")
    path = Path(args.input)
    if not path.is_file():
        raise InputError(f"input file {path} not found")
    text = path.read_text(encoding="utf-8")
    header = read_measure_header(text)
    tree_path = path.parent / header.get("tree_path", "")
    if not tree_path.is_file():
        raise InputError(f"tree file {tree_path} named by the dump is missing")
    tree = deserialize(tree_path.read_bytes())
    measure = load_measure_text(text, tree)
    fm = FrostmanMeasure(measure, equality_cover(measure), measure.params, header["total_mass"])
    mid, fine = decay_report(fm, args.samples, args.seed)
    p = fm.params
    rows = list(_report_rows(p, fm.total_mass, (mid, fine)))
    lines = out.header()
    for r in (mid, fine):
        lines.append(f"regime: {r.regime}")
        lines.append(f"  shape: {r.shape}")
        lines.append(f"  samples: {r.samples}")
        lines.append(f"  constant: {fmt(r.constant)}")
        if r.witness is not None:
            w = r.witness
            lines.append("  witness.x: " + " ".join(fmt(v) for v in w.x))
            lines.append(f"  witness.r: {fmt(w.r)}")
            lines.append(f"  witness.mass: {fmt(w.mass)}")
            lines.append(f"  bound: {fmt(w.bound)}")
    lines.append(f"T: {fmt(fm.total_mass)}")
    lines.append(f"params: theta={fmt(p.theta)} delta={fmt(p.delta)} s={fmt(p.s)} t={fmt(p.t)}")
    out.write("verify.txt", lines)
    out.write_table("verify.csv", REPORT_COLUMNS, rows)
    out.show(lines, REPORT_COLUMNS, rows)
    return 0


def cmd_stability(args) -> int:
    out = Output(args, "stability")
    tree = load_tree(args.input, args.n_max)
    thetas = parse_thetas(args.theta)
    if len(thetas) != 1:
        raise InputError("stability takes a single --theta")
    rep = constant_stability(
        tree, thetas[0], args.s, args.t, parse_delta(args.delta), args.samples, args.seed
    )
    columns = ["delta", "T", "mid_constant", "fine_constant", "mid_constant_times_T"]
    rows = [
        (r.delta, r.total_mass, r.mid.constant,
         "" if r.fine.empty else r.fine.constant, r.mid.constant * r.total_mass)
        for r in rep.rows
    ]
    lines = out.header() + [
        f"theta: {fmt(rep.theta)}", f"s: {fmt(rep.s)}", f"t: {fmt(rep.t)}",
        "record: delta T mid_constant fine_constant mid_constant_times_T",
    ] + [" ".join(fmt(v) if v != "" else "-" for v in row) for row in rows] + [
        f"mid_ratio: {fmt(rep.mid_ratio)}", f"fine_ratio: {fmt(rep.fine_ratio)}",
        f"mid_trend_slope: {fmt(rep.mid_slope)}", f"fine_trend_slope: {fmt(rep.fine_slope)}",
        f"T_min: {fmt(rep.total_min)}", f"T_decay: {fmt(rep.total_decay)}",
        "cover-sum premise: " + ("failed (T collapses across the grid)"
                                 if rep.premise_failed else "holds"),
    ]
    out.write("stability.txt", lines)
    out.write_table("stability.csv", columns, rows)
    out.show(lines, columns, rows)
    return 0


COMMANDS = {
    "ingest": cmd_ingest, "estimate": cmd_estimate, "profile": cmd_profile,
    "construct": cmd_construct, "verify": cmd_verify, "stability": cmd_stability,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InputError, DomainError, FrostdimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
