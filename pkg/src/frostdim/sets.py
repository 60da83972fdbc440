"""Test sets E and their realisation as occupancy trees.

Four variants are supported:

* :class:`PointCloud` -- points read from a text file.
* :class:`IFS` -- attractor of finitely many similarities of the unit cube.
* :class:`DigitSet` -- numbers whose base-``B`` digits follow a periodic
  pattern of allowed digit sets.
* :class:`SequenceSet` -- ``{n^-p : n >= 1} U {0}`` on the line.

Exactness of :func:`realize` per variant:

* PointCloud: exact for the finite set.
* DigitSet with ``B`` a power of two: exact, decided from the binary digits of
  the cube.  Points whose only expansion ends in an infinite run of maximal
  digits (e.g. ``1/4 = 0.0333..`` in base 4) are attributed to the cube on
  their left, so occupancy at level ``n`` depends on the first ``n`` binary
  digits only.
* IFS and DigitSet with other bases: subdivision until every construction
  piece has diameter below ``2^-n_max``; a leaf cube is occupied iff it meets
  a piece.  This is a superset of the exact occupancy, and exact whenever the
  pieces' extreme corners lie in E (the middle-thirds Cantor set is such a
  case).
* SequenceSet: exact (integer arithmetic for integer ``p``).  The point
  ``1`` is attributed to the last cube.

SetSpec files are YAML documents, for example::

    kind: ifs
    dimension: 1
    maps:
      - {ratio: 1/3, offset: [0]}
      - {ratio: 1/3, offset: [2/3]}

    kind: digits
    base: 4
    pattern: [[0, 3]]

    kind: sequence
    exponent: 1

    kind: points
    path: cloud.txt
    normalize: true

Numbers may be written as ``a/b`` fractions.  In ``pattern`` each entry lists
the allowed digits at one position (the list repeats); for ``dimension > 1``
digits are lists of ``dimension`` integers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Union

import numpy as np
import yaml

from .dyadic import (
    OccupancyTree,
    build_from_batch_oracle,
    build_from_points,
    deinterleave,
    interleave,
)
from .errors import EmptySetError, InputError, PointFileError, SetSpecError

MAX_PIECES = 20_000_000


def _number(value) -> float:
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise SetSpecError(f"not a number: {value!r}") from exc
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SetSpecError(f"not a number: {value!r}")
    return float(value)


@dataclass(frozen=True)
class PointCloud:
    path: str
    normalize: bool = False


@dataclass(frozen=True)
class SimilarityMap:
    """``x -> offset + ratio * R(x)`` with ``R`` flipping flagged axes (``x_i -> 1 - x_i``)."""

    ratio: float
    offset: tuple[float, ...]
    reflect: tuple[bool, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        if not self.reflect:
            object.__setattr__(self, "reflect", (False,) * len(self.offset))
        object.__setattr__(self, "reflect", tuple(bool(v) for v in self.reflect))
        if len(self.reflect) != len(self.offset):
            raise SetSpecError("reflect flags and offset differ in length")
        if not 0.0 < self.ratio < 1.0:
            raise SetSpecError(f"similarity ratio {self.ratio} not in (0,1)")
        for t in self.offset:
            if not 0.0 <= t < 1.0:
                raise SetSpecError(f"offset {self.offset} not in [0,1)^d")
            if self.ratio + t > 1.0 + 1e-12:
                raise SetSpecError(
                    f"map (ratio={self.ratio}, offset={self.offset}) escapes the unit cube"
                )

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        y = np.where(self.reflect, 1.0 - x, x)
        return np.asarray(self.offset) + self.ratio * y


@dataclass(frozen=True)
class IFS:
    maps: tuple[SimilarityMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise SetSpecError("IFS needs at least one map")
        dims = {len(m.offset) for m in self.maps}
        if len(dims) != 1:
            raise SetSpecError("IFS maps disagree on the dimension")

    @property
    def dim(self) -> int:
        return len(self.maps[0].offset)


@dataclass(frozen=True)
class DigitSet:
    base: int
    pattern: tuple[frozenset, ...]
    dim: int = 1

    def __post_init__(self):
        if self.base < 2:
            raise SetSpecError(f"base must be >= 2, got {self.base}")
        if self.dim < 1:
            raise SetSpecError("dimension must be positive")
        pattern = []
        for entry in self.pattern:
            digits = set()
            for dig in entry:
                tup = (dig,) if isinstance(dig, (int, np.integer)) else tuple(dig)
                if len(tup) != self.dim or not all(
                    isinstance(v, (int, np.integer)) and 0 <= v < self.base for v in tup
                ):
                    raise SetSpecError(f"digit {dig!r} invalid for base {self.base}")
                digits.add(tuple(int(v) for v in tup))
            if not digits:
                raise SetSpecError("allowed-digit sets must be nonempty")
            pattern.append(frozenset(digits))
        if not pattern:
            raise SetSpecError("digit pattern is empty")
        object.__setattr__(self, "pattern", tuple(pattern))

    @property
    def is_complete(self) -> bool:
        return all(len(p) == self.base ** self.dim for p in self.pattern)


@dataclass(frozen=True)
class SequenceSet:
    exponent: float

    def __post_init__(self):
        if not self.exponent > 0:
            raise SetSpecError(f"sequence exponent must be positive, got {self.exponent}")

    dim: int = field(default=1, init=False)


SetSpec = Union[PointCloud, IFS, DigitSet, SequenceSet]


# point files --------------------------------------------------------------

@dataclass
class AffineTransform:
    """``x -> (x - shift) * scale`` applied during normalisation."""

    shift: tuple[float, ...]
    scale: float

    def as_dict(self) -> dict:
        return {"shift": list(self.shift), "scale": self.scale}


@dataclass
class IngestedPoints:
    points: np.ndarray
    transform: AffineTransform | None = None


def parse_points(text: str) -> np.ndarray:
    rows = []
    arity = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError:
            raise PointFileError(f"malformed coordinates {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise PointFileError("non-finite coordinate", lineno)
        if arity is None:
            arity = len(row)
        elif len(row) != arity:
            raise PointFileError(
                f"expected {arity} coordinates, found {len(row)}", lineno
            )
        rows.append(row)
    if not rows:
        raise EmptySetError("empty point set")
    return np.asarray(rows, dtype=float)


def normalize_points(points: np.ndarray, n_max: int) -> IngestedPoints:
    """Map the bounding box into ``[0, 1 - eps)^d``, ``eps = 2^-(n_max+1)``.

    A single scale is used for all axes so shapes are preserved.
    """
    eps = 2.0 ** -(n_max + 1)
    lo = points.min(axis=0)
    extent = float((points.max(axis=0) - lo).max())
    scale = (1.0 - 2.0 * eps) / extent if extent > 0 else 1.0
    out = (points - lo) * scale
    out = np.clip(out, 0.0, np.nextafter(1.0 - eps, 0.0))
    return IngestedPoints(out, AffineTransform(tuple(float(v) for v in lo), scale))


def ingest_points(path, normalize: bool = False, n_max: int = 24) -> IngestedPoints:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PointFileError(f"cannot read {path}: {exc}") from exc
    points = parse_points(text)
    if normalize:
        return normalize_points(points, n_max)
    bad = ~np.all((points >= 0.0) & (points < 1.0), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise PointFileError(
            f"point {i} = {tuple(points[i])} outside [0,1)^d (use normalize)"
        )
    return IngestedPoints(points)


# spec files ---------------------------------------------------------------

def spec_from_dict(doc: dict, base_dir: Path | None = None) -> SetSpec:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise SetSpecError("a set spec is a mapping with a 'kind' field")
    kind = str(doc["kind"]).lower()
    try:
        if kind in ("points", "pointcloud"):
            path = Path(doc["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return PointCloud(str(path), bool(doc.get("normalize", False)))
        if kind == "ifs":
            maps = []
            for m in doc["maps"]:
                offset = m["offset"]
                if not isinstance(offset, list):
                    offset = [offset]
                maps.append(
                    SimilarityMap(
                        _number(m["ratio"]),
                        tuple(_number(v) for v in offset),
                        tuple(m.get("reflect", ())),
                    )
                )
            spec = IFS(tuple(maps))
            if "dimension" in doc and int(doc["dimension"]) != spec.dim:
                raise SetSpecError("declared dimension does not match the maps")
            return spec
        if kind in ("digits", "digitset"):
            return DigitSet(
                int(doc["base"]),
                tuple(frozenset(_digit(v) for v in entry) for entry in doc["pattern"]),
                int(doc.get("dimension", 1)),
            )
        if kind in ("sequence", "sequenceset"):
            return SequenceSet(_number(doc["exponent"]))
    except KeyError as exc:
        raise SetSpecError(f"missing field {exc.args[0]!r} for kind {kind!r}") from None
    except TypeError as exc:
        raise SetSpecError(f"malformed {kind} spec: {exc}") from None
    raise SetSpecError(f"unknown set kind {kind!r}")


def _digit(v):
    return tuple(v) if isinstance(v, list) else v


def load_spec(path) -> SetSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise SetSpecError(f"cannot read set spec {path}: {exc}") from exc
    return spec_from_dict(doc, path.parent)


# realisation --------------------------------------------------------------

def realize(spec: SetSpec, n_max: int) -> OccupancyTree:
    if isinstance(spec, PointCloud):
        data = ingest_points(spec.path, spec.normalize, n_max)
        return build_from_points(data.points, n_max)
    if isinstance(spec, DigitSet):
        q = spec.base.bit_length() - 1
        if spec.base == 1 << q:
            return _realize_binary_digits(spec, q, n_max)
        return _realize_pieces(_digit_piece_maps(spec), spec.dim, n_max)
    if isinstance(spec, IFS):
        return _realize_pieces(lambda depth: spec.maps, spec.dim, n_max)
    if isinstance(spec, SequenceSet):
        return _realize_sequence(spec, n_max)
    raise SetSpecError(f"unsupported set spec {spec!r}")


def _realize_binary_digits(spec: DigitSet, q: int, n_max: int) -> OccupancyTree:
    dim = spec.dim
    period = len(spec.pattern)
    # allowed[r][pos] = set of per-axis r-bit digit prefixes, packed into ints
    allowed = {}
    for r in range(1, q + 1):
        for pos, entry in enumerate(spec.pattern):
            packed = {
                sum((dig[i] >> (q - r)) << (r * i) for i in range(dim)) for dig in entry
            }
            allowed[r, pos] = np.fromiter(sorted(packed), dtype=np.uint64)

    def occupied(level, codes):
        idx = deinterleave(codes, dim, level)
        ok = np.ones(codes.shape[0], dtype=bool)
        for k in range((level + q - 1) // q):
            r = min(q, level - k * q)
            shift = np.uint64(level - k * q - r)
            mask = np.uint64((1 << r) - 1)
            packed = np.zeros(codes.shape[0], dtype=np.uint64)
            for i in range(dim):
                part = (idx[:, i] >> shift) & mask
                packed |= part << np.uint64(r * i)
            ok &= np.isin(packed, allowed[r, k % period])
        return ok

    full = None
    if spec.is_complete:
        def full(level, codes):
            return np.ones(codes.shape[0], dtype=bool)

    return build_from_batch_oracle(occupied, n_max, dim, full)


def _digit_piece_maps(spec: DigitSet):
    ratio = 1.0 / spec.base
    per_pos = [
        tuple(
            SimilarityMap(ratio, tuple(v * ratio for v in dig))
            for dig in sorted(entry)
        )
        for entry in spec.pattern
    ]
    return lambda depth: per_pos[depth % len(per_pos)]


def _realize_pieces(maps_at, dim: int, n_max: int) -> OccupancyTree:
    """Subdivide the unit cube until pieces are finer than the leaf grid.

    A piece is ``lo + side * R_F(x)`` for ``x`` in the unit cube, where
    ``R_F`` flips the axes flagged in ``F``.
    """
    h = 2.0 ** -n_max
    lo = np.zeros((1, dim))
    side = np.ones(1)
    flip = np.zeros((1, dim), dtype=bool)
    done_lo, done_side = [], []
    depth = 0
    sqrt_d = math.sqrt(dim)
    while lo.shape[0]:
        small = side * sqrt_d < h
        done_lo.append(lo[small])
        done_side.append(side[small])
        lo, side, flip = lo[~small], side[~small], flip[~small]
        if not lo.shape[0]:
            break
        maps = maps_at(depth)
        if lo.shape[0] * len(maps) > MAX_PIECES:
            raise InputError(
                f"subdivision exceeds {MAX_PIECES} pieces; lower n_max"
            )
        new_lo, new_side, new_flip = [], [], []
        for m in maps:
            t = np.asarray(m.offset)
            refl = np.asarray(m.reflect)
            straight = lo + side[:, None] * t
            flipped = lo + side[:, None] * (1.0 - t - m.ratio)
            new_lo.append(np.where(flip, flipped, straight))
            new_side.append(side * m.ratio)
            new_flip.append(flip ^ refl)
        lo = np.concatenate(new_lo)
        side = np.concatenate(new_side)
        flip = np.concatenate(new_flip)
        depth += 1

    lo = np.concatenate(done_lo)
    side = np.concatenate(done_side)
    top = (1 << n_max) - 1
    first = np.minimum(np.floor(lo / h), top).astype(np.int64)
    last = np.minimum(np.floor((lo + side[:, None]) / h), top).astype(np.int64)
    # pieces are narrower than h, so each axis spans at most two cells
    cells = []
    for corner in itertools.product((0, 1), repeat=dim):
        pick = np.where(np.asarray(corner, dtype=bool), last, first)
        cells.append(pick)
    idx = np.unique(np.concatenate(cells).astype(np.uint64), axis=0)
    codes = np.unique(interleave(idx, n_max))
    return _tree_from_leaves(codes, dim, n_max)


def _tree_from_leaves(codes: np.ndarray, dim: int, n_max: int) -> OccupancyTree:
    levels = [None] * (n_max + 1)
    levels[n_max] = np.unique(codes)
    for n in range(n_max - 1, -1, -1):
        levels[n] = np.unique(levels[n + 1] >> np.uint64(dim))
    return OccupancyTree.from_levels(dim, n_max, levels)


def sequence_leaf_indices(p: float, n_max: int) -> np.ndarray:
    """Indices ``j`` of the level-``n_max`` cells meeting ``{k^-p} U {0}``."""
    size = 1 << n_max
    cells = {0}
    integral = float(p).is_integer()
    pi = int(p)
    k = 1
    while True:
        if integral:
            j = size // (k ** pi)
            # k^-p - (k+1)^-p <= 2^-n_max, in integers
            dense = size * ((k + 1) ** pi - k ** pi) <= (k * (k + 1)) ** pi
        else:
            j = int(math.floor(size * k ** (-p)))
            dense = size * (k ** (-p) - (k + 1) ** (-p)) <= 1.0
        cells.add(min(j, size - 1))
        if dense:
            # later gaps are smaller still, so no cell in [0, x_k] is skipped
            cells.update(range(min(j, size - 1) + 1))
            break
        k += 1
    return np.fromiter(sorted(cells), dtype=np.uint64)


def _realize_sequence(spec: SequenceSet, n_max: int) -> OccupancyTree:
    return _tree_from_leaves(sequence_leaf_indices(spec.exponent, n_max), 1, n_max)
