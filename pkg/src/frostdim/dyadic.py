"""Dyadic cubes of [0,1)^d and pruned occupancy trees.

A cube at level ``n`` with integer index ``k = (k_1, ..., k_d)`` is the
half-open box ``prod_i [k_i 2^-n, (k_i + 1) 2^-n)``.  Inside a tree, cubes are
addressed by their Morton code: bit ``b*d + i`` of the code is bit ``b`` of
``k_i``.  With this layout ``parent = code >> d`` and the ``j``-th child is
``(code << d) | j``, so navigation is plain integer arithmetic.

Occupancy trees are stored in pruned form.  A cube is *full* when every one
of its descendants down to ``n_max`` is occupied; only the coarsest full cubes
(full roots) are stored, and their subtrees are implicit.  The remaining
occupied cubes (*partial* cubes) are stored level by level, in sorted code
order, together with their occupied-children count.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    DomainError,
    EmptySetError,
    InputError,
    MonotonicityError,
    NoParentError,
    PointRangeError,
    TruncatedStreamError,
    VersionMismatchError,
)

MAX_CODE_BITS = 62

MAGIC = b"DYOT"
FORMAT_VERSION = 1

_EMPTY = np.zeros(0, dtype=np.uint64)


def interleave(indices: np.ndarray, level: int) -> np.ndarray:
    """Morton-encode an ``(N, d)`` array of per-axis indices at ``level``."""
    indices = np.asarray(indices, dtype=np.uint64)
    if indices.ndim == 1:
        indices = indices[:, None]
    dim = indices.shape[1]
    codes = np.zeros(indices.shape[0], dtype=np.uint64)
    one = np.uint64(1)
    for b in range(level):
        for i in range(dim):
            bit = (indices[:, i] >> np.uint64(b)) & one
            codes |= bit << np.uint64(b * dim + i)
    return codes


def deinterleave(codes: np.ndarray, dim: int, level: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    out = np.zeros((codes.shape[0], dim), dtype=np.uint64)
    one = np.uint64(1)
    for b in range(level):
        for i in range(dim):
            bit = (codes >> np.uint64(b * dim + i)) & one
            out[:, i] |= bit << np.uint64(b)
    return out


def _encode_one(index: Sequence[int], level: int) -> int:
    dim = len(index)
    code = 0
    for b in range(level):
        for i, k in enumerate(index):
            code |= ((k >> b) & 1) << (b * dim + i)
    return code


def _decode_one(code: int, dim: int, level: int) -> tuple[int, ...]:
    index = [0] * dim
    for b in range(level):
        for i in range(dim):
            index[i] |= ((code >> (b * dim + i)) & 1) << b
    return tuple(index)


@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise DomainError(f"negative level {self.level}")
        index = tuple(int(k) for k in self.index)
        object.__setattr__(self, "index", index)
        side = 1 << self.level
        for k in index:
            if not 0 <= k < side:
                raise DomainError(f"index {index} out of range at level {self.level}")

    @classmethod
    def root(cls, dim: int) -> DyadicCube:
        return cls(0, (0,) * dim)

    @classmethod
    def from_code(cls, level: int, code: int, dim: int) -> DyadicCube:
        return cls(level, _decode_one(int(code), dim, level))

    @classmethod
    def containing(cls, point: Sequence[float], level: int) -> DyadicCube:
        scale = 1 << level
        index = []
        for x in point:
            if not 0.0 <= x < 1.0:
                raise DomainError(f"point {tuple(point)} outside [0,1)^d")
            index.append(min(int(math.floor(x * scale)), scale - 1))
        return cls(level, tuple(index))

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def code(self) -> int:
        return _encode_one(self.index, self.level)

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @property
    def diameter(self) -> float:
        return math.sqrt(self.dim) * 2.0 ** -self.level

    @property
    def lower(self) -> tuple[float, ...]:
        return tuple(k * self.side for k in self.index)

    @property
    def center(self) -> tuple[float, ...]:
        return tuple((k + 0.5) * self.side for k in self.index)

    def parent(self) -> DyadicCube:
        if self.level == 0:
            raise NoParentError("the level-0 cube has no parent")
        return DyadicCube(self.level - 1, tuple(k >> 1 for k in self.index))

    def ancestor(self, i: int) -> DyadicCube:
        """The unique cube ``i`` levels up that contains this one."""
        if i < 0 or i > self.level:
            raise NoParentError(f"no ancestor {i} levels above level {self.level}")
        return DyadicCube(self.level - i, tuple(k >> i for k in self.index))

    def child(self, j: int) -> DyadicCube:
        if not 0 <= j < (1 << self.dim):
            raise DomainError(f"child index {j} out of range for d={self.dim}")
        return DyadicCube(
            self.level + 1,
            tuple(2 * k + ((j >> i) & 1) for i, k in enumerate(self.index)),
        )

    def children(self) -> list[DyadicCube]:
        return [self.child(j) for j in range(1 << self.dim)]

    def contains(self, point: Sequence[float]) -> bool:
        s = self.side
        return all(k * s <= x < (k + 1) * s for k, x in zip(self.index, point))

    def distance_to(self, point: Sequence[float]) -> float:
        """Euclidean distance from ``point`` to the closure of the cube."""
        s = self.side
        acc = 0.0
        for k, x in zip(self.index, point):
            lo, hi = k * s, (k + 1) * s
            gap = lo - x if x < lo else (x - hi if x > hi else 0.0)
            acc += gap * gap
        return math.sqrt(acc)

    def __str__(self) -> str:
        return f"Q(level={self.level}, k={self.index})"


def parent(q: DyadicCube) -> DyadicCube:
    return q.parent()


def ancestor(q: DyadicCube, i: int) -> DyadicCube:
    return q.ancestor(i)


def _member(arr: np.ndarray, code: int) -> int:
    """Position of ``code`` in the sorted array ``arr`` or -1."""
    pos = int(np.searchsorted(arr, np.uint64(code)))
    if pos < arr.shape[0] and int(arr[pos]) == code:
        return pos
    return -1


def _members(arr: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Vectorised :func:`_member`."""
    if arr.shape[0] == 0:
        return np.full(codes.shape[0], -1, dtype=np.int64)
    pos = np.searchsorted(arr, codes)
    clipped = np.minimum(pos, arr.shape[0] - 1)
    hit = arr[clipped] == codes
    return np.where(hit, clipped, -1).astype(np.int64)


class OccupancyTree:
    """Immutable record of which dyadic cubes meet a set ``E``.

    Parameters
    ----------
    dim, n_max:
        Ambient dimension and deepest stored level.
    partial:
        ``partial[n]`` holds the sorted Morton codes of occupied level-``n``
        cubes that are not full.
    branching:
        ``branching[n][i]`` is the number of occupied children of
        ``partial[n][i]``.
    full:
        ``full[n]`` holds the sorted codes of full roots at level ``n``.

    Use :meth:`from_levels`, :func:`build_from_points` or
    :func:`build_from_oracle` rather than the raw constructor; they produce
    the canonical pruned form.
    """

    def __init__(self, dim, n_max, partial, branching, full):
        self.dim = int(dim)
        self.n_max = int(n_max)
        self.partial = tuple(np.asarray(a, dtype=np.uint64) for a in partial)
        self.branching = tuple(np.asarray(a, dtype=np.uint8) for a in branching)
        self.full = tuple(np.asarray(a, dtype=np.uint64) for a in full)
        for arr in self.partial + self.branching + self.full:
            arr.setflags(write=False)
        if len(self.partial) != self.n_max + 1 or len(self.full) != self.n_max + 1:
            raise InputError("per-level arrays must cover levels 0..n_max")

    # construction -----------------------------------------------------

    @classmethod
    def from_levels(
        cls,
        dim: int,
        n_max: int,
        levels: Sequence[np.ndarray],
        full_roots: Sequence[np.ndarray] | None = None,
    ) -> OccupancyTree:
        """Canonicalise explicit per-level occupancy into pruned form.

        ``levels[n]`` lists occupied codes at level ``n``; cubes listed in
        ``full_roots[n]`` are known to be full and their descendants need not
        (and must not) appear in deeper levels.
        """
        _check_shape(dim, n_max)
        d = np.uint64(dim)
        nchild = 1 << dim
        occ = [np.unique(np.asarray(a, dtype=np.uint64)) for a in levels]
        if len(occ) != n_max + 1:
            raise InputError("need one code array per level 0..n_max")
        if occ[0].shape[0] == 0:
            raise EmptySetError("empty point set")
        marked = [
            np.zeros(a.shape[0], dtype=bool) for a in occ
        ]
        if full_roots is not None:
            for n, roots in enumerate(full_roots):
                roots = np.asarray(roots, dtype=np.uint64)
                if roots.shape[0]:
                    pos = _members(occ[n], roots)
                    if np.any(pos < 0):
                        raise InputError("full root missing from its level")
                    marked[n][pos] = True

        is_full = [None] * (n_max + 1)
        is_full[n_max] = np.ones(occ[n_max].shape[0], dtype=bool)
        counts = [None] * (n_max + 1)
        for n in range(n_max - 1, -1, -1):
            child = occ[n + 1]
            pidx = _members(occ[n], child >> d)
            if np.any(pidx < 0):
                bad = int(child[np.argmax(pidx < 0)])
                raise InputError(
                    f"occupancy not upward-closed at level {n + 1} (code {bad})"
                )
            counts[n] = np.bincount(pidx, minlength=occ[n].shape[0])
            nfull = np.bincount(pidx, weights=is_full[n + 1], minlength=occ[n].shape[0])
            is_full[n] = marked[n] | (nfull == nchild)

        partial, branching, full = [], [], []
        parent_full = np.zeros(1, dtype=bool)
        for n in range(n_max + 1):
            if n == 0:
                pf = np.zeros(occ[0].shape[0], dtype=bool)
            else:
                pidx = _members(occ[n - 1], occ[n] >> d)
                pf = parent_full[pidx]
            keep = ~pf
            part = keep & ~is_full[n]
            partial.append(occ[n][part])
            if n < n_max:
                b = counts[n][part]
                if np.any(b == 0):
                    raise InputError(f"occupied cube without children at level {n}")
                branching.append(b.astype(np.uint8))
            full.append(occ[n][keep & is_full[n]])
            parent_full = pf | is_full[n]
        branching.append(np.zeros(0, dtype=np.uint8))
        return cls(dim, n_max, partial, branching, full)

    # basic queries ----------------------------------------------------

    def full_root_level(self, level: int, code: int) -> int | None:
        """Level of the full root containing (level, code), if any."""
        for j in range(level + 1):
            arr = self.full[j]
            if arr.shape[0] and _member(arr, code >> (self.dim * (level - j))) >= 0:
                return j
        return None

    def _check_cube(self, q: DyadicCube) -> None:
        if q.dim != self.dim:
            raise DomainError(f"cube dimension {q.dim} != tree dimension {self.dim}")
        if q.level > self.n_max:
            raise DomainError(f"level {q.level} exceeds n_max={self.n_max}")

    def is_occupied(self, q: DyadicCube) -> bool:
        self._check_cube(q)
        code = q.code
        if _member(self.partial[q.level], code) >= 0:
            return True
        return self.full_root_level(q.level, code) is not None

    def occupied_children_count(self, q: DyadicCube) -> int:
        self._check_cube(q)
        if q.level >= self.n_max:
            raise DomainError(f"{q} is at the leaf level; it has no children")
        code = q.code
        pos = _member(self.partial[q.level], code)
        if pos >= 0:
            return int(self.branching[q.level][pos])
        if self.full_root_level(q.level, code) is not None:
            return 1 << self.dim
        raise DomainError(f"{q} is not occupied")

    def children(self, q: DyadicCube) -> list[DyadicCube]:
        """Occupied children of ``q`` (empty for unoccupied or leaf cubes)."""
        if q.level >= self.n_max:
            return []
        return [c for c in q.children() if self.is_occupied(c)]

    def level_count(self, n: int) -> int:
        """Number of occupied cubes at level ``n`` (exact, arbitrary size)."""
        total = int(self.partial[n].shape[0])
        for j in range(n + 1):
            total += int(self.full[j].shape[0]) << (self.dim * (n - j))
        return total

    def min_branching(self, n: int) -> int:
        if not 0 <= n < self.n_max:
            raise DomainError(f"level {n} has no children inside the tree")
        candidates = []
        if self.partial[n].shape[0]:
            candidates.append(int(self.branching[n].min()))
        if any(self.full[j].shape[0] for j in range(n + 1)):
            candidates.append(1 << self.dim)
        return min(candidates)

    def has_full_at(self, n: int) -> bool:
        return any(self.full[j].shape[0] for j in range(n + 1))

    def occupied_codes(self, n: int, limit: int = 5_000_000) -> np.ndarray:
        """Sorted codes of all occupied level-``n`` cubes, full subtrees expanded."""
        count = self.level_count(n)
        if count > limit:
            raise DomainError(
                f"level {n} holds {count} occupied cubes; refusing to materialise"
            )
        parts = [self.partial[n]]
        for j in range(n + 1):
            roots = self.full[j]
            if roots.shape[0]:
                shift = self.dim * (n - j)
                span = np.arange(1 << shift, dtype=np.uint64)
                parts.append(((roots[:, None] << np.uint64(shift)) + span[None, :]).ravel())
        return np.sort(np.concatenate(parts))

    def cubes(self, n: int) -> Iterator[DyadicCube]:
        for code in self.occupied_codes(n):
            yield DyadicCube.from_code(n, int(code), self.dim)

    def iter_levels(self) -> Iterable[int]:
        return range(self.n_max + 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyTree):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.n_max == other.n_max
            and all(np.array_equal(a, b) for a, b in zip(self.partial, other.partial))
            and all(np.array_equal(a, b) for a, b in zip(self.branching, other.branching))
            and all(np.array_equal(a, b) for a, b in zip(self.full, other.full))
        )

    def __repr__(self) -> str:
        return (
            f"OccupancyTree(dim={self.dim}, n_max={self.n_max}, "
            f"leaves={self.level_count(self.n_max)})"
        )


def _check_shape(dim: int, n_max: int) -> None:
    if dim < 1:
        raise InputError(f"dimension must be positive, got {dim}")
    if n_max < 1:
        raise InputError(f"n_max must be >= 1, got {n_max}")
    if dim * n_max > MAX_CODE_BITS:
        raise InputError(
            f"d * n_max = {dim * n_max} exceeds the {MAX_CODE_BITS}-bit code budget"
        )


def build_from_points(points, n_max: int) -> OccupancyTree:
    """Occupancy of the cubes containing at least one of ``points``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise EmptySetError("empty point set")
    dim = pts.shape[1]
    _check_shape(dim, n_max)
    bad = ~np.all((pts >= 0.0) & (pts < 1.0), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise PointRangeError(i, pts[i])
    # scaling by a power of two is exact, so floor() respects half-open cubes
    idx = np.floor(np.ldexp(pts, n_max)).astype(np.uint64)
    codes = np.unique(interleave(idx, n_max))
    levels = [None] * (n_max + 1)
    levels[n_max] = codes
    d = np.uint64(dim)
    for n in range(n_max - 1, -1, -1):
        levels[n] = np.unique(levels[n + 1] >> d)
    return OccupancyTree.from_levels(dim, n_max, levels)


BatchOracle = Callable[[int, np.ndarray], np.ndarray]


def build_from_batch_oracle(
    occupied: BatchOracle,
    n_max: int,
    dim: int,
    full: BatchOracle | None = None,
) -> OccupancyTree:
    """Top-down construction from vectorised predicates.

    ``occupied(level, codes)`` and ``full(level, codes)`` return boolean masks.
    Only children of accepted, non-full cubes are queried.
    """
    _check_shape(dim, n_max)
    root = np.zeros(1, dtype=np.uint64)
    if not bool(np.asarray(occupied(0, root))[0]):
        raise EmptySetError("oracle rejects the root cube: E is empty")
    levels = [root]
    roots = [np.asarray(full(0, root), dtype=bool) if full else np.zeros(1, bool)]
    roots[0] = root[roots[0]]
    frontier = root if roots[0].shape[0] == 0 else _EMPTY
    nchild = 1 << dim
    offsets = np.arange(nchild, dtype=np.uint64)
    for n in range(1, n_max + 1):
        cand = ((frontier[:, None] << np.uint64(dim)) | offsets[None, :]).ravel()
        if cand.shape[0]:
            keep = np.asarray(occupied(n, cand), dtype=bool)
            cand = cand[keep]
        lvl = cand
        if full is not None and lvl.shape[0] and n < n_max:
            fmask = np.asarray(full(n, lvl), dtype=bool)
        else:
            fmask = np.zeros(lvl.shape[0], dtype=bool)
        levels.append(lvl)
        roots.append(lvl[fmask])
        frontier = lvl[~fmask]
    return OccupancyTree.from_levels(dim, n_max, levels, roots)


def build_from_oracle(
    oracle: Callable[[DyadicCube], bool],
    n_max: int,
    dim: int = 1,
    full: Callable[[DyadicCube], bool] | None = None,
    check_monotone: bool = True,
) -> OccupancyTree:
    """Exact tree for a set described by a per-cube occupancy predicate.

    The oracle must be monotone (an occupied child implies an occupied
    parent).  With ``check_monotone`` the children of every rejected cube
    whose parent was accepted are probed once, and a violation raises
    :class:`MonotonicityError` naming both cubes.  ``full`` optionally flags
    cubes contained in ``E`` so their subtrees are never enumerated.
    """

    def batch(level, codes):
        out = np.empty(codes.shape[0], dtype=bool)
        for i, c in enumerate(codes):
            q = DyadicCube.from_code(level, int(c), dim)
            ok = bool(oracle(q))
            if not ok and check_monotone and level < n_max:
                for ch in q.children():
                    if oracle(ch):
                        raise MonotonicityError(q, ch)
            out[i] = ok
        return out

    fbatch = None
    if full is not None:
        def fbatch(level, codes):
            return np.array(
                [bool(full(DyadicCube.from_code(level, int(c), dim))) for c in codes],
                dtype=bool,
            )

    return build_from_batch_oracle(batch, n_max, dim, fbatch)


def occupied_children_count(tree: OccupancyTree, q: DyadicCube) -> int:
    return tree.occupied_children_count(q)


# serialization ----------------------------------------------------------

def serialize(tree: OccupancyTree) -> bytes:
    """Binary tree file.

    Layout (little endian): ``DYOT``, u16 version, u8 d, u8 n_max; then per
    level: u64 partial count, the partial codes as u64, one u8 child count per
    partial code (omitted at n_max), u64 full-root count, the full-root codes
    as u64.  A CRC32 of everything before it closes the stream.
    """
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HBB", FORMAT_VERSION, tree.dim, tree.n_max)
    for n in range(tree.n_max + 1):
        part = tree.partial[n]
        out += struct.pack("<Q", part.shape[0])
        out += part.astype("<u8").tobytes()
        if n < tree.n_max:
            out += tree.branching[n].astype(np.uint8).tobytes()
        roots = tree.full[n]
        out += struct.pack("<Q", roots.shape[0])
        out += roots.astype("<u8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStreamError(
                f"stream ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> OccupancyTree:
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise BadMagicError("not a DYOT tree stream")
    version, dim, n_max = r.unpack("<HBB")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"tree format version {version}; this reader supports {FORMAT_VERSION}"
        )
    partial, branching, full = [], [], []
    for n in range(n_max + 1):
        (count,) = r.unpack("<Q")
        partial.append(np.frombuffer(r.take(8 * count), dtype="<u8").astype(np.uint64))
        if n < n_max:
            branching.append(np.frombuffer(r.take(count), dtype=np.uint8).copy())
        else:
            branching.append(np.zeros(0, dtype=np.uint8))
        (count,) = r.unpack("<Q")
        full.append(np.frombuffer(r.take(8 * count), dtype="<u8").astype(np.uint64))
    body_end = r.pos
    (crc,) = r.unpack("<I")
    if crc != zlib.crc32(r.data[:body_end]) & 0xFFFFFFFF:
        raise ChecksumError("CRC32 mismatch: tree stream is corrupted")
    if r.pos != len(r.data):
        raise ChecksumError("trailing bytes after CRC32")
    return OccupancyTree(dim, n_max, partial, branching, full)
