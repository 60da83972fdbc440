"""Dyadic mass cascade producing (delta, s, t)-Frostman measures.

Given ``theta``, ``delta`` and ``t`` the construction works between two
levels: ``m`` (cube side about ``delta^(1/theta)``) and ``L = m - ell`` (cube
diameter just below ``delta``).

1. Every occupied level-``m`` cube receives mass ``2^(-m t)``; below level
   ``m`` mass splits evenly among occupied children.
2. Going from level ``m - 1`` up to ``L``, a cube whose aggregated mass
   exceeds ``2^(-j t)`` is capped at that value and its mass is spread evenly
   again below it.
3. Cubes whose aggregate reaches the cap are *saturated*; the coarsest
   saturated cubes form the equality cover.
4. Dividing by the total mass ``T`` of the level-``L`` layer gives a
   probability measure.

The cascade is evaluated once, fine to coarse, storing each cube's final
mass at its own level.  A finer cube's mass is then recovered from its
coarsest *capped* ancestor (strictly over the cap, or level ``m``) by even
splitting.  :func:`literal_cascade` recomputes every intermediate measure
from the case-split definitions and serves as an oracle for the fast path.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .dyadic import DyadicCube, OccupancyTree, _member, _members, serialize
from .errors import (
    DomainError,
    InfeasibleParamsError,
    InputError,
    TreeFormatError,
    VersionMismatchError,
    ChecksumError,
    TruncatedStreamError,
)

_EPS = 1e-9


@dataclass(frozen=True)
class FrostmanParams:
    theta: float
    delta: float
    s: float
    t: float
    dim: int
    m: int
    top: int   # L = m - ell

    @property
    def ell(self) -> int:
        return self.m - self.top

    @property
    def fine_scale(self) -> float:
        """``delta^(1/theta)``."""
        return self.delta ** (1.0 / self.theta)

    def as_dict(self) -> dict:
        return {
            "theta": self.theta, "delta": self.delta, "s": self.s, "t": self.t,
            "dim": self.dim, "m": self.m, "top": self.top,
        }


def derive_params(theta, delta, s, t, tree: OccupancyTree) -> FrostmanParams:
    """Levels ``m`` and ``L`` for the given scale parameters.

    ``m`` is the integer with ``2^(-m-1) < delta^(1/theta) <= 2^-m`` and ``L``
    the smallest level with ``sqrt(d) 2^-L <= delta``.
    """
    theta, delta, s, t = float(theta), float(delta), float(s), float(t)
    if not 0.0 < theta <= 1.0:
        raise InfeasibleParamsError(f"theta must lie in (0, 1], got {theta}")
    if not 0.0 < delta < 1.0:
        raise InfeasibleParamsError(f"delta must lie in (0, 1), got {delta}")
    if not (s > 0 and t > 0):
        raise InfeasibleParamsError("s and t must be positive")
    if s > t:
        raise InfeasibleParamsError(f"s = {s} exceeds t = {t}; need s <= t")
    x = -math.log2(delta) / theta
    m = round(x) if abs(x - round(x)) < _EPS else math.floor(x)
    y = 0.5 * math.log2(tree.dim) - math.log2(delta)
    top = round(y) if abs(y - round(y)) < _EPS else math.ceil(y)
    top = max(top, 0)
    if m > tree.n_max:
        raise InfeasibleParamsError(
            f"level m = {m} exceeds the tree depth n_max = {tree.n_max}; "
            f"realize the set with n_max >= {m}"
        )
    if top > m:
        raise InfeasibleParamsError(
            f"no level between delta^(1/theta) and delta once cube diameters carry "
            f"the sqrt(d) factor (L = {top} > m = {m}); decrease theta or delta"
        )
    return FrostmanParams(theta, delta, s, t, tree.dim, m, top)


def _caps(params: FrostmanParams, exact: bool):
    levels = range(params.top, params.m + 1)
    if not exact:
        return {j: 2.0 ** (-j * params.t) for j in levels}
    t = Fraction(params.t)
    if t.denominator != 1:
        raise InputError("exact cascades need an integer exponent t")
    k = int(t)
    return {j: Fraction(1, 2 ** (j * k)) for j in levels}


@dataclass
class CascadeMeasure:
    """Final per-level masses of the capped cascade.

    ``f[j]``, ``sat[j]`` and ``capped[j]`` are aligned with
    ``tree.partial[j]`` for ``L <= j <= m``; ``full_f[j]`` etc. give the
    common values of every cube at level ``j`` inside a full subtree.
    ``scale`` is 1 before and ``1/T`` after :func:`normalize`.
    """

    tree: OccupancyTree
    params: FrostmanParams
    f: dict
    sat: dict
    capped: dict
    full_f: dict
    full_sat: dict
    full_capped: dict
    exact: bool = False
    scale: object = 1
    total: object = field(init=False)

    def __post_init__(self):
        self._build_tables()

    # mass tables ------------------------------------------------------

    def _build_tables(self):
        tree, p = self.tree, self.params
        d = np.uint64(tree.dim)
        L, m = p.top, p.m
        obj = self.exact
        n_full_top = sum(
            int(tree.full[j].shape[0]) << (tree.dim * (L - j)) for j in range(L + 1)
        )
        part_sum = sum(self.f[L].tolist()) if self.f[L].shape[0] else 0
        self.total = part_sum + n_full_top * self.full_f[L]

        mass = {L: self.f[L]}
        uni = {L: self.capped[L] | (L == m)}
        root_state = {}
        for n in range(L, tree.n_max):
            pidx = _members(tree.partial[n], tree.partial[n + 1] >> d)
            b = tree.branching[n].astype(object if obj else float)
            pm, pu, pb = mass[n][pidx], uni[n][pidx], b[pidx]
            if n + 1 <= m:
                mass[n + 1] = np.where(pu, pm / pb if pidx.shape[0] else pm, self.f[n + 1])
                uni[n + 1] = pu | self.capped[n + 1]
            else:
                mass[n + 1] = pm / pb if pidx.shape[0] else pm
                uni[n + 1] = np.ones(pidx.shape[0], dtype=bool)
            roots = tree.full[n + 1]
            if roots.shape[0]:
                ridx = _members(tree.partial[n], roots >> d)
                rm, ru, rb = mass[n][ridx], uni[n][ridx], b[ridx]
                own = self.full_f.get(n + 1, 0)
                own_c = self.full_capped.get(n + 1, True)
                root_state[n + 1] = (np.where(ru, rm / rb, own), ru | own_c)
        self._mass = mass
        self._uniform = uni
        self._root_state = root_state
        top_codes = tree.partial[L]
        self._top_cum = np.concatenate(
            [np.zeros(1, dtype=object if obj else float), np.cumsum(self.f[L])]
        ) if top_codes.shape[0] else np.zeros(1)

    def _full_mass(self, root_level: int, root_index: int | None, level: int):
        """Mass of a level-``level`` cube inside a full subtree."""
        p = self.params
        if root_level <= p.top:
            start, m0, u = p.top, self.full_f[p.top], bool(self.full_capped[p.top])
        else:
            ms, us = self._root_state[root_level]
            start, m0, u = root_level, ms[root_index], bool(us[root_index])
        split = 1 << self.tree.dim
        mass = m0
        for k in range(start + 1, level + 1):
            if u:
                mass = mass / split
            else:
                mass = self.full_f[k]
                u = bool(self.full_capped[k])
        return mass

    def _raw_mass(self, level: int, code: int):
        tree, p = self.tree, self.params
        if level > tree.n_max:
            raise DomainError(f"level {level} exceeds n_max={tree.n_max}")
        zero = Fraction(0) if self.exact else 0.0
        if level >= p.top:
            pos = _member(tree.partial[level], code)
            if pos >= 0:
                return self._mass[level][pos]
            j0 = tree.full_root_level(level, code)
            if j0 is None:
                return zero
            ridx = None
            if j0 > p.top:
                ridx = _member(tree.full[j0], code >> (tree.dim * (level - j0)))
            return self._full_mass(j0, ridx, level)
        # coarser than L: add up the level-L layer
        d = tree.dim
        shift = d * (p.top - level)
        j0 = tree.full_root_level(level, code)
        if j0 is not None:
            return (1 << shift) * self.full_f[p.top]
        lo, hi = code << shift, (code + 1) << shift
        codes = tree.partial[p.top]
        i0 = int(np.searchsorted(codes, np.uint64(lo)))
        i1 = int(np.searchsorted(codes, np.uint64(hi)))
        total = self._top_cum[i1] - self._top_cum[i0] if i1 > i0 else zero
        for j in range(level + 1, p.top + 1):
            roots = tree.full[j]
            if roots.shape[0]:
                s = d * (j - level)
                k0 = int(np.searchsorted(roots, np.uint64(code << s)))
                k1 = int(np.searchsorted(roots, np.uint64((code + 1) << s)))
                if k1 > k0:
                    total = total + (k1 - k0) * (1 << (d * (p.top - j))) * self.full_f[p.top]
        return total

    def _table_entry(self, level: int, code: int):
        p, tree = self.params, self.tree
        if not p.top <= level <= p.m:
            raise DomainError(f"cascade tables cover levels {p.top}..{p.m}, not {level}")
        pos = _member(tree.partial[level], code)
        if pos >= 0:
            return self.f[level][pos], bool(self.sat[level][pos]), bool(self.capped[level][pos])
        if tree.full_root_level(level, code) is None:
            raise DomainError(f"cube ({level}, {code}) is not occupied")
        return self.full_f[level], self.full_sat[level], self.full_capped[level]

    def final_mass(self, cube: DyadicCube):
        """``f_j`` of an occupied cube at level ``j`` in ``[L, m]`` (un-normalised)."""
        return self._table_entry(cube.level, cube.code)[0]

    def saturated(self, cube: DyadicCube) -> bool:
        return self._table_entry(cube.level, cube.code)[1]

    def cube_mass(self, cube: DyadicCube):
        """Mass of any dyadic cube (after normalisation, if applied)."""
        return self._raw_mass(cube.level, cube.code) * self.scale

    def mass_by_code(self, level: int, code: int):
        return self._raw_mass(level, int(code)) * self.scale

    @property
    def normalized(self) -> bool:
        return self.scale != 1 or self.total == 1


def run_cascade(tree: OccupancyTree, params: FrostmanParams, exact: bool = False) -> CascadeMeasure:
    """Fine-to-coarse capping pass from level ``m`` to level ``L``."""
    if params.m > tree.n_max or params.dim != tree.dim:
        raise InfeasibleParamsError("parameters do not match this tree")
    caps = _caps(params, exact)
    d = np.uint64(tree.dim)
    nchild = 1 << tree.dim
    dtype = object if exact else float
    L, m = params.top, params.m

    f, sat, capped = {}, {}, {}
    n_m = tree.partial[m].shape[0]
    f[m] = np.full(n_m, caps[m], dtype=dtype)
    sat[m] = np.ones(n_m, dtype=bool)
    capped[m] = np.ones(n_m, dtype=bool)
    full_f = {m: caps[m]}
    full_sat = {m: True}
    full_capped = {m: True}
    for j in range(m - 1, L - 1, -1):
        parents = tree.partial[j]
        size = parents.shape[0]
        idx = _members(parents, tree.partial[j + 1] >> d)
        agg = np.zeros(size, dtype=dtype)
        if exact:
            agg[:] = 0
            np.add.at(agg, idx, f[j + 1])
        elif idx.shape[0]:
            agg += np.bincount(idx, weights=f[j + 1], minlength=size)
        roots = tree.full[j + 1]
        if roots.shape[0]:
            nfull = np.bincount(_members(parents, roots >> d), minlength=size)
            agg = agg + (nfull.astype(object) if exact else nfull) * full_f[j + 1]
        cap = caps[j]
        sat[j] = np.array([v >= cap for v in agg], dtype=bool) if exact else agg >= cap
        capped[j] = np.array([v > cap for v in agg], dtype=bool) if exact else agg > cap
        f[j] = np.where(sat[j], cap, agg).astype(dtype) if size else agg
        full_agg = nchild * full_f[j + 1]
        full_sat[j] = bool(full_agg >= cap)
        full_capped[j] = bool(full_agg > cap)
        full_f[j] = cap if full_sat[j] else full_agg
    return CascadeMeasure(tree, params, f, sat, capped, full_f, full_sat, full_capped, exact)


def leaf_mass(measure: CascadeMeasure, q: DyadicCube):
    """Mass of an occupied cube at level ``>= L``; zero off the support."""
    if q.level > measure.tree.n_max:
        raise DomainError(f"level {q.level} exceeds n_max={measure.tree.n_max}")
    if q.level < measure.params.top:
        raise DomainError(
            f"leaf_mass needs level >= L = {measure.params.top}; use cube_mass"
        )
    return measure.cube_mass(q)


def normalize(measure: CascadeMeasure) -> tuple[CascadeMeasure, object]:
    """Scale by ``1/T``; returns the normalised measure and ``T``."""
    total = measure.total
    if not total > 0:
        raise DomainError("cascade carries no mass")
    scale = (Fraction(1) / total) if measure.exact else 1.0 / total
    return replace(measure, scale=scale), total


@dataclass(frozen=True)
class CoverCube:
    cube: DyadicCube
    mass: object      # un-normalised cascade mass (the cap of its level)

    @property
    def diameter(self) -> float:
        return self.cube.diameter


@dataclass(frozen=True)
class EqualityCover:
    cubes: tuple[CoverCube, ...]

    @property
    def total(self):
        return sum(c.mass for c in self.cubes)

    def __len__(self):
        return len(self.cubes)


def equality_cover(measure: CascadeMeasure, limit: int = 5_000_000) -> EqualityCover:
    """Maximal saturated cubes, found by a top-down walk from level ``L``."""
    tree, p = measure.tree, measure.params
    dim = tree.dim
    d = np.uint64(dim)
    out = []
    active = tree.partial[p.top]
    # full subtrees entered while every ancestor in [L, start) was unsaturated
    full_active = [
        (j0, int(c), p.top) for j0 in range(p.top + 1) for c in tree.full[j0]
    ]
    for j in range(p.top, p.m + 1):
        if active.shape[0]:
            pos = _members(tree.partial[j], active)
            hit = measure.sat[j][pos]
            for code, fval in zip(active[hit], measure.f[j][pos[hit]]):
                out.append(CoverCube(DyadicCube.from_code(j, int(code), dim), fval))
            open_codes = active[~hit]
        else:
            open_codes = active
        if j == p.m:
            if open_codes.shape[0]:
                raise AssertionError("unsaturated cube at level m")
            break
        nxt = tree.partial[j + 1]
        active = nxt[np.isin(nxt >> d, open_codes)] if open_codes.shape[0] else nxt[:0]
        roots = tree.full[j + 1]
        if roots.shape[0] and open_codes.shape[0]:
            for c in roots[np.isin(roots >> d, open_codes)]:
                full_active.append((j + 1, int(c), j + 1))
    for j0, code, start in full_active:
        k = next(k for k in range(start, p.m + 1) if measure.full_sat[k])
        shift = dim * (k - j0)
        if len(out) + (1 << shift) > limit:
            raise DomainError("equality cover too large to list")
        for c in range(code << shift, (code + 1) << shift):
            out.append(CoverCube(DyadicCube.from_code(k, c, dim), measure.full_f[k]))
    out.sort(key=lambda c: (c.cube.level, c.cube.code))
    return EqualityCover(tuple(out))


@dataclass
class FrostmanMeasure:
    measure: CascadeMeasure       # normalised
    cover: EqualityCover
    params: FrostmanParams
    total_mass: object            # T before normalisation


def construct(tree, theta, delta, s, t, exact: bool = False) -> FrostmanMeasure:
    params = derive_params(theta, delta, s, t, tree)
    raw = run_cascade(tree, params, exact)
    cover = equality_cover(raw)
    measure, total = normalize(raw)
    return FrostmanMeasure(measure, cover, params, total)


# checks -------------------------------------------------------------------

@dataclass(frozen=True)
class BranchingCheck:
    holds: bool
    worst_margin: float          # min over cubes of log2 Phi - s (n - m)
    witness: DyadicCube | None


def branching_bound(tree: OccupancyTree, params: FrostmanParams) -> BranchingCheck:
    """Check ``2^(s (n - m)) <= Phi(Q)`` for occupied cubes below level ``m``.

    ``Phi(Q)`` is the product of occupied-children counts along the ancestor
    chain of ``Q`` from level ``m`` down to ``Q``'s parent.
    """
    d = tree.dim
    m, s = params.m, params.s
    logphi = {m: np.zeros(tree.partial[m].shape[0])}
    worst, witness = math.inf, None
    roots_logphi = []
    for j0 in range(m + 1):
        if tree.full[j0].shape[0]:
            # whole subtree below m is full: Phi = 2^(d (n - m))
            roots_logphi.append((m, 0.0, int(tree.full[j0][0]) << (d * (m - j0))))
    for n in range(m, tree.n_max):
        pidx = _members(tree.partial[n], tree.partial[n + 1] >> np.uint64(d))
        lb = np.log2(tree.branching[n].astype(float))
        logphi[n + 1] = logphi[n][pidx] + lb[pidx]
        roots = tree.full[n + 1]
        if roots.shape[0]:
            ridx = _members(tree.partial[n], roots >> np.uint64(d))
            vals = logphi[n][ridx] + lb[ridx]
            i = int(np.argmin(vals))
            roots_logphi.append((n + 1, float(vals[i]), int(roots[i])))
        if logphi[n + 1].shape[0]:
            margin = logphi[n + 1] - s * (n + 1 - m)
            i = int(np.argmin(margin))
            if margin[i] < worst:
                worst = float(margin[i])
                witness = DyadicCube.from_code(n + 1, int(tree.partial[n + 1][i]), d)
    for j0, lp, code in roots_logphi:
        # inside a full subtree the margin grows with depth since s <= d
        if j0 > m and lp - s * (j0 - m) < worst:
            worst = lp - s * (j0 - m)
            witness = DyadicCube.from_code(j0, code, d)
    if worst is math.inf:
        worst = 0.0
    return BranchingCheck(worst >= -1e-12, worst, witness)


@dataclass
class LiteralCascade:
    """Every intermediate measure ``mu_{m-k}``, ``k = 0..ell``, on levels ``L..n_max``."""

    params: FrostmanParams
    codes: dict       # level -> sorted occupied codes (full subtrees expanded)
    measures: list    # measures[k][level] -> masses aligned with codes[level]

    def final(self):
        return self.measures[-1]


def literal_cascade(
    tree: OccupancyTree, params: FrostmanParams, exact: bool = False, limit: int = 2_000_000
) -> LiteralCascade:
    """Direct evaluation of the case-split definitions on materialised levels.

    ``mu_m(Q) = 2^(-m t) / Phi_{m+1}(Q)`` for levels ``>= m``; then for
    ``j = m-1, ..., L`` a cube ``Q`` at level ``>= j + 1`` gets
    ``2^(-j t) / Phi_{j+1}(Q)`` if its level-``j`` ancestor carries more than
    ``2^(-j t)`` under the previous measure, and keeps its mass otherwise.
    Coarser levels are always sums over children.
    """
    caps = _caps(params, exact)
    L, m, top_level = params.top, params.m, tree.n_max
    d = np.uint64(tree.dim)
    dtype = object if exact else float
    codes = {n: tree.occupied_codes(n, limit) for n in range(L, top_level + 1)}
    pidx = {n: _members(codes[n - 1], codes[n] >> d) for n in range(L + 1, top_level + 1)}
    branch = {
        n: np.bincount(pidx[n + 1], minlength=codes[n].shape[0]) for n in range(L, top_level)
    }

    def phi_from(j):
        """Phi_{j+1} for levels j..n_max: product of branching over levels j..n-1."""
        phi = {j: np.ones(codes[j].shape[0], dtype=np.int64).astype(dtype)}
        for n in range(j + 1, top_level + 1):
            phi[n] = phi[n - 1][pidx[n]] * branch[n - 1][pidx[n]].astype(dtype)
        return phi

    def ancestor_index(n, j):
        idx = np.arange(codes[n].shape[0])
        for k in range(n, j, -1):
            idx = pidx[k][idx]
        return idx

    def sums_above(mu, j):
        for n in range(j - 1, L - 1, -1):
            acc = np.zeros(codes[n].shape[0], dtype=dtype)
            if exact:
                acc[:] = 0
                np.add.at(acc, pidx[n + 1], mu[n + 1])
            else:
                acc += np.bincount(pidx[n + 1], weights=mu[n + 1], minlength=acc.shape[0])
            mu[n] = acc

    phi = phi_from(m)
    mu = {n: caps[m] / phi[n] for n in range(m, top_level + 1)}
    sums_above(mu, m)
    measures = [mu]
    for j in range(m - 1, L - 1, -1):
        prev = measures[-1]
        cap = caps[j]
        over = np.array([v > cap for v in prev[j]], dtype=bool)
        phi = phi_from(j)
        new = {}
        for n in range(j + 1, top_level + 1):
            trig = over[ancestor_index(n, j)]
            new[n] = np.where(trig, cap / phi[n], prev[n])
            if exact:
                new[n] = new[n].astype(object)
        sums_above(new, j + 1)
        measures.append(new)
    return LiteralCascade(params, codes, measures)


@dataclass(frozen=True)
class MonotonicityFinding:
    """A cube whose mass grew from ``mu_{j+1}`` to ``mu_j``."""

    step_level: int     # j
    cube: DyadicCube
    before: float
    after: float

    def as_dict(self) -> dict:
        return {
            "step_level": self.step_level, "level": self.cube.level,
            "index": list(self.cube.index), "before": float(self.before),
            "after": float(self.after),
        }


def monotonicity_findings(lit: LiteralCascade, rtol: float = 1e-12) -> list[MonotonicityFinding]:
    out = []
    p = lit.params
    dim = p.dim
    for k in range(len(lit.measures) - 1):
        prev, new = lit.measures[k], lit.measures[k + 1]
        j = p.m - k - 1
        for n in sorted(new):
            a, b = np.asarray(prev[n]), np.asarray(new[n])
            if a.dtype == object:
                bad = np.array([y > x for x, y in zip(a, b)], dtype=bool)
            else:
                bad = b > a * (1 + rtol) + 1e-300
            for i in np.flatnonzero(bad):
                out.append(MonotonicityFinding(
                    j, DyadicCube.from_code(n, int(lit.codes[n][i]), dim), a[i], b[i]
                ))
    return out


# dumps --------------------------------------------------------------------

MEASURE_MAGIC = b"DYOM"
MEASURE_VERSION = 1


def tree_digest(tree: OccupancyTree) -> str:
    return hashlib.sha256(serialize(tree)).hexdigest()


def _check_dump_params(header: dict, tree: OccupancyTree):
    if header.get("tree_sha256") != tree_digest(tree):
        raise InputError("measure dump was built from a different tree (hash mismatch)")


def dump_measure_text(measure: CascadeMeasure, extra: dict | None = None) -> str:
    """Header line (JSON) then one record per stored cube.

    Records are ``level code f sat capped`` for partial cubes and
    ``full level f sat capped`` for the full-subtree profile.  Masses are
    written with ``repr`` so the dump round-trips exactly.
    """
    if measure.exact:
        raise InputError("text dumps hold floating-point cascades only")
    p = measure.params
    header = {
        "format": "frostdim-measure", "version": MEASURE_VERSION,
        "params": p.as_dict(), "n_max": measure.tree.n_max,
        "total_mass": float(measure.total), "scale": float(measure.scale),
        "tree_sha256": tree_digest(measure.tree),
    }
    if extra:
        header.update(extra)
    lines = [json.dumps(header, sort_keys=True)]
    for j in range(p.top, p.m + 1):
        for code, fv, sv, cv in zip(
            measure.tree.partial[j], measure.f[j], measure.sat[j], measure.capped[j]
        ):
            lines.append(f"{j} {int(code)} {float(fv)!r} {int(sv)} {int(cv)}")
    for j in range(p.top, p.m + 1):
        lines.append(
            f"full {j} {float(measure.full_f[j])!r} "
            f"{int(measure.full_sat[j])} {int(measure.full_capped[j])}"
        )
    return "\n".join(lines) + "\n"


def read_measure_header(text: str) -> dict:
    first = text.split("\n", 1)[0]
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise InputError(f"measure dump header is not JSON: {exc}") from None
    if header.get("format") != "frostdim-measure":
        raise InputError("not a frostdim measure dump")
    if header.get("version") != MEASURE_VERSION:
        raise VersionMismatchError(f"measure dump version {header.get('version')}")
    return header


def load_measure_text(text: str, tree: OccupancyTree) -> CascadeMeasure:
    header = read_measure_header(text)
    _check_dump_params(header, tree)
    p = FrostmanParams(**header["params"])
    f = {j: [] for j in range(p.top, p.m + 1)}
    sat = {j: [] for j in f}
    capped = {j: [] for j in f}
    full_f, full_sat, full_capped = {}, {}, {}
    codes = {j: [] for j in f}
    for lineno, line in enumerate(text.splitlines()[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "full":
                j = int(parts[1])
                full_f[j] = float(parts[2])
                full_sat[j] = parts[3] == "1"
                full_capped[j] = parts[4] == "1"
            else:
                j = int(parts[0])
                codes[j].append(int(parts[1]))
                f[j].append(float(parts[2]))
                sat[j].append(parts[3] == "1")
                capped[j].append(parts[4] == "1")
        except (IndexError, ValueError, KeyError):
            raise InputError(f"measure dump line {lineno} is malformed") from None
    for j in f:
        if not np.array_equal(np.asarray(codes[j], dtype=np.uint64), tree.partial[j]):
            raise InputError(f"measure dump level {j} does not match the tree")
    measure = CascadeMeasure(
        tree, p,
        {j: np.asarray(v, dtype=float) for j, v in f.items()},
        {j: np.asarray(v, dtype=bool) for j, v in sat.items()},
        {j: np.asarray(v, dtype=bool) for j, v in capped.items()},
        full_f, full_sat, full_capped,
    )
    measure.scale = header.get("scale", 1.0)
    return measure


def dump_measure_binary(measure: CascadeMeasure) -> bytes:
    """Tree-like binary form: per level codes, f64 masses and a flag byte."""
    if measure.exact:
        raise InputError("binary dumps hold floating-point cascades only")
    p = measure.params
    out = bytearray(MEASURE_MAGIC)
    out += struct.pack("<HBB", MEASURE_VERSION, p.dim, measure.tree.n_max)
    out += struct.pack("<ddddBB", p.theta, p.delta, p.s, p.t, p.m, p.top)
    out += struct.pack("<dd", float(measure.total), float(measure.scale))
    out += bytes.fromhex(tree_digest(measure.tree))
    for j in range(p.top, p.m + 1):
        codes = measure.tree.partial[j]
        out += struct.pack("<Q", codes.shape[0])
        out += codes.astype("<u8").tobytes()
        out += np.asarray(measure.f[j], dtype="<f8").tobytes()
        flags = measure.sat[j].astype(np.uint8) | (measure.capped[j].astype(np.uint8) << 1)
        out += flags.tobytes()
        fl = int(measure.full_sat[j]) | (int(measure.full_capped[j]) << 1)
        out += struct.pack("<dB", float(measure.full_f[j]), fl)
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def load_measure_binary(data: bytes, tree: OccupancyTree) -> CascadeMeasure:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MEASURE_MAGIC:
        raise TreeFormatError("not a DYOM measure stream")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise TruncatedStreamError("measure stream truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, dim, n_max = take("<HBB")
    if version != MEASURE_VERSION:
        raise VersionMismatchError(f"measure stream version {version}")
    theta, delta, s, t, m, top = take("<ddddBB")
    total, scale = take("<dd")
    digest = bytes(take("<32B")).hex()
    f, sat, capped, full_f, full_sat, full_capped = {}, {}, {}, {}, {}, {}
    for j in range(top, m + 1):
        (count,) = take("<Q")
        codes = np.frombuffer(bytes(take(f"<{count}Q")) if False else data[pos:pos + 8 * count], dtype="<u8")
        if pos + 17 * count > len(data):
            raise TruncatedStreamError("measure stream truncated")
        pos += 8 * count
        f[j] = np.frombuffer(data[pos:pos + 8 * count], dtype="<f8").astype(float)
        pos += 8 * count
        flags = np.frombuffer(data[pos:pos + count], dtype=np.uint8)
        pos += count
        sat[j] = (flags & 1).astype(bool)
        capped[j] = (flags & 2).astype(bool)
        if not np.array_equal(codes.astype(np.uint64), tree.partial[j]):
            raise InputError(f"measure stream level {j} does not match the tree")
        fv, fl = take("<dB")
        full_f[j], full_sat[j], full_capped[j] = fv, bool(fl & 1), bool(fl & 2)
    body_end = pos
    (crc,) = take("<I")
    if crc != zlib.crc32(data[:body_end]) & 0xFFFFFFFF:
        raise ChecksumError("CRC32 mismatch in measure stream")
    if digest != tree_digest(tree):
        raise InputError("measure stream was built from a different tree (hash mismatch)")
    params = FrostmanParams(theta, delta, s, t, dim, m, top)
    measure = CascadeMeasure(tree, params, f, sat, capped, full_f, full_sat, full_capped)
    measure.scale = scale
    return measure
