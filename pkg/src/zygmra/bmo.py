"""Little BMO over Zygmund rectangles, product BMO, paraproducts and commutators."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .analysis import lp_norm, parallel_map, trial_seeds
from .errors import FamilyTooLarge, NotAncestor, UnknownFixture
from .haar import (
    ETAS, GridFunction, _same_grid, block_expand, block_mean, haar_pairings,
    scale_average, scale_D1, scale_E1, scale_E23,
)
from .lattice import GridSpec, LatticeShift, Rect, zygmund_scales
from .shifts import LinearShiftData, ShiftData, apply_shift

Key = Tuple[int, int, int, int, int, int]


def _key(R: Union[Rect, Sequence[int]]) -> Key:
    return R.key() if isinstance(R, Rect) else tuple(int(x) for x in R)


def _zyg_triples(grid: GridSpec):
    return [(a, b, a + b) for a, b in zygmund_scales(grid)]


# ---------------------------------------------------------------------------
# little BMO

def _block_oscillation(a: np.ndarray, sc, offsets=(0, 0, 0)) -> float:
    if any(offsets):
        a = np.roll(a, [-o for o in offsets], axis=(0, 1, 2))
    dev = np.abs(a - scale_average(a, sc))
    return float(block_mean(dev, sc).max())


def _grid_offsets(grid: GridSpec, sc, grids, seed: int):
    if grids == "all":
        widths = [n >> s for n, s in zip(grid.shape, sc)]
        return list(product(*(range(w) for w in widths)))
    offs = [(0, 0, 0)]
    if int(grids) > 1:
        rng = np.random.default_rng(seed)
        for _ in range(int(grids) - 1):
            sh = LatticeShift.random(grid, rng)
            offs.append(tuple(sh.offset_cells(ax + 1, s) for ax, s in enumerate(sc)))
    return offs


def bmoz_norm(b: GridFunction, grids: Union[int, str] = 1, seed: int = 0) -> float:
    """``max`` over lattices and Zygmund rectangles of ``<|b - <b>_R|>_R``.

    ``grids`` is ``1`` (canonical lattice), an integer ``R`` (canonical plus
    ``R - 1`` random shifted lattices) or ``"all"`` (every cyclic offset).
    """
    best = 0.0
    for sc in _zyg_triples(b.grid):
        for off in _grid_offsets(b.grid, sc, grids, seed):
            best = max(best, _block_oscillation(b.values, sc, off))
    return best


@dataclass
class BmoReport:
    bmoz: float
    avg_bmo_23: float        # sup_{I1} BMO of <b>_{I1,1} over D^{2,3}_{l(I1)}
    slice_bmo_1: float       # grid-consistent x1-slice oscillation
    slice_bmo_1_pointwise: float
    avg_bmo_13: float
    slice_bmo_2: float
    slice_bmo_2_pointwise: float

    @property
    def slice_ok(self) -> bool:
        return self.slice_bmo_1 <= 2 * self.bmoz and self.slice_bmo_2 <= 2 * self.bmoz

    @property
    def upper_ok(self) -> bool:
        return (self.bmoz <= self.avg_bmo_23 + self.slice_bmo_1
                and self.bmoz <= self.avg_bmo_13 + self.slice_bmo_2)

    @property
    def ok(self) -> bool:
        return self.slice_ok and self.upper_ok

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(slice_ok=self.slice_ok, upper_ok=self.upper_ok)
        return d


def _equiv_pair(a: np.ndarray, grid: GridSpec, axis: int) -> Tuple[float, float, float]:
    """Characterization pair for the fixed axis ``axis`` (0 or 1), other in-plane axis ``other``.

    Returns (average BMO, grid-consistent slice, pointwise slice).
    """
    other = 1 - axis
    L = grid.L
    avg_bmo = 0.0
    slice_grid = 0.0
    for ja in range(L[axis] + 1):
        sc = [None, None, None]
        sc[axis] = ja
        mean_a = scale_average(a, sc)  # <b>_{I,axis} broadcast back
        for jo in range(L[other] + 1):
            j3 = ja + jo
            if j3 > L[2]:
                break
            s = [0, 0, 0]
            s[axis], s[other], s[2] = ja, jo, j3
            dev = np.abs(mean_a - scale_average(mean_a, s))
            avg_bmo = max(avg_bmo, float(block_mean(dev, s).max()))
        m = min(L[other], L[2] - ja)
        s = [0, 0, 0]
        s[axis], s[other], s[2] = ja, m, ja + m
        slice_grid = max(slice_grid, float(block_mean(np.abs(a - mean_a), s).max()))
    pointwise = 0.0
    for ja in range(L[axis] + 1):
        sc = [None, None, None]
        sc[axis] = ja
        dev = np.abs(a - scale_average(a, sc))
        pointwise = max(pointwise, float(block_mean(dev, sc).max()))
    return avg_bmo, slice_grid, pointwise


def equiv_check(b: GridFunction) -> BmoReport:
    """Both characterizations of little BMO, computed exactly on the grid.

    The slice quantity is measured on the finest Zygmund blocks of the
    complementary plane; the raw per-cell slice norm is reported alongside.
    """
    a = b.values
    c2 = _equiv_pair(a, b.grid, 0)
    c3 = _equiv_pair(a, b.grid, 1)
    return BmoReport(bmoz_norm(b), c2[0], c2[1], c2[2], c3[0], c3[1], c3[2])


# ---------------------------------------------------------------------------
# product BMO

@dataclass
class BmoProdSequence:
    grid: GridSpec
    coeffs: Dict[Key, float] = field(default_factory=dict)

    def __post_init__(self):
        for k in self.coeffs:
            if k[2] != k[0] + k[1] or any(k[i] > self.grid.L[i] for i in range(3)):
                raise ValueError(f"{k} is not a Zygmund rectangle of {self.grid}")

    def scaled(self, c: float) -> "BmoProdSequence":
        return BmoProdSequence(self.grid, {k: c * v for k, v in self.coeffs.items()})


@dataclass
class BmoProdResult:
    norm: float
    argmax: Tuple[Key, ...]
    family_size: int
    family: str = "single dyadic rectangles + unions of <= 4 same-scale Zygmund rectangles"


def _mask(grid: GridSpec, keys: Sequence[Key]) -> np.ndarray:
    m = np.zeros(grid.shape, dtype=bool)
    for k in keys:
        sl = tuple(slice(p << (L - j), (p + 1) << (L - j)) for j, p, L in zip(k[:3], k[3:], grid.L))
        m[sl] = True
    return m


def _ancestor(k: Key, sc) -> Key:
    return tuple(sc) + tuple(p >> (j - s) for p, j, s in zip(k[3:], k[:3], sc))


def bmo_prod_norm(B: BmoProdSequence, max_union: int = 4, budget: int = 200_000) -> BmoProdResult:
    """``sup_Omega (|Omega|^{-1} sum_{I in Omega} |b_I|^2)^{1/2}`` over a budgeted family."""
    grid = B.grid
    support = [k for k, v in B.coeffs.items() if v != 0]
    if not support:
        return BmoProdResult(0.0, (), 0)
    sq = {k: B.coeffs[k] ** 2 for k in support}
    masks = {k: _mask(grid, [k]) for k in support}
    cell = grid.cell_volume

    def value(omega: Sequence[Key]) -> float:
        m = _mask(grid, omega)
        tot = sum(v for k, v in sq.items() if m[masks[k]].all())
        return tot / (m.sum() * cell)

    candidates: List[Tuple[Key, ...]] = []
    # single rectangles of every scale that contain some supported rectangle
    singles = set()
    for k in support:
        for sc in product(*(range(j + 1) for j in k[:3])):
            singles.add(_ancestor(k, sc))
    candidates.extend((s,) for s in sorted(singles))
    for sc in _zyg_triples(grid):
        pool = sorted({_ancestor(k, sc) for k in support if all(s <= j for s, j in zip(sc, k[:3]))})
        for r in range(2, max_union + 1):
            n = len(pool)
            count = 1
            for i in range(r):
                count = count * (n - i) // (i + 1)
            if len(candidates) + count > budget:
                raise FamilyTooLarge(f"open-set family exceeds budget {budget}")
            candidates.extend(combinations(pool, r))
    best, arg = 0.0, ()
    for om in candidates:
        v = value(om)
        if v > best:
            best, arg = v, om
    return BmoProdResult(float(np.sqrt(best)), arg, len(candidates))


def bmo_prod_dual(B: BmoProdSequence, A: Dict[Key, float]) -> float:
    """``sum |a_I||b_I| / ||(sum |a_I|^2 1_I/|I|)^{1/2}||_1`` for one test sequence ``A``."""
    grid = B.grid
    S = np.zeros(grid.shape)
    pair = 0.0
    for k, a in A.items():
        vol = 2.0 ** -(k[0] + k[1] + k[2])
        S += _mask(grid, [k]) * (a * a / vol)
        pair += abs(a) * abs(B.coeffs.get(k, 0.0))
    den = float(np.mean(np.sqrt(S)))
    return pair / den if den else 0.0


# ---------------------------------------------------------------------------
# H1-BMO duality on fixed slices

def h1_duality_check(b: GridFunction, phi: Dict[tuple, float], variant: str = "23",
                     I1: Tuple[int, int] = (0, 0), cell: Tuple[int, int] = (0, 0),
                     bmoz: Optional[float] = None) -> float:
    """Ratio of the pairing to ``||b||_{bmo_Z}`` times the square-function ``L^1`` norm.

    ``variant="23"``: ``I1 = (j1, p1)`` fixed, ``phi`` keyed by ``(j2, p2, p3, eta)``
    over the 2-3 rectangles with ``j3 = j1 + j2``.
    ``variant="1"``: the cell ``(x2, x3)`` fixed, ``phi`` keyed by ``(j1, p1)``.
    """
    grid = b.grid
    norm = bmoz_norm(b) if bmoz is None else bmoz
    a = b.values
    if variant == "23":
        j1, p1 = I1
        w = 1 << (grid.L1 - j1)
        g = a[p1 * w:(p1 + 1) * w].mean(axis=0)  # <b>_{I1,1}
        S = np.zeros(g.shape)
        pair = 0.0
        for (j2, p2, p3, eta), c in phi.items():
            j3 = j1 + j2
            coef = haar_pairings(g[None], (0, j2, j3), (0,) + tuple(eta))[0, p2, p3]
            pair += coef * c
            w2, w3 = 1 << (grid.L2 - j2), 1 << (grid.L3 - j3)
            S[p2 * w2:(p2 + 1) * w2, p3 * w3:(p3 + 1) * w3] += c * c * 2.0 ** (j2 + j3)
    elif variant == "1":
        x2, x3 = cell
        line = a[:, x2, x3]
        S = np.zeros(line.shape)
        pair = 0.0
        for (j1, p1), c in phi.items():
            coef = haar_pairings(line[:, None, None], (j1, 0, 0), (1, 0, 0))[p1, 0, 0]
            pair += coef * c
            w1 = 1 << (grid.L1 - j1)
            S[p1 * w1:(p1 + 1) * w1] += c * c * 2.0 ** j1
    else:
        raise ValueError("variant must be '23' or '1'")
    den = norm * float(np.mean(np.sqrt(S)))
    if den == 0:
        return 0.0
    return abs(pair) / den


# ---------------------------------------------------------------------------
# paraproducts
#
# Row i is the axis-1 product type and column j the 2-3 product type, each one of
#   0: D.D   1: D(b).E(f)   2: E(b).D(f)
# which reproduces the nine displayed terms in reading order.

_TYPES = ("DD", "DE", "ED")


def _group1(a: np.ndarray, j1: int, kind: str) -> np.ndarray:
    return scale_D1(a, j1) if kind == "D" else scale_E1(a, j1)


def _group23(a: np.ndarray, j1: int, j2: int, kind: str) -> np.ndarray:
    if kind == "D":
        return scale_E23(a, j2 + 1, j1 + j2 + 1) - scale_E23(a, j2, j1 + j2)
    return scale_E23(a, j2, j1 + j2)


def paraproduct(i: int, j: int, b: GridFunction, f: GridFunction) -> GridFunction:
    """``a_{i,j}(b, f)`` summed over all Zygmund rectangles of the grid."""
    if not (1 <= i <= 3 and 1 <= j <= 3):
        raise ValueError("indices must lie in 1..3")
    grid = _same_grid(b, f)
    t1, t23 = _TYPES[i - 1], _TYPES[j - 1]
    out = np.zeros(grid.shape)
    for j1 in range(grid.L1):
        u = _group1(b.values, j1, t1[0])
        v = _group1(f.values, j1, t1[1])
        for j2 in range(grid.L2):
            out += _group23(u, j1, j2, t23[0]) * _group23(v, j1, j2, t23[1])
    return GridFunction(grid, out)


def paraproduct_completion(b: GridFunction, f: GridFunction) -> GridFunction:
    """Coarse averages and finest-scale remainders that the finite expansion leaves over."""
    grid = _same_grid(b, f)
    B, F = b.values, f.values
    out = scale_E1(B, 0) * scale_E1(F, 0)
    m = grid.L2
    for j1 in range(grid.L1):
        for t in _TYPES:
            u = _group1(B, j1, t[0])
            v = _group1(F, j1, t[1])
            out = out + scale_E23(u, 0, j1) * scale_E23(v, 0, j1)
            out = out + u * v - scale_E23(u, m, j1 + m) * scale_E23(v, m, j1 + m)
    return GridFunction(grid, out)


@dataclass(frozen=True)
class ParaproductTable:
    """The nine paraproduct operators ``f -> a_{i,j}(b, f)`` plus the completion."""

    b: GridFunction

    def op(self, i: int, j: int) -> Callable[[GridFunction], GridFunction]:
        return lambda f: paraproduct(i, j, self.b, f)

    def completion(self, f: GridFunction) -> GridFunction:
        return paraproduct_completion(self.b, f)

    def terms(self, f: GridFunction) -> Dict[Tuple[int, int], GridFunction]:
        return {(i, j): paraproduct(i, j, self.b, f) for i in range(1, 4) for j in range(1, 4)}

    def residual(self, f: GridFunction) -> float:
        total = self.completion(f).values.copy()
        for g in self.terms(f).values():
            total += g.values
        prod = self.b.values * f.values
        return float(np.abs(total - prod).max() / max(np.abs(prod).max(), 1e-300))


# ---------------------------------------------------------------------------
# commutators

Operator = Union[LinearShiftData, ShiftData]


def commutator(b: GridFunction, Q: Operator, f: Union[GridFunction, Tuple[GridFunction, GridFunction]]) -> GridFunction:
    """``b Q f - Q(b f)``; for bilinear ``Q`` the multiplier acts on the first input."""
    if isinstance(Q, LinearShiftData):
        return b * Q.apply(f) - Q.apply(b * f)
    f1, f2 = f
    return b * apply_shift(Q, f1, f2) - apply_shift(Q, b * f1, f2)


@dataclass
class CommutatorTerms:
    direct: float
    cross: Dict[str, float]
    ladder: float
    local: float

    @property
    def cross_total(self) -> float:
        return float(sum(self.cross.values()))

    @property
    def ladder_total(self) -> float:
        return self.ladder + self.local


def commutator_terms(b: GridFunction, Q: LinearShiftData, f: GridFunction, g: GridFunction) -> CommutatorTerms:
    """Two independent expansions of ``<[b, Q] f, g>``.

    Route one: ``<Qf, b g> - <Q(b f), g>`` with both products split into the nine
    paraproducts and the completion.  Route two: per coefficient, the average
    difference ``<b>_J - <b>_I`` (telescoped along :func:`b_ladder`) plus the
    local oscillation terms ``(b - <b>_J)`` and ``(b - <b>_I)``.
    """
    grid = _same_grid(b, f, g)
    vol = grid.cell_volume
    direct = float(np.sum(commutator(b, Q, f).values * g.values) * vol)
    Qf = Q.apply(f)
    Qtg = Q.adjoint_apply(g)
    cross = {}
    for i in range(1, 4):
        for j in range(1, 4):
            left = np.sum(Qf.values * paraproduct(i, j, b, g).values)
            right = np.sum(Qtg.values * paraproduct(i, j, b, f).values)
            cross[f"a{i}{j}"] = float((left - right) * vol)
    cross["completion"] = float(np.sum(Qf.values * paraproduct_completion(b, g).values
                                       - Qtg.values * paraproduct_completion(b, f).values) * vol)
    ins, outs = Q._factors()
    bv = b.values
    ladder = local = 0.0
    for e, (a1, a23), (b1, b23) in zip(Q.entries, ins, outs):
        phi = a1[:, None, None] * a23[None]
        psi = b1[:, None, None] * b23[None]
        fphi = np.sum(f.values * phi) * vol
        gpsi = np.sum(g.values * psi) * vol
        lad = b_ladder(e.J, e.I, e.K, b)
        ladder += e.a * fphi * gpsi * lad.difference
        bJ, bI = lad.top_L, lad.top_Q
        local += e.a * (fphi * np.sum((bv - bJ) * g.values * psi) * vol
                        - gpsi * np.sum((bv - bI) * f.values * phi) * vol)
    return CommutatorTerms(direct, cross, float(ladder), float(local))


# ---------------------------------------------------------------------------
# ladders

@dataclass
class Ladder:
    rungs_L: List[float]
    rungs_Q: List[float]
    path_L: List[Key]
    path_Q: List[Key]
    top_L: float  # <b>_L
    top_Q: float  # <b>_Q
    avg_R: float

    @property
    def difference(self) -> float:
        """Telescoped ``<b>_L - <b>_Q``; the ``<b>_R`` terms cancel."""
        return float(sum(self.rungs_L) - sum(self.rungs_Q))

    @property
    def max_rung(self) -> float:
        return float(max((abs(r) for r in self.rungs_L + self.rungs_Q), default=0.0))


def _rect_mean(a: np.ndarray, grid: GridSpec, k: Key) -> float:
    sl = tuple(slice(p << (L - j), (p + 1) << (L - j)) for j, p, L in zip(k[:3], k[3:], grid.L))
    return float(a[sl].mean())


def _zyg_path(X: Key, R: Key) -> List[Key]:
    j1, j2, j3 = X[:3]
    if j3 != j1 + j2 or R[2] != R[0] + R[1]:
        raise NotAncestor("ladder endpoints must be Zygmund rectangles")
    if R[0] > j1 or R[1] > j2:
        raise NotAncestor(f"{R} is not coarser than {X}")
    path = [X]
    cur = X
    for _ in range(j2 - R[1]):
        s, p = cur[:3], cur[3:]
        cur = (s[0], s[1] - 1, s[2] - 1, p[0], p[1] >> 1, p[2] >> 1)
        path.append(cur)
    for _ in range(j1 - R[0]):
        s, p = cur[:3], cur[3:]
        cur = (s[0] - 1, s[1], s[2] - 1, p[0] >> 1, p[1], p[2] >> 1)
        path.append(cur)
    if cur != R:
        raise NotAncestor(f"{R} is not a Zygmund ancestor of {X}")
    return path


def b_ladder(L: Union[Rect, Key], Q: Union[Rect, Key], R: Union[Rect, Key], b: GridFunction) -> Ladder:
    """Telescoping rungs from ``L`` and from ``Q`` up to their common ancestor ``R``.

    One-parameter steps in the 2-3 plane come first, then axis-1 steps; every
    intermediate rectangle stays Zygmund.
    """
    grid = b.grid
    a = b.values
    pL, pQ = _zyg_path(_key(L), _key(R)), _zyg_path(_key(Q), _key(R))
    mL = [_rect_mean(a, grid, k) for k in pL]
    mQ = [_rect_mean(a, grid, k) for k in pQ]
    rL = [x - y for x, y in zip(mL[:-1], mL[1:])]
    rQ = [x - y for x, y in zip(mQ[:-1], mQ[1:])]
    return Ladder(rL, rQ, pL, pQ, mL[0], mQ[0], mL[-1])


# ---------------------------------------------------------------------------
# benches

@dataclass
class CommutatorBenchReport:
    ratio: float
    k: Tuple[int, int, int]
    p: float
    trials: int
    seeds: List[int]
    tag: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def commutator_normalizer(k: Sequence[int]) -> float:
    return max(1, *k) * (sum(k) + 1) ** 2


def commutator_bench(b: Union[GridFunction, Callable[[np.random.Generator], GridFunction]], Q: LinearShiftData,
                     p: float, trials: int = 50, seed: int = 0) -> CommutatorBenchReport:
    """``max ||[b,Q]f||_p / (max(k)(|k|+1)^2 ||b||_bmoZ ||f||_p)`` over random trials.

    ``b`` may be a fixed function or a sampler drawing one per trial.
    """
    from .analysis import random_probe
    grid = Q.grid
    seeds = trial_seeds(seed, trials)
    norm_k = commutator_normalizer(Q.k)

    def trial(s):
        rng = np.random.default_rng(s)
        bb = b(rng) if callable(b) else b
        nb = bmoz_norm(bb)
        if nb == 0:
            raise ValueError("b must have positive bmo_Z norm")
        f = random_probe(grid, rng)
        nf = lp_norm(f, p)
        if nf == 0:
            return 0.0
        return lp_norm(commutator(bb, Q, f), p) / (norm_k * nb * nf)

    vals = parallel_map(trial, seeds)
    return CommutatorBenchReport(float(max(vals)), tuple(Q.k), p, trials, seeds, Q.tag)


# ---------------------------------------------------------------------------
# fixtures

def _periodic(n: int) -> np.ndarray:
    c = (np.arange(n) + 0.5) / n
    return np.minimum(c, 1.0 - c)


def b_fixture(name: str, grid: GridSpec, seed: int = 0) -> GridFunction:
    """``slicebmo:<profile>``, ``haar-lacunary`` or ``log-dist``."""
    kind, _, arg = name.partition(":")
    n1, n2, n3 = grid.shape
    if kind == "slicebmo":
        x = (np.arange(n1) + 0.5) / n1
        profiles = {
            "step": np.where(x < 0.5, 1.0, -1.0),
            "log": np.log(_periodic(n1)),
            "saw": x - 0.5,
        }
        if arg not in profiles:
            raise UnknownFixture(f"unknown slicebmo profile {arg!r}")
        return GridFunction(grid, np.broadcast_to(profiles[arg][:, None, None], grid.shape).copy())
    if kind == "haar-lacunary":
        rng = np.random.default_rng(seed)
        v = np.zeros(grid.shape)
        for j in range(min(grid.L1, grid.L2)):
            sc = (j, j, 2 * j)
            signs = rng.choice([-1.0, 1.0], size=tuple(1 << s for s in sc))
            h = block_expand(signs, grid.shape, sc)
            # checkerboard over the children of each block
            kids = np.ones(grid.shape)
            for ax, s in enumerate(sc):
                w = grid.shape[ax] >> (s + 1)
                idx = (np.arange(grid.shape[ax]) // w) % 2
                shape = [1, 1, 1]
                shape[ax] = -1
                if ax < 2:
                    kids = kids * np.where(idx == 0, 1.0, -1.0).reshape(shape)
            v += h * kids
        return GridFunction(grid, v)
    if kind == "log-dist":
        d1 = _periodic(n1)[:, None, None]
        d2 = _periodic(n2)[None, :, None]
        d3 = _periodic(n3)[None, None, :]
        return GridFunction(grid, np.log(np.maximum(d1 * d2 + d3, 2.0 ** -grid.L3)))
    raise UnknownFixture(f"unknown b fixture {name!r}")


B_FIXTURES = ("slicebmo:step", "slicebmo:log", "slicebmo:saw", "haar-lacunary", "log-dist")


def extrapolation_exponents(p: float, p0: float, s0: float) -> Tuple[float, float]:
    """Exponents ``(s, r)`` with ``s >= s0``, ``r > 1`` and ``s p0 / r = p``."""
    if min(p, p0) <= 0 or s0 <= 1:
        raise ValueError("need p, p0 > 0 and s0 > 1")
    return s0 * (p / p0 + 1), s0 * (p0 / p + 1)
