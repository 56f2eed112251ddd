"""Multiresolution decomposition of trilinear forms and shift coefficients."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import _accel
from .errors import (
    DiagonalDominated,
    EmptyComplexityBucket,
    NormalizationOverflow,
    QuadratureNonConvergent,
    ScaleMismatch,
)
from .haar import (
    ETAS,
    GridFunction,
    _same_grid,
    avg_E,
    delta_Z,
    haar_pairings,
    haar_tensor,
    inner,
    scale_average,
    scale_DZ,
)
from .kernels import Kernel, KernelParams, periodic_offset
from .lattice import DyadicInterval, GridSpec, Rect, ZygRect, is_good, parent_k, translate

Triple = Tuple[int, int, int]


# ---------------------------------------------------------------------------
# trilinear forms

class TrilinearForm:
    """``<T(f1, f2), f3>`` on one grid.

    A dense ``tensor`` of shape ``(cells,)*3`` encodes
    ``<T(f1,f2),f3> = vol**3 * sum T[x,y,z] f1[x] f2[y] f3[z]``.
    """

    def __init__(self, grid: GridSpec, evaluator: Optional[Callable] = None, tensor: Optional[np.ndarray] = None,
                 kernel: Optional[Kernel] = None, tensor_builder: Optional[Callable[[], np.ndarray]] = None,
                 applier: Optional[Callable] = None, name: str = "",
                 has_full_kernel: bool = False, has_partial_kernels: bool = False):
        if evaluator is None and tensor is None:
            raise ValueError("need an evaluator or a tensor")
        self.grid = grid
        self._evaluator = evaluator
        self.tensor = tensor
        self.kernel = kernel
        self._builder = tensor_builder
        self._applier = applier
        self.name = name
        self.has_full_kernel = has_full_kernel or kernel is not None
        self.has_partial_kernels = has_partial_kernels

    @property
    def prefers_tensor(self) -> bool:
        return self.tensor is not None

    def evaluate(self, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
        _same_grid(f1, f2, f3)
        if f1.grid != self.grid:
            from .errors import GridMismatch

            raise GridMismatch("form and inputs live on different grids")
        if self.tensor is not None:
            n = self.grid.cells
            t = self.tensor.reshape(n * n, n) @ f3.values.ravel()
            t = t.reshape(n, n) @ f2.values.ravel()
            return float(t @ f1.values.ravel()) * self.grid.cell_volume ** 3
        return float(self._evaluator(f1, f2, f3))

    def apply(self, f1: GridFunction, f2: GridFunction) -> GridFunction:
        if self._applier is not None:
            return self._applier(f1, f2)
        T = self.dense_tensor()
        n = self.grid.cells
        out = f1.values.ravel() @ T.reshape(n, n * n)
        out = f2.values.ravel() @ out.reshape(n, n)
        return GridFunction(self.grid, out.reshape(self.grid.shape) * self.grid.cell_volume ** 2)

    def dense_tensor(self) -> np.ndarray:
        if self.tensor is not None:
            return self.tensor
        if self._builder is not None:
            self.tensor = self._builder()
            return self.tensor
        # probe with point masses; only sensible on tiny grids
        n = self.grid.cells
        vol = self.grid.cell_volume
        T = np.zeros((n, n, n))
        basis = [np.zeros(n) for _ in range(n)]
        for i in range(n):
            basis[i][i] = 1.0
        funcs = [GridFunction(self.grid, b.reshape(self.grid.shape)) for b in basis]
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    T[a, b, c] = self._evaluator(funcs[a], funcs[b], funcs[c]) / vol ** 3
        self.tensor = T
        return T

    def scaled(self, c: float) -> "TrilinearForm":
        ev = self._evaluator
        return TrilinearForm(
            self.grid,
            evaluator=(lambda f1, f2, f3: c * ev(f1, f2, f3)) if ev is not None else None,
            tensor=None if self.tensor is None else c * self.tensor,
            kernel=self.kernel.scaled(c) if self.kernel is not None else None,
            tensor_builder=(lambda: c * self._builder()) if self._builder is not None else None,
            applier=(lambda f1, f2: self._applier(f1, f2) * c) if self._applier is not None else None,
            name=f"{c}*{self.name}",
        )

    def transposed(self, perm: Sequence[int]) -> "TrilinearForm":
        """Permute slot roles: ``perm[i]`` is the original slot feeding new slot ``i``."""
        T = self.dense_tensor()
        inv = np.argsort(perm)
        return TrilinearForm(self.grid, tensor=np.transpose(T, tuple(perm)), name=f"{self.name}^{tuple(int(p) for p in inv)}")

    # constructors
    @classmethod
    def from_tensor(cls, grid: GridSpec, tensor: np.ndarray, name: str = "dense") -> "TrilinearForm":
        n = grid.cells
        tensor = np.asarray(tensor, dtype=float).reshape(n, n, n)
        return cls(grid, tensor=tensor, name=name)

    @classmethod
    def random_dense(cls, grid: GridSpec, rng: np.random.Generator) -> "TrilinearForm":
        n = grid.cells
        return cls(grid, tensor=rng.standard_normal((n, n, n)), name="random-dense")

    @classmethod
    def product_form(cls, grid: GridSpec) -> "TrilinearForm":
        def ev(f1, f2, f3):
            return float(np.mean(f1.values * f2.values * f3.values))

        def build():
            n = grid.cells
            T = np.zeros((n, n, n))
            idx = np.arange(n)
            T[idx, idx, idx] = 1.0 / grid.cell_volume ** 2
            return T

        return cls(grid, evaluator=ev, tensor_builder=build,
                   applier=lambda f1, f2: f1 * f2, name="product")

    @classmethod
    def zero(cls, grid: GridSpec) -> "TrilinearForm":
        return cls(grid, evaluator=lambda f1, f2, f3: 0.0, tensor_builder=lambda: np.zeros((grid.cells,) * 3),
                   applier=lambda f1, f2: GridFunction.zeros(grid), name="zero")

    @classmethod
    def from_kernel(cls, K: Kernel, grid: GridSpec, quad: Optional["QuadratureSpec"] = None) -> "TrilinearForm":
        """Kernel-backed form; coefficients come from quadrature, not a tensor."""
        quad = quad or QuadratureSpec()

        def ev(f1, f2, f3):
            raise NotImplementedError("kernel-backed forms only support coefficient extraction")

        return cls(grid, evaluator=ev, kernel=K, name=f"kernel:{K.name}")


# ---------------------------------------------------------------------------
# complexity weight

def phi(k: Triple, params: KernelParams) -> float:
    k1, k2, k3 = k
    if min(k) < 0:
        raise ValueError("complexity components must be non-negative")
    expo = k1 * params.alpha1 + k2 * min(params.alpha23, params.theta) + max(k3 - k1 - k2, 0) * params.theta
    return 2.0 ** (-expo)


def complexity_size(k: Triple) -> int:
    return int(sum(k))


# ---------------------------------------------------------------------------
# collapse of the seven scale-ordered sums

PATTERNS = ("EED", "EDE", "DEE", "EDD", "DED", "DDE", "DDD")


@dataclass
class CollapseResult:
    direct: float
    collapsed: float
    terms: Dict[str, float]

    @property
    def residual(self) -> float:
        return abs(self.direct - self.collapsed)

    @property
    def relative(self) -> float:
        scale = max(abs(self.direct), sum(abs(v) for v in self.terms.values()), 1e-300)
        return self.residual / scale


def _filtration(grid: GridSpec, group: str, offset: Optional[int]):
    """Averaging operators from coarse to fine, ending with the identity."""
    ops = []
    if group == "1":
        for j in range(grid.L1 + 1):
            ops.append((j, None, None))
    elif group == "23":
        s = grid.L3 - grid.L2 if offset is None else offset
        lo = max(0, -s)
        hi = min(grid.L2, grid.L3 - s)
        if hi < lo:
            raise ScaleMismatch(f"offset {s} leaves no (2,3) scales")
        for j in range(lo, hi + 1):
            ops.append((None, j, j + s))
    else:
        raise ValueError("group must be '1' or '23'")
    return ops


def _variants(a: np.ndarray, ops) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Per level s: E_s a and D_s a = E_{s+1} a - E_s a (E_{-1} = 0, last E = identity)."""
    E = [np.zeros_like(a)] + [scale_average(a, sc) for sc in ops]
    if not np.array_equal(E[-1], a):
        E.append(a.copy())
    Es = E[:-1]
    Ds = [E[i + 1] - E[i] for i in range(len(E) - 1)]
    return Es, Ds


def collapse_check(T: TrilinearForm, f1: GridFunction, f2: GridFunction, f3: GridFunction,
                   group: str = "1", offset: Optional[int] = None) -> CollapseResult:
    """Compare ``<T(f1,f2),f3>`` with the seven diagonal sums of one parameter group."""
    grid = _same_grid(f1, f2, f3)
    ops = _filtration(grid, group, offset)
    V = [_variants(f.values, ops) for f in (f1, f2, f3)]
    levels = len(V[0][0])
    direct = T.evaluate(f1, f2, f3)
    terms = {p: 0.0 for p in PATTERNS}
    if T.prefers_tensor:
        n = grid.cells
        mats = [np.array([v.ravel() for v in V[j][0] + V[j][1]]) for j in range(3)]  # (2*levels, n)
        W = (T.tensor.reshape(n * n, n) @ mats[2].T).reshape(n, n, -1)
        W = np.einsum("by,xyc->xbc", mats[1], W)
        W = np.einsum("ax,xbc->abc", mats[0], W) * grid.cell_volume ** 3
        for s in range(levels):
            for p in PATTERNS:
                idx = [s if ch == "E" else levels + s for ch in p]
                terms[p] += float(W[idx[0], idx[1], idx[2]])
    else:
        for s in range(levels):
            for p in PATTERNS:
                args = [GridFunction(grid, V[j][0][s] if ch == "E" else V[j][1][s]) for j, ch in enumerate(p)]
                terms[p] += T.evaluate(*args)
    return CollapseResult(direct, sum(terms.values()), terms)


# ---------------------------------------------------------------------------
# the key term and its Haar reassembly

def _key_scales(grid: GridSpec):
    for j1 in range(grid.L1):
        for j2 in range(grid.L2):
            if j1 + j2 + 1 <= grid.L3:
                yield j1, j2


def key_term(T: TrilinearForm, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
    grid = _same_grid(f1, f2, f3)
    total = 0.0
    for j1, j2 in _key_scales(grid):
        sc = (j1, j2, j1 + j2)
        e1 = GridFunction(grid, scale_average(f1.values, sc))
        e2 = GridFunction(grid, scale_average(f2.values, sc))
        d3 = GridFunction(grid, scale_DZ(f3.values, j1, j2))
        total += T.evaluate(e1, e2, d3)
    return total


def key_term_bruteforce(T: TrilinearForm, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
    """Explicit triple loop over equal-scale Zygmund rectangles (tiny grids only)."""
    grid = _same_grid(f1, f2, f3)
    total = 0.0
    for j1, j2 in _key_scales(grid):
        rects = [ZygRect(DyadicInterval(1, j1, a), DyadicInterval(2, j2, b), DyadicInterval(3, j1 + j2, c))
                 for a in range(1 << j1) for b in range(1 << j2) for c in range(1 << (j1 + j2))]
        E1 = [avg_E(f1, [R.I1, R.I2, R.I3]) for R in rects]
        E2 = [avg_E(f2, [R.I1, R.I2, R.I3]) for R in rects]
        D3 = [delta_Z(f3, R) for R in rects]
        for a in E1:
            for b in E2:
                for c in D3:
                    total += T.evaluate(a, b, c)
    return total


def _rect_matrix(grid: GridSpec, scales: Triple, tags: Triple) -> np.ndarray:
    """Rows are ``h^tags_R`` (flattened) for every ``R`` of the given scales, C order of positions."""
    counts = [1 << s for s in scales]
    rows = []
    for pos in product(*[range(c) for c in counts]):
        R = Rect(DyadicInterval(1, scales[0], pos[0]), DyadicInterval(2, scales[1], pos[1]), DyadicInterval(3, scales[2], pos[2]))
        rows.append(haar_tensor(R, tags, grid).values.ravel())
    return np.array(rows)


def key_term_reassembled(T: TrilinearForm, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
    """``sum c_{I,n1,n2} * bracket * <f3, h_{I,Z}>`` over all equal-scale triples."""
    grid = _same_grid(f1, f2, f3)
    Tt = T.dense_tensor()
    n = grid.cells
    vol = grid.cell_volume
    total = 0.0
    for j1, j2 in _key_scales(grid):
        sc = (j1, j2, j1 + j2)
        n1, n23 = 1 << j1, (1 << j2) * (1 << (j1 + j2))
        H0 = _rect_matrix(grid, sc, (0, 0, 0))
        P1 = (H0 @ f1.values.ravel() * vol).reshape(n1, n23)
        P2 = (H0 @ f2.values.ravel() * vol).reshape(n1, n23)
        # bracket[a, b, c] over flattened rect indices (axis-1 index, (2,3) index)
        a1 = np.arange(n1)
        a23 = np.arange(n23)
        A1, A23 = np.meshgrid(a1, a23, indexing="ij")
        A1 = A1.ravel()
        A23 = A23.ravel()
        X1, X23 = A1[:, None, None], A23[:, None, None]
        Y1, Y23 = A1[None, :, None], A23[None, :, None]
        Z1, Z23 = A1[None, None, :], A23[None, None, :]
        bracket = (P1[X1, X23] * P2[Y1, Y23] - P1[Z1, X23] * P2[Z1, Y23]
                   - P1[X1, Z23] * P2[Y1, Z23] + P1[Z1, Z23] * P2[Z1, Z23])
        G = np.einsum("ax,xyz->ayz", H0, Tt, optimize=True)
        G = np.einsum("by,ayz->abz", H0, G, optimize=True)
        for eta in ETAS:
            H = _rect_matrix(grid, sc, (1,) + eta)
            c = np.einsum("cz,abz->abc", H, G, optimize=True) * vol ** 3
            g3 = H @ f3.values.ravel() * vol
            total += float(np.einsum("abc,abc,c->", c, bracket, g3))
    return total


def _check_same_scales(*rects: Rect):
    s = rects[0].scales
    for R in rects[1:]:
        if R.scales != s:
            raise ScaleMismatch(f"scales {R.scales} differ from {s}")


def a1a2_split(f1: GridFunction, f2: GridFunction, I1: Rect, I2: Rect, I3: Rect) -> float:
    """Four-term bracket of non-cancellative pairings swapping axis-1 and (2,3) parts."""
    _check_same_scales(I1, I2, I3)
    grid = _same_grid(f1, f2)

    def h0(A, B):
        return haar_tensor(Rect(A.I1, B.I2, B.I3), (0, 0, 0), grid)

    return (inner(f1, h0(I1, I1)) * inner(f2, h0(I2, I2))
            - inner(f1, h0(I3, I1)) * inner(f2, h0(I3, I2))
            - inner(f1, h0(I1, I3)) * inner(f2, h0(I2, I3))
            + inner(f1, h0(I3, I3)) * inner(f2, h0(I3, I3)))


# ---------------------------------------------------------------------------
# coefficients

def translate_rect(I: Rect, n: Sequence[int]) -> Rect:
    return Rect(translate(I.I1, n[0]), translate(I.I2, n[1]), translate(I.I3, n[2]))


def _case_axis1(m1: int) -> str:
    return "identical" if m1 == 0 else ("adjacent" if m1 == 1 else "separated")


def _case_axes23(m2: int, m3: int) -> str:
    if m2 == 0 and m3 == 0:
        return "identical"
    if m2 <= 1 and m3 <= 1:
        return "adjacent"
    return "separated"


@dataclass
class CoefficientRecord:
    I: ZygRect
    n1: Triple
    n2: Triple
    value: float
    eta: Tuple[int, int] = (1, 1)

    @property
    def spreads(self) -> Triple:
        return tuple(max(abs(self.n1[m]), abs(self.n2[m])) for m in range(3))

    @property
    def case(self) -> Tuple[str, str]:
        m = self.spreads
        return (_case_axis1(m[0]), _case_axes23(m[1], m[2]))


@dataclass(frozen=True)
class QuadratureSpec:
    subdiv: int = 4
    refine: bool = False
    max_subdiv: int = 8
    tol: float = 1e-3
    strict: bool = False
    eps: Optional[float] = None  # default: half the quadrature cell width


@dataclass
class QuadratureResult:
    value: float
    refined: Optional[float]
    excluded_fraction: float
    subdiv: int

    @property
    def relative_change(self) -> Optional[float]:
        if self.refined is None:
            return None
        den = max(abs(self.refined), 1e-300)
        return abs(self.refined - self.value) / den


def _axis_tables(lefts: Sequence[float], length: float, m: int, tags: Sequence[int], eps: float):
    """Per-axis flattened (x, y, z) tables of gaps, coordinate sums, weights and exclusion."""
    t = (np.arange(m) + 0.5) / m * length
    pts = [lefts[j] + t for j in range(3)]
    w = []
    for j in range(3):
        base = np.full(m, length / m)
        if tags[j]:
            base = base * np.where(np.arange(m) < m // 2, 1.0, -1.0)
        w.append(base)
    X, Y, Z = np.meshgrid(pts[0], pts[1], pts[2], indexing="ij")
    a = np.abs(periodic_offset(X - Z))
    b = np.abs(periodic_offset(Y - Z))
    c = np.abs(periodic_offset(X - Y))
    gap = (a + b + c).ravel()
    excluded = ((a + b) < eps).ravel()
    weight = np.einsum("a,b,c->abc", *w).ravel()
    coord = (X + Y + Z).ravel()
    return gap, coord, weight, excluded, (X.ravel(), Y.ravel(), Z.ravel())


def _quad_once(K: Kernel, rects: Sequence[Rect], tags3: Triple, m: int, eps: Optional[float]) -> Tuple[float, float]:
    scales = rects[0].scales
    tabs = []
    for ax in range(3):
        length = 2.0 ** -scales[ax]
        lefts = [getattr(R, f"I{ax + 1}").pos * length for R in rects]
        tags = (0, 0, tags3[ax])
        e = (0.5 * length / m) if eps is None else eps
        tabs.append(_axis_tables(lefts, length, m, tags, e))
    weights = [t[2] for t in tabs]
    excl = [t[3] for t in tabs]
    absw = [np.abs(w) for w in weights]
    total_mass = float(np.prod([w.sum() for w in absw]))
    kept = [np.where(e, 0.0, w) for e, w in zip(excl, absw)]
    kept_mass = float(np.prod([k.sum() for k in kept]))
    excluded_fraction = 1.0 - kept_mass / total_mass if total_mass > 0 else 0.0
    if excluded_fraction > 0.5:
        raise DiagonalDominated(f"{excluded_fraction:.2%} of the quadrature mass touches the diagonal")
    wz = [np.where(e, 0.0, w) for e, w in zip(excl, weights)]
    norm = 1.0
    for R in rects:
        norm *= 2.0 ** (0.5 * R.volume_exponent)
    syn = K.synthetic
    if syn is not None:
        freq = np.array(syn.freq, dtype=float)
        val = _accel.synthetic_triple_sum(
            [t[0] for t in tabs], [2.0 * math.pi * freq[ax] * tabs[ax][1] for ax in range(3)], wz,
            syn.theta, syn.depth, syn.phase)
        return syn.scale * val * norm, excluded_fraction
    val = _generic_triple_sum(K, tabs, wz)
    return val * norm, excluded_fraction


def _generic_triple_sum(K: Kernel, tabs, wz) -> float:
    X = [t[4][0] for t in tabs]
    Y = [t[4][1] for t in tabs]
    Z = [t[4][2] for t in tabs]
    n1, n2, n3 = (len(w) for w in wz)
    total = 0.0
    w23 = wz[1][:, None] * wz[2][None, :]
    live2 = np.nonzero(wz[1])[0]
    live3 = np.nonzero(wz[2])[0]
    w23 = w23[np.ix_(live2, live3)]
    x2 = X[1][live2][:, None]
    y2 = Y[1][live2][:, None]
    z2 = Z[1][live2][:, None]
    x3 = X[2][live3][None, :]
    y3 = Y[2][live3][None, :]
    z3 = Z[2][live3][None, :]
    for i in np.nonzero(wz[0])[0]:
        with np.errstate(divide="ignore", invalid="ignore"):
            v = K((X[0][i], x2, x3), (Y[0][i], y2, y3), (Z[0][i], z2, z3))
        total += wz[0][i] * float(np.sum(np.broadcast_to(v, w23.shape) * w23))
    return total


def coefficient_detail(K: Kernel, I: ZygRect, n1: Sequence[int], n2: Sequence[int],
                       quad: QuadratureSpec = QuadratureSpec(), eta: Tuple[int, int] = (1, 1)) -> QuadratureResult:
    R1 = translate_rect(I, n1)
    R2 = translate_rect(I, n2)
    rects = (R1, R2, I)
    tags3 = (1,) + tuple(eta)
    m = quad.subdiv
    value, frac = _quad_once(K, rects, tags3, m, quad.eps)
    refined = None
    if quad.refine:
        m2 = min(2 * m, quad.max_subdiv)
        if m2 > m:
            refined, _ = _quad_once(K, rects, tags3, m2, quad.eps)
    res = QuadratureResult(value, refined, frac, m)
    if quad.strict and res.relative_change is not None and res.relative_change > quad.tol:
        raise QuadratureNonConvergent(f"refinement changed the value by {res.relative_change:.3g}")
    return res


def coefficient_from_kernel(K: Kernel, I: ZygRect, n1: Sequence[int], n2: Sequence[int],
                            quad: QuadratureSpec = QuadratureSpec(), eta: Tuple[int, int] = (1, 1)) -> float:
    res = coefficient_detail(K, I, n1, n2, quad, eta)
    return res.refined if res.refined is not None else res.value


def extract_coefficient(T: TrilinearForm, I: ZygRect, n1: Sequence[int], n2: Sequence[int],
                        eta: Tuple[int, int] = (1, 1), quad: Optional[QuadratureSpec] = None) -> float:
    """``<T(h0_{I+n1}, h0_{I+n2}), h_{I,Z}>``."""
    if T.tensor is None and T._builder is None and T.kernel is not None:
        return coefficient_from_kernel(T.kernel, I, n1, n2, quad or QuadratureSpec(), eta)
    grid = T.grid
    h1 = haar_tensor(translate_rect(I, n1), (0, 0, 0), grid)
    h2 = haar_tensor(translate_rect(I, n2), (0, 0, 0), grid)
    h3 = haar_tensor(I, (1,) + tuple(eta), grid)
    return T.evaluate(h1, h2, h3)


# ---------------------------------------------------------------------------
# complexity buckets

def spread_range(k: int) -> Tuple[int, int]:
    """Integers ``m`` with ``m in (2**(k-3), 2**(k-2)]``; ``k = 0`` means ``m = 0``."""
    if k == 0:
        return (0, 0)
    if k < 2:
        raise ValueError("bucket complexities are 0 or at least 2")
    lo = int(math.floor(2.0 ** (k - 3))) + 1
    return (lo, 1 << (k - 2))


def bucket_of(n1: Sequence[int], n2: Sequence[int]) -> Triple:
    out = []
    for m in range(3):
        s = max(abs(n1[m]), abs(n2[m]))
        out.append(0 if s == 0 else int(math.ceil(math.log2(s))) + 2)
    return tuple(out)


def admissible_complexities(grid: GridSpec) -> List[Triple]:
    out = []
    for k1 in range(2, grid.L1 + 1):
        for k2 in [0] + list(range(2, grid.L2 + 1)):
            for k3 in [0] + list(range(2, grid.L1 + grid.L2 + 1)):
                if k2 == 0 and k3 == 0:
                    continue
                if _bucket_scales(grid, (k1, k2, k3)):
                    out.append((k1, k2, k3))
    return out


def _bucket_scales(grid: GridSpec, k: Triple) -> List[Tuple[int, int]]:
    out = []
    for j1 in range(grid.L1 + 1):
        for j2 in range(grid.L2 + 1):
            j3 = j1 + j2
            if j3 > grid.L3:
                continue
            if j1 >= k[0] and j2 >= k[1] and j3 >= k[2]:
                out.append((j1, j2))
    return out


def _good_positions(j: int, k: int) -> np.ndarray:
    """Positions at scale ``j`` that are good for complexity ``k`` (all positions when k = 0)."""
    pos = np.arange(1 << j)
    if k == 0:
        return pos
    r = pos & ((1 << k) - 1)
    margin = 1 << (k - 2)
    return pos[(r >= margin) & (r <= (1 << k) - 1 - margin)]


def _offset_pairs(k: int) -> List[Tuple[int, int]]:
    if k == 0:
        return [(0, 0)]
    lo, hi = spread_range(k)
    out = []
    for a in range(-hi, hi + 1):
        for b in range(-hi, hi + 1):
            if lo <= max(abs(a), abs(b)) <= hi:
                out.append((a, b))
    return out


def bucket_members(grid: GridSpec, k: Triple) -> Iterable[Tuple[ZygRect, Triple, Triple]]:
    """All good ``I`` with all ``(n1, n2)`` of complexity bucket ``k``."""
    pairs = [_offset_pairs(km) for km in k]
    for j1, j2 in _bucket_scales(grid, k):
        j = (j1, j2, j1 + j2)
        goods = [_good_positions(j[m], k[m]) for m in range(3)]
        for p in product(*goods):
            I = ZygRect(DyadicInterval(1, j[0], int(p[0])), DyadicInterval(2, j[1], int(p[1])), DyadicInterval(3, j[2], int(p[2])))
            for q in product(*pairs):
                yield I, (q[0][0], q[1][0], q[2][0]), (q[0][1], q[1][1], q[2][1])


def sample_bucket(grid: GridSpec, k: Triple, count: int, rng: np.random.Generator) -> List[Tuple[ZygRect, Triple, Triple]]:
    scales = _bucket_scales(grid, k)
    if not scales:
        raise EmptyComplexityBucket(f"complexity {k} does not fit {grid}")
    pairs = [_offset_pairs(km) for km in k]
    out = []
    for _ in range(count):
        j1, j2 = scales[rng.integers(len(scales))]
        j = (j1, j2, j1 + j2)
        p = [int(rng.choice(_good_positions(j[m], k[m]))) for m in range(3)]
        I = ZygRect(DyadicInterval(1, j[0], p[0]), DyadicInterval(2, j[1], p[1]), DyadicInterval(3, j[2], p[2]))
        q = [pairs[m][rng.integers(len(pairs[m]))] for m in range(3)]
        out.append((I, (q[0][0], q[1][0], q[2][0]), (q[0][1], q[1][1], q[2][1])))
    return out


def normalization(I: Rect, k: Triple) -> float:
    """``|I|**1.5 / |K|**2`` with ``K = I^(k)``."""
    vol_I = 2.0 ** -I.volume_exponent
    vol_K = 2.0 ** -(I.volume_exponent - sum(k))
    return vol_I ** 1.5 / vol_K ** 2


@dataclass
class DecayFitReport:
    buckets: Dict[Triple, Dict[str, float]] = field(default_factory=dict)
    constant: float = 0.0
    samples: int = 0

    @property
    def growth_factor(self) -> float:
        """Largest bucket max over the largest bucket max at the smallest ``|k|``."""
        if not self.buckets:
            return 0.0
        smallest = min(sum(k) for k in self.buckets)
        base = max(v["max"] for k, v in self.buckets.items() if sum(k) == smallest)
        top = max(v["max"] for v in self.buckets.values())
        return top / base if base > 0 else (0.0 if top == 0 else math.inf)

    def to_json(self) -> str:
        return json.dumps({
            "constant": self.constant,
            "samples": self.samples,
            "growth_factor": self.growth_factor,
            "buckets": {",".join(map(str, k)): v for k, v in sorted(self.buckets.items())},
        }, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["k1,k2,k3,bucket_max,phi,normalized_max"]
        for k, v in sorted(self.buckets.items()):
            lines.append(f"{k[0]},{k[1]},{k[2]},{v['coef_max']!r},{v['phi']!r},{v['max']!r}")
        return "\n".join(lines) + "\n"


def decay_fit(T, params: KernelParams, k_range: Optional[Sequence[Triple]] = None, grid: GridSpec = GridSpec(3, 3, 6),
              samples: int = 8, seed: int = 0, quad: QuadratureSpec = QuadratureSpec(),
              etas: Sequence[Tuple[int, int]] = ETAS) -> DecayFitReport:
    """Sampled per-bucket maxima of ``|c| |K|^2 / ((|k|+1)^2 phi(k) |I|^1.5)``.

    ``T`` is a :class:`Kernel` or a :class:`TrilinearForm`.
    """
    if isinstance(T, TrilinearForm):
        grid = T.grid

        def coef(I, n1, n2, eta):
            return extract_coefficient(T, I, n1, n2, eta, quad)
    else:
        def coef(I, n1, n2, eta):
            return coefficient_from_kernel(T, I, n1, n2, quad, eta)

    rng = np.random.default_rng(seed)
    ks = list(k_range) if k_range is not None else admissible_complexities(grid)
    report = DecayFitReport()
    for k in ks:
        weight = (complexity_size(k) + 1) ** 2 * phi(k, params)
        best = 0.0
        raw = 0.0
        count = 0
        for I, n1, n2 in sample_bucket(grid, k, samples, rng):
            for eta in etas:
                c = coef(I, n1, n2, eta)
                raw = max(raw, abs(c))
                best = max(best, abs(c) / (weight * normalization(I, k)))
                count += 1
        report.buckets[tuple(k)] = {"max": best, "coef_max": raw, "phi": phi(k, params), "count": count}
        report.samples += count
    report.constant = max((v["max"] for v in report.buckets.values()), default=0.0)
    return report


def assemble_shift(T: TrilinearForm, k: Triple, params: KernelParams = KernelParams(), C: Optional[float] = None,
                   quad: Optional[QuadratureSpec] = None, etas: Sequence[Tuple[int, int]] = ETAS):
    """Shift of complexity ``k`` whose coefficients are the normalized ``c_{I,n1,n2}`` on good rectangles."""
    from .shifts import ShiftData

    grid = T.grid
    k = tuple(int(v) for v in k)
    weight = (complexity_size(k) + 1) ** 2 * phi(k, params)
    records = []
    for I, n1, n2 in bucket_members(grid, k):
        if I.I1.j >= grid.L1:
            continue
        for eta in etas:
            # cancellative Haar functions at the finest grid scale are not representable
            if (eta[0] and I.I2.j >= grid.L2) or (eta[1] and I.I3.j >= grid.L3):
                continue
            c = extract_coefficient(T, I, n1, n2, eta, quad)
            records.append((I, n1, n2, eta, c))
    if not records:
        raise EmptyComplexityBucket(f"no good rectangles of complexity {k} on {grid}")
    fitted = max(abs(c) / (weight * normalization(I, k)) for I, _, _, _, c in records)
    if C is None:
        C = fitted if fitted > 0 else 1.0
    entries = []
    for I, n1, n2, eta, c in records:
        if c == 0.0:
            continue
        a = c / (C * weight)
        if abs(a) > normalization(I, k) * (1 + 1e-12):
            raise NormalizationOverflow(f"coefficient {a} exceeds the bound at {I} with C={C}")
        entries.append((translate_rect(I, n1), translate_rect(I, n2), I, eta, a))
    return ShiftData.from_entries(grid, k, entries, j1=3, j2=3), C
