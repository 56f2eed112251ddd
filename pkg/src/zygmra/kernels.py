"""Zygmund-type singular kernels, their estimates, and bilinear multipliers.

Two families live here.  Point kernels ``K(x, y, z)`` on the torus come with
the decay factor ``D_theta`` and the size factor ``S`` that bound them.
Frequency-side symbols ``m(xi, eta)`` are turned into operators by truncated
discrete Fourier sums.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CutoffTooLarge, DiagonalPoint, GridMismatch, UnknownFixture
from .haar import GridFunction
from .lattice import GridSpec, enum_zygmund, zygmund_scales

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class KernelParams:
    theta: float = 1.0
    alpha1: float = 1.0
    alpha23: float = 1.0
    theta_tilde: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.theta <= 2.0):
            raise ValueError(f"theta must lie in (0, 2], got {self.theta}")
        for name in ("alpha1", "alpha23"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.theta_tilde is None:
            object.__setattr__(self, "theta_tilde", min(self.theta, 1.0))
        elif not (0.0 < self.theta_tilde <= 1.0):
            raise ValueError("theta_tilde must lie in (0, 1]")


def periodic_offset(t):
    """Representative of ``t`` mod 1 in ``[-1/2, 1/2)``."""
    return (np.asarray(t, dtype=float) + 0.5) % 1.0 - 0.5


def decay_from_gaps(g1, g2, g3, theta: float):
    ratio = (g1 * g2) / g3
    return (ratio + 1.0 / ratio) ** (-theta)


def _gaps(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.abs(x) + np.abs(y)


def decay_D(x, y, theta: float):
    g = _gaps(x, y)
    P = g[..., 0] * g[..., 1]
    g3 = g[..., 2]
    if np.any(P == 0) or np.any(g3 == 0):
        raise DiagonalPoint("decay factor undefined: a gap vanishes")
    out = decay_from_gaps(g[..., 0], g[..., 1], g3, theta)
    return float(out) if np.ndim(out) == 0 else out


def size_S(x, y):
    g = _gaps(x, y)
    if np.any(g == 0):
        raise DiagonalPoint("size factor undefined: a gap vanishes")
    out = np.prod(g ** -2.0, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# point kernels

Coords = Tuple[np.ndarray, np.ndarray, np.ndarray]


def _as_coords(p) -> Coords:
    if isinstance(p, tuple) and len(p) == 3:
        return tuple(np.asarray(c, dtype=float) for c in p)
    arr = np.asarray(p, dtype=float)
    return (arr[..., 0], arr[..., 1], arr[..., 2])


@dataclass(frozen=True)
class SyntheticSpec:
    """Closed form of a synthetic kernel, used by the compiled quadrature."""

    theta: float
    freq: Tuple[int, int, int]
    phase: float
    depth: float
    scale: float = 1.0


class Kernel:
    """A trilinear kernel ``K(x, y, z)`` evaluated with periodic semantics.

    The evaluator receives three coordinate triples of broadcastable arrays.
    """

    def __init__(self, evaluator: Callable[[Coords, Coords, Coords], np.ndarray], params: KernelParams,
                 provenance: str = "user", name: str = "", synthetic: Optional[SyntheticSpec] = None):
        if provenance not in ("synthetic", "multiplier-derived", "user"):
            raise ValueError(f"unknown provenance {provenance!r}")
        self._ev = evaluator
        self.params = params
        self.provenance = provenance
        self.name = name
        self.synthetic = synthetic

    def __call__(self, x, y, z):
        return self._ev(_as_coords(x), _as_coords(y), _as_coords(z))

    def scaled(self, c: float) -> "Kernel":
        ev = self._ev
        syn = None
        if self.synthetic is not None:
            s = self.synthetic
            syn = SyntheticSpec(s.theta, s.freq, s.phase, s.depth, s.scale * c)
        return Kernel(lambda x, y, z: c * ev(x, y, z), self.params, self.provenance, f"{c}*{self.name}", syn)

    def adjoint(self, j: int, part: str = "full") -> "Kernel":
        """``K^{*,j}`` (part='full'), ``K^{*,j}_1`` (part='1') or ``K^{*,j}_{2,3}`` (part='23')."""
        if j not in (1, 2):
            raise ValueError("adjoint index must be 1 or 2")
        ev = self._ev
        axes = {"full": (0, 1, 2), "1": (0,), "23": (1, 2)}[part]

        def swap(a: Coords, b: Coords) -> Tuple[Coords, Coords]:
            a2 = tuple(b[i] if i in axes else a[i] for i in range(3))
            b2 = tuple(a[i] if i in axes else b[i] for i in range(3))
            return a2, b2

        if j == 1:
            def adj(x, y, z):
                x2, z2 = swap(x, z)
                return ev(x2, y, z2)
        else:
            def adj(x, y, z):
                y2, z2 = swap(y, z)
                return ev(x, y2, z2)
        return Kernel(adj, self.params, self.provenance, f"{self.name}*{j}{'' if part == 'full' else '_' + part}",
                      self.synthetic if self.synthetic is not None else None)


def symmetric_gaps(x: Coords, y: Coords, z: Coords):
    out = []
    for i in range(3):
        a = np.abs(periodic_offset(x[i] - z[i]))
        b = np.abs(periodic_offset(y[i] - z[i]))
        c = np.abs(periodic_offset(x[i] - y[i]))
        out.append(a + b + c)
    return out


def synthetic_kernel(params: KernelParams, seed: int = 0, modulation: bool = True) -> Kernel:
    """``K = s * D_theta * S`` on permutation-symmetric periodic gaps.

    ``s = 1 - depth*(1 - cos(2 pi u.(x+y+z) + phase))/2`` with a seeded
    integer frequency ``u``; ``depth = 0`` gives ``s = 1``.
    """
    rng = np.random.default_rng(seed)
    freq = tuple(int(v) for v in rng.integers(-1, 2, size=3))
    if not any(freq):
        freq = (1, 0, 0)
    phase = float(rng.uniform(0.0, TWO_PI))
    # keeps |s| <= 1 and the first differences of s below 1/3 per coordinate
    depth = 1.0 / (3.0 * math.pi * sum(abs(f) for f in freq)) if modulation else 0.0
    theta = params.theta
    spec = SyntheticSpec(theta, freq, phase, depth, 1.0)

    def ev(x, y, z):
        g1, g2, g3 = symmetric_gaps(x, y, z)
        val = decay_from_gaps(g1, g2, g3, theta) / (g1 * g1 * g2 * g2 * g3 * g3)
        if depth:
            psi = TWO_PI * sum(freq[i] * (x[i] + y[i] + z[i]) for i in range(3)) + phase
            val = val * (1.0 - 0.5 * depth * (1.0 - np.cos(psi)))
        return val

    return Kernel(ev, params, "synthetic", f"synthetic(theta={theta},seed={seed})", spec)


def zero_kernel(params: KernelParams = KernelParams()) -> Kernel:
    return Kernel(lambda x, y, z: np.zeros(np.broadcast(*x, *y, *z).shape), params, "user", "zero")


# ---------------------------------------------------------------------------
# estimate checker

@dataclass
class EstimateReport:
    entries: Dict[str, Dict[str, object]] = field(default_factory=dict)
    samples: int = 0
    skipped: int = 0

    def constant(self, name: str, adjusted: bool = False) -> float:
        return float(self.entries[name]["log_adjusted" if adjusted else "constant"])

    def to_json(self) -> str:
        data = {"samples": self.samples, "skipped": self.skipped}
        data.update(self.entries)
        return json.dumps(data, sort_keys=True)


def _zygmund_log(g1, g2, g3):
    return 1.0 + np.abs(np.log((g1 * g2) / g3))


def check_kernel_estimates(K: Kernel, samples: int = 1000, seed: int = 0) -> EstimateReport:
    """Sampled constants of the size, mixed Hoelder and full Hoelder estimates.

    Each constant is the max over admissible samples of |LHS| / RHS.  The
    log-adjusted constants divide additionally by ``1 + |log zygmund ratio|``.
    The ``-y`` variants perturb the second argument instead of the first.
    """
    rng = np.random.default_rng(seed)
    p = K.params
    x = rng.random((samples, 3))
    y = rng.random((samples, 3))
    z = rng.random((samples, 3))
    u = periodic_offset(x - z)
    v = periodic_offset(y - z)
    g = np.abs(u) + np.abs(v)
    ok = np.all(g > 1e-12, axis=1)
    reach = np.maximum(np.abs(u), np.abs(v)) / 2.0
    delta = rng.uniform(-1.0, 1.0, (samples, 3)) * reach
    ok &= np.all(np.abs(delta) > 1e-15, axis=1)
    x, y, z, g, delta = x[ok], y[ok], z[ok], g[ok], delta[ok]
    report = EstimateReport(samples=int(ok.sum()), skipped=int((~ok).sum()))
    if report.samples == 0:
        return report
    base = decay_from_gaps(g[:, 0], g[:, 1], g[:, 2], p.theta) * np.prod(g ** -2.0, axis=1)
    logf = _zygmund_log(g[:, 0], g[:, 1], g[:, 2])
    r1 = (np.abs(delta[:, 0]) / g[:, 0]) ** p.alpha1
    r23 = (np.abs(delta[:, 1]) / g[:, 1] + np.abs(delta[:, 2]) / g[:, 2]) ** p.alpha23

    def record(name, lhs, rhs, pts):
        ratio = np.abs(lhs) / rhs
        i = int(np.argmax(ratio))
        report.entries[name] = {
            "constant": float(ratio[i]),
            "log_adjusted": float(np.max(ratio / logf)),
            "samples": report.samples,
            "worst_point": [float(t) for t in pts[i]],
        }

    record("size", K(x, y, z), base, np.hstack([x, y, z]))
    for tag, moving in (("", "x"), ("-y", "y")):
        a = x if moving == "x" else y
        c = a + delta
        m1 = a.copy()
        m1[:, 0] = c[:, 0]
        m23 = a.copy()
        m23[:, 1:] = c[:, 1:]

        def ev(pt):
            return K(pt, y, z) if moving == "x" else K(x, pt, z)

        k0 = ev(a)
        k1 = ev(m1)
        k23 = ev(m23)
        kc = ev(c)
        pts = np.hstack([x, y, z, delta])
        record("holder-axis1" + tag, k1 - k0, r1 * base, pts)
        record("holder-axes23" + tag, k23 - k0, r23 * base, pts)
        record("holder-full" + tag, kc - k1 - k23 + k0, r1 * r23 * base, pts)
    return report


# ---------------------------------------------------------------------------
# predicates on trilinear forms (duck-typed: .grid, .evaluate, .dense_tensor())

def _indicator(grid: GridSpec, idx) -> GridFunction:
    out = np.zeros(grid.shape)
    out[np.ix_(*idx)] = 1.0
    return GridFunction(grid, out)


def wbp_check(T) -> float:
    """max over Zygmund rectangles of |<T(1_I, 1_I), 1_I>| / |I|."""
    grid = T.grid
    tensor = T.dense_tensor() if getattr(T, "prefers_tensor", False) else None
    vol = grid.cell_volume
    worst = 0.0
    for Z in enum_zygmund(grid):
        idx = [Z.I1.cell_indices(grid.L1), Z.I2.cell_indices(grid.L2), Z.I3.cell_indices(grid.L3)]
        measure = 2.0 ** -(Z.I1.j + Z.I2.j + Z.I3.j)
        if tensor is not None:
            flat = np.ravel_multi_index(np.ix_(*idx), grid.shape).ravel()
            val = tensor[np.ix_(flat, flat, flat)].sum() * vol ** 3
        else:
            ind = _indicator(grid, idx)
            val = T.evaluate(ind, ind, ind)
        worst = max(worst, abs(val) / measure)
    return worst


def _dyadic_indicator_matrix(levels: int) -> np.ndarray:
    """Rows: indicators of every dyadic interval of [0,1) at resolution ``levels``."""
    n = 1 << levels
    rows = []
    for j in range(levels + 1):
        w = n >> j
        for p in range(1 << j):
            r = np.zeros(n)
            r[p * w:(p + 1) * w] = 1.0
            rows.append(r)
    return np.array(rows)


def _haar_matrix(levels: int) -> np.ndarray:
    """Rows: cancellative Haar profiles (unnormalized sign patterns scaled to unit L2)."""
    n = 1 << levels
    rows = []
    for j in range(levels):
        w = n >> j
        for p in range(1 << j):
            r = np.zeros(n)
            r[p * w:p * w + w // 2] = 1.0
            r[p * w + w // 2:(p + 1) * w] = -1.0
            rows.append(r * 2.0 ** (0.5 * j))
    return np.array(rows).reshape(-1, n)


def _rect_indicator_matrix(L2: int, L3: int) -> np.ndarray:
    A = _dyadic_indicator_matrix(L2)
    B = _dyadic_indicator_matrix(L3)
    return np.einsum("ia,jb->ijab", A, B).reshape(A.shape[0] * B.shape[0], -1)


def _rect_haar_matrix(L2: int, L3: int) -> np.ndarray:
    """Rows: cancellative one-parameter Haar functions h^eta on (2,3) rectangles, all scales."""
    rows = []
    for j2 in range(L2):
        for j3 in range(L3):
            n2, n3 = 1 << L2, 1 << L3
            w2, w3 = n2 >> j2, n3 >> j3
            for p2 in range(1 << j2):
                for p3 in range(1 << j3):
                    for eta in ((0, 1), (1, 0), (1, 1)):
                        a = np.zeros(n2)
                        b = np.zeros(n3)
                        a[p2 * w2:(p2 + 1) * w2] = 1.0
                        b[p3 * w3:(p3 + 1) * w3] = 1.0
                        if eta[0]:
                            a[p2 * w2 + w2 // 2:(p2 + 1) * w2] *= -1.0
                        if eta[1]:
                            b[p3 * w3 + w3 // 2:(p3 + 1) * w3] *= -1.0
                        rows.append(np.outer(a, b).ravel() * 2.0 ** (0.5 * (j2 + j3)))
    return np.array(rows).reshape(-1, (1 << L2) * (1 << L3))


def _pf_axis1(A: np.ndarray, grid: GridSpec) -> float:
    """Cancellation on axis 1 in the output slot, indicators on axes 2-3."""
    if grid.L1 == 0:
        return 0.0
    H1 = _haar_matrix(grid.L1)
    J = _rect_indicator_matrix(grid.L2, grid.L3)
    B = A.sum(axis=(0, 2))  # (x23, y23, z1, z23)
    C = np.einsum("hz,abzc->habc", H1, B)
    C = np.einsum("ia,habc->hibc", J, C)
    C = np.einsum("jb,hibc->hijc", J, C)
    C = np.einsum("kc,hijc->hijk", J, C)
    return float(np.abs(C).max())


def _pf_axes23(A: np.ndarray, grid: GridSpec) -> float:
    """Cancellation on axes 2-3 in the output slot, indicators on axis 1."""
    if grid.L2 == 0 or grid.L3 == 0:
        return 0.0
    H23 = _rect_haar_matrix(grid.L2, grid.L3)
    I1 = _dyadic_indicator_matrix(grid.L1)
    B = A.sum(axis=(1, 3))  # (x1, y1, z1, z23)
    C = np.einsum("hw,abcw->habc", H23, B)
    C = np.einsum("ia,habc->hibc", I1, C)
    C = np.einsum("jb,hibc->hijc", I1, C)
    C = np.einsum("kc,hijc->hijk", I1, C)
    return float(np.abs(C).max())


# index order of the split tensor: (x1, x23, y1, y23, z1, z23)
_PARTIAL_ADJOINTS_1 = ((0, 1, 2, 3, 4, 5), (4, 1, 2, 3, 0, 5), (0, 1, 4, 3, 2, 5))
_PARTIAL_ADJOINTS_23 = ((0, 1, 2, 3, 4, 5), (0, 5, 2, 3, 4, 1), (0, 1, 2, 5, 4, 3))


def paraproduct_free_defect(T) -> float:
    """Largest paraproduct test value over T and its partial adjoints.

    Axis-1 tests run on T and the two adjoints that swap only axis 1;
    axes-2-3 tests run on T and the two adjoints that swap only axes 2-3.
    """
    grid = T.grid
    n1 = 1 << grid.L1
    n23 = (1 << grid.L2) * (1 << grid.L3)
    A = T.dense_tensor().reshape(n1, n23, n1, n23, n1, n23)
    worst = 0.0
    for perm in _PARTIAL_ADJOINTS_1:
        worst = max(worst, _pf_axis1(A.transpose(perm), grid))
    for perm in _PARTIAL_ADJOINTS_23:
        worst = max(worst, _pf_axes23(A.transpose(perm), grid))
    return worst * grid.cell_volume ** 3


# ---------------------------------------------------------------------------
# bilinear Fourier multipliers

def _pair_norm(a, b):
    return np.sqrt(a * a + b * b)


def _safe_div(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _m1(a, b):
    # smooth, 0-homogeneous on R^2 minus the origin
    return _safe_div(a * a - b * b + a * b, a * a + b * b)


def _m23_separable(x2, x3, e2, e3):
    # 0-homogeneous in (xi2, eta2) and in (xi3, eta3) separately
    return _safe_div(x2 * x3 + e2 * e3 + 0.5 * x2 * e3, _pair_norm(x2, e2) * _pair_norm(x3, e3))


def _g_entangled(w0, w1, w2, w3):
    # 0-homogeneous and smooth on R^4 minus the origin
    r2 = w0 * w0 + w1 * w1 + w2 * w2 + w3 * w3
    return _safe_div(w0 * w2 + w1 * w3 + 0.5 * w0 * w3 + 0.25 * (w0 * w0 - w1 * w1), r2)


@dataclass(frozen=True)
class Symbol:
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    N: int
    kind: str
    name: str
    factor1: Optional[Callable] = None
    factor23: Optional[Callable] = None

    def __call__(self, xi, eta):
        return self.evaluator(np.asarray(xi, dtype=float), np.asarray(eta, dtype=float))

    def scaled(self, c: float) -> "Symbol":
        ev = self.evaluator
        f1 = self.factor1
        return Symbol(lambda a, b: c * ev(a, b), self.N, self.kind, f"{c}*{self.name}",
                      (lambda a, b: c * f1(a, b)) if f1 is not None else None, self.factor23)

    @property
    def separable(self) -> bool:
        return self.factor1 is not None and self.factor23 is not None

    @staticmethod
    def constant(c: float = 1.0, N: int = 0) -> "Symbol":
        return Symbol(lambda a, b: np.full(np.broadcast(a[..., 0], b[..., 0]).shape, float(c)), N, "constant", f"const({c})")


def fp_symbol(kind: str = "separable-test", N: int = 2) -> Symbol:
    if kind in ("separable-test", "sep-basic"):
        def ev(xi, eta):
            return _m1(xi[..., 0], eta[..., 0]) * _m23_separable(xi[..., 1], xi[..., 2], eta[..., 1], eta[..., 2])

        return Symbol(ev, N, "separable-test", "sep-basic", _m1, _m23_separable)
    if kind in ("entangled", "entangled-1"):
        def ev(xi, eta):
            r1 = _pair_norm(xi[..., 0], eta[..., 0])
            w2 = _safe_div(xi[..., 2], r1)
            w3 = _safe_div(eta[..., 2], r1)
            return _m1(xi[..., 0], eta[..., 0]) * _g_entangled(xi[..., 1], eta[..., 1], w2, w3)

        return Symbol(ev, N, "entangled", "entangled-1")
    raise UnknownFixture(f"unknown symbol fixture {kind!r}")


def rho(s: float, t: float, xi, eta):
    scale = np.array([s, t, s * t])
    return np.asarray(xi) * scale, np.asarray(eta) * scale


def _fd_weights(N: int) -> np.ndarray:
    """Central weights on offsets -N..N for derivatives of order 0..N."""
    k = np.arange(-N, N + 1, dtype=float)
    V = np.vander(k, 2 * N + 1, increasing=True).T  # V[m, i] = k_i^m
    W = np.zeros((N + 1, 2 * N + 1))
    for d in range(N + 1):
        rhs = np.zeros(2 * N + 1)
        rhs[d] = math.factorial(d)
        W[d] = np.linalg.solve(V, rhs)
    return W


def sample_annulus(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """``n`` points of A^1 as (xi, eta) arrays of shape (n, 3)."""
    d1 = rng.standard_normal((n, 2))
    d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
    d1 *= rng.uniform(0.5, 1.0, (n, 1)) + 1e-9
    d23 = rng.standard_normal((n, 4))
    d23 /= np.linalg.norm(d23, axis=1, keepdims=True)
    d23 *= rng.uniform(0.5, 1.0, (n, 1)) + 1e-9
    xi = np.stack([d1[:, 0], d23[:, 0], d23[:, 1]], axis=1)
    eta = np.stack([d1[:, 1], d23[:, 2], d23[:, 3]], axis=1)
    return xi, eta


def mz1_norm(m: Symbol, N: Optional[int] = None, samples: int = 16, seed: int = 0,
             dyadic_range: Sequence[int] = tuple(range(-4, 5)), per_dilation: bool = False,
             step_exponent: int = 6):
    """Sampled ``sup |d^a_xi d^b_eta (m o rho_{s,t})|`` over A^1 with |a|,|b|_inf <= N."""
    N = m.N if N is None else N
    rng = np.random.default_rng(seed)
    xi, eta = sample_annulus(samples, rng)
    W = _fd_weights(N)
    offs = np.arange(-N, N + 1, dtype=float)
    npt = 2 * N + 1
    # stencil offsets on the six coordinates, tensor layout (npt,)*6
    grids = np.meshgrid(*([offs] * 6), indexing="ij")
    stencil = np.stack([g.ravel() for g in grids], axis=1)  # (npt^6, 6)
    results = {}
    for a in dyadic_range:
        for b in dyadic_range:
            s, t = 2.0 ** a, 2.0 ** b
            best = 0.0
            for i in range(samples):
                base = np.concatenate([xi[i], eta[i]])
                h = 2.0 ** -step_exponent * np.linalg.norm(base)
                pts = base + h * stencil
                pxi, peta = rho(s, t, pts[:, :3], pts[:, 3:])
                vals = m(pxi, peta).reshape((npt,) * 6)
                D = vals
                for ax in range(6):
                    D = np.tensordot(W, D, axes=([1], [ax]))
                    D = np.moveaxis(D, 0, ax)
                # scale by h^-(order) per axis
                order = np.arange(N + 1, dtype=float)
                scale = h ** -order
                for ax in range(6):
                    shape = [1] * 6
                    shape[ax] = N + 1
                    D = D * scale.reshape(shape)
                best = max(best, float(np.abs(D).max()))
            results[(a, b)] = best
    overall = max(results.values())
    return (overall, results) if per_dilation else overall


def _cutoffs(F, grid: GridSpec) -> Tuple[int, int, int]:
    F = (F, F, F) if np.isscalar(F) else tuple(int(v) for v in F)
    for Fi, Li in zip(F, grid.L):
        if Fi < 0 or 2 * Fi + 1 > (1 << Li):
            raise CutoffTooLarge(f"cutoff {Fi} needs at least {2 * Fi + 1} cells, axis has {1 << Li}")
    return F


def _freq_list(F: Tuple[int, int, int]) -> np.ndarray:
    axes = [np.arange(-f, f + 1) for f in F]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


def _hat(values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values) / values.size


def apply_multiplier(m: Symbol, f1: GridFunction, f2: GridFunction, F) -> GridFunction:
    if f1.grid != f2.grid:
        raise GridMismatch("multiplier inputs live on different grids")
    grid = f1.grid
    F = _cutoffs(F, grid)
    shape = np.array(grid.shape)
    freqs = _freq_list(F)
    h1 = _hat(f1.values)
    h2 = _hat(f2.values)
    idx = tuple((freqs % shape).T)
    c1 = h1[idx]
    c2 = h2[idx]
    out_hat = np.zeros(grid.shape, dtype=complex)
    chunk = max(1, 200000 // max(1, len(freqs)))
    for s in range(0, len(freqs), chunk):
        xi = freqs[s:s + chunk].astype(float)
        mv = m(xi[:, None, :], freqs[None, :, :].astype(float))
        contrib = mv * c1[s:s + chunk, None] * c2[None, :]
        zeta = (freqs[s:s + chunk, None, :] + freqs[None, :, :]) % shape
        np.add.at(out_hat, (zeta[..., 0].ravel(), zeta[..., 1].ravel(), zeta[..., 2].ravel()), contrib.ravel())
    vals = np.fft.ifftn(out_hat) * out_hat.size
    return GridFunction(grid, vals.real)


def _factor_kernel_1(m1: Callable, F1: int, n1: int) -> np.ndarray:
    """Samples ``K1[a, b] = sum m1(p, q) e^{2 pi i (a p + b q)/n1}`` on grid offsets."""
    spec = np.zeros((n1, n1), dtype=complex)
    p = np.arange(-F1, F1 + 1)
    P, Q = np.meshgrid(p, p, indexing="ij")
    spec[P % n1, Q % n1] = m1(P.astype(float), Q.astype(float))
    return np.fft.ifftn(spec).real * spec.size


def _factor_kernel_23(m23: Callable, F2: int, F3: int, n2: int, n3: int) -> np.ndarray:
    spec = np.zeros((n2, n3, n2, n3), dtype=complex)
    a = np.arange(-F2, F2 + 1)
    b = np.arange(-F3, F3 + 1)
    X2, X3, E2, E3 = np.meshgrid(a, b, a, b, indexing="ij")
    spec[X2 % n2, X3 % n3, E2 % n2, E3 % n3] = m23(X2.astype(float), X3.astype(float), E2.astype(float), E3.astype(float))
    return np.fft.ifftn(spec).real * spec.size


def convolve_separable(m: Symbol, f1: GridFunction, f2: GridFunction, F) -> GridFunction:
    """Real-space evaluation of a separable multiplier through its sampled factor kernels."""
    if not m.separable:
        raise ValueError("convolution oracle needs a separable symbol")
    grid = f1.grid
    F = _cutoffs(F, grid)
    n1, n2, n3 = grid.shape
    K1 = _factor_kernel_1(m.factor1, F[0], n1)
    K23 = _factor_kernel_23(m.factor23, F[1], F[2], n2, n3)
    i1 = np.arange(n1)
    K1m = K1[(i1[:, None, None] - i1[None, :, None]) % n1, (i1[:, None, None] - i1[None, None, :]) % n1]
    i2 = np.arange(n2)
    i3 = np.arange(n3)
    d2 = (i2[:, None] - i2[None, :]) % n2
    d3 = (i3[:, None] - i3[None, :]) % n3
    # K23m[z2, z3, x2, x3, y2, y3]
    K23m = K23[d2[:, None, :, None, None, None], d3[None, :, None, :, None, None],
               d2[:, None, None, None, :, None], d3[None, :, None, None, None, :]]
    n23 = n2 * n3
    K23m = K23m.reshape(n23, n23, n23)
    a = f1.values.reshape(n1, n23)
    b = f2.values.reshape(n1, n23)
    out = np.einsum("zxy,wuv,xu,yv->zw", K1m, K23m, a, b, optimize=True)
    return GridFunction(grid, out.reshape(grid.shape) / (grid.cells ** 2))


@dataclass
class ReducedKernel:
    symbol: np.ndarray          # m_red on (2F1+1)^2 frequencies, complex
    kernel: np.ndarray          # K_red on n1 x n1 offsets
    symbol_sup: float
    cz_constant: float
    input_norm: float

    @property
    def normalized_symbol_sup(self) -> float:
        return self.symbol_sup / self.input_norm if self.input_norm else 0.0

    @property
    def normalized_cz_constant(self) -> float:
        return self.cz_constant / self.input_norm if self.input_norm else 0.0


def partial_kernel_reduce(m: Symbol, f23: np.ndarray, g23: np.ndarray, h23: np.ndarray, F, n1: int) -> ReducedKernel:
    """Freeze the (2,3) variables against ``f23, g23, h23``; return the axis-1 symbol and kernel."""
    f23 = np.asarray(f23, dtype=float)
    g23 = np.asarray(g23, dtype=float)
    h23 = np.asarray(h23, dtype=float)
    n2, n3 = f23.shape
    F1, F2, F3 = (F, F, F) if np.isscalar(F) else F
    if 2 * F1 + 1 > n1 or 2 * F2 + 1 > n2 or 2 * F3 + 1 > n3:
        raise CutoffTooLarge("cutoff exceeds the grid")
    fh = np.fft.fft2(f23) / f23.size
    gh = np.fft.fft2(g23) / g23.size
    hh = np.fft.fft2(h23) / h23.size
    a = np.arange(-F2, F2 + 1)
    b = np.arange(-F3, F3 + 1)
    A, B = np.meshgrid(a, b, indexing="ij")
    p23 = np.stack([A.ravel(), B.ravel()], axis=1)  # (n, 2)
    fv = fh[p23[:, 0] % n2, p23[:, 1] % n3]
    gv = gh[p23[:, 0] % n2, p23[:, 1] % n3]
    s2 = p23[:, None, 0] + p23[None, :, 0]
    s3 = p23[:, None, 1] + p23[None, :, 1]
    hv = hh[(-s2) % n2, (-s3) % n3]
    weight = fv[:, None] * gv[None, :] * hv  # (n, n)
    q = np.arange(-F1, F1 + 1)
    red = np.zeros((len(q), len(q)), dtype=complex)
    for i, x1 in enumerate(q):
        for j, e1 in enumerate(q):
            xi = np.zeros((len(p23), 1, 3))
            eta = np.zeros((1, len(p23), 3))
            xi[..., 0] = x1
            eta[..., 0] = e1
            xi[:, 0, 1:] = p23
            eta[0, :, 1:] = p23
            red[i, j] = np.sum(m(xi, eta) * weight)
    spec = np.zeros((n1, n1), dtype=complex)
    Q1, Q2 = np.meshgrid(q, q, indexing="ij")
    spec[Q1 % n1, Q2 % n1] = red
    ker = np.fft.ifftn(spec) * spec.size
    off = periodic_offset(np.arange(n1) / n1)
    U, V = np.meshgrid(np.abs(off), np.abs(off), indexing="ij")
    gap = U + V
    mask = gap > 0
    cz = float(np.max(np.abs(ker[mask]) * gap[mask] ** 2)) if mask.any() else 0.0
    norm = (np.mean(np.abs(f23) ** 4) ** 0.25) * (np.mean(np.abs(g23) ** 4) ** 0.25) * (np.mean(h23 ** 2) ** 0.5)
    return ReducedKernel(red, ker.real, float(np.abs(red).max()), cz, float(norm))


def fp_kernel(m: Symbol, F: Tuple[int, int, int], params: KernelParams = KernelParams(2.0, 1.0, 1.0)) -> Kernel:
    """Point kernel of a multiplier via truncated frequency sums (never materialized)."""
    F1, F2, F3 = F
    q1 = np.arange(-F1, F1 + 1)
    q2 = np.arange(-F2, F2 + 1)
    q3 = np.arange(-F3, F3 + 1)

    if m.separable:
        P, Q = np.meshgrid(q1, q1, indexing="ij")
        c1 = m.factor1(P.astype(float), Q.astype(float)).ravel()
        fr1 = np.stack([P.ravel(), Q.ravel()], axis=1).astype(float)
        X2, X3, E2, E3 = np.meshgrid(q2, q3, q2, q3, indexing="ij")
        c23 = m.factor23(X2.astype(float), X3.astype(float), E2.astype(float), E3.astype(float)).ravel()
        fr23 = np.stack([X2.ravel(), X3.ravel(), E2.ravel(), E3.ravel()], axis=1).astype(float)
        keep1 = c1 != 0
        keep23 = c23 != 0
        c1, fr1, c23, fr23 = c1[keep1], fr1[keep1], c23[keep23], fr23[keep23]

        def ev(x, y, z):
            u = [periodic_offset(z[i] - x[i]) for i in range(3)]
            v = [periodic_offset(z[i] - y[i]) for i in range(3)]
            shape = np.broadcast(*u, *v).shape
            u = [np.broadcast_to(a, shape).ravel() for a in u]
            v = [np.broadcast_to(a, shape).ravel() for a in v]
            ph1 = np.outer(u[0], fr1[:, 0]) + np.outer(v[0], fr1[:, 1])
            k1 = (np.cos(TWO_PI * ph1) @ c1)
            ph23 = (np.outer(u[1], fr23[:, 0]) + np.outer(u[2], fr23[:, 1])
                    + np.outer(v[1], fr23[:, 2]) + np.outer(v[2], fr23[:, 3]))
            k23 = (np.cos(TWO_PI * ph23) @ c23)
            return (k1 * k23).reshape(shape)

        return Kernel(ev, params, "multiplier-derived", f"kernel({m.name},F={F})")

    g = np.meshgrid(q1, q2, q3, q1, q2, q3, indexing="ij")
    fr = np.stack([a.ravel() for a in g], axis=1).astype(float)
    coef = m(fr[:, :3], fr[:, 3:])
    keep = coef != 0
    fr, coef = fr[keep], coef[keep]

    def ev_full(x, y, z):
        u = [periodic_offset(z[i] - x[i]) for i in range(3)]
        v = [periodic_offset(z[i] - y[i]) for i in range(3)]
        shape = np.broadcast(*u, *v).shape
        uv = np.stack([np.broadcast_to(a, shape).ravel() for a in u + v], axis=1)
        return (np.cos(TWO_PI * (uv @ fr.T)) @ coef).reshape(shape)

    return Kernel(ev_full, params, "multiplier-derived", f"kernel({m.name},F={F})")


def check_fp_kernel_estimates(K: Kernel, samples: int = 200, seed: int = 0) -> EstimateReport:
    return check_kernel_estimates(K, samples, seed)
