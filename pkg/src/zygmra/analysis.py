"""Norms, dyadic maximal and square functions, weights, sparse collections and operator-norm benches."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GammaUnachievable, UnknownFixture
from .haar import ETAS, GridFunction, _same_grid, block_expand, block_mean, haar_pairings, scale_average, scale_DZ
from .lattice import DilatedLatticeSpec, GridSpec, LatticeShift, dilated_scales, zygmund_scales

Triple = Tuple[int, int, int]


# ---------------------------------------------------------------------------
# parallel helper shared by the benches

def thread_count() -> int:
    try:
        n = int(os.environ.get("ZMRA_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else min(8, os.cpu_count() or 1)


def trial_seeds(seed: int, trials: int) -> List[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(trials)]


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map over a thread pool capped by ``ZMRA_THREADS``."""
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# norms

def lp_norm(f: GridFunction, p: float, weight: Optional["Weight"] = None) -> float:
    if p <= 0:
        raise ValueError("p must be positive")
    a = np.abs(f.values)
    if np.isinf(p):
        return float(a.max())
    w = 1.0 if weight is None else weight.values
    return float(np.mean(a ** p * w)) ** (1.0 / p)


def _scale_offsets(shift: Optional[LatticeShift], scales) -> Optional[Tuple[int, int, int]]:
    if shift is None:
        return None
    return tuple(shift.offset_cells(ax + 1, s) if s is not None else 0 for ax, s in enumerate(scales))


def maximal_MZ(f: GridFunction, shifts: Optional[Sequence[LatticeShift]] = None) -> GridFunction:
    """Dyadic maximal function over the Zygmund rectangles of one or several lattices."""
    a = np.abs(f.values)
    out = np.zeros_like(a)
    for shift in (shifts or [None]):
        for j1, j2 in zygmund_scales(f.grid):
            sc = (j1, j2, j1 + j2)
            out = np.maximum(out, scale_average(a, sc, _scale_offsets(shift, sc)))
    return GridFunction(f.grid, out)


def square_SZ(f: GridFunction) -> GridFunction:
    """``(sum_I |Delta_{I,Z} f|^2)^{1/2}``; completion terms are not included."""
    g = f.grid
    acc = np.zeros(g.shape)
    for j1 in range(g.L1):
        for j2 in range(g.L2):
            acc += scale_DZ(f.values, j1, j2) ** 2
    return GridFunction(g, np.sqrt(acc))


# ---------------------------------------------------------------------------
# weights

class Weight:
    """A strictly positive grid function with cached Muckenhoupt constants."""

    def __init__(self, w: GridFunction, name: str = ""):
        if np.any(~np.isfinite(w.values)) or w.values.min() <= 0:
            raise ValueError("weights must be finite and strictly positive")
        self.function = w
        self.name = name
        self._cache: Dict[tuple, float] = {}

    @property
    def grid(self) -> GridSpec:
        return self.function.grid

    @property
    def values(self) -> np.ndarray:
        return self.function.values

    def apz(self, p: float, flavor: str = "zygmund", n: int = 0) -> float:
        key = (p, flavor, n)
        if key not in self._cache:
            self._cache[key] = apz_constant(self, p, flavor, n)
        return self._cache[key]

    def __pow__(self, e: float) -> "Weight":
        return Weight(GridFunction(self.grid, self.values ** e), f"{self.name}^{e}")

    def __mul__(self, other: "Weight") -> "Weight":
        return Weight(GridFunction(self.grid, self.values * other.values), f"{self.name}*{other.name}")


def _flavor_scales(grid: GridSpec, flavor: str, n: int) -> List[Triple]:
    if flavor == "zygmund":
        return [(a, b, a + b) for a, b in zygmund_scales(grid)]
    if flavor == "dilated":
        return list(dilated_scales(DilatedLatticeSpec(n, "3d"), grid))
    if flavor == "axis":
        return [(a, b, c) for a in range(grid.L1 + 1) for b in range(grid.L2 + 1) for c in range(grid.L3 + 1)]
    raise ValueError(f"unknown weight flavor {flavor!r}")


def apz_constant(w: Weight, p: float, flavor: str = "zygmund", n: int = 0) -> float:
    """``max_R <w>_R <w^{-1/(p-1)}>_R^{p-1}`` over the flavor's rectangles.

    ``zygmund``: Zygmund rectangles; ``dilated``: the 3-D family with
    exponent ``n``; ``axis``: every dyadic rectangle (tri-parameter).
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    a = w.values
    dual = a ** (-1.0 / (p - 1))
    best = 0.0
    for sc in _flavor_scales(w.grid, flavor, n):
        val = block_mean(a, sc) * block_mean(dual, sc) ** (p - 1)
        best = max(best, float(val.max()))
    return best


def _periodic_distance(n_cells: int) -> np.ndarray:
    centers = (np.arange(n_cells) + 0.5) / n_cells
    return np.minimum(centers, 1.0 - centers)


def weight_fixture(name: str, grid: GridSpec) -> Weight:
    """``pow:a1,a2,a3`` (product of periodic distance powers) or ``twoval:a,b:axis``."""
    kind, _, rest = name.partition(":")
    if kind == "pow":
        exps = [float(x) for x in rest.split(",")]
        if len(exps) != 3:
            raise UnknownFixture(f"pow weight needs three exponents: {name!r}")
        vals = np.ones(grid.shape)
        for ax, e in enumerate(exps):
            prof = _periodic_distance(grid.shape[ax]) ** e
            shape = [1, 1, 1]
            shape[ax] = -1
            vals = vals * prof.reshape(shape)
        return Weight(GridFunction(grid, vals), name)
    if kind == "twoval":
        try:
            ab, axis = rest.rsplit(":", 1)
            a, b = (float(x) for x in ab.split(","))
            axis = int(axis)
        except ValueError as exc:
            raise UnknownFixture(f"bad twoval weight {name!r}") from exc
        n = grid.shape[axis - 1]
        prof = np.where(np.arange(n) < n // 2, a, b)
        shape = [1, 1, 1]
        shape[axis - 1] = -1
        return Weight(GridFunction(grid, np.broadcast_to(prof.reshape(shape), grid.shape).copy()), name)
    if kind == "one":
        return Weight(GridFunction.constant(grid, 1.0), "one")
    raise UnknownFixture(f"unknown weight fixture {name!r}")


# ---------------------------------------------------------------------------
# sparse collections on the nested two-parameter family
#
# Members are slabs [0,1) x K2 x K3 with l(K3) = lambda * l(K2).  For a fixed
# lambda these form a tree: each member has four children.

@dataclass
class SparseCollection:
    grid: GridSpec
    lattice: DilatedLatticeSpec
    members: List[Tuple[int, int, int, int]]  # (j2, j3, p2, p3)
    witness: Dict[Tuple[int, int, int, int], np.ndarray]  # boolean masks over the (2,3) cell grid
    gamma: float

    def slab_mask(self, m) -> np.ndarray:
        j2, j3, p2, p3 = m
        g = self.grid
        mask = np.zeros((1 << g.L2, 1 << g.L3), dtype=bool)
        w2, w3 = 1 << (g.L2 - j2), 1 << (g.L3 - j3)
        mask[p2 * w2:(p2 + 1) * w2, p3 * w3:(p3 + 1) * w3] = True
        return mask

    def check(self) -> bool:
        """Exact set check: witnesses are disjoint subsets carrying a ``gamma`` share."""
        seen = np.zeros((1 << self.grid.L2, 1 << self.grid.L3), dtype=np.int64)
        for m in self.members:
            E = self.witness[m]
            S = self.slab_mask(m)
            if np.any(E & ~S):
                return False
            if E.sum() < self.gamma * S.sum():
                return False
            seen += E
        return bool(seen.max(initial=0) <= 1)

    def measure(self, m) -> float:
        j2, j3 = m[0], m[1]
        return 2.0 ** -(j2 + j3)


def _family_levels(grid: GridSpec, lattice: DilatedLatticeSpec) -> List[Tuple[int, int]]:
    if lattice.flavor != "23":
        raise ValueError("sparse collections live on the nested (2,3) family; use flavor '23'")
    levels = sorted(dilated_scales(lattice, grid))
    return levels


def _slab_means(a: np.ndarray, j2: int, j3: int) -> np.ndarray:
    """Averages of ``a`` over the slabs of one level, shape ``(2**j2, 2**j3)``."""
    return block_mean(a, (0, j2, j3))[0]


def sparse_collect(f1: GridFunction, f2: GridFunction, f3: GridFunction, lattice: DilatedLatticeSpec,
                   gamma: float = 0.5, threshold: float = 2.0) -> SparseCollection:
    """Stopping-time selection; raises :class:`GammaUnachievable` if a witness is too small."""
    grid = _same_grid(f1, f2, f3)
    levels = _family_levels(grid, lattice)
    absvals = [np.abs(f.values) for f in (f1, f2, f3)]
    means = {lv: [_slab_means(a, *lv) for a in absvals] for lv in levels}
    j2_0, j3_0 = levels[0]
    # stop[level] holds, per slab, the index of its stopping ancestor's level and position
    members: List[Tuple[int, int, int, int]] = []
    stopper_avg = {}
    cur = {}
    for p2 in range(1 << j2_0):
        for p3 in range(1 << j3_0):
            m = (j2_0, j3_0, p2, p3)
            members.append(m)
            cur[(p2, p3)] = m
            stopper_avg[m] = [means[levels[0]][i][p2, p3] for i in range(3)]
    children_of: Dict[tuple, List[tuple]] = {m: [] for m in members}
    for (a2, a3), (b2, b3) in zip(levels[:-1], levels[1:]):
        nxt = {}
        for (p2, p3), s in cur.items():
            for c2 in range(1 << (b2 - a2)):
                for c3 in range(1 << (b3 - a3)):
                    q2, q3 = (p2 << (b2 - a2)) + c2, (p3 << (b3 - a3)) + c3
                    avgs = [means[(b2, b3)][i][q2, q3] for i in range(3)]
                    if any(avgs[i] > threshold * stopper_avg[s][i] for i in range(3)):
                        m = (b2, b3, q2, q3)
                        members.append(m)
                        stopper_avg[m] = avgs
                        children_of[s].append(m)
                        children_of[m] = []
                        nxt[(q2, q3)] = m
                    else:
                        nxt[(q2, q3)] = s
        cur = nxt
    col = SparseCollection(grid, lattice, members, {}, gamma)
    for m in members:
        E = col.slab_mask(m)
        for c in children_of[m]:
            E &= ~col.slab_mask(c)
        col.witness[m] = E
        if E.sum() < gamma * col.slab_mask(m).sum():
            raise GammaUnachievable(f"witness of {m} covers {E.sum()}/{col.slab_mask(m).sum()} cells; target {gamma}")
    return col


def sparse_form(S: SparseCollection, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
    total = 0.0
    absvals = [np.abs(f.values) for f in (f1, f2, f3)]
    cache = {}
    for m in S.members:
        lv = (m[0], m[1])
        if lv not in cache:
            cache[lv] = [_slab_means(a, *lv) for a in absvals]
        avg = cache[lv]
        total += S.measure(m) * avg[0][m[2], m[3]] * avg[1][m[2], m[3]] * avg[2][m[2], m[3]]
    return total


def lambda_form(k: Sequence[int], lattice: DilatedLatticeSpec, f1: GridFunction, f2: GridFunction,
                f3: GridFunction) -> float:
    """``sum_K sum_{I_j} |I|^{3/2}/|K|^2 |<f1,h0_{I1}>||<f2,h_{I2}>||<f3,h_{I3}>|`` on slabs.

    ``k`` supplies the generation gaps ``(k2, k3)`` (a triple's axis-1 entry is ignored).
    """
    grid = _same_grid(f1, f2, f3)
    k2, k3 = (k[1], k[2]) if len(k) == 3 else (k[0], k[1])
    total = 0.0
    for j2, j3 in _family_levels(grid, lattice):
        i2, i3 = j2 + k2, j3 + k3
        if i2 + 1 > grid.L2 or i3 + 1 > grid.L3:
            continue
        sums = []
        for f, tags in ((f1, (0, 0, 0)), (f2, (0, 1, 1)), (f3, (0, 1, 1))):
            P = np.abs(haar_pairings(f.values, (0, i2, i3), tags))[0]
            sums.append(P.reshape(1 << j2, 1 << k2, 1 << j3, 1 << k3).sum(axis=(1, 3)))
        vol_I = 2.0 ** -(i2 + i3)
        vol_K = 2.0 ** -(j2 + j3)
        total += vol_I ** 1.5 / vol_K ** 2 * float(np.sum(sums[0] * sums[1] * sums[2]))
    return total


# ---------------------------------------------------------------------------
# operator-norm benches

@dataclass(frozen=True)
class BenchConfig:
    p1: float = 4.0
    p2: float = 4.0
    p: float = 2.0
    eta: float = 0.5
    trials: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (1 < self.p1 < np.inf and 1 < self.p2 < np.inf and 0.5 < self.p < np.inf):
            raise ValueError("need 1 < p1, p2 < inf and 1/2 < p < inf")
        if abs(1.0 / self.p - 1.0 / self.p1 - 1.0 / self.p2) > 1e-12:
            raise ValueError("exponents must satisfy 1/p = 1/p1 + 1/p2")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")


def random_probe(grid: GridSpec, rng: np.random.Generator) -> GridFunction:
    """Gaussian Haar-coefficient ensemble at a random resolution, or a sparse adversarial input."""
    kind = rng.integers(3)
    if kind == 0:
        sc = tuple(int(rng.integers(0, L + 1)) for L in grid.L)
        coarse = rng.standard_normal(tuple(1 << s for s in sc))
        return GridFunction(grid, block_expand(coarse, grid.shape, sc))
    if kind == 1:
        return GridFunction.random(grid, rng)
    # indicator of a random dyadic rectangle
    vals = np.zeros(grid.shape)
    sl = []
    for L in grid.L:
        j = int(rng.integers(0, L + 1))
        p = int(rng.integers(0, 1 << j))
        w = 1 << (L - j)
        sl.append(slice(p * w, (p + 1) * w))
    vals[tuple(sl)] = 1.0
    return GridFunction(grid, vals)


@dataclass
class BenchReport:
    empirical: float
    bound: float
    seeds: List[int]
    note: str = "random probes give a lower bound on the operator norm"

    @property
    def ratio(self) -> float:
        return self.empirical / self.bound if self.bound else float("inf")

    def to_dict(self) -> dict:
        return {"empirical": self.empirical, "bound": self.bound, "ratio": self.ratio,
                "seeds": self.seeds, "note": self.note}


def opnorm_bench(op: Callable[[GridFunction, GridFunction], GridFunction], grid: GridSpec, cfg: BenchConfig,
                 w1: Optional[Weight] = None, w2: Optional[Weight] = None, k: Optional[Sequence[int]] = None) -> BenchReport:
    """``max ||op(f1,f2)||_{L^p(w)}`` over normalized random inputs, with ``w = w1^{p/p1} w2^{p/p2}``."""
    if w1 is not None and w2 is not None:
        w = Weight(GridFunction(grid, w1.values ** (cfg.p / cfg.p1) * w2.values ** (cfg.p / cfg.p2)))
    else:
        w = None
    seeds = trial_seeds(cfg.seed, cfg.trials)

    def trial(seed):
        rng = np.random.default_rng(seed)
        f1, f2 = random_probe(grid, rng), random_probe(grid, rng)
        n1, n2 = lp_norm(f1, cfg.p1, w1), lp_norm(f2, cfg.p2, w2)
        if n1 == 0 or n2 == 0:
            return 0.0
        return lp_norm(op(f1, f2), cfg.p, w) / (n1 * n2)

    vals = parallel_map(trial, seeds)
    if k is None:
        bound = 1.0
    else:
        bound = max(1, max(k)) ** 2 * 2.0 ** (k[0] * cfg.eta)
    return BenchReport(float(max(vals)), float(bound), seeds)


# ---------------------------------------------------------------------------
# fixture suite for the sparse bound

def _checkerboard(grid: GridSpec, i2: int, i3: int, rng: np.random.Generator) -> GridFunction:
    """Random-sign sum of ``|I|^{1/2} h_I`` over one (2,3) scale: a +-1 valued function."""
    from .haar import haar_synthesis
    signs = rng.choice([-1.0, 1.0], size=(1, 1 << i2, 1 << i3))
    vals = haar_synthesis(signs * 2.0 ** (-0.5 * (i2 + i3)), (0, i2, i3), (0, 1, 1), grid.shape)
    return GridFunction(grid, vals)


def sparse_fixtures(grid: GridSpec, lattice: DilatedLatticeSpec, rng: np.random.Generator, trials: int = 4):
    """Random triples, lacunary checkerboard sums, and single-scale checkerboards at every level."""
    one = GridFunction.constant(grid, 1.0)
    out = []
    levels = _family_levels(grid, lattice)
    for _ in range(trials):
        out.append(tuple(GridFunction.random(grid, rng) for _ in range(3)))
        lac = []
        for _ in range(2):
            v = np.zeros(grid.shape)
            for j2, j3 in levels:
                if j2 < grid.L2 and j3 < grid.L3:
                    v += _checkerboard(grid, j2, j3, rng).values
            lac.append(GridFunction(grid, v))
        out.append((one, lac[0], lac[1]))
        for i2 in range(grid.L2):
            for i3 in range(grid.L3):
                out.append((one, _checkerboard(grid, i2, i3, rng), _checkerboard(grid, i2, i3, rng)))
    return out


def sparse_constant_table(grid: GridSpec, lattice: DilatedLatticeSpec, ks: Sequence[Tuple[int, int]],
                          seed: int = 0, trials: int = 4, threshold: float = 2.0) -> Dict[Tuple[int, int], float]:
    """Per ``(k2, k3)``: max over the fixture suite of ``Lambda / (max(1, k2, k3) * sparse_form)``."""
    rng = np.random.default_rng(seed)
    table = {tuple(k): 0.0 for k in ks}
    for fs in sparse_fixtures(grid, lattice, rng, trials):
        try:
            S = sparse_collect(*fs, lattice, threshold=threshold)
        except GammaUnachievable:
            continue
        sf = sparse_form(S, *fs)
        if sf <= 0:
            continue
        for k in table:
            lam = lambda_form((0,) + k, lattice, *fs)
            table[k] = max(table[k], lam / (max(1, *k) * sf))
    return table
