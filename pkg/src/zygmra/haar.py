"""Haar functions, averaging operators and the Zygmund expansion on grids.

Functions live on the cells of a :class:`~zygmra.lattice.GridSpec`; the
value of a cell is the average of the function over it, so the pairing
``<f, g>`` is a Riemann sum with weight ``2**-(L1+L2+L3)``.

Whole-scale operators (``scale_E1``, ``scale_D23`` and friends) are the sums of
the per-rectangle operators over every rectangle of one scale.  They are
what most of the package uses internally; the per-rectangle forms exist for
the addressed API and for tests.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import FinestScale, FormatError, GridMismatch, NonFiniteInput
from .lattice import (
    DyadicInterval,
    GridSpec,
    LatticeShift,
    ZygRect,
    children,
    zygmund_scales,
)

# cancellative (eta2, eta3) tags in a fixed order
ETAS: Tuple[Tuple[int, int], ...] = ((0, 1), (1, 0), (1, 1))


class GridFunction:
    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        arr = np.asarray(values, dtype=float)
        if arr.shape != grid.shape:
            if arr.size == grid.cells:
                arr = arr.reshape(grid.shape)
            else:
                raise GridMismatch(f"values of shape {arr.shape} do not fit grid {grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput("grid function has non-finite entries")
        self.grid = grid
        self.values = arr

    @classmethod
    def constant(cls, grid: GridSpec, c: float = 1.0) -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def random(cls, grid: GridSpec, rng: np.random.Generator) -> "GridFunction":
        return cls(grid, rng.standard_normal(grid.shape))

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise GridMismatch(f"grids {self.grid} and {other.grid} differ")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFunction(self.grid, self.values / self._other(other))

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __abs__(self):
        return GridFunction(self.grid, np.abs(self.values))

    def integral(self) -> float:
        return float(self.values.mean())

    def norm(self, p: float = 2.0) -> float:
        if np.isinf(p):
            return float(np.abs(self.values).max())
        return float(np.mean(np.abs(self.values) ** p) ** (1.0 / p))

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def __repr__(self) -> str:
        return f"GridFunction(grid={self.grid}, norm2={self.norm():.6g})"


def _vals(f) -> np.ndarray:
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def _same_grid(*fs: GridFunction) -> GridSpec:
    grid = fs[0].grid
    for g in fs[1:]:
        if g.grid != grid:
            raise GridMismatch(f"grids {grid} and {g.grid} differ")
    return grid


# ---------------------------------------------------------------------------
# array-level kernels

def block_mean(a: np.ndarray, scales: Sequence[Optional[int]]) -> np.ndarray:
    """Average ``a`` over dyadic blocks; ``None`` keeps an axis untouched."""
    shape: List[int] = []
    red: List[int] = []
    for ax, (n, s) in enumerate(zip(a.shape, scales)):
        if s is None:
            shape.append(n)
            continue
        m = 1 << s
        if m > n:
            raise FinestScale(f"scale {s} finer than axis length {n}")
        shape.extend([m, n // m])
        red.append(len(shape) - 1)
    return a.reshape(shape).mean(axis=tuple(red)) if red else a


def block_expand(a: np.ndarray, full_shape: Sequence[int], scales: Sequence[Optional[int]]) -> np.ndarray:
    out = a
    for ax, (n, s) in enumerate(zip(full_shape, scales)):
        if s is None:
            continue
        reps = n >> s
        if reps > 1:
            out = np.repeat(out, reps, axis=ax)
    return out


def scale_average(a: np.ndarray, scales: Sequence[Optional[int]], offsets: Optional[Sequence[int]] = None) -> np.ndarray:
    """Sum over all blocks of one scale of ``E_R``; offsets shift the blocks."""
    if offsets is not None and any(offsets):
        shifted = np.roll(a, [-o for o in offsets], axis=(0, 1, 2))
        return np.roll(scale_average(shifted, scales), list(offsets), axis=(0, 1, 2))
    return block_expand(block_mean(a, scales), a.shape, scales)


def scale_E1(a: np.ndarray, j1: int) -> np.ndarray:
    return scale_average(a, (j1, None, None))


def scale_D1(a: np.ndarray, j1: int) -> np.ndarray:
    return scale_average(a, (j1 + 1, None, None)) - scale_average(a, (j1, None, None))


def scale_E23(a: np.ndarray, j2: int, j3: int) -> np.ndarray:
    return scale_average(a, (None, j2, j3))


def scale_D23(a: np.ndarray, j2: int, j3: int) -> np.ndarray:
    """One-parameter difference: children in both axes 2 and 3."""
    return scale_average(a, (None, j2 + 1, j3 + 1)) - scale_average(a, (None, j2, j3))


def scale_DZ(a: np.ndarray, j1: int, j2: int) -> np.ndarray:
    return scale_D23(scale_D1(a, j1), j2, j1 + j2)


def haar_pairings(a: np.ndarray, scales: Sequence[int], tags: Sequence[int], cell_volume: float = None) -> np.ndarray:
    """``<f, h^tags_R>`` for every rectangle ``R`` of the given scales."""
    sub = tuple(s + t for s, t in zip(scales, tags))
    A = block_mean(a, sub)
    for ax, t in enumerate(tags):
        if t:
            A = np.moveaxis(A, ax, -1)
            A = A.reshape(A.shape[:-1] + (A.shape[-1] // 2, 2))
            A = 0.5 * (A[..., 0] - A[..., 1])
            A = np.moveaxis(A, -1, ax)
    return A * 2.0 ** (-0.5 * sum(scales))


def haar_synthesis(coeffs: np.ndarray, scales: Sequence[int], tags: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    """``sum_R c_R h^tags_R`` for coefficients indexed by position."""
    A = np.asarray(coeffs, dtype=float) * 2.0 ** (0.5 * sum(scales))
    for ax, t in enumerate(tags):
        if t:
            A = np.repeat(A, 2, axis=ax)
            sign_shape = [1] * A.ndim
            sign_shape[ax] = A.shape[ax]
            A = A * np.resize(np.array([1.0, -1.0]), A.shape[ax]).reshape(sign_shape)
    sub = tuple(s + t for s, t in zip(scales, tags))
    return block_expand(A, shape, sub)


# ---------------------------------------------------------------------------
# addressed Haar functions

def _axis_profile(I: DyadicInterval, tag: int, levels: int) -> np.ndarray:
    if tag not in (0, 1):
        raise ValueError("Haar tag must be 0 or 1")
    if tag == 1 and I.j >= levels:
        raise FinestScale(f"{I} has no children at resolution {levels}")
    n = 1 << levels
    prof = np.zeros(n)
    idx = I.cell_indices(levels)
    amp = 2.0 ** (0.5 * I.j)
    if tag == 0:
        prof[idx] = amp
    else:
        half = len(idx) // 2
        prof[idx[:half]] = amp
        prof[idx[half:]] = -amp
    return prof


def _broadcast(prof: np.ndarray, axis: int) -> np.ndarray:
    shape = [1, 1, 1]
    shape[axis - 1] = prof.size
    return prof.reshape(shape)


def haar(I: DyadicInterval, tag: int, grid: GridSpec) -> GridFunction:
    prof = _axis_profile(I, tag, grid.L[I.axis - 1])
    return GridFunction(grid, np.broadcast_to(_broadcast(prof, I.axis), grid.shape).copy())


def haar_rect(I2: DyadicInterval, I3: DyadicInterval, eta: Tuple[int, int], grid: GridSpec) -> GridFunction:
    p2 = _broadcast(_axis_profile(I2, eta[0], grid.L2), 2)
    p3 = _broadcast(_axis_profile(I3, eta[1], grid.L3), 3)
    return GridFunction(grid, np.broadcast_to(p2 * p3, grid.shape).copy())


def haar_tensor(rect, tags: Tuple[int, int, int], grid: GridSpec) -> GridFunction:
    """Full tensor Haar function on a 3-D rectangle."""
    p1 = _broadcast(_axis_profile(rect.I1, tags[0], grid.L1), 1)
    p2 = _broadcast(_axis_profile(rect.I2, tags[1], grid.L2), 2)
    p3 = _broadcast(_axis_profile(rect.I3, tags[2], grid.L3), 3)
    return GridFunction(grid, p1 * p2 * p3)


def haar_zygmund(Z: ZygRect, eta: Tuple[int, int], grid: GridSpec) -> GridFunction:
    """``h_{I1} (x) h^eta_{I2 x I3}``."""
    return haar_tensor(Z, (1,) + tuple(eta), grid)


def inner(f: GridFunction, g: GridFunction) -> float:
    grid = _same_grid(f, g)
    return float(np.vdot(f.values, g.values)) * grid.cell_volume


# ---------------------------------------------------------------------------
# addressed averaging and differences

def _region(intervals: Sequence[DyadicInterval], grid: GridSpec):
    idx: List[Union[slice, np.ndarray]] = [slice(None)] * 3
    axes = []
    for I in intervals:
        if I.axis in axes:
            raise ValueError("at most one interval per axis")
        axes.append(I.axis)
        idx[I.axis - 1] = I.cell_indices(grid.L[I.axis - 1])
    return idx, axes


def avg_E(f: GridFunction, intervals: Union[DyadicInterval, Sequence[DyadicInterval]]) -> GridFunction:
    """``E_R f = <f>_R 1_R`` acting on the axes of ``R`` only."""
    if isinstance(intervals, DyadicInterval):
        intervals = [intervals]
    grid = f.grid
    idx, axes = _region(intervals, grid)
    open_idx = np.ix_(*[np.arange(n) if isinstance(i, slice) else i for i, n in zip(idx, grid.shape)])
    block = f.values[open_idx]
    mean = block.mean(axis=tuple(a - 1 for a in axes), keepdims=True)
    out = np.zeros(grid.shape)
    out[open_idx] = np.broadcast_to(mean, block.shape)
    return GridFunction(grid, out)


def _child_sets(I, grid: GridSpec):
    if isinstance(I, DyadicInterval):
        return [[c] for c in children(I, grid.L[I.axis - 1])], [I]
    I2, I3 = I
    ch2 = children(I2, grid.L2)
    ch3 = children(I3, grid.L3)
    return [[a, b] for a in ch2 for b in ch3], [I2, I3]


def delta(f: GridFunction, I) -> GridFunction:
    """Martingale difference on an interval or a one-parameter (2,3) rectangle."""
    grid = f.grid
    kids, parent = _child_sets(I, grid)
    out = -avg_E(f, parent).values
    for c in kids:
        out = out + avg_E(f, c).values
    return GridFunction(grid, out)


def delta_block(f: GridFunction, I: DyadicInterval, k: int) -> GridFunction:
    """Sum of ``Delta_J f`` over the descendants ``J`` of ``I`` at depth ``k``."""
    grid = f.grid
    levels = grid.L[I.axis - 1]
    if I.j + k >= levels:
        raise FinestScale(f"depth {k} below {I} exceeds resolution")
    scales: List[Optional[int]] = [None, None, None]
    offs = [0, 0, 0]
    ax = I.axis - 1
    fine = list(scales)
    fine[ax] = I.j + k + 1
    coarse = list(scales)
    coarse[ax] = I.j + k
    if I.shift is not None:
        # offsets differ per scale; apply each with its own roll
        o_f = [0, 0, 0]
        o_c = [0, 0, 0]
        o_f[ax] = I.shift.offset_cells(I.axis, I.j + k + 1)
        o_c[ax] = I.shift.offset_cells(I.axis, I.j + k)
        d = scale_average(f.values, fine, o_f) - scale_average(f.values, coarse, o_c)
    else:
        d = scale_average(f.values, fine, offs) - scale_average(f.values, coarse, offs)
    mask = np.zeros(grid.shape[ax])
    mask[I.cell_indices(levels)] = 1.0
    return GridFunction(grid, d * _broadcast(mask, I.axis))


def delta_Z(f: GridFunction, Z: ZygRect) -> GridFunction:
    return delta(delta(f, Z.I1), (Z.I2, Z.I3))


# ---------------------------------------------------------------------------
# Zygmund expansion

@dataclass
class ZygmundExpansion:
    """Haar coefficients per Zygmund scale pair plus the finite-grid completion.

    ``coeffs[(j1, j2)]`` has shape ``(3, 2**j1, 2**j2, 2**(j1+j2))``; the
    leading index runs over :data:`ETAS`.
    """

    grid: GridSpec
    coeffs: Dict[Tuple[int, int], np.ndarray]
    completion: List[Tuple[str, GridFunction]] = field(default_factory=list)

    def items(self, shift: Optional[LatticeShift] = None) -> Iterator[Tuple[ZygRect, Dict[Tuple[int, int], float]]]:
        for (j1, j2), c in sorted(self.coeffs.items()):
            j3 = j1 + j2
            for p1 in range(1 << j1):
                for p2 in range(1 << j2):
                    for p3 in range(1 << j3):
                        Z = ZygRect(DyadicInterval(1, j1, p1, shift), DyadicInterval(2, j2, p2, shift), DyadicInterval(3, j3, p3, shift))
                        yield Z, {eta: float(c[e, p1, p2, p3]) for e, eta in enumerate(ETAS)}

    def coefficient(self, Z: ZygRect, eta: Tuple[int, int]) -> float:
        return float(self.coeffs[(Z.I1.j, Z.I2.j)][ETAS.index(tuple(eta)), Z.I1.pos, Z.I2.pos, Z.I3.pos])

    def coefficient_energy(self) -> float:
        return float(sum(np.sum(c * c) for c in self.coeffs.values()))

    def completion_energy(self) -> float:
        return float(sum(np.mean(g.values ** 2) for _, g in self.completion))


def zygmund_expand(f: GridFunction) -> ZygmundExpansion:
    grid = f.grid
    a = f.values
    coeffs: Dict[Tuple[int, int], np.ndarray] = {}
    completion: List[Tuple[str, GridFunction]] = [("axis1-mean", GridFunction(grid, scale_E1(a, 0)))]
    for j1 in range(grid.L1):
        d1 = scale_D1(a, j1)
        for j2 in range(grid.L2):
            j3 = j1 + j2
            coeffs[(j1, j2)] = np.stack([haar_pairings(a, (j1, j2, j3), (1,) + eta) for eta in ETAS])
        top = scale_E23(d1, 0, j1)
        fine = d1 - scale_E23(d1, grid.L2, j1 + grid.L2)
        completion.append((f"top:j1={j1}", GridFunction(grid, top)))
        completion.append((f"fine:j1={j1}", GridFunction(grid, fine)))
    return ZygmundExpansion(grid, coeffs, completion)


def reconstruct(exp: ZygmundExpansion) -> GridFunction:
    grid = exp.grid
    out = np.zeros(grid.shape)
    for (j1, j2), c in exp.coeffs.items():
        for e, eta in enumerate(ETAS):
            out += haar_synthesis(c[e], (j1, j2, j1 + j2), (1,) + eta, grid.shape)
    for _, g in exp.completion:
        out += g.values
    return GridFunction(grid, out)


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<4i")


def to_bytes(f: GridFunction) -> bytes:
    head = _HEADER.pack(f.grid.L1, f.grid.L2, f.grid.L3, 0)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def from_bytes(data: bytes) -> GridFunction:
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    L1, L2, L3, _ = _HEADER.unpack_from(data)
    grid = GridSpec(L1, L2, L3)
    body = data[_HEADER.size:]
    if len(body) != 8 * grid.cells:
        raise FormatError(f"expected {8 * grid.cells} payload bytes, got {len(body)}")
    return GridFunction(grid, np.frombuffer(body, dtype="<f8").reshape(grid.shape).copy())


def save(f: GridFunction, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(f))


def load(path) -> GridFunction:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def to_csv(f: GridFunction) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L1", "L2", "L3"])
    w.writerow(list(f.grid.L))
    w.writerow(["i1", "i2", "i3", "value"])
    for (i, j, k), v in np.ndenumerate(f.values):
        w.writerow([i, j, k, repr(float(v))])
    return buf.getvalue()


def from_csv(text: str) -> GridFunction:
    rows = list(csv.reader(io.StringIO(text)))
    try:
        grid = GridSpec(*(int(x) for x in rows[1]))
        vals = np.full(grid.shape, np.nan)
        for r in rows[3:]:
            if not r:
                continue
            vals[int(r[0]), int(r[1]), int(r[2])] = float(r[3])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"bad grid-function CSV: {exc}") from exc
    if np.isnan(vals).any():
        raise FormatError("CSV does not cover every cell")
    return GridFunction(grid, vals)
