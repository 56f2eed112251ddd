"""Dyadic geometry on the periodic grid [0,1)^3.

Scales are integer exponents throughout: an interval of scale ``j`` has
side length ``2**-j``.  Positions are integers in ``[0, 2**j)``.  A lattice
shift moves every interval of scale ``j`` by the truncated binary tail
``sum_{i>j} bit_i 2**-i``, which keeps shifted intervals aligned to the
finest cells of the grid.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from .errors import CoarsestScale, FinestScale, FormatError, LambdaOutOfRange

__all__ = [
    "GridSpec",
    "LatticeShift",
    "DyadicInterval",
    "ZygRect",
    "Rect",
    "DilatedLatticeSpec",
    "children",
    "parent_k",
    "is_good",
    "relative_position",
    "translate",
    "enum_zygmund",
    "zygmund_scales",
    "zygmund_count",
    "enum_dilated",
    "dilated_scales",
    "load_config",
    "dump_config",
]


@dataclass(frozen=True)
class GridSpec:
    L1: int = 3
    L2: int = 3
    L3: int = 6

    def __post_init__(self):
        for v in (self.L1, self.L2, self.L3):
            if int(v) != v or v < 0:
                raise ValueError(f"scale exponents must be non-negative integers, got {self.L}")
        if self.L3 < self.L1 + self.L2:
            raise ValueError(f"need L3 >= L1 + L2, got {self.L}")

    @property
    def L(self) -> Tuple[int, int, int]:
        return (self.L1, self.L2, self.L3)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (1 << self.L1, 1 << self.L2, 1 << self.L3)

    @property
    def cells(self) -> int:
        return 1 << (self.L1 + self.L2 + self.L3)

    @property
    def cell_volume(self) -> float:
        return 2.0 ** -(self.L1 + self.L2 + self.L3)

    def axis_levels(self, axis: int) -> int:
        return self.L[axis - 1]

    def __str__(self) -> str:
        return f"{self.L1},{self.L2},{self.L3}"

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
        if len(parts) != 3:
            raise ValueError(f"expected three exponents, got {text!r}")
        return cls(*(int(p) for p in parts))


@dataclass(frozen=True)
class LatticeShift:
    """Random shift bits for each axis, truncated at the grid resolution.

    ``bits[a][i-1]`` is the bit attached to ``2**-i`` on axis ``a+1``.
    """

    L: Tuple[int, int, int]
    bits: Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]

    def __post_init__(self):
        for levels, b in zip(self.L, self.bits):
            if len(b) != levels or any(x not in (0, 1) for x in b):
                raise ValueError("shift bits must be 0/1 with one bit per scale")

    @classmethod
    def zero(cls, grid: GridSpec) -> "LatticeShift":
        return cls(grid.L, tuple(tuple([0] * n) for n in grid.L))

    @classmethod
    def from_seed(cls, grid: GridSpec, seed: int) -> "LatticeShift":
        rng = np.random.default_rng(seed)
        return cls.random(grid, rng)

    @classmethod
    def random(cls, grid: GridSpec, rng: np.random.Generator) -> "LatticeShift":
        bits = tuple(tuple(int(x) for x in rng.integers(0, 2, size=n)) for n in grid.L)
        return cls(grid.L, bits)

    def offset_cells(self, axis: int, j: int) -> int:
        """Offset of scale-``j`` intervals, in finest cells of ``axis``."""
        levels = self.L[axis - 1]
        b = self.bits[axis - 1]
        return sum(b[i - 1] << (levels - i) for i in range(j + 1, levels + 1))

    def offset(self, axis: int, j: int = 0) -> float:
        return self.offset_cells(axis, j) / float(1 << self.L[axis - 1])

    @property
    def is_zero(self) -> bool:
        return not any(any(b) for b in self.bits)


_INTERVAL_RE = re.compile(r"^a([123]):j(\d+):p(-?\d+)$")


@dataclass(frozen=True)
class DyadicInterval:
    axis: int
    j: int
    pos: int
    shift: Optional[LatticeShift] = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.axis not in (1, 2, 3):
            raise ValueError(f"axis must be 1, 2 or 3, got {self.axis}")
        if self.j < 0:
            raise ValueError("scale exponent must be non-negative")
        if self.shift is not None and self.j > self.shift.L[self.axis - 1]:
            raise FinestScale(f"scale {self.j} below grid resolution on axis {self.axis}")
        object.__setattr__(self, "pos", self.pos % (1 << self.j))

    def __str__(self) -> str:
        return f"a{self.axis}:j{self.j}:p{self.pos}"

    @classmethod
    def parse(cls, text: str, shift: Optional[LatticeShift] = None) -> "DyadicInterval":
        m = _INTERVAL_RE.match(text.strip())
        if not m:
            raise FormatError(f"bad interval address {text!r}")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)), shift)

    @property
    def length_exponent(self) -> int:
        return self.j

    def cell_range(self, levels: int) -> Tuple[int, int]:
        """(start, count) in finest cells; ``start`` may wrap around."""
        if self.j > levels:
            raise FinestScale(f"scale {self.j} finer than {levels}")
        width = 1 << (levels - self.j)
        off = self.shift.offset_cells(self.axis, self.j) if self.shift is not None else 0
        return ((self.pos * width + off) % (1 << levels), width)

    def cell_indices(self, levels: int) -> np.ndarray:
        start, width = self.cell_range(levels)
        return (start + np.arange(width)) % (1 << levels)

    def contains(self, other: "DyadicInterval") -> bool:
        if other.axis != self.axis or other.j < self.j:
            return False
        return parent_k(other, other.j - self.j).pos == self.pos


def _levels(I: DyadicInterval, levels: Optional[int]) -> Optional[int]:
    if levels is not None:
        return levels
    if I.shift is not None:
        return I.shift.L[I.axis - 1]
    return None


def children(I: DyadicInterval, levels: Optional[int] = None) -> Tuple[DyadicInterval, DyadicInterval]:
    """Left and right halves of ``I`` in its own lattice."""
    lv = _levels(I, levels)
    if lv is not None and I.j >= lv:
        raise FinestScale(f"{I} is at the finest scale")
    if I.shift is None:
        return (
            DyadicInterval(I.axis, I.j + 1, 2 * I.pos, None),
            DyadicInterval(I.axis, I.j + 1, 2 * I.pos + 1, None),
        )
    # shifted lattice: the child offset may differ from the parent offset by half a child
    start, width = I.cell_range(lv)
    off = I.shift.offset_cells(I.axis, I.j + 1)
    half = width // 2
    first = ((start - off) % (1 << lv)) // half
    return (
        DyadicInterval(I.axis, I.j + 1, first, I.shift),
        DyadicInterval(I.axis, I.j + 1, first + 1, I.shift),
    )


def parent_k(I: DyadicInterval, k: int, levels: Optional[int] = None) -> DyadicInterval:
    if k < 0:
        raise ValueError("k must be non-negative")
    if I.j - k < 0:
        raise CoarsestScale(f"{I} has no parent of order {k}")
    if k == 0:
        return I
    if I.shift is None:
        return DyadicInterval(I.axis, I.j - k, I.pos >> k, None)
    lv = _levels(I, levels)
    start, width = I.cell_range(lv)
    pj = I.j - k
    off = I.shift.offset_cells(I.axis, pj)
    pwidth = width << k
    return DyadicInterval(I.axis, pj, ((start - off) % (1 << lv)) // pwidth, I.shift)


def relative_position(G: DyadicInterval, k: int, levels: Optional[int] = None) -> int:
    """Position of ``G`` inside its ``k``-th parent, in units of ``G``'s width."""
    P = parent_k(G, k, levels)
    if G.shift is None:
        return G.pos - (P.pos << k)
    lv = _levels(G, levels)
    gs, gw = G.cell_range(lv)
    ps, _ = P.cell_range(lv)
    return ((gs - ps) % (1 << lv)) // gw


def is_good(G: DyadicInterval, k: int, levels: Optional[int] = None) -> bool:
    """True iff ``G`` keeps distance ``2**(k-2)`` widths from the boundary of ``G^(k)``."""
    if k < 2:
        raise ValueError("goodness is defined for k >= 2")
    r = relative_position(G, k, levels)
    margin = 1 << (k - 2)
    return margin <= r <= (1 << k) - 1 - margin


def translate(I: DyadicInterval, n: int) -> DyadicInterval:
    return DyadicInterval(I.axis, I.j, I.pos + n, I.shift)


@dataclass(frozen=True)
class Rect:
    """Product of one dyadic interval per axis (not necessarily Zygmund)."""

    I1: DyadicInterval
    I2: DyadicInterval
    I3: DyadicInterval

    def __post_init__(self):
        if (self.I1.axis, self.I2.axis, self.I3.axis) != (1, 2, 3):
            raise ValueError("rectangle intervals must sit on axes 1, 2, 3 in order")

    @property
    def scales(self) -> Tuple[int, int, int]:
        return (self.I1.j, self.I2.j, self.I3.j)

    @property
    def positions(self) -> Tuple[int, int, int]:
        return (self.I1.pos, self.I2.pos, self.I3.pos)

    @property
    def volume_exponent(self) -> int:
        return self.I1.j + self.I2.j + self.I3.j

    @property
    def is_zygmund(self) -> bool:
        return self.I3.j == self.I1.j + self.I2.j

    def key(self) -> Tuple[int, int, int, int, int, int]:
        return self.scales + self.positions

    def __str__(self) -> str:
        return f"{self.I1}|{self.I2}|{self.I3}"


class ZygRect(Rect):
    def __post_init__(self):
        super().__post_init__()
        if not self.is_zygmund:
            from .errors import NotZygmund

            raise NotZygmund(f"scales {self.scales} violate j3 = j1 + j2")


def rect_from_key(key, shift: Optional[LatticeShift] = None, zygmund: bool = False) -> Rect:
    j1, j2, j3, p1, p2, p3 = key
    cls = ZygRect if zygmund else Rect
    return cls(
        DyadicInterval(1, j1, p1, shift),
        DyadicInterval(2, j2, p2, shift),
        DyadicInterval(3, j3, p3, shift),
    )


def zygmund_scales(grid: GridSpec) -> Iterator[Tuple[int, int]]:
    for j1 in range(grid.L1 + 1):
        for j2 in range(grid.L2 + 1):
            if j1 + j2 <= grid.L3:
                yield (j1, j2)


def zygmund_count(grid: GridSpec) -> int:
    return sum(1 << (2 * (j1 + j2)) for j1, j2 in zygmund_scales(grid))


def enum_zygmund(grid: GridSpec, shift: Optional[LatticeShift] = None) -> Iterator[ZygRect]:
    for j1, j2 in zygmund_scales(grid):
        j3 = j1 + j2
        for p1 in range(1 << j1):
            for p2 in range(1 << j2):
                for p3 in range(1 << j3):
                    yield ZygRect(
                        DyadicInterval(1, j1, p1, shift),
                        DyadicInterval(2, j2, p2, shift),
                        DyadicInterval(3, j3, p3, shift),
                    )


@dataclass(frozen=True)
class DilatedLatticeSpec:
    """``lambda = 2**n``.  ``flavor`` is ``"3d"`` or ``"23"``."""

    n: int
    flavor: str = "3d"

    def __post_init__(self):
        if self.flavor not in ("3d", "23"):
            raise ValueError("flavor must be '3d' or '23'")
        if int(self.n) != self.n:
            raise ValueError("lambda must be an exact power of two")

    @property
    def lam(self) -> float:
        return 2.0 ** self.n

    @classmethod
    def for_complexity(cls, k: Tuple[int, int, int]) -> "DilatedLatticeSpec":
        return cls(k[2] - k[0] - k[1], "3d")


def dilated_scales(spec: DilatedLatticeSpec, grid: GridSpec):
    """Admissible scale tuples: (j1, j2, j3) for 3d, (j2, j3) for 23."""
    out = []
    if spec.flavor == "3d":
        # lambda * l(K1) l(K2) = l(K3)  <=>  j3 = j1 + j2 - n
        for j1 in range(grid.L1 + 1):
            for j2 in range(grid.L2 + 1):
                j3 = j1 + j2 - spec.n
                if 0 <= j3 <= grid.L3:
                    out.append((j1, j2, j3))
    else:
        # l(I3) = lambda l(I2)  <=>  j3 = j2 - n
        for j2 in range(grid.L2 + 1):
            j3 = j2 - spec.n
            if 0 <= j3 <= grid.L3:
                out.append((j2, j3))
    if not out:
        raise LambdaOutOfRange(f"lambda = 2^{spec.n} admits no rectangles on grid {grid}")
    return out


def enum_dilated(spec: DilatedLatticeSpec, grid: GridSpec, shift: Optional[LatticeShift] = None):
    scales = dilated_scales(spec, grid)
    if spec.flavor == "3d":
        for j1, j2, j3 in scales:
            for p1 in range(1 << j1):
                for p2 in range(1 << j2):
                    for p3 in range(1 << j3):
                        yield Rect(
                            DyadicInterval(1, j1, p1, shift),
                            DyadicInterval(2, j2, p2, shift),
                            DyadicInterval(3, j3, p3, shift),
                        )
    else:
        for j2, j3 in scales:
            for p2 in range(1 << j2):
                for p3 in range(1 << j3):
                    yield (DyadicInterval(2, j2, p2, shift), DyadicInterval(3, j3, p3, shift))


def load_config(text: str) -> Tuple[GridSpec, LatticeShift]:
    try:
        data = json.loads(text)
        grid = GridSpec(*[int(x) for x in data["L"]])
        seed = data.get("shift_seed")
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad grid configuration: {exc}") from exc
    shift = LatticeShift.zero(grid) if seed is None else LatticeShift.from_seed(grid, int(seed))
    return grid, shift


def dump_config(grid: GridSpec, seed: Optional[int] = None) -> str:
    data = {"L": list(grid.L)}
    if seed is not None:
        data["shift_seed"] = int(seed)
    return json.dumps(data, sort_keys=True)
