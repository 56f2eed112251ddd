"""Bilinear Zygmund shifts, tri-parameter shifts and their structural decomposition.

Every shift is ultimately a sparse sum of products of three Haar pairings,
stored as a :class:`HaarForm`.  Evaluation groups rows by (scales, tags) so
that each group costs one whole-scale pairing pass over the grid.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ComplexityExceedsGrid, ConstraintViolated, FormatError, NormalizationOverflow
from .haar import ETAS, GridFunction, _same_grid, haar_pairings, haar_synthesis
from .lattice import DyadicInterval, GridSpec, Rect, parent_k

Triple = Tuple[int, int, int]
Key = Tuple[int, int, int, int, int, int]  # scales then positions

__all__ = [
    "HaarForm",
    "ShiftEntry",
    "ShiftData",
    "TriShiftData",
    "StructuralResult",
    "LinearShiftData",
    "HaarLike",
    "eval_shift_form",
    "apply_shift",
    "eval_trishift",
    "apply_trishift",
    "structural_decompose",
    "structural_family_count",
    "linear_shift_eval",
    "rect_address",
    "parse_rect",
]


def rect_address(R: Rect) -> str:
    return str(R)


def parse_rect(text: str) -> Rect:
    parts = text.split("|")
    if len(parts) != 3:
        raise FormatError(f"bad rectangle address {text!r}")
    return Rect(*(DyadicInterval.parse(p) for p in parts))


def _rect(key: Key) -> Rect:
    return Rect(DyadicInterval(1, key[0], key[3]), DyadicInterval(2, key[1], key[4]), DyadicInterval(3, key[2], key[5]))


def _volume(key: Key) -> float:
    return 2.0 ** (-(key[0] + key[1] + key[2]))


# ---------------------------------------------------------------------------
# sparse sums of Haar pairing products

class HaarForm:
    """``sum_r coef[r] * prod_s <f_s, h^{tags[r,s]}_{rect[r,s]}>``."""

    def __init__(self, grid: GridSpec, coef, keys, tags):
        self.grid = grid
        self.coef = np.asarray(coef, dtype=float).reshape(-1)
        n = self.coef.size
        self.keys = np.asarray(keys, dtype=np.int64).reshape(n, 3, 6)
        self.tags = np.asarray(tags, dtype=np.int64).reshape(n, 3, 3)
        L = np.array(grid.L)
        if n and np.any(self.keys[:, :, :3] + self.tags > L):
            raise ComplexityExceedsGrid(f"a Haar function in this form is finer than {grid}")
        self._groups = [self._group_slot(s) for s in range(3)]

    def __len__(self) -> int:
        return self.coef.size

    def _group_slot(self, s: int):
        if not len(self):
            return []
        sig = np.concatenate([self.keys[:, s, :3], self.tags[:, s, :]], axis=1)
        uniq, inv = np.unique(sig, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        out = []
        for g, row in enumerate(uniq):
            rows = np.nonzero(inv == g)[0]
            pos = self.keys[rows, s, 3:]
            out.append((tuple(int(v) for v in row[:3]), tuple(int(v) for v in row[3:]), rows, pos))
        return out

    def pairings(self, f: GridFunction, slot: int) -> np.ndarray:
        out = np.empty(len(self))
        for scales, tags, rows, pos in self._groups[slot]:
            P = haar_pairings(f.values, scales, tags)
            out[rows] = P[pos[:, 0], pos[:, 1], pos[:, 2]]
        return out

    def evaluate(self, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
        if not len(self):
            return 0.0
        return float(np.sum(self.coef * self.pairings(f1, 0) * self.pairings(f2, 1) * self.pairings(f3, 2)))

    def synthesize(self, weights: np.ndarray, slot: int) -> GridFunction:
        out = np.zeros(self.grid.shape)
        for scales, tags, rows, pos in self._groups[slot]:
            acc = np.zeros(tuple(1 << s for s in scales))
            np.add.at(acc, (pos[:, 0], pos[:, 1], pos[:, 2]), weights[rows])
            out += haar_synthesis(acc, scales, tags, self.grid.shape)
        return GridFunction(self.grid, out)

    def apply(self, f1: GridFunction, f2: GridFunction, slot: int = 2) -> GridFunction:
        """The function in ``slot`` dual to the form with the other two inputs fixed."""
        if not len(self):
            return GridFunction.zeros(self.grid)
        others = [s for s in range(3) if s != slot]
        w = self.coef * self.pairings(f1, others[0]) * self.pairings(f2, others[1])
        return self.synthesize(w, slot)

    def slot_matrix(self, slot: int) -> np.ndarray:
        """Rows are the Haar functions of one slot, flattened."""
        n = len(self)
        M = np.zeros((n, self.grid.cells))
        for scales, tags, rows, pos in self._groups[slot]:
            for r, p in zip(rows, pos):
                acc = np.zeros(tuple(1 << s for s in scales))
                acc[tuple(p)] = 1.0
                M[r] = haar_synthesis(acc, scales, tags, self.grid.shape).ravel()
        return M

    def dense_tensor(self) -> np.ndarray:
        """Tensor with ``evaluate = vol**3 * sum T f1 f2 f3``."""
        n = self.grid.cells
        vol = self.grid.cell_volume
        V = [self.slot_matrix(s) for s in range(3)]
        T = np.zeros((n, n, n))
        step = max(1, int(2 ** 22 // max(n * n, 1)))
        for lo in range(0, len(self), step):
            sl = slice(lo, lo + step)
            kr = (V[1][sl, :, None] * V[2][sl, None, :]).reshape(-1, n * n)
            T += ((V[0][sl] * self.coef[sl, None]).T @ kr).reshape(n, n, n)
        return T * vol ** 3

    def scaled(self, c: float) -> "HaarForm":
        return HaarForm(self.grid, self.coef * c, self.keys, self.tags)

    def permuted(self, perm: Sequence[int]) -> "HaarForm":
        """New slot ``i`` takes the functionals of old slot ``perm[i]``."""
        perm = list(perm)
        return HaarForm(self.grid, self.coef, self.keys[:, perm, :], self.tags[:, perm, :])

    @staticmethod
    def concat(forms: Sequence["HaarForm"]) -> "HaarForm":
        forms = [f for f in forms if len(f)]
        if not forms:
            raise ValueError("nothing to concatenate")
        return HaarForm(forms[0].grid, np.concatenate([f.coef for f in forms]),
                        np.concatenate([f.keys for f in forms]), np.concatenate([f.tags for f in forms]))

    def to_trilinear(self, name: str = "haar-form"):
        from .decompose import TrilinearForm

        return TrilinearForm(self.grid, evaluator=self.evaluate, tensor_builder=self.dense_tensor,
                             applier=lambda f1, f2: self.apply(f1, f2), name=name)


def _empty_form(grid: GridSpec) -> HaarForm:
    return HaarForm(grid, np.zeros(0), np.zeros((0, 3, 6)), np.zeros((0, 3, 3)))


# ---------------------------------------------------------------------------
# bilinear Zygmund shifts

@dataclass(frozen=True)
class ShiftEntry:
    K: Rect
    I: Tuple[Rect, Rect, Rect]
    eta: Tuple[int, int]
    a: float


def _shift_bound(I: Rect, K: Rect) -> float:
    return 2.0 ** (-1.5 * I.volume_exponent + 2 * K.volume_exponent)


def _zygmund_scales_for(grid: GridSpec, k: Triple) -> List[Tuple[int, int]]:
    """Zygmund scales of the inner rectangles that leave room for complexity ``k``."""
    out = []
    for s1 in range(k[0], grid.L1):
        for s2 in range(k[1], grid.L2):
            if k[2] <= s1 + s2 < grid.L3:
                out.append((s1, s2))
    return out


@dataclass
class ShiftData:
    """Coefficients ``a_{K,(I_j)}`` of a bilinear Zygmund shift.

    ``j1`` is the slot carrying the cancellative Haar function on axis 1 and
    ``j2`` the slot carrying it on axes 2-3.
    """

    grid: GridSpec
    k: Triple
    entries: List[ShiftEntry] = field(default_factory=list)
    j1: int = 3
    j2: int = 3

    def __post_init__(self):
        self.k = tuple(int(v) for v in self.k)
        if self.j1 not in (1, 2, 3) or self.j2 not in (1, 2, 3):
            raise ValueError("cancellation slots must be 1, 2 or 3")
        self._form: Optional[HaarForm] = None

    @property
    def lam_exponent(self) -> int:
        return self.k[2] - self.k[0] - self.k[1]

    def validate_entry(self, e: ShiftEntry) -> None:
        for R in e.I:
            if not R.is_zygmund:
                raise ConstraintViolated(f"{R} is not a Zygmund rectangle")
            if R.scales != e.I[0].scales:
                raise ConstraintViolated("inner rectangles of one coefficient must share their scales")
            up = Rect(*(parent_k(iv, kk) for iv, kk in zip((R.I1, R.I2, R.I3), self.k)))
            if up != e.K:
                raise ConstraintViolated(f"{R} does not sit {self.k} generations below {e.K}")
        if tuple(e.eta) not in ETAS:
            raise ConstraintViolated(f"eta {e.eta} is not cancellative")
        if abs(e.a) > _shift_bound(e.I[0], e.K) * (1 + 1e-12):
            raise NormalizationOverflow(f"|a|={abs(e.a)} exceeds the bound at K={e.K}")

    @classmethod
    def from_entries(cls, grid: GridSpec, k: Triple, entries: Iterable, j1: int = 3, j2: int = 3) -> "ShiftData":
        """Entries are ``(I1, I2, I3, eta, a)``; the top rectangle is computed."""
        Q = cls(grid, k, [], j1, j2)
        for I1, I2, I3, eta, a in entries:
            K = Rect(*(parent_k(iv, kk) for iv, kk in zip((I1.I1, I1.I2, I1.I3), Q.k)))
            e = ShiftEntry(K, (Rect(I1.I1, I1.I2, I1.I3), Rect(I2.I1, I2.I2, I2.I3), Rect(I3.I1, I3.I2, I3.I3)),
                           tuple(int(v) for v in eta), float(a))
            Q.validate_entry(e)
            Q.entries.append(e)
        return Q

    @classmethod
    def random(cls, grid: GridSpec, k: Triple, rng: np.random.Generator, tops: int = 3, per_top: int = 6,
               j1: int = 3, j2: int = 3) -> "ShiftData":
        """Random admissible coefficients on a few random top rectangles."""
        k = tuple(int(v) for v in k)
        scales = _zygmund_scales_for(grid, k)
        if not scales:
            raise ComplexityExceedsGrid(f"complexity {k} does not fit in {grid}")
        entries = []
        for _ in range(tops):
            s1, s2 = scales[rng.integers(len(scales))]
            sc = (s1, s2, s1 + s2)
            top = [int(rng.integers(1 << (s - kk))) for s, kk in zip(sc, k)]
            for _ in range(per_top):
                rects = []
                for _ in range(3):
                    pos = [(t << kk) + int(rng.integers(1 << kk)) for t, kk in zip(top, k)]
                    rects.append(_rect(sc + tuple(pos)))
                K = _rect(tuple(s - kk for s, kk in zip(sc, k)) + tuple(top))
                a = float(rng.uniform(-1, 1)) * _shift_bound(rects[0], K)
                entries.append((rects[0], rects[1], rects[2], ETAS[rng.integers(3)], a))
        return cls.from_entries(grid, k, entries, j1, j2)

    # the four-term bracket as a sparse form
    def haar_form(self) -> HaarForm:
        if self._form is not None:
            return self._form
        if not self.entries:
            self._form = _empty_form(self.grid)
            return self._form
        coef, keys, tags = [], [], []
        c1, c23 = self.j1 - 1, self.j2 - 1
        for e in self.entries:
            ks = [R.key() for R in e.I]
            slot_tags = [((1 if s == c1 else 0),) + (tuple(e.eta) if s == c23 else (0, 0)) for s in range(3)]
            for r1, r23 in product((0, 1), repeat=2):
                row = []
                for s in range(3):
                    g1 = ks[c1] if r1 else ks[s]
                    g23 = ks[c23] if r23 else ks[s]
                    row.append((g1[0], g23[1], g23[2], g1[3], g23[4], g23[5]))
                coef.append(e.a * (-1) ** (r1 + r23))
                keys.append(row)
                tags.append(slot_tags)
        self._form = HaarForm(self.grid, coef, keys, tags)
        return self._form

    def to_trilinear(self):
        return self.haar_form().to_trilinear(name=f"Q{self.k}")

    # JSON-lines IO
    def to_jsonl(self) -> str:
        head = {"grid": list(self.grid.L), "k": list(self.k), "j1": self.j1, "j2": self.j2}
        lines = [json.dumps(head)]
        for e in self.entries:
            lines.append(json.dumps({"K": rect_address(e.K), "I": [rect_address(R) for R in e.I],
                                     "a": e.a, "eta": list(e.eta)}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, grid: Optional[GridSpec] = None, k: Optional[Triple] = None) -> "ShiftData":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = {}
        if rows and "I" not in rows[0]:
            head = rows.pop(0)
        grid = grid or GridSpec(*head.get("grid", (3, 3, 6)))
        if k is None and "k" not in head:
            raise FormatError("complexity missing: pass k or include a header line")
        k = k if k is not None else tuple(head["k"])
        entries = []
        for r in rows:
            I = [parse_rect(s) for s in r["I"]]
            entries.append((I[0], I[1], I[2], tuple(r.get("eta", (1, 1))), float(r["a"])))
        Q = cls.from_entries(grid, k, entries, head.get("j1", 3), head.get("j2", 3))
        for e, r in zip(Q.entries, rows):
            if rect_address(e.K) != r["K"]:
                raise FormatError(f"stored top {r['K']} disagrees with computed {e.K}")
        return Q


def eval_shift_form(Q: ShiftData, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
    if _same_grid(f1, f2, f3) != Q.grid:
        raise ValueError("inputs and shift live on different grids")
    return Q.haar_form().evaluate(f1, f2, f3)


def apply_shift(Q: ShiftData, f1: GridFunction, f2: GridFunction) -> GridFunction:
    return Q.haar_form().apply(f1, f2)


# ---------------------------------------------------------------------------
# tri-parameter shifts of Zygmund nature

@dataclass(frozen=True)
class TriEntry:
    L: Key
    rects: Tuple[Key, Key, Key]
    tags: Tuple[Triple, Triple, Triple]
    a: float


def _scale_gaps(L: Key, R: Key) -> Triple:
    return tuple(R[i] - L[i] for i in range(3))


def _is_inside(L: Key, R: Key) -> bool:
    for i in range(3):
        d = R[i] - L[i]
        if d < 0 or (R[3 + i] >> d) != L[3 + i]:
            return False
    return True


@dataclass
class TriShiftData:
    """A tri-parameter bilinear shift with one Zygmund trace.

    ``noncanc`` names, per parameter group (axis 1, axes 2-3), the single slot
    holding a non-cancellative Haar function; the other two slots are
    cancellative in that group.
    """

    grid: GridSpec
    l: Tuple[Triple, Triple, Triple]
    lam_exponent: int
    noncanc: Tuple[int, int]
    entries: List[TriEntry] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        self._form: Optional[HaarForm] = None

    @property
    def adjoint_indices(self) -> Tuple[int, int]:
        """Adjoint labels relative to the reference layout with non-cancellative slots (2, 1).

        Group 1: 0 if slot 2 is non-cancellative, 2 if slot 3 is; group 2-3: 0 if
        slot 1 is, 1 if slot 3 is.  A layout that swaps the roles of slots 1 and 2
        in a group has no adjoint label there and reports ``-1``.
        """
        m1 = {2: 0, 3: 2}.get(self.noncanc[0], -1)
        m23 = {1: 0, 3: 1}.get(self.noncanc[1], -1)
        return m1, m23

    def haar_types(self) -> Tuple[Tuple[str, str], ...]:
        return tuple((("h0" if self.noncanc[0] == s else "h"), ("h0" if self.noncanc[1] == s else "h"))
                     for s in (1, 2, 3))

    def validate(self, k: Optional[Triple] = None) -> None:
        """Exact integer and normalization checks; raises on the first violation."""
        for e in self.entries:
            n = e.L[0] + e.L[1] - e.L[2]
            if n != self.lam_exponent:
                raise ConstraintViolated(f"top {e.L} is not in the lattice with exponent {self.lam_exponent}")
            vol_prod = 1.0
            for s in range(3):
                R = e.rects[s]
                if not _is_inside(e.L, R) or _scale_gaps(e.L, R) != tuple(self.l[s]):
                    raise ConstraintViolated(f"slot {s + 1} rectangle {R} is not {self.l[s]} below {e.L}")
                t = e.tags[s]
                canc1 = self.noncanc[0] != s + 1
                canc23 = self.noncanc[1] != s + 1
                if (t[0] == 1) != canc1 or ((t[1], t[2]) != (0, 0)) != canc23:
                    raise ConstraintViolated(f"slot {s + 1} Haar tags {t} disagree with the type table")
                vol_prod *= _volume(R)
            bound = np.sqrt(vol_prod) / _volume(e.L) ** 2
            if abs(e.a) > bound * (1 + 1e-12):
                raise NormalizationOverflow(f"|a|={abs(e.a)} exceeds {bound} at top {e.L}")
            if not self.has_zygmund_trace(e, self.noncanc):
                raise ConstraintViolated(f"no Zygmund trace for the coefficient at {e.L}")
        if k is not None:
            if abs(self.lam_exponent) > 3 * max(k):
                raise ConstraintViolated(f"lattice exponent {self.lam_exponent} too large for {k}")
            excess = max(k[2] - k[1], 0)
            for s in range(3):
                ls = self.l[s]
                if any(ls[i] > k[i] for i in range(3)):
                    raise ConstraintViolated(f"slot {s + 1} complexity {ls} exceeds {k}")
                if max(ls[2] - ls[1], 0) > excess:
                    raise ConstraintViolated(f"slot {s + 1} complexity {ls} breaks the 2-3 constraint for {k}")

    @staticmethod
    def has_zygmund_trace(e: TriEntry, noncanc: Tuple[int, int] = (2, 1)) -> bool:
        """Some axis-1 part of a slot cancellative in group 1 times some 2-3 part of a
        slot cancellative in group 2-3 forms a Zygmund rectangle."""
        for i1 in (s for s in range(3) if s + 1 != noncanc[0]):
            for i2 in (s for s in range(3) if s + 1 != noncanc[1]):
                if e.rects[i2][2] == e.rects[i1][0] + e.rects[i2][1]:
                    return True
        return False

    def haar_form(self) -> HaarForm:
        if self._form is None:
            if not self.entries:
                self._form = _empty_form(self.grid)
            else:
                self._form = HaarForm(self.grid, [e.a for e in self.entries], [e.rects for e in self.entries],
                                      [e.tags for e in self.entries])
        return self._form

    def adjoint(self, j1_star: int, j23_star: int) -> "TriShiftData":
        """Swap the axis-1 (resp. 2-3) functionals of slot ``j*`` with slot 3; 0 leaves a group alone."""
        entries = []
        for e in self.entries:
            rects = [list(r) for r in e.rects]
            tags = [list(t) for t in e.tags]
            if j1_star:
                a, b = j1_star - 1, 2
                for idx in (0, 3):
                    rects[a][idx], rects[b][idx] = rects[b][idx], rects[a][idx]
                tags[a][0], tags[b][0] = tags[b][0], tags[a][0]
            if j23_star:
                a, b = j23_star - 1, 2
                for idx in (1, 2, 4, 5):
                    rects[a][idx], rects[b][idx] = rects[b][idx], rects[a][idx]
                for idx in (1, 2):
                    tags[a][idx], tags[b][idx] = tags[b][idx], tags[a][idx]
            entries.append(TriEntry(e.L, tuple(tuple(r) for r in rects), tuple(tuple(t) for t in tags), e.a))
        l = [list(v) for v in self.l]
        if j1_star:
            l[j1_star - 1][0], l[2][0] = l[2][0], l[j1_star - 1][0]
        if j23_star:
            for i in (1, 2):
                l[j23_star - 1][i], l[2][i] = l[2][i], l[j23_star - 1][i]

        def moved(nc, j):
            return 3 if nc == j else (j if nc == 3 else nc)

        nc = (moved(self.noncanc[0], j1_star) if j1_star else self.noncanc[0],
              moved(self.noncanc[1], j23_star) if j23_star else self.noncanc[1])
        return TriShiftData(self.grid, tuple(tuple(v) for v in l), self.lam_exponent, nc, entries,
                            label=f"{self.label}^({j1_star}*,{j23_star}*)")

    def to_trilinear(self):
        return self.haar_form().to_trilinear(name=self.label or "tri-shift")


def eval_trishift(S: TriShiftData, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
    return S.haar_form().evaluate(f1, f2, f3)


def apply_trishift(S: TriShiftData, f1: GridFunction, f2: GridFunction) -> GridFunction:
    return S.haar_form().apply(f1, f2)


# ---------------------------------------------------------------------------
# structural decomposition
#
# A group rectangle is a tuple of (scale, position) pairs over the axes of
# one parameter group: one pair for axis 1, two for axes 2-3.

def _gparent(g, gens):
    return tuple((j - d, p >> d) for (j, p), d in zip(g, gens))


def _gvol(g) -> float:
    return 2.0 ** (-sum(j for j, _ in g))


def _step_weight(J, child, tag) -> float:
    """``<h^tag_J>`` averaged over ``child``."""
    w = 1.0
    for (j, _), (_, cp), t in zip(J, child, tag):
        w *= 2.0 ** (0.5 * j)
        if t and (cp & 1):
            w = -w
    return w


def _chain(target, gens) -> List[Tuple[tuple, tuple, List[tuple], int]]:
    """Martingale steps from the ``gens``-th ancestor of ``target`` down to ``target``.

    Returns ``(J, child, tags, level)``; in the 2-3 group both axes step
    together until the smaller complexity is used up, then the remaining
    axis steps alone with the other axis carrying a non-cancellative factor.
    """
    steps = []
    if len(target) == 1:
        k1 = gens[0]
        for l in range(k1):
            steps.append((_gparent(target, (k1 - l,)), _gparent(target, (k1 - l - 1,)), [(1,)], l))
        return steps
    k2, k3 = gens
    m = min(k2, k3)
    for l in range(m):
        steps.append((_gparent(target, (k2 - l, k3 - l)), _gparent(target, (k2 - l - 1, k3 - l - 1)), list(ETAS), l))
    if k3 >= k2:
        for l3 in range(k2, k3):
            steps.append((_gparent(target, (0, k3 - l3)), _gparent(target, (0, k3 - l3 - 1)), [(0, 1)], l3))
    else:
        for l2 in range(k3, k2):
            steps.append((_gparent(target, (k2 - l2, 0)), _gparent(target, (k2 - l2 - 1, 0)), [(1, 0)], l2))
    return steps


def _zero_tag(g) -> tuple:
    return (0,) * len(g)


def _group_terms(parts, center: int, gens, center_tag):
    """Expand one group's bracket ``h0_p (x) h0_q - h0_c (x) h0_c`` (scaled) into Haar products.

    ``parts`` are the three slot rectangles of the group.  Yields
    ``(kind, level, top, slot_functionals, factor, family_factor)``.
    """
    p, q = [s for s in range(3) if s != center]
    Ip, Iq, Ic = parts[p], parts[q], parts[center]
    vol = _gvol(Ic)
    K = _gparent(Ic, gens)
    z = _zero_tag(Ic)
    out = []

    def funcs(fp, fq):
        f = [None, None, None]
        f[p], f[q], f[center] = fp, fq, (Ic, center_tag)
        return tuple(f)

    for J, child, tags, lvl in _chain(Ip, gens):
        for t in tags:
            w = _step_weight(J, child, t)
            out.append(("P", lvl, K, funcs((J, t), (Iq, z)), vol * w * _gvol(Iq) ** -0.5, 1))
    for J, child, tags, lvl in _chain(Iq, gens):
        for t in tags:
            w = _step_weight(J, child, t)
            out.append(("Q", lvl, K, funcs((K, z), (J, t)), vol * w * _gvol(K) ** -0.5, 1))
    for J, child, tags, lvl in _chain(Ic, gens):
        ratio = int(round(_gvol(J) / _gvol(child)))
        for t in tags:
            w = _step_weight(J, child, t)
            out.append(("A", lvl, J, funcs((J, t), (J, z)), -vol * w * _gvol(J) ** -0.5, 1))
            out.append(("B", lvl, J, funcs((child, z), (J, t)), -vol * w * _gvol(child) ** -0.5, ratio))
    return out


@dataclass
class StructuralResult:
    shifts: List[TriShiftData]
    C: float
    families: List[dict]

    @property
    def family_count(self) -> int:
        return len(self.families)

    def evaluate(self, f1: GridFunction, f2: GridFunction, f3: GridFunction) -> float:
        """``C * sum_u <S^u(f1, f2), f3>``."""
        return self.C * sum(eval_trishift(S, f1, f2, f3) for S in self.shifts)


def _family_factor(kind: str, gens, lvl: int, group: int) -> int:
    if kind != "B":
        return 1
    if group == 1:
        return 2
    return 4 if lvl < min(gens) else 2


def _family_levels(k: Triple):
    g1 = [(kind, l) for kind in "PQAB" for l in range(k[0])]
    n23 = max(k[1], k[2])
    g23 = [(kind, l) for kind in "PQAB" for l in range(n23)]
    return g1, g23


def structural_decompose(Q: ShiftData) -> StructuralResult:
    """Write ``Q = C * sum_u S^u`` with every ``S^u`` a tri-parameter shift."""
    k = Q.k
    grid = Q.grid
    c1, c23 = Q.j1 - 1, Q.j2 - 1
    if k[0] == 0 or max(k[1], k[2]) == 0:
        S = TriShiftData(grid, (k, k, k), Q.lam_exponent, (0, 0), [], label="zero")
        return StructuralResult([S], 1.0, [{"family": "zero", "factor": 1, "entries": 0}])
    g1_levels, g23_levels = _family_levels(k)
    C = 1
    for kind1, l1 in g1_levels:
        for kind23, l23 in g23_levels:
            C = max(C, _family_factor(kind1, (k[0],), l1, 1) * _family_factor(kind23, (k[1], k[2]), l23, 23))
    acc: Dict[tuple, Dict[tuple, float]] = {(a, b): defaultdict(float) for a in g1_levels for b in g23_levels}
    for e in Q.entries:
        ks = [R.key() for R in e.I]
        parts1 = [((r[0], r[3]),) for r in ks]
        parts23 = [((r[1], r[4]), (r[2], r[5])) for r in ks]
        t1 = _group_terms(parts1, c1, (k[0],), (1,))
        t23 = _group_terms(parts23, c23, (k[1], k[2]), tuple(e.eta))
        for kind1, l1, top1, f1, x1, _ in t1:
            for kind23, l23, top23, f23, x23, _ in t23:
                L = (top1[0][0], top23[0][0], top23[1][0], top1[0][1], top23[0][1], top23[1][1])
                rects, tags = [], []
                for s in range(3):
                    (g1, tg1), (g23, tg23) = f1[s], f23[s]
                    rects.append((g1[0][0], g23[0][0], g23[1][0], g1[0][1], g23[0][1], g23[1][1]))
                    tags.append(tg1 + tg23)
                acc[((kind1, l1), (kind23, l23))][(L, tuple(rects), tuple(tags))] += e.a * x1 * x23
    shifts, families = [], []
    nc_of = {"P": 1, "Q": 0, "A": 1, "B": 0}  # index into (p, q)
    for (fam1, fam23), table in acc.items():
        pq1 = [s for s in range(3) if s != c1]
        pq23 = [s for s in range(3) if s != c23]
        noncanc = (pq1[nc_of[fam1[0]]] + 1, pq23[nc_of[fam23[0]]] + 1)
        factor = _family_factor(fam1[0], (k[0],), fam1[1], 1) * _family_factor(fam23[0], (k[1], k[2]), fam23[1], 23)
        entries = [TriEntry(L, rects, tags, v / C) for (L, rects, tags), v in sorted(table.items()) if v != 0.0]
        if entries:
            e0 = entries[0]
            l = tuple(_scale_gaps(e0.L, r) for r in e0.rects)
            lam = e0.L[0] + e0.L[1] - e0.L[2]
        else:
            l, lam = (k, k, k), Q.lam_exponent
        label = f"{fam1[0]}{fam1[1]}/{fam23[0]}{fam23[1]}"
        S = TriShiftData(grid, l, lam, noncanc, entries, label=label)
        S.validate(k)
        shifts.append(S)
        families.append({"family": label, "factor": factor, "entries": len(entries)})
    return StructuralResult(shifts, float(C), families)


def structural_family_count(k: Triple) -> int:
    if k[0] == 0 or max(k[1], k[2]) == 0:
        return 1
    return 16 * k[0] * max(k[1], k[2])


# ---------------------------------------------------------------------------
# linear Zygmund shifts

@dataclass(frozen=True)
class HaarLike:
    """A step function constant on the children of two equal-size rectangles with zero mean.

    ``values`` maps child rectangle keys (scales then positions, over the
    axes listed in ``axes``) to heights.
    """

    axes: Tuple[int, ...]
    values: Tuple[Tuple[tuple, float], ...]

    def profile(self, grid: GridSpec) -> np.ndarray:
        shape = tuple(grid.shape[a - 1] for a in self.axes)
        out = np.zeros(shape)
        for key, v in self.values:
            d = len(self.axes)
            sl = []
            for i, a in enumerate(self.axes):
                j, p = key[i], key[d + i]
                width = 1 << (grid.L[a - 1] - j)
                sl.append(slice(p * width, (p + 1) * width))
            out[tuple(sl)] += v
        return out

    def check(self, grid: GridSpec, parent_volume: float) -> None:
        prof = self.profile(grid)
        cells = 2.0 ** -sum(grid.L[a - 1] for a in self.axes)
        if abs(prof.sum() * cells) > 1e-12 * max(1.0, np.abs(prof).max()):
            raise ConstraintViolated("H-function has nonzero integral")
        if np.abs(prof).max() > parent_volume ** -0.5 * (1 + 1e-12):
            raise NormalizationOverflow("H-function exceeds its L2 normalization")

    @classmethod
    def random(cls, I: tuple, J: tuple, axes: Tuple[int, ...], rng: np.random.Generator) -> "HaarLike":
        """Random ``H_{I,J}``; ``I``, ``J`` are (scales..., positions...) over ``axes``."""
        d = len(axes)
        kids = {}
        for R in (I, J):
            sc, ps = R[:d], R[d:]
            for bits in product((0, 1), repeat=d):
                kids[tuple(s + 1 for s in sc) + tuple(2 * p + b for p, b in zip(ps, bits))] = 0.0
        keys = sorted(kids)
        v = rng.standard_normal(len(keys))
        v -= v.mean()
        v *= 2.0 ** (0.5 * sum(I[:d])) / np.abs(v).max()
        return cls(tuple(axes), tuple(zip(keys, (float(x) for x in v))))


@dataclass(frozen=True)
class LinearEntry:
    K: Rect
    I: Rect
    J: Rect
    a: float
    eta_in: Tuple[int, int]
    eta_out: Tuple[int, int]
    H1: HaarLike
    H23: HaarLike


def _axis_haar(j: int, p: int, tag: int, n: int) -> np.ndarray:
    out = np.zeros(n)
    width = n >> j
    amp = 2.0 ** (0.5 * j)
    out[p * width:(p + 1) * width] = amp
    if tag:
        out[p * width + width // 2:(p + 1) * width] = -amp
    return out


def _grid_haar23(R: Rect, eta, grid: GridSpec) -> np.ndarray:
    return np.outer(_axis_haar(R.I2.j, R.I2.pos, eta[0], 1 << grid.L2), _axis_haar(R.I3.j, R.I3.pos, eta[1], 1 << grid.L3))


@dataclass
class LinearShiftData:
    """Linear Zygmund shift ``<Q f, g> = sum a_{IJK} <f, phi_I> <g, psi_J>``.

    In the ``mixed`` variant ``phi_I = h_{I^1} (x) H_{I23,J23}`` and
    ``psi_J = H_{I^1,J^1} (x) h_{J23}``; in the ``plain`` variant
    ``phi_I = h_I`` and ``psi_J = H_{I^1,J^1} (x) H_{I23,J23}``.
    """

    grid: GridSpec
    k: Triple
    entries: List[LinearEntry] = field(default_factory=list)
    variant: str = "mixed"
    tag: str = ""

    def __post_init__(self):
        if self.variant not in ("mixed", "plain"):
            raise ValueError("variant must be 'mixed' or 'plain'")
        self._cache = None

    @staticmethod
    def bound(I: Rect, K: Rect) -> float:
        return 2.0 ** (-I.volume_exponent + K.volume_exponent)

    def validate(self) -> None:
        for e in self.entries:
            for R in (e.I, e.J):
                if not R.is_zygmund:
                    raise ConstraintViolated(f"{R} is not Zygmund")
                up = Rect(*(parent_k(iv, kk) for iv, kk in zip((R.I1, R.I2, R.I3), self.k)))
                if up != e.K:
                    raise ConstraintViolated(f"{R} does not sit {self.k} below {e.K}")
            if abs(e.a) > self.bound(e.I, e.K) * (1 + 1e-12):
                raise NormalizationOverflow(f"|a| exceeds the linear shift bound at {e.K}")
            e.H1.check(self.grid, 2.0 ** -e.I.I1.j)
            e.H23.check(self.grid, 2.0 ** -(e.I.I2.j + e.I.I3.j))

    @classmethod
    def random(cls, grid: GridSpec, k: Triple, rng: np.random.Generator, tops: int = 3, per_top: int = 4,
               variant: str = "mixed", decay: Optional[float] = None, tag: str = "") -> "LinearShiftData":
        """Random admissible shift.

        ``decay`` damps each coefficient by ``(1 + r)**-decay`` where ``r`` is the
        off-diagonal Zygmund ratio of ``I`` and ``J`` inside ``K``; this tags a
        coefficient family with a kernel decay exponent.
        """
        k = tuple(int(v) for v in k)
        scales = _zygmund_scales_for(grid, k)
        if not scales:
            raise ComplexityExceedsGrid(f"complexity {k} does not fit in {grid}")
        entries = []
        for _ in range(tops):
            s1, s2 = scales[rng.integers(len(scales))]
            sc = (s1, s2, s1 + s2)
            top = [int(rng.integers(1 << (s - kk))) for s, kk in zip(sc, k)]
            K = _rect(tuple(s - kk for s, kk in zip(sc, k)) + tuple(top))
            for _ in range(per_top):
                pI = [(t << kk) + int(rng.integers(1 << kk)) for t, kk in zip(top, k)]
                pJ = [(t << kk) + int(rng.integers(1 << kk)) for t, kk in zip(top, k)]
                I, J = _rect(sc + tuple(pI)), _rect(sc + tuple(pJ))
                a = float(rng.uniform(-1, 1)) * cls.bound(I, K)
                if decay is not None:
                    d = [abs(x - y) * 2.0 ** -s for x, y, s in zip(pI, pJ, sc)]
                    prod23 = (d[0] + 2.0 ** -s1) * (d[1] + 2.0 ** -s2)
                    third = d[2] + 2.0 ** -(s1 + s2)
                    ratio = prod23 / third + third / prod23
                    a *= (ratio / 2.0) ** -decay
                H1 = HaarLike.random((s1, pI[0]), (s1, pJ[0]), (1,), rng)
                H23 = HaarLike.random((s2, sc[2], pI[1], pI[2]), (s2, sc[2], pJ[1], pJ[2]), (2, 3), rng)
                entries.append(LinearEntry(K, I, J, a, ETAS[rng.integers(3)], ETAS[rng.integers(3)], H1, H23))
        Q = cls(grid, k, entries, variant, tag)
        Q.validate()
        return Q

    def _factors(self):
        if self._cache is None:
            g = self.grid
            n1 = 1 << g.L1
            ins, outs = [], []
            for e in self.entries:
                h1 = _axis_haar(e.I.I1.j, e.I.I1.pos, 1, n1)
                H1 = e.H1.profile(g)
                H23 = e.H23.profile(g)
                if self.variant == "mixed":
                    ins.append((h1, H23))
                    outs.append((H1, _grid_haar23(e.J, e.eta_out, g)))
                else:
                    ins.append((h1, _grid_haar23(e.I, e.eta_in, g)))
                    outs.append((H1, H23))
            self._cache = (ins, outs)
        return self._cache

    def apply(self, f: GridFunction) -> GridFunction:
        ins, outs = self._factors()
        vol = self.grid.cell_volume
        out = np.zeros(self.grid.shape)
        v = f.values
        for e, (a1, a23), (b1, b23) in zip(self.entries, ins, outs):
            c = e.a * vol * np.einsum("x,xyz,yz->", a1, v, a23)
            if c:
                out += c * b1[:, None, None] * b23[None, :, :]
        return GridFunction(self.grid, out)

    def adjoint_apply(self, g: GridFunction) -> GridFunction:
        ins, outs = self._factors()
        vol = self.grid.cell_volume
        out = np.zeros(self.grid.shape)
        for e, (a1, a23), (b1, b23) in zip(self.entries, ins, outs):
            c = e.a * vol * np.einsum("x,xyz,yz->", b1, g.values, b23)
            if c:
                out += c * a1[:, None, None] * a23[None, :, :]
        return GridFunction(self.grid, out)


def linear_shift_eval(Q: LinearShiftData, f: GridFunction) -> GridFunction:
    return Q.apply(f)
