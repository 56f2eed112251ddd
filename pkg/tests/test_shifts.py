import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import rel
from zygmra.errors import ComplexityExceedsGrid, ConstraintViolated, FormatError, NormalizationOverflow
from zygmra.haar import GridFunction, haar_tensor, inner
from zygmra.lattice import DyadicInterval, GridSpec, Rect, ZygRect
from zygmra.shifts import (
    HaarLike,
    LinearEntry,
    LinearShiftData,
    ShiftData,
    TriShiftData,
    apply_shift,
    apply_trishift,
    eval_shift_form,
    eval_trishift,
    linear_shift_eval,
    structural_decompose,
    structural_family_count,
)

SMALL = GridSpec(2, 2, 4)


def _rand(grid, rng, n=3):
    return [GridFunction.random(grid, rng) for _ in range(n)]


def _split(grid, rng):
    """A function of axis 1 times a function of axes 2-3, returned with its factors."""
    a = rng.standard_normal(grid.shape[0])
    b = rng.standard_normal(grid.shape[1:])
    return GridFunction(grid, a[:, None, None] * b[None]), a, b


def _bracket_oracle(Q, f1, f2, f3):
    """Four-term bracket evaluated through dense Haar tensors and plain inner products."""
    fs = (f1, f2, f3)
    c1, c23 = Q.j1 - 1, Q.j2 - 1
    total = 0.0
    for e in Q.entries:
        for r1 in (0, 1):
            for r23 in (0, 1):
                prod = 1.0
                for s in range(3):
                    src1 = e.I[c1] if r1 else e.I[s]
                    src23 = e.I[c23] if r23 else e.I[s]
                    R = Rect(src1.I1, src23.I2, src23.I3)
                    tags = (1 if s == c1 else 0,) + (tuple(e.eta) if s == c23 else (0, 0))
                    prod *= inner(fs[s], haar_tensor(R, tags, Q.grid))
                total += (-1) ** (r1 + r23) * e.a * prod
    return total


@pytest.mark.parametrize("slots", [(3, 3), (1, 2), (2, 1)])
def test_shift_form_matches_dense_oracle(slots):
    rng = np.random.default_rng(0)
    Q = ShiftData.random(SMALL, (1, 1, 2), rng, tops=2, per_top=3, j1=slots[0], j2=slots[1])
    for _ in range(3):
        fs = _rand(SMALL, rng)
        assert eval_shift_form(Q, *fs) == pytest.approx(_bracket_oracle(Q, *fs), rel=1e-12, abs=1e-15)


def test_single_coefficient_by_hand():
    grid = GridSpec(2, 1, 3)
    I1 = ZygRect(DyadicInterval(1, 1, 0), DyadicInterval(2, 0, 0), DyadicInterval(3, 1, 0))
    I2 = ZygRect(DyadicInterval(1, 1, 1), DyadicInterval(2, 0, 0), DyadicInterval(3, 1, 1))
    a = 0.1  # the bound is |I|**1.5 / |K|**2 = 1/8 with K the unit cube
    Q = ShiftData.from_entries(grid, (1, 0, 1), [(I1, I2, I1, (0, 1), a)])
    f1 = haar_tensor(I1, (0, 0, 0), grid)
    f2 = haar_tensor(I2, (0, 0, 0), grid)
    f3 = haar_tensor(I1, (1, 0, 1), grid)
    # I2 is disjoint from I1 on axes 1 and 3, so only the unswapped term survives
    assert eval_shift_form(Q, f1, f2, f3) == pytest.approx(a, rel=1e-12)
    # with f2 on I1 only the doubly swapped term survives, with sign (+1)
    assert eval_shift_form(Q, f1, f1, f3) == pytest.approx(a, rel=1e-12)
    mixed = haar_tensor(Rect(I1.I1, I2.I2, I2.I3), (0, 0, 0), grid)
    assert eval_shift_form(Q, f1, mixed, f3) == pytest.approx(-a, rel=1e-12)
    with pytest.raises(NormalizationOverflow):
        ShiftData.from_entries(grid, (1, 0, 1), [(I1, I2, I1, (0, 1), 0.13)])


def test_constants_are_annihilated():
    rng = np.random.default_rng(1)
    Q = ShiftData.random(SMALL, (1, 1, 2), rng)
    one = GridFunction.constant(SMALL)
    assert eval_shift_form(Q, one, one, one) == 0.0
    f1, f2, _ = _rand(SMALL, rng)
    assert abs(eval_shift_form(Q, f1, f2, one)) < 1e-14


def test_trivial_complexity_form_vanishes():
    rng = np.random.default_rng(2)
    Q = ShiftData.random(SMALL, (0, 0, 0), rng)
    assert abs(eval_shift_form(Q, *_rand(SMALL, rng))) < 1e-15


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-3, 3))
def test_trilinearity(seed, c):
    rng = np.random.default_rng(seed)
    Q = ShiftData.random(SMALL, (1, 0, 1), rng)
    f1, g1, f2, f3 = _rand(SMALL, rng, 4)
    lhs = eval_shift_form(Q, f1 + c * g1, f2, f3)
    rhs = eval_shift_form(Q, f1, f2, f3) + c * eval_shift_form(Q, g1, f2, f3)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs) + abs(rhs))


def test_apply_shift_duality_and_linearity():
    rng = np.random.default_rng(3)
    Q = ShiftData.random(SMALL, (1, 1, 2), rng, j1=2, j2=1)
    f1, f2, g = _rand(SMALL, rng)
    out = apply_shift(Q, f1, f2)
    for _ in range(20):
        h = GridFunction.random(SMALL, rng)
        assert inner(out, h) == pytest.approx(eval_shift_form(Q, f1, f2, h), rel=1e-10, abs=1e-14)
    assert rel(apply_shift(Q, 2 * f1 - g, f2), 2 * out - apply_shift(Q, g, f2)) < 1e-12
    empty = ShiftData(SMALL, (1, 1, 2))
    assert np.all(apply_shift(empty, f1, f2).values == 0.0)


def test_shift_construction_errors():
    rng = np.random.default_rng(4)
    with pytest.raises(ComplexityExceedsGrid):
        ShiftData.random(GridSpec(1, 1, 2), (2, 2, 4), rng)
    I = ZygRect(DyadicInterval(1, 1, 0), DyadicInterval(2, 1, 0), DyadicInterval(3, 2, 0))
    with pytest.raises(NormalizationOverflow):
        ShiftData.from_entries(SMALL, (1, 1, 2), [(I, I, I, (1, 1), 1.0)])
    J = ZygRect(DyadicInterval(1, 1, 1), DyadicInterval(2, 1, 0), DyadicInterval(3, 2, 0))
    with pytest.raises(ConstraintViolated):
        ShiftData.from_entries(SMALL, (0, 0, 0), [(I, J, I, (1, 1), 0.0)])
    with pytest.raises(ValueError):
        ShiftData(SMALL, (1, 1, 2), j1=4)


def test_jsonl_roundtrip():
    Q = ShiftData.random(SMALL, (1, 1, 2), np.random.default_rng(5), j1=1, j2=2)
    text = Q.to_jsonl()
    back = ShiftData.from_jsonl(text)
    assert back.entries == Q.entries and (back.j1, back.j2, back.k) == (1, 2, (1, 1, 2))
    body = "\n".join(text.splitlines()[1:])
    assert ShiftData.from_jsonl(body, grid=SMALL, k=(1, 1, 2)).entries == Q.entries
    with pytest.raises(FormatError):
        ShiftData.from_jsonl(body, grid=SMALL)


def test_structural_decomposition_identity():
    rng = np.random.default_rng(6)
    Q = ShiftData.random(SMALL, (1, 1, 2), rng, tops=2, per_top=3)
    res = structural_decompose(Q)
    assert res.family_count == structural_family_count((1, 1, 2))
    for _ in range(10):
        fs = _rand(SMALL, rng)
        lhs = eval_shift_form(Q, *fs)
        assert abs(res.evaluate(*fs) - lhs) <= 1e-10 * max(abs(lhs), 1e-300)
    for S in res.shifts:
        S.validate((1, 1, 2))
        for e in S.entries:
            assert TriShiftData.has_zygmund_trace(e, S.noncanc)


def test_structural_decomposition_of_trivial_complexity():
    Q = ShiftData.random(SMALL, (0, 0, 0), np.random.default_rng(7))
    res = structural_decompose(Q)
    assert len(res.shifts) == 1 and res.C == 1.0


def test_trishift_partial_and_full_adjoints():
    rng = np.random.default_rng(8)
    Q = ShiftData.random(SMALL, (1, 1, 2), rng)
    S = next(s for s in structural_decompose(Q).shifts if s.entries)
    full = S.adjoint(1, 1)
    f1, f2, f3 = _rand(SMALL, rng)
    assert eval_trishift(S, f1, f2, f3) == pytest.approx(eval_trishift(full, f3, f2, f1), rel=1e-12)
    # the axis-1 adjoint trades only the axis-1 factors of slots 1 and 3
    u1, a1, b1 = _split(SMALL, rng)
    u3, a3, b3 = _split(SMALL, rng)
    swapped1 = GridFunction(SMALL, a3[:, None, None] * b1[None])
    swapped3 = GridFunction(SMALL, a1[:, None, None] * b3[None])
    part = S.adjoint(1, 0)
    assert eval_trishift(S, u1, f2, u3) == pytest.approx(eval_trishift(part, swapped1, f2, swapped3), rel=1e-12)
    out = apply_trishift(S, f1, f2)
    assert inner(out, f3) == pytest.approx(eval_trishift(S, f1, f2, f3), rel=1e-10)
    assert S.adjoint_indices[0] in (-1, 0, 2) and len(S.haar_types()) == 3


def test_trishift_kills_constants_in_a_cancellative_slot():
    rng = np.random.default_rng(9)
    Q = ShiftData.random(SMALL, (1, 1, 2), rng)
    one = GridFunction.constant(SMALL)
    for S in structural_decompose(Q).shifts:
        if S.noncanc[0] != 1 and S.entries:
            f2, f3 = _rand(SMALL, rng, 2)
            assert abs(eval_trishift(S, one, f2, f3)) < 1e-14


def _tiny_linear_shift():
    grid = GridSpec(1, 1, 2)
    unit = Rect(DyadicInterval(1, 0, 0), DyadicInterval(2, 0, 0), DyadicInterval(3, 0, 0))
    H1 = HaarLike((1,), (((1, 0), 1.0), ((1, 1), -1.0)))
    H23 = HaarLike((2, 3), (((1, 1, 0, 0), 1.0), ((1, 1, 0, 1), -1.0), ((1, 1, 1, 0), -1.0), ((1, 1, 1, 1), 1.0)))
    e = LinearEntry(unit, unit, unit, 0.75, (1, 1), (0, 1), H1, H23)
    return grid, LinearShiftData(grid, (0, 0, 0), [e])


def test_linear_shift_single_term_by_hand():
    grid, Q = _tiny_linear_shift()
    Q.validate()
    x1 = np.array([1.0, -1.0])                        # h on the unit interval
    H23 = np.array([[1.0, 1.0, -1.0, -1.0], [-1.0, -1.0, 1.0, 1.0]])
    h23_out = np.array([[1.0, 1.0, -1.0, -1.0]] * 2)  # eta_out = (0, 1)
    f = GridFunction.random(grid, np.random.default_rng(10))
    pairing = float(np.einsum("x,xyz,yz->", x1, f.values, H23)) * grid.cell_volume
    expect = 0.75 * pairing * (np.array([1.0, -1.0])[:, None, None] * h23_out[None])
    assert rel(linear_shift_eval(Q, f).values, expect) < 1e-13


def test_linear_shift_properties():
    rng = np.random.default_rng(11)
    for variant in ("mixed", "plain"):
        Q = LinearShiftData.random(SMALL, (1, 1, 2), rng, variant=variant)
        one = GridFunction.constant(SMALL, 3.0)
        assert np.abs(Q.apply(one).values).max() < 1e-13
        f, g = _rand(SMALL, rng, 2)
        assert inner(Q.apply(f), g) == pytest.approx(inner(f, Q.adjoint_apply(g)), rel=1e-10)
        assert Q.apply(f).norm(2) <= len(Q.entries) * f.norm(2)
    with pytest.raises(ValueError):
        LinearShiftData(SMALL, (1, 1, 2), variant="other")


def test_linear_shift_decay_tag_only_shrinks_coefficients():
    a = LinearShiftData.random(SMALL, (1, 1, 2), np.random.default_rng(12))
    b = LinearShiftData.random(SMALL, (1, 1, 2), np.random.default_rng(12), decay=0.5)
    for x, y in zip(a.entries, b.entries):
        assert abs(y.a) <= abs(x.a) * (1 + 1e-12)
