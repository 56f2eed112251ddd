import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zygmra.errors import CoarsestScale, FinestScale, FormatError, LambdaOutOfRange, NotZygmund
from zygmra.lattice import (
    DilatedLatticeSpec,
    DyadicInterval,
    GridSpec,
    LatticeShift,
    Rect,
    ZygRect,
    children,
    dilated_scales,
    dump_config,
    enum_dilated,
    enum_zygmund,
    is_good,
    load_config,
    parent_k,
    rect_from_key,
    relative_position,
    translate,
    zygmund_count,
)

GRID = GridSpec(3, 3, 6)


def test_children_examples():
    assert children(DyadicInterval(1, 0, 0)) == (DyadicInterval(1, 1, 0), DyadicInterval(1, 1, 1))
    assert children(DyadicInterval(3, 2, 3)) == (DyadicInterval(3, 3, 6), DyadicInterval(3, 3, 7))


def test_children_at_finest_scale_raises():
    with pytest.raises(FinestScale):
        children(DyadicInterval(1, 3, 0), levels=3)


def test_parent_examples():
    assert parent_k(DyadicInterval(1, 3, 5), 2) == DyadicInterval(1, 1, 1)
    I = DyadicInterval(2, 2, 3)
    assert parent_k(I, 0) == I
    with pytest.raises(CoarsestScale):
        parent_k(I, 3)


def test_translate_examples():
    assert translate(DyadicInterval(1, 2, 1), 2) == DyadicInterval(1, 2, 3)
    I = DyadicInterval(3, 4, 9)
    assert translate(I, 0) == I
    assert translate(DyadicInterval(1, 2, 3), 1) == DyadicInterval(1, 2, 0)


def test_goodness_boundary_cases():
    for k in (2, 3, 4):
        j = k + 1
        at_margin = DyadicInterval(3, j, 1 << (k - 2))
        assert relative_position(at_margin, k) == 1 << (k - 2)
        assert is_good(at_margin, k)
        assert not is_good(DyadicInterval(3, j, 0), k)
        assert not is_good(DyadicInterval(3, j, (1 << k) - 1), k)


def test_goodness_needs_k_at_least_two():
    with pytest.raises(ValueError):
        is_good(DyadicInterval(1, 2, 1), 1)


shifted = st.integers(0, 2**31 - 1).map(lambda s: LatticeShift.from_seed(GRID, s))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), j=st.integers(0, 5), pos=st.integers(0, 1 << 10), use_shift=st.booleans())
def test_children_partition_parent(seed, j, pos, use_shift):
    shift = LatticeShift.from_seed(GRID, seed) if use_shift else None
    I = DyadicInterval(3, j, pos, shift)
    left, right = children(I, GRID.L3)
    cells = np.concatenate([left.cell_indices(GRID.L3), right.cell_indices(GRID.L3)])
    assert sorted(cells.tolist()) == sorted(I.cell_indices(GRID.L3).tolist())
    assert parent_k(left, 1, GRID.L3) == I
    assert parent_k(right, 1, GRID.L3) == I


@settings(max_examples=40, deadline=None)
@given(shift=shifted, j=st.integers(0, 6))
def test_intervals_tile_the_axis(shift, j):
    cells = np.concatenate([DyadicInterval(3, j, p, shift).cell_indices(6) for p in range(1 << j)])
    assert sorted(cells.tolist()) == list(range(64))


@settings(max_examples=60, deadline=None)
@given(shift=shifted, k=st.integers(2, 4), pos=st.integers(0, 63))
def test_good_intervals_keep_their_parent_under_small_translations(shift, k, pos):
    G = DyadicInterval(3, 6, pos, shift)
    if not is_good(G, k, 6):
        return
    top = parent_k(G, k, 6)
    m = 1 << (k - 2)
    for n in range(-m, m + 1):
        assert parent_k(translate(G, n), k, 6) == top


def test_goodness_fraction_is_one_half_exactly_over_positions():
    # every relative position appears equally often, so half of them are good
    for k in (2, 3, 4):
        good = sum(is_good(DyadicInterval(3, 6, p), k, 6) for p in range(64))
        assert good == 32


def test_zygmund_enumeration_counts():
    assert sum(1 for _ in enum_zygmund(GridSpec(0, 0, 0))) == 1
    # scale pairs (0,0),(0,1),(1,0),(1,1) carry 1, 4, 4, 16 rectangles
    assert sum(1 for _ in enum_zygmund(GridSpec(1, 1, 2))) == 25 == zygmund_count(GridSpec(1, 1, 2))
    assert sum(1 for _ in enum_zygmund(GridSpec(2, 1, 3))) == zygmund_count(GridSpec(2, 1, 3))
    assert all(Z.is_zygmund for Z in enum_zygmund(GridSpec(2, 2, 4)))


def test_zygmund_rect_rejects_bad_scales():
    with pytest.raises(NotZygmund):
        ZygRect(DyadicInterval(1, 1, 0), DyadicInterval(2, 1, 0), DyadicInterval(3, 1, 0))
    R = Rect(DyadicInterval(1, 1, 0), DyadicInterval(2, 1, 0), DyadicInterval(3, 1, 0))
    assert not R.is_zygmund
    assert rect_from_key(R.key()) == R


def test_dilated_families():
    grid = GridSpec(2, 2, 4)
    same = {Z.key() for Z in enum_zygmund(grid)}
    assert {R.key() for R in enum_dilated(DilatedLatticeSpec(0, "3d"), grid)} == same
    assert DilatedLatticeSpec.for_complexity((1, 1, 2)).n == 0
    assert dilated_scales(DilatedLatticeSpec(-1, "23"), GridSpec(0, 2, 3)) == [(0, 1), (1, 2), (2, 3)]
    assert DilatedLatticeSpec(-1, "23").lam == 0.5
    with pytest.raises(LambdaOutOfRange):
        dilated_scales(DilatedLatticeSpec(9, "23"), GridSpec(1, 1, 2))


def test_parent_of_zygmund_rect_lands_in_dilated_family():
    grid = GridSpec(3, 3, 6)
    k = (1, 2, 2)
    lam = DilatedLatticeSpec.for_complexity(k)
    allowed = set(dilated_scales(lam, grid))
    for Z in enum_zygmund(GridSpec(3, 3, 6)):
        if all(s >= kk for s, kk in zip(Z.scales, k)):
            up = Rect(*(parent_k(I, kk) for I, kk in zip((Z.I1, Z.I2, Z.I3), k)))
            assert up.scales in allowed


def test_config_roundtrip_and_addresses():
    text = dump_config(GRID, seed=7)
    grid, shift = load_config(text)
    assert grid == GRID
    assert shift == LatticeShift.from_seed(GRID, 7)
    assert load_config('{"L": [1, 1, 2]}')[1].is_zero
    with pytest.raises(FormatError):
        load_config("{}")
    I = DyadicInterval.parse("a3:j2:p3")
    assert (I.axis, I.j, I.pos) == (3, 2, 3)
    assert DyadicInterval.parse(str(I)) == I
    with pytest.raises(FormatError):
        DyadicInterval.parse("bogus")


def test_grid_spec_rules():
    assert GRID.shape == (8, 8, 64)
    assert GRID.cells == 4096
    assert GridSpec.parse("2,2,4") == GridSpec(2, 2, 4)
    with pytest.raises(ValueError):
        GridSpec(3, 3, 3)
