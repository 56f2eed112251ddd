import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import rel
from zygmra.bmo import (
    B_FIXTURES,
    BmoProdSequence,
    ParaproductTable,
    b_fixture,
    b_ladder,
    bmo_prod_dual,
    bmo_prod_norm,
    bmoz_norm,
    commutator,
    commutator_bench,
    commutator_terms,
    equiv_check,
    extrapolation_exponents,
    h1_duality_check,
    paraproduct,
)
from zygmra.errors import NotAncestor, UnknownFixture
from zygmra.haar import GridFunction, haar, haar_zygmund
from zygmra.lattice import DyadicInterval, GridSpec, ZygRect
from zygmra.shifts import LinearShiftData, ShiftData

SMALL = GridSpec(2, 2, 4)


def _zkey(j1, j2, p1, p2, p3):
    return (j1, j2, j1 + j2, p1, p2, p3)


def test_bmoz_examples():
    grid = GridSpec(1, 1, 2)
    assert bmoz_norm(GridFunction.constant(grid, 4.0)) == 0.0
    h = haar(DyadicInterval(1, 0, 0), 1, grid)
    assert bmoz_norm(h) == pytest.approx(1.0)
    b = GridFunction.random(SMALL, np.random.default_rng(0))
    rolled = GridFunction(SMALL, np.roll(b.values, (1, 2, 4), axis=(0, 1, 2)))
    # the sup over every cyclic offset makes any whole-grid translation a symmetry
    assert bmoz_norm(rolled, grids="all") == pytest.approx(bmoz_norm(b, grids="all"), rel=1e-12)
    assert bmoz_norm(b, grids=4) >= bmoz_norm(b)


def test_equivalence_checks():
    grid = SMALL
    zero = equiv_check(GridFunction.constant(grid, 2.0))
    assert zero.bmoz == zero.avg_bmo_23 == zero.slice_bmo_1 == zero.avg_bmo_13 == 0.0
    b = b_fixture("slicebmo:saw", grid)
    rep = equiv_check(b)
    assert rep.avg_bmo_23 == pytest.approx(0.0, abs=1e-15)
    prof = b.values[:, 0, 0]
    # one-dimensional dyadic BMO of the profile
    oned = max(float(np.abs(blk - blk.mean()).mean()) for j in range(grid.L1 + 1) for blk in np.split(prof, 1 << j))
    assert rep.slice_bmo_1_pointwise == pytest.approx(oned)
    assert rep.ok
    rng = np.random.default_rng(1)
    for _ in range(10):
        assert equiv_check(GridFunction.random(grid, rng)).ok


def test_bmo_prod_examples():
    grid = GridSpec(1, 1, 2)
    I = _zkey(1, 0, 1, 0, 1)
    one = BmoProdSequence(grid, {I: 1.0})
    res = bmo_prod_norm(one)
    assert res.norm == pytest.approx(2.0 ** 1.0)  # |I| = 1/4
    assert bmo_prod_norm(one.scaled(-3.0)).norm == pytest.approx(3 * res.norm)
    J = _zkey(1, 0, 0, 0, 0)
    # equal coefficients on two disjoint rectangles: the union ties with either single rectangle
    pair = bmo_prod_norm(BmoProdSequence(grid, {I: 1.0, J: 1.0}))
    assert pair.norm == pytest.approx(res.norm)
    # a heavier second coefficient makes the union lose to the heavy single
    uneven = bmo_prod_norm(BmoProdSequence(grid, {I: 1.0, J: 3.0}))
    assert uneven.norm == pytest.approx(3 * 2.0) and uneven.argmax == (J,)
    assert bmo_prod_dual(one, {I: 1.0}) == pytest.approx(res.norm)
    with pytest.raises(ValueError):
        BmoProdSequence(grid, {(1, 1, 1, 0, 0, 0): 1.0})


def test_h1_duality_ratio():
    rng = np.random.default_rng(2)
    b = GridFunction.random(SMALL, rng)
    phi = {(1, 0, 1, (1, 1)): 0.7}
    r = h1_duality_check(b, phi, "23", I1=(1, 0))
    assert 0 <= r <= 1 + 1e-12
    assert h1_duality_check(b, {(1, 0, 1, (1, 1)): -0.7}, "23", I1=(1, 0)) == pytest.approx(r)
    assert h1_duality_check(GridFunction.constant(SMALL), phi, "23") == 0.0
    line = h1_duality_check(b, {(1, 1): 1.0, (0, 0): -0.5}, "1", cell=(2, 5))
    assert line >= 0
    with pytest.raises(ValueError):
        h1_duality_check(b, phi, "13")


def test_paraproduct_single_haar_tensor():
    Z = ZygRect(DyadicInterval(1, 1, 0), DyadicInterval(2, 0, 0), DyadicInterval(3, 1, 1))
    h = haar_zygmund(Z, (1, 1), SMALL)
    out = paraproduct(1, 1, h, h)
    assert rel(out, h.values ** 2) < 1e-13
    assert out.integral() == pytest.approx(1.0)


def test_paraproducts_of_constant_symbol():
    f = GridFunction.random(SMALL, np.random.default_rng(3))
    T = ParaproductTable(GridFunction.constant(SMALL, 2.0))
    for (i, j), g in T.terms(f).items():
        if (i, j) != (3, 3):
            assert np.abs(g.values).max() < 1e-13
    assert T.residual(f) < 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dims=st.sampled_from([(1, 1, 2), (2, 1, 3), (2, 2, 4), (1, 2, 4)]))
def test_paraproduct_identity(seed, dims):
    grid = GridSpec(*dims)
    rng = np.random.default_rng(seed)
    b, f = GridFunction.random(grid, rng), GridFunction.random(grid, rng)
    assert ParaproductTable(b).residual(f) <= 1e-12


def test_ladder_telescopes():
    b = GridFunction.random(SMALL, np.random.default_rng(4))
    R = _zkey(0, 0, 0, 0, 0)
    L, Q = _zkey(2, 1, 3, 0, 5), _zkey(2, 1, 1, 1, 2)
    lad = b_ladder(L, Q, R, b)
    assert lad.difference == pytest.approx(lad.top_L - lad.top_Q, abs=1e-14)
    assert lad.max_rung <= 2 * bmoz_norm(b) + 1e-12
    for k in lad.path_L + lad.path_Q:
        assert k[2] == k[0] + k[1]
    same = b_ladder(L, L, R, b)
    assert same.difference == 0.0
    with pytest.raises(NotAncestor):
        b_ladder(L, Q, _zkey(1, 1, 1, 0, 0), b)


def test_commutator_invariances():
    rng = np.random.default_rng(5)
    Q = LinearShiftData.random(SMALL, (1, 1, 2), rng)
    b, c, f = (GridFunction.random(SMALL, rng) for _ in range(3))
    assert np.abs(commutator(GridFunction.constant(SMALL, 3.0), Q, f).values).max() < 1e-13
    base = commutator(b, Q, f)
    assert rel(commutator(b + 7.0, Q, f), base) < 1e-12
    assert rel(commutator(2 * b - c, Q, f), 2 * base - commutator(c, Q, f)) < 1e-12
    S = ShiftData.random(SMALL, (1, 1, 2), rng)
    assert np.abs(commutator(GridFunction.constant(SMALL, -1.0), S, (f, c)).values).max() < 1e-13


def test_commutator_expansions_agree():
    rng = np.random.default_rng(6)
    Q = LinearShiftData.random(SMALL, (1, 1, 2), rng, tops=2, per_top=2)
    b, f, g = (GridFunction.random(SMALL, rng) for _ in range(3))
    t = commutator_terms(b, Q, f, g)
    assert t.cross_total == pytest.approx(t.direct, rel=1e-10)
    assert t.ladder_total == pytest.approx(t.direct, rel=1e-10)


def test_commutator_bench_basics():
    Q = LinearShiftData.random(SMALL, (0, 0, 0), np.random.default_rng(7))
    rep = commutator_bench(b_fixture("log-dist", SMALL), Q, 2.0, trials=8, seed=1)
    assert np.isfinite(rep.ratio) and rep.ratio >= 0 and len(rep.seeds) == 8
    with pytest.raises(ValueError):
        commutator_bench(GridFunction.constant(SMALL), Q, 2.0, trials=2)


def test_fixtures():
    for name in B_FIXTURES:
        assert bmoz_norm(b_fixture(name, SMALL)) > 0
    with pytest.raises(UnknownFixture):
        b_fixture("slicebmo:zigzag", SMALL)
    with pytest.raises(UnknownFixture):
        b_fixture("nope", SMALL)


@settings(max_examples=50, deadline=None)
@given(p=st.floats(0.2, 20), p0=st.floats(0.2, 20), s0=st.floats(1.01, 10))
def test_extrapolation_exponents(p, p0, s0):
    s, r = extrapolation_exponents(p, p0, s0)
    assert s >= s0 and r > 1
    assert s * p0 / r == pytest.approx(p, rel=1e-12)
