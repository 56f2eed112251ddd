import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import rel
from zygmra.analysis import (
    BenchConfig,
    SparseCollection,
    Weight,
    apz_constant,
    lambda_form,
    lp_norm,
    maximal_MZ,
    opnorm_bench,
    sparse_collect,
    sparse_form,
    square_SZ,
    weight_fixture,
)
from zygmra.errors import UnknownFixture
from zygmra.haar import GridFunction, haar, haar_zygmund, zygmund_expand
from zygmra.lattice import DilatedLatticeSpec, DyadicInterval, GridSpec, ZygRect

SMALL = GridSpec(2, 2, 4)
SLABS = DilatedLatticeSpec(0, "23")


def test_lp_norm_examples():
    one = GridFunction.constant(SMALL)
    for p in (0.5, 1, 2, 7, np.inf):
        assert lp_norm(one, p) == pytest.approx(1.0)
    f = GridFunction.random(SMALL, np.random.default_rng(0))
    assert lp_norm(-3 * f, 3) == pytest.approx(3 * lp_norm(f, 3), rel=1e-12)
    h = haar(DyadicInterval(1, 0, 0), 1, GridSpec(1, 1, 2))
    assert lp_norm(h, 1) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lp_norm(f, 0)


def test_maximal_function_by_hand():
    grid = GridSpec(1, 1, 2)
    v = np.zeros(grid.shape)
    v[0, 0, 0] = 1.0
    M = maximal_MZ(GridFunction(grid, v)).values
    # the cell itself, cells sharing a half-slab, and cells reached only by the unit cube
    assert M[0, 0, 0] == 1.0
    assert M[0, 0, 1] == pytest.approx(0.25)
    assert M[1, 0, 0] == pytest.approx(0.25)
    assert M[0, 1, 1] == pytest.approx(0.25)
    assert M[1, 1, 0] == pytest.approx(1 / 16)
    assert M[1, 1, 3] == pytest.approx(1 / 16)
    assert np.allclose(maximal_MZ(GridFunction.constant(grid)).values, 1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_maximal_function_is_sublinear_and_dominates(seed):
    rng = np.random.default_rng(seed)
    f, g = GridFunction.random(SMALL, rng), GridFunction.random(SMALL, rng)
    Mf, Mg, Mfg = (maximal_MZ(x).values for x in (f, g, f + g))
    assert np.all(Mf >= np.abs(f.values) - 1e-12)
    assert np.all(Mfg <= Mf + Mg + 1e-12)
    assert Mf.max() <= np.abs(f.values).max() + 1e-12


def test_square_function():
    Z = ZygRect(DyadicInterval(1, 1, 1), DyadicInterval(2, 0, 0), DyadicInterval(3, 1, 1))
    h = haar_zygmund(Z, (1, 0), SMALL)
    assert rel(square_SZ(h), np.abs(h.values)) < 1e-13
    f = GridFunction.random(SMALL, np.random.default_rng(1))
    S = square_SZ(f)
    exp = zygmund_expand(f)
    assert float(np.mean(S.values ** 2)) + exp.completion_energy() == pytest.approx(float(np.mean(f.values ** 2)), rel=1e-10)
    assert rel(square_SZ(-2.5 * f), 2.5 * S.values) < 1e-13


def test_apz_constants():
    grid = GridSpec(2, 2, 4)
    assert apz_constant(weight_fixture("one", grid), 2.0) == pytest.approx(1.0)
    a, b = 1.0, 9.0
    w = weight_fixture(f"twoval:{a},{b}:1", grid)
    assert apz_constant(w, 2.0) == pytest.approx((a + b) * (1 / a + 1 / b) / 4)
    assert w.apz(2.0) == apz_constant(w, 2.0)
    for flavor in ("zygmund", "dilated", "axis"):
        assert apz_constant(weight_fixture("pow:0.3,-0.2,0.5", grid), 3.0, flavor) >= 1.0 - 1e-12
    with pytest.raises(ValueError):
        apz_constant(w, 1.0)
    with pytest.raises(ValueError):
        Weight(GridFunction.zeros(grid))
    with pytest.raises(UnknownFixture):
        weight_fixture("nope", grid)


def test_sparse_collection_of_constants_is_one_level():
    one = GridFunction.constant(SMALL, 2.0)
    S = sparse_collect(one, one, one, SLABS)
    top = min(m[:2] for m in S.members)
    assert all(m[:2] == top for m in S.members)
    assert all(np.array_equal(S.witness[m], S.slab_mask(m)) for m in S.members)
    assert S.check()
    assert sparse_form(S, one, one, one) == pytest.approx(8.0)


def test_sparse_collection_for_a_point_mass():
    grid = GridSpec(0, 3, 4)
    v = np.ones(grid.shape)
    v[0, 0, 0] = 50.0
    f = GridFunction(grid, v)
    one = GridFunction.constant(grid)
    S = sparse_collect(f, one, one, DilatedLatticeSpec(0, "23"))
    assert S.check()
    # the stopping chain shrinks toward the heavy cell
    chain = sorted((m for m in S.members if m[2] == 0 and m[3] == 0), key=lambda m: m[0] + m[1])
    sizes = [S.measure(m) for m in chain]
    assert len(chain) >= 2 and all(b <= a / 2 for a, b in zip(sizes, sizes[1:]))


def test_sparse_check_detects_overlap():
    one = GridFunction.constant(SMALL)
    S = sparse_collect(one, one, one, SLABS)
    m = S.members[0]
    bad = SparseCollection(S.grid, S.lattice, [m, m], {m: S.witness[m]}, 0.5)
    assert not bad.check()


def test_sparse_form_grows_with_the_collection():
    rng = np.random.default_rng(2)
    fs = [GridFunction.random(SMALL, rng) for _ in range(3)]
    S = sparse_collect(*fs, SLABS)
    extra = (S.members[0][0] + 1, S.members[0][1] + 1, 0, 0)
    bigger = SparseCollection(S.grid, S.lattice, S.members + [extra], S.witness, S.gamma)
    assert sparse_form(bigger, *fs) >= sparse_form(S, *fs)


def test_lambda_form_basics():
    rng = np.random.default_rng(3)
    f1, f3 = GridFunction.random(SMALL, rng), GridFunction.random(SMALL, rng)
    assert lambda_form((0, 1, 1), SLABS, f1, GridFunction.zeros(SMALL), f3) == 0.0
    assert lambda_form((0, 1, 1), SLABS, f1, f3, f3) > 0
    assert lambda_form((0, 1, 1), SLABS, 2 * f1, f3, f3) == pytest.approx(2 * lambda_form((0, 1, 1), SLABS, f1, f3, f3))


def test_opnorm_bench():
    cfg = BenchConfig(trials=16, seed=1)
    zero = opnorm_bench(lambda a, b: GridFunction.zeros(SMALL), SMALL, cfg)
    assert zero.empirical == 0.0
    prod = opnorm_bench(lambda a, b: a * b, SMALL, cfg)
    assert 0 < prod.empirical <= 1 + 1e-6
    w = weight_fixture("pow:0.2,0.2,0.2", SMALL)
    weighted = opnorm_bench(lambda a, b: a * b, SMALL, cfg, w, w, k=(1, 1, 2))
    assert weighted.empirical <= 1 + 1e-6
    assert weighted.bound == pytest.approx(4 * 2 ** 0.5)
    assert "lower bound" in weighted.to_dict()["note"]
    with pytest.raises(ValueError):
        BenchConfig(p1=4, p2=4, p=3)
    with pytest.raises(ValueError):
        BenchConfig(eta=1.0)
