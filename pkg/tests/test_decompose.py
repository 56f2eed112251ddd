import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zygmra.decompose import (
    QuadratureSpec,
    TrilinearForm,
    a1a2_split,
    admissible_complexities,
    assemble_shift,
    bucket_of,
    coefficient_detail,
    coefficient_from_kernel,
    collapse_check,
    decay_fit,
    extract_coefficient,
    key_term,
    key_term_bruteforce,
    key_term_reassembled,
    normalization,
    phi,
    sample_bucket,
    spread_range,
    translate_rect,
)
from zygmra.errors import EmptyComplexityBucket, ScaleMismatch
from zygmra.haar import GridFunction
from zygmra.kernels import KernelParams, paraproduct_free_defect, synthetic_kernel, zero_kernel
from zygmra.lattice import DyadicInterval, GridSpec, ZygRect
from zygmra.shifts import ShiftData

TINY = GridSpec(1, 1, 2)
SMALL = GridSpec(2, 2, 4)


def _fs(grid, seed, n=3):
    rng = np.random.default_rng(seed)
    return [GridFunction.random(grid, rng) for _ in range(n)]


def _zrect(j1, j2, p1, p2, p3):
    return ZygRect(DyadicInterval(1, j1, p1), DyadicInterval(2, j2, p2), DyadicInterval(3, j1 + j2, p3))


def test_phi_examples():
    unit = KernelParams(1.0, 1.0, 1.0)
    assert phi((0, 0, 0), unit) == 1.0
    assert phi((1, 0, 0), unit) == 0.5
    assert phi((1, 1, 4), KernelParams(0.5, 1.0, 1.0)) == 2 ** -2.5
    with pytest.raises(ValueError):
        phi((-1, 0, 0), unit)


@settings(max_examples=80, deadline=None)
@given(k12=st.tuples(st.integers(0, 6), st.integers(0, 6)), extra=st.integers(0, 6), axis=st.integers(0, 2),
       theta=st.floats(0.1, 2.0), a1=st.floats(0.1, 1.0), a23=st.floats(0.1, 1.0))
def test_phi_is_nonincreasing_on_admissible_complexities(k12, extra, axis, theta, a1, a23):
    params = KernelParams(theta, a1, a23)
    k = (k12[0], k12[1], k12[0] + k12[1] + extra)
    bumped = list(k)
    bumped[axis] += 1
    if axis < 2:
        bumped[2] += 1
    assert 0 < phi(tuple(bumped), params) <= phi(k, params) <= 1.0


@pytest.mark.parametrize("group", ["1", "23"])
def test_collapse_identity_dense(group):
    rng = np.random.default_rng(0)
    for _ in range(5):
        T = TrilinearForm.random_dense(SMALL, rng)
        res = collapse_check(T, *[GridFunction.random(SMALL, rng) for _ in range(3)], group=group)
        assert res.relative <= 1e-10


def test_collapse_identity_through_evaluator_route():
    # a form with no tensor exercises the evaluator branch
    T = TrilinearForm.random_dense(TINY, np.random.default_rng(1))
    tensor = T.tensor
    via_eval = TrilinearForm(TINY, evaluator=lambda a, b, c: TrilinearForm(TINY, tensor=tensor).evaluate(a, b, c))
    fs = _fs(TINY, 2)
    for group in ("1", "23"):
        a = collapse_check(T, *fs, group=group)
        b = collapse_check(via_eval, *fs, group=group)
        assert a.relative <= 1e-12 and b.relative <= 1e-12
        for p in a.terms:
            assert a.terms[p] == pytest.approx(b.terms[p], rel=1e-10, abs=1e-14)


def test_collapse_special_cases():
    fs = _fs(SMALL, 3)
    zero = collapse_check(TrilinearForm.zero(SMALL), *fs)
    assert zero.direct == 0.0 and zero.collapsed == 0.0
    T = TrilinearForm.random_dense(SMALL, np.random.default_rng(4))
    flat = GridFunction(SMALL, np.broadcast_to(fs[2].values.mean(axis=0, keepdims=True), SMALL.shape))
    res = collapse_check(T, fs[0], fs[1], flat, group="1")
    # f3 has no axis-1 differences, so only the coarsest DDD level survives
    assert res.terms["EED"] == res.terms["EDD"] == res.terms["DED"] == 0.0
    coarse = [GridFunction(SMALL, np.broadcast_to(f.values.mean(axis=0, keepdims=True), SMALL.shape)) for f in fs[:2]]
    assert res.terms["DDD"] == pytest.approx(T.evaluate(*coarse, flat), rel=1e-10)


def test_key_term_matches_bruteforce():
    T = TrilinearForm.random_dense(TINY, np.random.default_rng(5))
    fs = _fs(TINY, 6)
    assert key_term(T, *fs) == pytest.approx(key_term_bruteforce(T, *fs), rel=1e-10)
    const = GridFunction.constant(TINY, 2.0)
    assert abs(key_term(T, fs[0], fs[1], const)) < 1e-12
    P = TrilinearForm.product_form(SMALL)
    a, b = GridFunction.constant(SMALL, 2.0), GridFunction.constant(SMALL, -1.5)
    assert abs(key_term(P, a, b, _fs(SMALL, 7, 1)[0])) < 1e-12


def test_key_term_reassembly_for_paraproduct_free_forms():
    rng = np.random.default_rng(8)
    grid = GridSpec(2, 1, 3)
    Q = ShiftData.random(grid, (1, 0, 1), rng)
    T = TrilinearForm.from_tensor(grid, Q.haar_form().dense_tensor())
    assert paraproduct_free_defect(T) <= 1e-12
    fs = [GridFunction.random(grid, rng) for _ in range(3)]
    direct = key_term(T, *fs)
    assert abs(direct) > 0
    assert key_term_reassembled(T, *fs) == pytest.approx(direct, rel=1e-8)


def test_a1a2_vanishing_lemmas():
    f1, f2 = _fs(SMALL, 9, 2)
    I = _zrect(1, 1, 0, 1, 2)
    assert a1a2_split(f1, f2, I, I, I) == 0.0
    same_axis1 = [translate_rect(I, (0, a, b)) for a, b in [(1, 0), (0, 1)]]
    assert abs(a1a2_split(f1, f2, same_axis1[0], same_axis1[1], I)) < 1e-14
    same_23 = [translate_rect(I, (a, 0, 0)) for a in (1, 1)]
    assert abs(a1a2_split(f1, f2, same_23[0], same_23[1], I)) < 1e-14
    general = a1a2_split(f1, f2, translate_rect(I, (1, 1, 0)), translate_rect(I, (1, 0, 1)), I)
    assert abs(general) > 1e-6
    with pytest.raises(ScaleMismatch):
        a1a2_split(f1, f2, I, _zrect(0, 1, 0, 0, 0), I)


def test_extract_coefficient_basics():
    I = _zrect(1, 1, 0, 1, 1)
    assert extract_coefficient(TrilinearForm.zero(SMALL), I, (1, 0, 0), (0, 1, 0)) == 0.0
    rng = np.random.default_rng(10)
    A = TrilinearForm.random_dense(SMALL, rng)
    B = TrilinearForm.random_dense(SMALL, rng)
    S = TrilinearForm.from_tensor(SMALL, 2 * A.tensor - B.tensor)
    args = (I, (1, 0, 1), (0, 1, 0))
    assert extract_coefficient(S, *args) == pytest.approx(2 * extract_coefficient(A, *args) - extract_coefficient(B, *args), rel=1e-12)


def test_kernel_coefficient_quadrature():
    params = KernelParams(1.0)
    K = synthetic_kernel(params, seed=1)
    I = _zrect(2, 2, 1, 1, 5)
    n1, n2 = (2, 0, 3), (3, 1, 0)
    coarse = coefficient_detail(K, I, n1, n2, QuadratureSpec(subdiv=2, refine=True, max_subdiv=4))
    assert math.isfinite(coarse.value) and coarse.refined is not None
    assert np.sign(coarse.value) == np.sign(coarse.refined)
    assert coarse.relative_change < 0.1
    assert coefficient_from_kernel(zero_kernel(params), I, n1, n2) == 0.0
    # the kernel is symmetric, so swapping the two non-cancellative slots leaves the value unchanged
    a = coefficient_from_kernel(K, I, n1, n2)
    b = coefficient_from_kernel(K, I, n2, n1)
    assert a == pytest.approx(b, rel=1e-12)


def test_buckets():
    assert spread_range(0) == (0, 0)
    assert spread_range(2) == (1, 1)
    assert spread_range(4) == (3, 4)
    assert bucket_of((0, 1, 0), (0, -1, 3)) == (0, 2, 4)
    for k in admissible_complexities(GridSpec(3, 3, 6)):
        for I, n1, n2 in sample_bucket(GridSpec(3, 3, 6), k, 3, np.random.default_rng(0)):
            assert bucket_of(n1, n2) == k
    with pytest.raises(EmptyComplexityBucket):
        sample_bucket(TINY, (3, 0, 3), 1, np.random.default_rng(0))


def test_normalization_value():
    I = _zrect(2, 1, 0, 0, 0)
    assert normalization(I, (1, 0, 1)) == pytest.approx((2.0 ** -6) ** 1.5 / (2.0 ** -4) ** 2)


def test_decay_fit_linear_and_zero():
    params = KernelParams(1.0)
    K = synthetic_kernel(params, seed=0)
    grid = GridSpec(2, 2, 4)
    ks = admissible_complexities(grid)[:3]
    base = decay_fit(K, params, ks, grid=grid, samples=2, seed=1)
    double = decay_fit(K.scaled(2.0), params, ks, grid=grid, samples=2, seed=1)
    zero = decay_fit(zero_kernel(params), params, ks, grid=grid, samples=2, seed=1)
    assert double.constant == pytest.approx(2 * base.constant, rel=1e-12)
    assert zero.constant == 0.0
    assert math.isfinite(base.growth_factor)
    data = json.loads(base.to_json())
    assert data["constant"] == base.constant
    assert base.to_csv().splitlines()[0].startswith("k1,k2,k3")


def test_assemble_shift_respects_normalization():
    rng = np.random.default_rng(11)
    grid = GridSpec(2, 1, 3)
    T = TrilinearForm.random_dense(grid, rng)
    Q, C = assemble_shift(T, (0, 0, 2))
    assert C > 0 and Q.entries
    for e in Q.entries:
        Q.validate_entry(e)
    with pytest.raises(EmptyComplexityBucket):
        assemble_shift(TrilinearForm.random_dense(TINY, rng), (2, 2, 4))
