import os
import subprocess
import sys

import numpy as np
import pytest

from zygmra import _accel, _quadpy


def _inputs(n, seed):
    rng = np.random.default_rng(seed)
    gaps = [rng.uniform(0.01, 0.5, n) for _ in range(3)]
    phases = [rng.uniform(0, 2 * np.pi, n) for _ in range(3)]
    weights = [rng.standard_normal(n) for _ in range(3)]
    weights[1][::3] = 0.0  # exercise the skipped-weight path
    return gaps, phases, weights


@pytest.mark.parametrize("theta,depth", [(1.0, 0.0), (0.5, 0.5), (2.0, 0.9)])
def test_backends_agree(theta, depth):
    core = pytest.importorskip("zygmra._quadcore")
    gaps, phases, weights = _inputs(12, 0)
    ref = _quadpy.synthetic_triple_sum(gaps, phases, weights, theta, depth, 0.3)
    val = core.synthetic_triple_sum(gaps, phases, weights, theta, depth, 0.3)
    assert val == pytest.approx(ref, rel=1e-12)


def test_selected_backend_matches_reference():
    gaps, phases, weights = _inputs(6, 1)
    args = (gaps, phases, weights, 1.0, 0.5, 0.0)
    assert _accel.synthetic_triple_sum(*args) == pytest.approx(_quadpy.synthetic_triple_sum(*args), rel=1e-12)
    assert _accel.BACKEND in ("python", "cython")


def test_environment_forces_pure_python():
    env = dict(os.environ, ZMRA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from zygmra import _accel; print(_accel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
