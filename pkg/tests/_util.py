import numpy as np

from zygmra.haar import GridFunction


def band_limited(grid, F, rng):
    """Real function whose discrete spectrum sits in ``|freq|_inf <= F``."""
    c = np.zeros(grid.shape, complex)
    idx = np.meshgrid(*[np.arange(-F, F + 1)] * 3, indexing="ij")
    c[tuple(i % n for i, n in zip(idx, grid.shape))] = rng.normal(size=idx[0].shape) + 1j * rng.normal(size=idx[0].shape)
    return GridFunction(grid, np.fft.ifftn(c).real * c.size)


def rel(a, b):
    a = np.asarray(getattr(a, "values", a), dtype=float)
    b = np.asarray(getattr(b, "values", b), dtype=float)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


CRITERIA_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return ok
