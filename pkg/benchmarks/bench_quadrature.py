"""Time the compiled and numpy versions of the synthetic-kernel triple sum.

Run with ``python benchmarks/bench_quadrature.py [--sizes 8,16,32] [--repeat 5]``.
Both backends are fed identical inputs; the script also reports their
largest relative disagreement.
"""

import argparse
import timeit

import numpy as np

from zygmra import _quadpy

try:
    from zygmra import _quadcore
except ImportError:  # extension not built
    _quadcore = None


def make_inputs(n: int, rng: np.random.Generator):
    gaps = [rng.uniform(0.01, 0.5, n) for _ in range(3)]
    phases = [rng.uniform(0, 2 * np.pi, n) for _ in range(3)]
    weights = [rng.standard_normal(n) for _ in range(3)]
    return gaps, phases, weights


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="8,16,32,64")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print("n,numpy_ms,cython_ms,speedup,rel_diff")
    for n in (int(s) for s in args.sizes.split(",")):
        gaps, phases, weights = make_inputs(n, rng)
        call = (gaps, phases, weights, 1.0, 0.5, 0.3)
        t_np = min(timeit.repeat(lambda: _quadpy.synthetic_triple_sum(*call), number=1, repeat=args.repeat))
        ref = _quadpy.synthetic_triple_sum(*call)
        if _quadcore is None:
            print(f"{n},{t_np * 1e3:.3f},nan,nan,nan")
            continue
        t_cy = min(timeit.repeat(lambda: _quadcore.synthetic_triple_sum(*call), number=1, repeat=args.repeat))
        val = _quadcore.synthetic_triple_sum(*call)
        diff = abs(val - ref) / max(abs(ref), 1e-300)
        print(f"{n},{t_np * 1e3:.3f},{t_cy * 1e3:.3f},{t_np / t_cy:.2f},{diff:.2e}")


if __name__ == "__main__":
    main()
