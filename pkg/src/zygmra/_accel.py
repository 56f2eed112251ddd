"""Select the compiled quadrature core when it is importable."""

import os

from . import _quadpy

BACKEND = "python"
synthetic_triple_sum = _quadpy.synthetic_triple_sum

if os.environ.get("ZMRA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _quadcore

        synthetic_triple_sum = _quadcore.synthetic_triple_sum
        BACKEND = "cython"
    except ImportError:
        pass
