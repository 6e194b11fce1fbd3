"""Hot numeric kernels with two interchangeable backends.

The multiresolution hash-grid encode (gather + trilinear blend) and its two
backward passes are the innermost loops of the engine; they run either as
numba ``@njit`` functions or as pure-numpy vectorized code.

Selection, checked once at import time:

    TALKINGNERF_BACKEND=numba   force numba (raises if numba is missing)
    TALKINGNERF_BACKEND=numpy   force the numpy fallback
    unset                       numba when importable, else numpy

``benchmarks/backend_bench.py`` compares the two.  Both backends are
bit-deterministic run to run; across backends results agree to float64
rounding (summation order differs).
"""

from __future__ import annotations

import os

_ENV_VAR = "TALKINGNERF_BACKEND"


def _select():
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        from . import _numpy_impl as impl

        return impl, "numpy"
    if choice == "numba":
        from . import _numba_impl as impl

        return impl, "numba"
    try:
        from . import _numba_impl as impl

        return impl, "numba"
    except ImportError:
        from . import _numpy_impl as impl

        return impl, "numpy"


_impl, BACKEND = _select()

hash_encode_forward = _impl.hash_encode_forward
hash_encode_backward_tables = _impl.hash_encode_backward_tables
hash_encode_backward_coords = _impl.hash_encode_backward_coords


def backend_name() -> str:
    return BACKEND
