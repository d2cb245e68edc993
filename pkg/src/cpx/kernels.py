"""Backend selection for the inner-loop kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Setting ``CPX_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CPX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def quad_steps(gram, atb, x0, anchor, shift, step, rho, K, path=None, backend=None):
    """Dispatch to the selected backend; see ``_kernels_py.quad_steps``."""
    impl = _impl
    if backend == "python":
        impl = _kernels_py
    elif backend == "cython":
        from . import _kernels as impl
    return impl.quad_steps(
        _c(gram), _c(atb), _c(x0), _c(anchor), _c(shift), float(step), float(rho), int(K), path
    )
