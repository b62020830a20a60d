"""Backend selection for the hot grid kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``INFILLOPT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("INFILLOPT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

apply_scaled_k0 = _impl.apply_scaled_k0
apply_element_matrices = _impl.apply_element_matrices
element_quadform = _impl.element_quadform
correlate = _impl.correlate
