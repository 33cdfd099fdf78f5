"""Hot-kernel dispatch: compiled core when available, numpy otherwise.

The compiled extension (`bottomup.kernels._fast`) is optional. Selection
happens once at import time; set BOTTOMUP_KERNELS=numpy or
BOTTOMUP_KERNELS=fast to force a backend (forcing `fast` raises if the
extension was not built). `reference` is never selected automatically —
it is the instrumented loop oracle used by tests and the cost-model
verification.
"""

import os

from . import numpy_backend
from . import reference  # noqa: F401  (re-exported for tests/instrumentation)

try:
    from . import _fast
except ImportError:
    _fast = None

_requested = os.environ.get("BOTTOMUP_KERNELS", "").strip().lower()
if _requested == "numpy":
    _backend = numpy_backend
elif _requested == "fast":
    if _fast is None:
        raise ImportError(
            "BOTTOMUP_KERNELS=fast but the compiled extension is not built; "
            "run `pip install -e .` with a C compiler available"
        )
    _backend = _fast
elif _requested == "":
    _backend = _fast if _fast is not None else numpy_backend
else:
    raise ValueError(f"unknown BOTTOMUP_KERNELS value: {_requested!r}")

BACKEND = _backend.NAME


def available_backends():
    """Names of the selectable production backends on this install."""
    names = ["numpy"]
    if _fast is not None:
        names.insert(0, "fast")
    return names


def get_backend(name=None):
    """Return the kernel module for `name` (default: the active backend)."""
    if name is None:
        return _backend
    if name == "numpy":
        return numpy_backend
    if name == "fast":
        if _fast is None:
            raise ValueError("compiled kernel backend is not built")
        return _fast
    raise ValueError(f"unknown kernel backend: {name!r}")


column_logits = _backend.column_logits
column_logits_backward = _backend.column_logits_backward
softmax_columns = _backend.softmax_columns
softmax_columns_backward = _backend.softmax_columns_backward
plane_logits = _backend.plane_logits
plane_logits_backward = _backend.plane_logits_backward
softmax_plane = _backend.softmax_plane
softmax_plane_backward = _backend.softmax_plane_backward
scale_by_plane = _backend.scale_by_plane
scale_by_plane_backward = _backend.scale_by_plane_backward
cumsum_rows = _backend.cumsum_rows
cumsum_rows_backward = _backend.cumsum_rows_backward
scale_rows = _backend.scale_rows
divide_rows = _backend.divide_rows
fused_column_attention = _backend.fused_column_attention
attention_reweight = _backend.attention_reweight
attention_reweight_backward = _backend.attention_reweight_backward
scan_mean = _backend.scan_mean
scan_mean_backward = _backend.scan_mean_backward

# The quadratic reference leans on BLAS regardless of backend choice.
global_self_attention = numpy_backend.global_self_attention
