"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The native Cython extension is preferred when it imported cleanly; set
LAPPDT_KERNELS=python or LAPPDT_KERNELS=native to force a backend (native
raises if the extension is unavailable). benchmarks/bench_kernels.py compares
the two implementations head to head.
"""

from __future__ import annotations

import os

from . import _numpy

_requested = os.environ.get("LAPPDT_KERNELS", "auto").lower()

if _requested == "python":
    _impl = _numpy
    BACKEND = "python"
elif _requested == "native":
    from . import _native as _impl  # noqa: F401  (ImportError is the point)

    BACKEND = "native"
else:
    try:
        from . import _native as _impl

        BACKEND = "native"
    except ImportError:
        _impl = _numpy
        BACKEND = "python"

compose_batch = _impl.compose_batch
rotvec_to_quat = _impl.rotvec_to_quat
obb_hit_mask = _impl.obb_hit_mask


def backend_name() -> str:
    return BACKEND
