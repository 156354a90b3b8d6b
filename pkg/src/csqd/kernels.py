"""Selects the sigma-build kernel implementation at import time.

The compiled extension is used when present.  Set ``CSQD_KERNELS=python``
to force the pure-Python fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

_BACKENDS = {"python": _kernels_py}
if _kernels_ext is not None:
    _BACKENDS["cython"] = _kernels_ext


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    if name is None:
        name = os.environ.get("CSQD_KERNELS", "cython" if _kernels_ext is not None else "python")
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}") from None


BACKEND = get_backend()
BACKEND_NAME = "cython" if BACKEND is _kernels_ext else "python"
