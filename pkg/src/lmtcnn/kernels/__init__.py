"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension (``_ckernels``) is used when it was built and
imports cleanly. Set ``LMTCNN_PURE_PYTHON=1`` to force the numpy
implementation. Both backends produce identical results up to float
summation order.
"""
import os

from . import _pykernels

BACKENDS = {"numpy": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if os.environ.get("LMTCNN_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
    backend = _pykernels
else:
    backend = _ckernels

BACKEND = backend.NAME


def use(name):
    """Switch the active backend (``"cython"`` or ``"numpy"``)."""
    global backend, BACKEND
    backend = BACKENDS[name]
    BACKEND = name
    return backend


def get():
    return backend
