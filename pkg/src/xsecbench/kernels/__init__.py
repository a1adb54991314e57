"""Dense-network hot kernels with a compiled core and a numpy fallback.

The compiled extension ``_native`` is used when it was built; otherwise (or
when the environment variable ``XSECBENCH_PURE`` is set to a non-empty value
other than ``0``) the pure numpy implementation in ``_pure`` is used. Both
expose the same two functions, ``forward_batch`` and ``vjp_batch``.
"""

import importlib
import os

from . import _pure

IDENTITY, RELU, SIGMOID, TANH, SOFTMAX = (
    _pure.IDENTITY, _pure.RELU, _pure.SIGMOID, _pure.TANH, _pure.SOFTMAX,
)

def _load_native():
    if os.environ.get("XSECBENCH_PURE", "0") not in ("", "0"):
        return None
    try:
        return importlib.import_module(__name__ + "._native")
    except ImportError:
        return None


_native = _load_native()

backend = _native if _native is not None else _pure
BACKEND_NAME = "native" if _native is not None else "pure"

forward_batch = backend.forward_batch
vjp_batch = backend.vjp_batch

__all__ = ["BACKEND_NAME", "backend", "forward_batch", "vjp_batch", "_pure", "_native"]
