"""Selects the compiled trace kernels when available, the numpy fallback otherwise.

Set ``INCLUSION_ACCEL_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels
from ._pykernels import RES_BALL, RES_BOX, RES_IDENTITY, RES_SOFT  # noqa: F401

compiled = None
if os.environ.get("INCLUSION_ACCEL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

backend = compiled if compiled is not None else _pykernels
BACKEND = "cython" if compiled is not None else "python"

eag_trace = backend.eag_trace
as_trace = backend.as_trace
eg_trace = backend.eg_trace
