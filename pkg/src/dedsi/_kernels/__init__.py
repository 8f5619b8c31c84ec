"""Numeric kernels for the reference model's hot path.

A compiled Cython extension provides the fused inner loops; the pure-numpy
implementation in :mod:`.pyref` is the semantic reference and the fallback
when the extension is unavailable.  Set ``DEDSI_PURE_PYTHON=1`` to force the
fallback (the benchmark uses this to compare backends).
"""

import os

from . import pyref

if os.environ.get("DEDSI_PURE_PYTHON"):
    _impl = pyref
    BACKEND = "python"
else:
    try:
        from . import _fast as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = pyref
        BACKEND = "python"

gru_gates_forward = _impl.gru_gates_forward
gru_gates_backward = _impl.gru_gates_backward
softmax_xent = _impl.softmax_xent
log_softmax = _impl.log_softmax
adam_update = _impl.adam_update

__all__ = [
    "BACKEND", "pyref", "gru_gates_forward", "gru_gates_backward",
    "softmax_xent", "log_softmax", "adam_update",
]
