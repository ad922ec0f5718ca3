"""Kernel backend selection.

The compiled Cython extension is preferred when importable; the numpy
reference implementation is the fallback. ``EVENTCAP_KERNELS`` overrides:
``compiled`` (fail loudly if missing), ``numpy``, or ``auto`` (default).
"""

import os

from eventcap.kernels import reference

_choice = os.environ.get("EVENTCAP_KERNELS", "auto").strip().lower()

if _choice in ("numpy", "reference", "python"):
    _impl = reference
    BACKEND = "numpy"
elif _choice in ("auto", "", "compiled", "fast"):
    try:
        from eventcap.kernels import _fastcore as _impl

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = reference
        BACKEND = "numpy"
else:
    raise ValueError(f"unknown EVENTCAP_KERNELS value: {_choice!r}")

if BACKEND == "compiled":
    import numpy as _np

    def _c(x):
        return _np.ascontiguousarray(x, dtype=_np.float64)

    def lstm_cell_forward(a, c_prev):
        return _impl.lstm_cell_forward(_c(a), _c(c_prev))

    def lstm_cell_backward(dhc, gates, c_prev, c):
        return _impl.lstm_cell_backward(_c(dhc), _c(gates), _c(c_prev), _c(c))
else:
    lstm_cell_forward = _impl.lstm_cell_forward
    lstm_cell_backward = _impl.lstm_cell_backward

__all__ = ["BACKEND", "lstm_cell_forward", "lstm_cell_backward", "reference"]
