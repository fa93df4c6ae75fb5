"""Kernel backend selection.

Prefers the compiled Cython core and falls back to the numpy reference
implementation when the extension is not built. Both expose the same
four functions with identical semantics.
"""

from . import pyref

try:
    from . import core as _impl

    HAVE_COMPILED = True
except ImportError:
    _impl = pyref
    HAVE_COMPILED = False

BACKEND = "compiled" if HAVE_COMPILED else "python"

sigmoid = pyref.sigmoid
lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward
lstm_step_forward = _impl.lstm_step_forward
lstm_step_backward = _impl.lstm_step_backward
