"""Kernel backend selection: compiled Cython core with a pure-Python fallback.

The compiled module is preferred when importable; FRAMETRACK_BACKEND=python
forces the fallback, FRAMETRACK_BACKEND=compiled makes a missing extension a
hard error. `use_backend()` rebinds at runtime (used by tests/benchmarks).

String arguments to `levenshtein` are converted to int32 codepoint arrays
here so both backends share one calling convention.
"""

import os

import numpy as np

from . import pykernels

_FORCED = os.environ.get("FRAMETRACK_BACKEND", "").strip().lower()
if _FORCED not in ("", "compiled", "python"):
    raise ValueError(f"FRAMETRACK_BACKEND must be 'compiled' or 'python', got {_FORCED!r}")

if _FORCED == "python":
    _ckernels = None
else:
    try:
        from . import _ckernels
    except ImportError:
        if _FORCED == "compiled":
            raise
        _ckernels = None

_active = _ckernels if _ckernels is not None else pykernels
BACKEND = "compiled" if _ckernels is not None else "python"


def available_backends():
    return ("compiled", "python") if _ckernels is not None else ("python",)


def use_backend(name):
    """Switch the active backend in place. Returns the previous backend name."""
    global _active, BACKEND
    prev = BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _ckernels
    elif name == "python":
        _active = pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return prev


def backend_name():
    return BACKEND


def _codepoints(s):
    return np.array([ord(c) for c in s], dtype=np.int32)


def levenshtein(a, b):
    """Edit distance between two strings (exact, case-sensitive)."""
    return int(_active.levenshtein(_codepoints(a), _codepoints(b)))


def gru_forward(X, h0, W, U, b, reverse=False):
    return _active.gru_forward(X, h0, W, U, b, reverse)


def gru_backward(X, h0, W, U, Z, R, C, H, dH, reverse=False):
    return _active.gru_backward(X, h0, W, U, Z, R, C, H, dH, reverse)
