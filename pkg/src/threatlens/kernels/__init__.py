"""Hot-loop kernels with backend selection at import time.

The GRU sequence scan dominates detector training time.  A compiled Cython
implementation is preferred when present; the NumPy implementation is the
fallback and the semantic reference.  Set ``THREATLENS_KERNEL`` to
``python`` or ``cython`` to force a backend (``cython`` raises if the
extension is missing); the two produce the same results up to floating-point
summation order.
"""

import os

_requested = os.environ.get("THREATLENS_KERNEL", "auto").strip().lower()

if _requested in ("auto", "", "cython"):
    try:
        from . import _scan_cy as _impl
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "THREATLENS_KERNEL=cython but the compiled kernel is not "
                "available; reinstall with a C compiler present")
        from . import _scan_py as _impl
        BACKEND = "python"
elif _requested in ("python", "numpy"):
    from . import _scan_py as _impl
    BACKEND = "python"
else:
    raise ValueError(f"unrecognized THREATLENS_KERNEL={_requested!r}")

gru_forward = _impl.gru_forward
gru_backward = _impl.gru_backward
