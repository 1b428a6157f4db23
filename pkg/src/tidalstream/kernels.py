"""Backend selection for the hot loops.

The compiled Cython extension is preferred; the pure-Python module is the
fallback when the extension is missing or ``TIDALSTREAM_PURE_PYTHON`` is set
to a non-empty value other than ``0``. ``BACKEND`` names the one in use.
"""

import os

import numpy as np

from tidalstream import _purepy

_force_pure = os.environ.get("TIDALSTREAM_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure-Python backend requested")
    from tidalstream import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _purepy
    BACKEND = "python"


def pava(w, s):
    """Weighted isotonic regression of ``s / w`` on weights ``w``.

    Entries with zero weight carry no data; each takes the value of the next
    positive-weight block (the last block when none follows). This is the
    convention under which the max-min formula and the greatest-convex-minorant
    slopes coincide.

    Raises ``ValueError`` if every weight is zero.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    return _impl.pava(w, s)


def d_statistic(x, dt, izero, guard):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl.d_statistic(x, float(dt), int(izero), int(guard))
