"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built, or when ``TIDALSTREAM_PURE_PYTHON=1``.
Results match the compiled versions to rounding.
"""

import numpy as np


def _pava_list(w, s, lo, hi, out):
    bw, bs, bend = [], [], []
    for i in range(lo, hi):
        wi = w[i]
        if wi <= 0.0:
            continue
        bw.append(wi)
        bs.append(s[i])
        bend.append(i + 1)
        while len(bw) > 1 and bs[-2] * bw[-1] > bs[-1] * bw[-2]:
            wl, sl, el = bw.pop(), bs.pop(), bend.pop()
            bw[-1] += wl
            bs[-1] += sl
            bend[-1] = el
    if not bw:
        return False
    start = lo
    for k in range(len(bw)):
        v = bs[k] / bw[k]
        for i in range(start, bend[k]):
            out[i] = v
        start = bend[k]
    v = bs[-1] / bw[-1]
    for i in range(start, hi):
        out[i] = v
    return True


def pava(w, s):
    w = np.asarray(w, dtype=float).tolist()
    s = np.asarray(s, dtype=float).tolist()
    out = [0.0] * len(w)
    if not _pava_list(w, s, 0, len(w), out):
        raise ValueError("all weights are zero")
    return np.array(out)


def d_statistic(x, dt, izero, guard):
    x = np.asarray(x, dtype=float)
    s = np.diff(x).tolist()
    m = len(s)
    w = [dt] * m
    full = [0.0] * m
    cons = [0.0] * m
    _pava_list(w, s, 0, m, full)
    _pava_list(w, s, 0, izero, cons)
    _pava_list(w, s, izero, m, cons)
    d = 0.0
    flag = False
    for j in range(m):
        g = full[j]
        g0 = min(cons[j], 0.0) if j < izero else max(cons[j], 0.0)
        if g != g0:
            d += g * g - g0 * g0
            if j < guard or j >= m - guard:
                flag = True
    return d * dt, flag
