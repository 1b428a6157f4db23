# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: weighted pool-adjacent-violators and the D-statistic path reduction."""

import numpy as np


cdef void _pava_into(const double[::1] w, const double[::1] s, double[::1] out,
                     double[::1] bw, double[::1] bs, Py_ssize_t[::1] bend,
                     Py_ssize_t lo, Py_ssize_t hi, int *status) noexcept nogil:
    # Fit indices [lo, hi) into out[lo:hi]; status=1 when every weight is zero.
    cdef Py_ssize_t i, k, start, top = 0
    cdef double v
    for i in range(lo, hi):
        if w[i] <= 0.0:
            continue
        bw[top] = w[i]
        bs[top] = s[i]
        bend[top] = i + 1
        top += 1
        while top > 1 and bs[top - 2] * bw[top - 1] > bs[top - 1] * bw[top - 2]:
            bw[top - 2] += bw[top - 1]
            bs[top - 2] += bs[top - 1]
            bend[top - 2] = bend[top - 1]
            top -= 1
    if top == 0:
        status[0] = 1
        return
    status[0] = 0
    start = lo
    for k in range(top):
        v = bs[k] / bw[k]
        for i in range(start, bend[k]):
            out[i] = v
        start = bend[k]
    v = bs[top - 1] / bw[top - 1]
    for i in range(start, hi):
        out[i] = v


def pava(const double[::1] w, const double[::1] s):
    """Weighted isotonic fit of ``s / w`` with weights ``w`` (zero weights allowed)."""
    cdef Py_ssize_t n = w.shape[0]
    cdef int status = 0
    out = np.empty(n)
    bw = np.empty(max(n, 1))
    bs = np.empty(max(n, 1))
    bend = np.empty(max(n, 1), dtype=np.intp)
    _pava_into(w, s, out, bw, bs, bend, 0, n, &status)
    if status:
        raise ValueError("all weights are zero")
    return out


def d_statistic(const double[::1] x, double dt, Py_ssize_t izero, Py_ssize_t guard):
    """Return (D, boundary_flag) for one discretised path ``x`` with x[izero] at t=0."""
    cdef Py_ssize_t m = x.shape[0] - 1, j
    cdef int status = 0
    cdef double d = 0.0, g, g0
    cdef bint flag = False
    w = np.full(m, dt)
    s = np.empty(m)
    cdef double[::1] sv = s
    for j in range(m):
        sv[j] = x[j + 1] - x[j]
    full = np.empty(m)
    cons = np.empty(m)
    bw = np.empty(m)
    bs = np.empty(m)
    bend = np.empty(m, dtype=np.intp)
    cdef double[::1] fv = full, cv = cons, wv = w, bwv = bw, bsv = bs
    cdef Py_ssize_t[::1] bev = bend
    with nogil:
        _pava_into(wv, sv, fv, bwv, bsv, bev, 0, m, &status)
        _pava_into(wv, sv, cv, bwv, bsv, bev, 0, izero, &status)
        _pava_into(wv, sv, cv, bwv, bsv, bev, izero, m, &status)
        for j in range(m):
            g = fv[j]
            g0 = cv[j]
            if j < izero:
                if g0 > 0.0:
                    g0 = 0.0
            elif g0 < 0.0:
                g0 = 0.0
            if g != g0:
                d += g * g - g0 * g0
                if j < guard or j >= m - guard:
                    flag = True
    return d * dt, flag
