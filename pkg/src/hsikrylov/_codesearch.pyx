# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled exhaustive code-search kernel.

Walks codewords in Gray-code order so that consecutive candidates differ by
one bit; the DFT, autocorrelation and PSD are then updated in O(L) instead of
being recomputed.  State is resynchronised from scratch periodically to bound
floating point drift.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, M_PI, INFINITY

cnp.import_array()

cdef long RESYNC = 65536
cdef double TIE_TOL = 1e-9
cdef double PLATEAU_EPS = 1e-9


cdef inline bint _better(double score, long tp, long code,
                         double best_score, long best_tp, long best_code) nogil:
    if best_code < 0:
        return True
    if score > best_score + TIE_TOL:
        return True
    if score < best_score - TIE_TOL:
        return False
    if tp != best_tp:
        return tp > best_tp
    return code < best_code


cdef void _full_dft(int n, int L, const signed char* bits, const double* tc,
                    const double* ts, double* re, double* im) nogil:
    cdef int m, k
    cdef long idx
    for m in range(L):
        re[m] = 0.0
        im[m] = 0.0
    for k in range(n):
        if bits[k]:
            idx = 0
            for m in range(L):
                re[m] += tc[idx]
                im[m] -= ts[idx]
                idx += k
                if idx >= L:
                    idx %= L


cdef double _peak_ratio(int lp, const double* pre, const double* pim) nogil:
    cdef double p0 = pre[0] * pre[0] + pim[0] * pim[0]
    cdef double prev = p0, cur, eta2 = 0.0
    cdef int r = lp - 1, i
    if p0 <= 0:
        return 0.0
    for i in range(1, lp):
        cur = pre[i] * pre[i] + pim[i] * pim[i]
        if not (cur < prev - PLATEAU_EPS * p0):
            r = i - 1
            break
        prev = cur
    for i in range(r + 1, lp - r):
        cur = pre[i] * pre[i] + pim[i] * pim[i]
        if cur > eta2:
            eta2 = cur
    return eta2 / p0


def search_range(int n, int nlam, double alpha, int kind, int band, int psd_len,
                 long start, long stop):
    """Best codeword in ``[start, stop)`` of Gray-code indices.

    The Gray walk visits exactly the codewords ``g(i) = i ^ (i >> 1)`` for
    ``i`` in the range, which for a full ``[1, 2**n)`` range is every nonzero
    codeword.  Returns ``(code, score, throughput)``.
    """
    cdef int L = n + nlam - 1
    cdef int lp = psd_len
    cdef int k, j, m, b, s
    cdef long i, g, code, idx
    cdef long best_code = -1, best_tp = -1, tp
    cdef double best_score = -INFINITY, score, mind2, v, min_ac, ratio

    if start < 1:
        start = 1
    if stop <= start:
        return -1, -INFINITY, -1

    cdef double[::1] tc = np.cos(2 * np.pi * np.arange(L) / L)
    cdef double[::1] ts = np.sin(2 * np.pi * np.arange(L) / L)
    cdef double[::1] pc = np.cos(2 * np.pi * np.arange(lp) / lp)
    cdef double[::1] ps = np.sin(2 * np.pi * np.arange(lp) / lp)
    cdef double[::1] re = np.zeros(L)
    cdef double[::1] im = np.zeros(L)
    cdef double[::1] pre = np.zeros(lp)
    cdef double[::1] pim = np.zeros(lp)
    cdef long[::1] ac = np.zeros(n, dtype=np.int64)
    cdef signed char[::1] bits = np.zeros(n, dtype=np.int8)
    cdef bint want_psd = kind == 1

    with nogil:
        i = start
        while i < stop:
            g = i ^ (i >> 1)
            if i == start or (i - start) % RESYNC == 0:
                for k in range(n):
                    bits[k] = (g >> (n - 1 - k)) & 1
                _full_dft(n, L, &bits[0], &tc[0], &ts[0], &re[0], &im[0])
                if want_psd:
                    _full_dft(n, lp, &bits[0], &pc[0], &ps[0], &pre[0], &pim[0])
                for j in range(n):
                    ac[j] = 0
                    for k in range(n - j):
                        ac[j] += bits[k] * bits[k + j]
            else:
                # bit b of the Gray code flips between i-1 and i
                b = 0
                while not ((i >> b) & 1):
                    b += 1
                k = n - 1 - b
                s = 1 if bits[k] == 0 else -1
                for j in range(1, n):
                    v = 0
                    if k + j < n:
                        v += bits[k + j]
                    if k - j >= 0:
                        v += bits[k - j]
                    ac[j] += <long>(s * v)
                ac[0] += s
                bits[k] = bits[k] + s
                idx = 0
                for m in range(L):
                    re[m] += s * tc[idx]
                    im[m] -= s * ts[idx]
                    idx += k
                    if idx >= L:
                        idx -= L
                if want_psd:
                    idx = 0
                    for m in range(lp):
                        pre[m] += s * pc[idx]
                        pim[m] -= s * ps[idx]
                        idx += k
                        if idx >= lp:
                            idx -= lp

            mind2 = INFINITY
            for m in range(L):
                v = re[m] * re[m] + im[m] * im[m]
                if v < mind2:
                    mind2 = v
            if mind2 < 0:
                mind2 = 0
            tp = ac[0]
            if kind == 0:
                min_ac = ac[0]
                for j in range(1, band + 1):
                    if ac[j] < min_ac:
                        min_ac = ac[j]
                score = alpha * sqrt(mind2) + (1.0 - alpha) * min_ac
            else:
                ratio = _peak_ratio(lp, &pre[0], &pim[0])
                score = alpha * sqrt(mind2) + (1.0 - alpha) * (1.0 - ratio)
            if _better(score, tp, g, best_score, best_tp, best_code):
                best_score = score
                best_tp = tp
                best_code = g
            i += 1
    return best_code, best_score, best_tp
