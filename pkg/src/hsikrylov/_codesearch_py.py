"""Pure numpy implementation of the code-search kernels.

Same interface as the compiled ``_codesearch`` module.  Codewords are
integers whose most significant bit is ``a_0``, so numeric order equals
lexicographic order of the bit strings.
"""
from __future__ import annotations

import numpy as np

KIND_INVERTIBLE = 0
KIND_IMPERCEPTIBLE = 1
TIE_TOL = 1e-9
_PLATEAU_EPS = 1e-9
_BATCH = 1 << 14


def int_to_bits(code: int, n: int) -> np.ndarray:
    return np.array([(code >> (n - 1 - k)) & 1 for k in range(n)], dtype=np.int8)


def bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def _ints_to_bits(codes: np.ndarray, n: int) -> np.ndarray:
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.float64)


def peak_ratio_from_psd(psd: np.ndarray) -> np.ndarray:
    """Second-peak / main-peak ratio of rows of a symmetric PSD with peak at bin 0."""
    psd = np.atleast_2d(psd)
    lp = psd.shape[1]
    p0 = psd[:, 0]
    dec = psd[:, 1:] < psd[:, :-1] - _PLATEAU_EPS * p0[:, None]
    stops = ~dec
    # last index of the main lobe walking right from bin 0
    r = np.where(stops.any(axis=1), stops.argmax(axis=1), lp - 1)
    idx = np.arange(lp)
    mask = (idx[None, :] > r[:, None]) & (idx[None, :] < lp - r[:, None])
    eta2 = np.where(mask, psd, 0.0).max(axis=1)
    return np.where(p0 > 0, eta2 / np.where(p0 > 0, p0, 1.0), 0.0)


def score_bits_batch(bits: np.ndarray, nlam: int, band: int, psd_len: int):
    """Metrics for each row of a ``(B, N)`` 0/1 array.

    Returns ``(min_dft_mag, min_autocorr, peak_ratio, throughput)`` arrays.
    """
    bits = np.atleast_2d(np.asarray(bits, dtype=np.float64))
    n = bits.shape[1]
    L = n + nlam - 1
    spec = np.fft.fft(bits, n=L, axis=1)
    min_dft = np.sqrt(np.min(spec.real**2 + spec.imag**2, axis=1))
    F = np.fft.rfft(bits, n=2 * n, axis=1)
    ac = np.rint(np.fft.irfft(F.real**2 + F.imag**2, n=2 * n, axis=1)[:, :n])
    min_ac = ac[:, : band + 1].min(axis=1)
    P = np.fft.fft(bits, n=psd_len, axis=1)
    ratio = peak_ratio_from_psd(P.real**2 + P.imag**2)
    return min_dft, min_ac, ratio, bits.sum(axis=1)


def combine(min_dft, min_ac, ratio, alpha: float, kind: int):
    if kind == KIND_INVERTIBLE:
        return alpha * min_dft + (1.0 - alpha) * min_ac
    return alpha * min_dft + (1.0 - alpha) * (1.0 - ratio)


def better(score, tp, code, best_score, best_tp, best_code) -> bool:
    """Deterministic ordering: higher score, then throughput, then smaller codeword."""
    if best_code < 0:
        return True
    if score > best_score + TIE_TOL:
        return True
    if score < best_score - TIE_TOL:
        return False
    if tp != best_tp:
        return tp > best_tp
    return code < best_code


def search_range(n: int, nlam: int, alpha: float, kind: int, band: int, psd_len: int,
                 start: int, stop: int):
    """Best codeword in ``[start, stop)`` (codeword 0 is skipped).

    Returns ``(code, score, throughput)``; ``code == -1`` for an empty range.
    """
    best = (-np.inf, -1, -1)
    lo = max(int(start), 1)
    for b0 in range(lo, int(stop), _BATCH):
        codes = np.arange(b0, min(b0 + _BATCH, int(stop)), dtype=np.int64)
        bits = _ints_to_bits(codes, n)
        md, ma, pr, tp = score_bits_batch(bits, nlam, band, psd_len)
        sc = combine(md, ma, pr, alpha, kind)
        top = sc.max()
        cand = np.nonzero(sc >= top - TIE_TOL)[0]
        for j in cand:
            if better(sc[j], int(tp[j]), int(codes[j]), best[0], best[2], best[1]):
                best = (float(sc[j]), int(codes[j]), int(tp[j]))
    return best[1], best[0], best[2]
