"""Binary aperture codes: spectral/spatial invertibility metrics and code search.

The DFT convention is the unnormalised forward sum
``A[k] = sum_n a_n exp(-2j pi k n / L)`` with ``L = N + nl - 1``.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _codesearch_py as _py
from ._backend import impl as _kernel

MAX_EXHAUSTIVE_N = 24

# Primitive polynomials x^d + sum(x^t) + 1, listed as the middle exponents t.
PRIMITIVE_TAPS = {
    2: (1,),
    3: (2,),
    4: (3,),
    5: (2,),
    6: (5,),
    7: (6,),
    8: (6, 5, 4),
    9: (5,),
    10: (7,),
    11: (9,),
    12: (11, 10, 4),
    13: (12, 11, 8),
    14: (13, 12, 2),
    15: (14,),
    16: (15, 13, 4),
}


@dataclass(frozen=True)
class ApertureCode:
    bits: tuple[int, ...]
    pitch_um: float = 100.0
    height_mm: float = 6.4

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) < 1:
            raise ValueError("aperture code needs at least one bit")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("aperture code bits must be 0 or 1")
        if self.pitch_um <= 0 or self.height_mm <= 0:
            raise ValueError("pitch_um and height_mm must be positive")
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def throughput(self) -> int:
        return sum(self.bits)

    def array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)

    def to_json(self) -> dict:
        return {"bits": list(self.bits), "pitch_um": self.pitch_um, "height_mm": self.height_mm}

    @classmethod
    def from_json(cls, obj: dict) -> "ApertureCode":
        return cls(tuple(obj["bits"]), float(obj["pitch_um"]), float(obj["height_mm"]))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "ApertureCode":
        return cls.from_json(json.loads(Path(path).read_text()))

    @classmethod
    def slit(cls, n: int, **kw) -> "ApertureCode":
        return cls((1,) + (0,) * (n - 1), **kw)

    @classmethod
    def open(cls, n: int, **kw) -> "ApertureCode":
        return cls((1,) * n, **kw)


@dataclass(frozen=True)
class CodeScore:
    min_dft_mag: float
    min_autocorr: int
    peak_ratio: float
    throughput: int
    objective: float


def _bits(code) -> np.ndarray:
    if isinstance(code, ApertureCode):
        return code.array()
    arr = np.asarray(code, dtype=np.float64).ravel()
    if arr.size < 1:
        raise ValueError("code must be nonempty")
    return arr


def code_dft_minmag(code, nl: int) -> float:
    """Smallest ``|A[k]|`` over the ``(N + nl - 1)``-point DFT of the code."""
    if nl < 1:
        raise ValueError("nl must be >= 1")
    a = _bits(code)
    if not np.any(a):
        raise ValueError("all-zero code has no spectrum")
    return float(np.abs(np.fft.fft(a, n=a.size + nl - 1)).min())


def code_autocorr(code) -> np.ndarray:
    """Linear autocorrelation ``c_k`` for ``k = -(N-1) .. N-1`` (index ``N-1`` is lag 0)."""
    a = _bits(code)
    return np.rint(np.correlate(a, a, mode="full")).astype(np.int64)


def psd_length(n: int) -> int:
    return 8 * n


def spatial_psd(code, length: int | None = None) -> np.ndarray:
    """Discrete PSD ``|DFT(a)|^2`` on ``length`` bins (default ``8 N``)."""
    a = _bits(code)
    length = length or psd_length(a.size)
    return np.abs(np.fft.fft(a, n=length)) ** 2


def peak_ratio(code) -> float:
    """``eta2 / eta1``: highest side-lobe over main-lobe peak of the discrete PSD."""
    return float(_py.peak_ratio_from_psd(spatial_psd(code))[0])


def _kind(objective_kind: str) -> int:
    if objective_kind == "invertible":
        return _py.KIND_INVERTIBLE
    if objective_kind == "imperceptible":
        return _py.KIND_IMPERCEPTIBLE
    raise ValueError(f"objective_kind must be 'invertible' or 'imperceptible', got {objective_kind!r}")


def _band(n: int, band_limit_lags) -> int:
    if band_limit_lags is None:
        return n - 1
    if band_limit_lags < 0:
        raise ValueError("band_limit_lags must be >= 0")
    return min(int(band_limit_lags), n - 1)


def score_code(code, nl: int, alpha: float, band_limit_lags: int | None = None,
               objective_kind: str = "invertible") -> CodeScore:
    """Score a code for joint spectral/spatial invertibility.

    ``invertible``: ``alpha * min|A[k]| + (1 - alpha) * min c_k`` over lags
    ``|k| <= band_limit_lags``.  ``imperceptible``: the autocorrelation term
    is replaced by ``1 - eta2/eta1`` so that weak side lobes score high.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    a = _bits(code)
    md = code_dft_minmag(a, nl)
    c = code_autocorr(a)
    n = a.size
    band = _band(n, band_limit_lags)
    min_ac = int(c[n - 1: n + band].min())
    ratio = peak_ratio(a)
    obj = float(_py.combine(md, min_ac, ratio, alpha, _kind(objective_kind)))
    return CodeScore(md, min_ac, ratio, int(a.sum()), obj)


def search_code_exhaustive(
    n: int,
    nl: int,
    alpha: float,
    objective_kind: str = "invertible",
    band_limit_lags: int | None = None,
    pitch_um: float = 100.0,
    height_mm: float = 6.4,
    force: bool = False,
    workers: int = 1,
    backend=None,
) -> tuple[ApertureCode, CodeScore]:
    """Best of all ``2**n - 1`` nonzero codewords.

    Ties go to higher throughput, then the lexicographically smallest bit
    string.  ``n > 24`` requires ``force=True``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_EXHAUSTIVE_N and not force:
        raise ValueError(
            f"exhaustive search over 2**{n} codes refused (limit {MAX_EXHAUSTIVE_N}); "
            "use search_code_heuristic or force=True"
        )
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    kern = backend or _kernel
    kind = _kind(objective_kind)
    band = _band(n, band_limit_lags)
    total = 1 << n
    args = (n, nl, alpha, kind, band, psd_length(n))
    if workers > 1 and total > (1 << 16):
        edges = np.linspace(1, total, workers + 1).astype(np.int64)
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda lo_hi: kern.search_range(*args, int(lo_hi[0]), int(lo_hi[1])),
                                  zip(edges[:-1], edges[1:])))
    else:
        parts = [kern.search_range(*args, 1, total)]
    best = (-1, -math.inf, -1)
    for code, sc, tp in parts:
        if code >= 0 and _py.better(sc, tp, code, best[1], best[2], best[0]):
            best = (code, sc, tp)
    ac = ApertureCode(tuple(_py.int_to_bits(best[0], n)), pitch_um, height_mm)
    return ac, score_code(ac, nl, alpha, band_limit_lags, objective_kind)


def _neighbour_scores(bits, nl, alpha, kind, band):
    n = bits.size
    flips = np.repeat(bits[None, :], n, axis=0)
    flips[np.arange(n), np.arange(n)] ^= 1
    valid = flips.any(axis=1)
    md, ma, pr, tp = _py.score_bits_batch(flips[valid], nl, band, psd_length(n))
    sc = np.full(n, -np.inf)
    sc[valid] = _py.combine(md, ma, pr, alpha, kind)
    tps = np.zeros(n)
    tps[valid] = tp
    return flips, sc, tps


def _single_score(bits, nl, alpha, kind, band) -> float:
    md, ma, pr, _ = _py.score_bits_batch(bits[None, :], nl, band, psd_length(bits.size))
    return float(_py.combine(md, ma, pr, alpha, kind)[0])


def search_code_heuristic(
    n: int,
    nl: int,
    alpha: float,
    objective_kind: str = "invertible",
    restarts: int = 8,
    flips: int = 64,
    seed: int = 0,
    band_limit_lags: int | None = None,
    pitch_um: float = 100.0,
    height_mm: float = 6.4,
) -> tuple[ApertureCode, CodeScore]:
    """Steepest-ascent single-bit-flip hill climbing from several seeds.

    The first start is a truncated M-sequence, the rest are random; each
    climb takes at most ``flips`` accepted moves.
    """
    if restarts < 1 or flips < 1:
        raise ValueError("restarts and flips must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    kind = _kind(objective_kind)
    band = _band(n, band_limit_lags)
    rng = np.random.default_rng(seed)
    starts = []
    degree = max(2, int(math.ceil(math.log2(n + 1))))
    if degree <= max(PRIMITIVE_TAPS):
        starts.append(np.array(msequence(degree)[:n], dtype=np.int8))
    while len(starts) < restarts:
        starts.append(rng.integers(0, 2, n).astype(np.int8))
    best = None
    for start in starts:
        cur = start.copy()
        if not cur.any():
            cur[rng.integers(n)] = 1
        cur_sc = _single_score(cur, nl, alpha, kind, band)
        for _ in range(flips):
            cand, sc, tps = _neighbour_scores(cur, nl, alpha, kind, band)
            j = int(np.argmax(sc))
            if sc[j] <= cur_sc + _py.TIE_TOL:
                break
            cur, cur_sc = cand[j], float(sc[j])
        key = (cur_sc, int(cur.sum()), _py.bits_to_int(cur))
        if best is None or _py.better(key[0], key[1], key[2], best[0], best[1], best[2]):
            best = key
    ac = ApertureCode(tuple(_py.int_to_bits(best[2], n)), pitch_um, height_mm)
    return ac, score_code(ac, nl, alpha, band_limit_lags, objective_kind)


def msequence(degree: int) -> tuple[int, ...]:
    """Maximal-length LFSR sequence of length ``2**degree - 1`` from an all-ones state."""
    if degree not in PRIMITIVE_TAPS:
        raise ValueError(f"msequence degree must be in [2, 16], got {degree}")
    taps = (0,) + PRIMITIVE_TAPS[degree]
    length = (1 << degree) - 1
    s = np.ones(length + degree, dtype=np.int8)
    for i in range(length):
        v = 0
        for t in taps:
            v ^= s[i + t]
        s[i + degree] = v
    return tuple(int(b) for b in s[:length])


def frequency_response(code: ApertureCode, nl: int) -> dict[str, np.ndarray]:
    """Spectral ``|A[k]|`` on the ``N + nl - 1`` grid and the spatial PSD curve."""
    a = code.array()
    L = a.size + nl - 1
    return {
        "spectral_freq": np.arange(L) / L,
        "spectral_mag": np.abs(np.fft.fft(a, n=L)),
        "spatial_freq": np.arange(psd_length(a.size)) / psd_length(a.size),
        "spatial_psd": spatial_psd(a),
    }


SCORE_COLUMNS = ("N", "alpha", "objective_kind", "min_dft_mag", "min_autocorr",
                 "peak_ratio", "throughput", "objective")


def write_score_csv(path, rows) -> Path:
    """``rows``: iterable of ``(n, alpha, objective_kind, CodeScore)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for n, alpha, kind, sc in rows:
            d = asdict(sc)
            w.writerow([n, alpha, kind, repr(d["min_dft_mag"]), d["min_autocorr"],
                        repr(d["peak_ratio"]), d["throughput"], repr(d["objective"])])
    return path
