import cmath
import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsikrylov import aperture as ap
from hsikrylov import _codesearch_py
from hsikrylov._backend import BACKEND, compiled_impl as native_kernel

bit_lists = st.lists(st.integers(0, 1), min_size=1, max_size=20).filter(any)


# -- independent scalar oracle -------------------------------------------------

def dft_minmag_loop(bits, nl):
    L = len(bits) + nl - 1
    mags = []
    for k in range(L):
        acc = sum(b * cmath.exp(-2j * math.pi * k * n / L) for n, b in enumerate(bits))
        mags.append(abs(acc))
    return min(mags)


def autocorr_loop(bits):
    n = len(bits)
    return {k: sum(bits[i] * bits[i + k] for i in range(n - k)) for k in range(n)}


def peak_ratio_loop(bits):
    L = 8 * len(bits)
    psd = []
    for k in range(L):
        acc = sum(b * cmath.exp(-2j * math.pi * k * n / L) for n, b in enumerate(bits))
        psd.append(abs(acc) ** 2)
    p0 = psd[0]
    r = 0
    while r + 1 < L and psd[r + 1] < psd[r] - 1e-9 * p0:
        r += 1
    side = [psd[i] for i in range(L) if r < i < L - r]
    return (max(side) if side else 0.0) / p0


def objective_loop(bits, nl, alpha, kind):
    md = dft_minmag_loop(bits, nl)
    if kind == "invertible":
        return alpha * md + (1 - alpha) * min(autocorr_loop(bits).values())
    return alpha * md + (1 - alpha) * (1 - peak_ratio_loop(bits))


def best_by_enumeration(n, nl, alpha, kind):
    return max(objective_loop(list(b), nl, alpha, kind)
               for b in itertools.product((0, 1), repeat=n) if any(b))


# -- metrics -------------------------------------------------------------------

def test_dft_of_delta():
    assert ap.code_dft_minmag([1, 0, 0, 0], 5) == pytest.approx(1.0, abs=1e-12)


def test_dft_of_open_code():
    got = ap.code_dft_minmag([1] * 8, 8)
    assert got == pytest.approx(dft_minmag_loop([1] * 8, 8), abs=1e-12)
    # 16-point grid puts the Dirichlet nulls on bins
    assert np.abs(np.fft.fft(np.ones(8), 16)).min() < 1e-9


def test_dft_hand_value():
    assert ap.code_dft_minmag([1, 0, 1], 3) == pytest.approx(2 * math.cos(2 * math.pi / 5), abs=1e-12)


def test_autocorr_examples():
    np.testing.assert_array_equal(ap.code_autocorr([1]), [1])
    np.testing.assert_array_equal(ap.code_autocorr([1, 1, 1]), [1, 2, 3, 2, 1])
    np.testing.assert_array_equal(ap.code_autocorr([1, 0, 1, 1]), [1, 1, 1, 3, 1, 1, 1])


@settings(max_examples=60, deadline=None)
@given(bit_lists)
def test_autocorr_symmetry_and_zero_lag(bits):
    c = ap.code_autocorr(bits)
    np.testing.assert_array_equal(c, c[::-1])
    assert c[len(bits) - 1] == sum(bits)
    loop = autocorr_loop(bits)
    assert all(c[len(bits) - 1 + k] == v for k, v in loop.items())


@settings(max_examples=60, deadline=None)
@given(bit_lists, st.integers(1, 40))
def test_parseval(bits, nl):
    L = len(bits) + nl - 1
    A = np.fft.fft(np.asarray(bits, float), L)
    lhs = np.sum(np.abs(A) ** 2) / L
    assert lhs == pytest.approx(float(sum(bits)), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(bit_lists, st.integers(1, 20))
def test_score_matches_scalar_oracle(bits, nl):
    s = ap.score_code(bits, nl, 0.5)
    assert s.min_dft_mag == pytest.approx(dft_minmag_loop(bits, nl), abs=1e-9)
    assert s.min_autocorr == min(autocorr_loop(bits).values())
    assert s.peak_ratio == pytest.approx(peak_ratio_loop(bits), abs=1e-9)
    assert s.throughput == sum(bits)


def test_slit_score():
    s = ap.score_code(ap.ApertureCode.slit(8), 8, 0.5)
    assert s.min_dft_mag == pytest.approx(1.0)
    assert s.min_autocorr == 0
    assert s.objective == pytest.approx(0.5)


def test_open_score():
    s = ap.score_code(ap.ApertureCode.open(8), 8, 0.5)
    assert s.min_autocorr == 1
    md = dft_minmag_loop([1] * 8, 8)
    assert s.min_dft_mag == pytest.approx(md, abs=1e-12)
    assert s.objective == pytest.approx(0.5 * md + 0.5, abs=1e-12)


def test_delta_has_flat_psd():
    assert ap.peak_ratio(ap.ApertureCode.slit(6)) == pytest.approx(1.0)


def test_band_limit_restricts_lags():
    bits = [1, 1, 0, 0, 0, 1]
    assert ap.score_code(bits, 4, 0.5).min_autocorr == 0
    assert ap.score_code(bits, 4, 0.5, band_limit_lags=1).min_autocorr == 1


def test_score_validation():
    with pytest.raises(ValueError):
        ap.score_code([1, 0], 4, 0.5, objective_kind="sharp")
    with pytest.raises(ValueError):
        ap.score_code([1, 0], 4, 1.5)
    with pytest.raises(ValueError):
        ap.ApertureCode((1, 2))


# -- exhaustive search -----------------------------------------------------------

def test_exhaustive_n1():
    code, _ = ap.search_code_exhaustive(1, 4, 0.5)
    assert code.bits == (1,)


def test_exhaustive_n8_enumeration():
    code, score = ap.search_code_exhaustive(8, 8, 0.5, "invertible")
    assert score.objective == pytest.approx(best_by_enumeration(8, 8, 0.5, "invertible"), abs=1e-9)


@pytest.mark.parametrize("n", range(2, 11))
def test_exhaustive_optimal_small_n(n):
    nl = 7
    for kind in ("invertible", "imperceptible"):
        _, score = ap.search_code_exhaustive(n, nl, 0.4, kind)
        best = best_by_enumeration(n, nl, 0.4, kind)
        assert score.objective >= best - 1e-9
        assert score.objective == pytest.approx(best, abs=1e-9)


def test_exhaustive_beats_slit_and_open():
    _, score = ap.search_code_exhaustive(12, 31, 0.5)
    for ref in (ap.ApertureCode.slit(12), ap.ApertureCode.open(12)):
        assert score.objective >= ap.score_code(ref, 31, 0.5).objective


def test_alpha_near_one_prefers_delta():
    # expected to pick the slit when spectral flatness dominates
    code, _ = ap.search_code_exhaustive(8, 8, 0.999)
    assert code.bits == ap.ApertureCode.slit(8).bits


def test_exhaustive_refuses_large_n():
    with pytest.raises(ValueError, match="refused"):
        ap.search_code_exhaustive(25, 8, 0.5)


def test_exhaustive_workers_agree():
    a = ap.search_code_exhaustive(18, 40, 0.5, workers=1)
    b = ap.search_code_exhaustive(18, 40, 0.5, workers=4)
    assert a == b


@pytest.mark.skipif(BACKEND != "cython", reason="compiled kernel not built")
@pytest.mark.parametrize("n,nl,alpha,kind", [(10, 16, 0.5, "invertible"), (12, 31, 0.3, "imperceptible"),
                                             (14, 64, 0.7, "invertible"), (9, 5, 0.5, "imperceptible")])
def test_backends_agree(n, nl, alpha, kind):
    a = ap.search_code_exhaustive(n, nl, alpha, kind, backend=native_kernel)
    b = ap.search_code_exhaustive(n, nl, alpha, kind, backend=_codesearch_py)
    assert a[0] == b[0]
    assert a[1].objective == pytest.approx(b[1].objective, abs=1e-12)


def test_optimised_code_has_no_nulls():
    # nl = 49 gives a 64-point grid, a multiple of N, so the open code's
    # Dirichlet zeros land on bins
    code, score = ap.search_code_exhaustive(16, 49, 0.5)
    assert score.min_dft_mag > 0
    A = np.abs(np.fft.fft(np.ones(16), 16 + 49 - 1))
    assert A.min() < 1e-6 * A.max()


# -- heuristic search ------------------------------------------------------------

def test_heuristic_close_to_exhaustive():
    _, best = ap.search_code_exhaustive(12, 64, 0.5)
    for seed in range(20):
        _, s = ap.search_code_heuristic(12, 64, 0.5, seed=seed)
        assert s.objective >= 0.95 * best.objective


def test_heuristic_deterministic():
    assert ap.search_code_heuristic(20, 31, 0.5, seed=3) == ap.search_code_heuristic(20, 31, 0.5, seed=3)


def test_heuristic_rejects_zero_flips():
    with pytest.raises(ValueError):
        ap.search_code_heuristic(8, 8, 0.5, flips=0)
    with pytest.raises(ValueError):
        ap.search_code_heuristic(8, 8, 0.5, restarts=0)


# -- m-sequences -----------------------------------------------------------------

def test_msequence_degree3():
    s = ap.msequence(3)
    assert len(s) == 7 and sum(s) == 4


@pytest.mark.parametrize("degree", range(2, 11))
def test_msequence_two_level_autocorrelation(degree):
    s = 2 * np.asarray(ap.msequence(degree)) - 1
    n = s.size
    assert n == 2**degree - 1
    circ = np.array([np.dot(s, np.roll(s, k)) for k in range(n)])
    assert circ[0] == n
    assert np.all(circ[1:] == -1)


def test_msequence_bad_degree():
    with pytest.raises(ValueError):
        ap.msequence(1)


# -- artifacts -------------------------------------------------------------------

def test_code_json_round_trip(tmp_path):
    code = ap.ApertureCode((1, 0, 1, 1), 50.0, 3.2)
    assert ap.ApertureCode.load(code.save(tmp_path / "c.json")) == code


def test_score_csv(tmp_path):
    s = ap.score_code([1, 0, 1, 1], 8, 0.5)
    path = ap.write_score_csv(tmp_path / "s.csv", [(4, 0.5, "invertible", s)])
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == ap.SCORE_COLUMNS
    assert float(rows[1][-1]) == pytest.approx(s.objective)


def test_frequency_response_shapes():
    r = ap.frequency_response(ap.ApertureCode((1, 1, 0, 1)), 10)
    assert r["spectral_mag"].size == 13
    assert r["spatial_psd"].size == 32
