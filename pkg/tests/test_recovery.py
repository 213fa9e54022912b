import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsikrylov import aperture as ap
from hsikrylov.cube import HsiCube, synth_lowrank_scene
from hsikrylov.krylov import KrylovConfig, krism, reconstruct
from hsikrylov.optics import BlurKernels, OpticalParams, blur_cube, blur_image, blur_spectrum, make_kernels, spatial_psf, spectral_kernel
from hsikrylov.recovery import (
    ConvOperator, DeconvConfig, deconv_factors, estimate_nsr, forward_diff, forward_diff_adjoint,
    l2_smooth_deconv, l2_smooth_normal_op, rsnr, sam, sam_aligned, tv_deconv_2d, tv_norm, tv_prox,
    wiener_deconv_1d, wiener_deconv_2d, write_metrics_csv, METRIC_COLUMNS,
)
from hsikrylov.sensing import Instrument

PAD = 40
WL = 400 + np.arange(-PAD, 91 + PAD) * 10 / 3


@pytest.fixture(scope="module")
def kern32(code32):
    return spectral_kernel(code32, OpticalParams(), WL)


def padded_signal(rng, n, margin):
    x = np.zeros(n)
    x[margin:n - margin] = rng.random(n - 2 * margin)
    return x


# -- operators -------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(5, 40), st.integers(0, 2**31 - 1))
def test_conv_adjoint_1d(m, n, seed):
    rng = np.random.default_rng(seed)
    k = rng.random(2 * m - 1)
    A = ConvOperator(k / k.sum(), (n,))
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    assert abs(A.forward(x) @ y - x @ A.adjoint(y)) <= 1e-10 * max(1, abs(A.forward(x) @ y))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(4, 20), st.integers(4, 20), st.integers(0, 2**31 - 1))
def test_conv_adjoint_2d(m, n1, n2, seed):
    rng = np.random.default_rng(seed)
    k = rng.random((2 * m - 1, 2 * m - 1))
    A = ConvOperator(k / k.sum(), (n1, n2))
    x, y = rng.standard_normal((n1, n2)), rng.standard_normal((n1, n2))
    lhs = np.sum(A.forward(x) * y)
    assert abs(lhs - np.sum(x * A.adjoint(y))) <= 1e-10 * max(1, abs(lhs))


def test_conv_matches_blur(rng, kern32):
    x = rng.random(WL.size)
    np.testing.assert_allclose(ConvOperator(kern32, x.shape).forward(x), blur_spectrum(x, kern32), atol=1e-12)


def test_forward_diff_adjoint(rng):
    x, d = rng.standard_normal(17), rng.standard_normal(17)
    assert forward_diff(x) @ d == pytest.approx(x @ forward_diff_adjoint(d), rel=1e-12)
    assert forward_diff(np.ones(5)) @ np.ones(5) == 0


# -- Wiener ----------------------------------------------------------------------

def test_wiener_impulse_identity(rng):
    y = rng.random(20)
    np.testing.assert_array_equal(wiener_deconv_1d(y, np.ones(1), 0.0), y)


def test_wiener_exact_inverse(rng, kern32):
    x = padded_signal(rng, WL.size, PAD)
    est = wiener_deconv_1d(blur_spectrum(x, kern32), kern32, 0.0)
    assert np.linalg.norm(est - x) <= 1e-10 * np.linalg.norm(x)


def test_wiener_round_trip_100db(rng, kern32):
    x = padded_signal(rng, WL.size, PAD)
    assert rsnr(x, wiener_deconv_1d(blur_spectrum(x, kern32), kern32, 1e-12)) >= 100


def test_wiener_2d_exact(rng, code32):
    psf = spatial_psf(code32, OpticalParams(pixel_um=7.8125), max_halfwidth_px=16)
    h = psf.shape[0] // 2
    img = np.pad(rng.random((24, 20)), h)
    est = wiener_deconv_2d(blur_image(img, psf), psf, 0.0)
    assert np.linalg.norm(est - img) <= 1e-8 * np.linalg.norm(img)


def test_estimate_nsr():
    y = np.ones(100)
    assert estimate_nsr(y, 0.1) == pytest.approx(100 * 0.01 / 100)


# -- l2 smoothness ---------------------------------------------------------------

def test_l2_eta_zero_matches_direct(rng, kern32):
    x = padded_signal(rng, WL.size, PAD)
    y = blur_spectrum(x, kern32)
    a = l2_smooth_deconv(y, kern32, 0.0, cg_tol=1e-12, cg_maxiter=20000)
    b = wiener_deconv_1d(y, kern32, 0.0)
    assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(b)


def test_l2_large_eta_kills_variation(rng, kern32):
    y = rng.standard_normal(WL.size)
    y -= y.mean()
    x = l2_smooth_deconv(y, kern32, 1e9)
    assert np.linalg.norm(x - x.mean()) < 1e-6 * np.linalg.norm(y)


@pytest.mark.parametrize("eta", [0.1, 1.0, 50.0])
def test_l2_normal_equations(rng, kern32, eta):
    y = rng.random(WL.size)
    x = l2_smooth_deconv(y, kern32, eta, cg_tol=1e-10)
    apply, A = l2_smooth_normal_op(kern32, y.size, eta)
    rhs = A.adjoint(y)
    # normal equations of 1/2||y - Ax||^2 + eta ||Dx||^2
    direct = A.adjoint(A.forward(x)) + 2 * eta * forward_diff_adjoint(forward_diff(x))
    np.testing.assert_allclose(apply(x), direct, atol=1e-14)
    assert np.linalg.norm(direct - rhs) <= 1e-10 * np.linalg.norm(rhs) * 1.01


def test_l2_validation(kern32):
    with pytest.raises(ValueError):
        l2_smooth_deconv(np.ones(WL.size), kern32, -1.0)


def tungsten_and_cfl(wl):
    inb = (wl >= 400) & (wl <= 700)
    lam = wl * 1e-9
    planck = 1 / (lam**5 * (np.exp(1.4388e-2 / (lam * 2856.0)) - 1))
    tung = np.where(inb, planck / planck[inb].max(), 0.0)
    sigma = 1.0 / 2.355  # 1 nm FWHM lines
    cfl = sum(a * np.exp(-0.5 * ((wl - c) / sigma) ** 2)
              for c, a in ((436, 0.5), (487, 0.3), (546, 1.0), (611, 0.8)))
    return tung, np.where(inb, cfl + 0.02, 0.0)


def test_eta_choice_per_spectrum_type(code32):
    # rainbow-plane pixel sampling, binary code amplitude
    p = OpticalParams()
    d = p.pixel_um * 1e3 / (p.focal_mm * p.groove_per_mm)
    wl = 400 + np.arange(-700, int(round(300 / d)) + 701) * d
    k = spectral_kernel(code32, p, wl)
    k = k / k.max()
    tung, cfl = tungsten_and_cfl(wl)
    from hsikrylov.sensing import NoiseModel
    nm = NoiseModel(60, 12, True, seed=1)
    out = {}
    for name, s in (("tungsten", tung), ("cfl", cfl)):
        y = nm.apply(np.convolve(s, k, mode="same"), np.random.default_rng(0))
        out[name] = {eta: rsnr(s, l2_smooth_deconv(y, k, eta)) for eta in (1.0, 1e3)}
    assert out["tungsten"][1e3] > out["tungsten"][1.0]
    assert out["cfl"][1.0] > out["cfl"][1e3]


# -- total variation -------------------------------------------------------------

def test_tv_identity(rng):
    img = rng.random((12, 10))
    np.testing.assert_allclose(tv_deconv_2d(img, np.ones((1, 1)), 0.0, iters=5), img, atol=1e-12)


def test_tv_prox_zero_weight(rng):
    f = rng.random((6, 6))
    np.testing.assert_array_equal(tv_prox(f, 0.0)[0], f)


def test_tv_prox_reduces_tv(rng):
    f = rng.random((16, 16))
    u, _ = tv_prox(f, 0.1, iters=50)
    assert tv_norm(u) < tv_norm(f)


@pytest.mark.parametrize("weight", [1e-3, 1e-2, 1e-1])
def test_tv_objective_monotone(rng, weight):
    psf = np.outer([1, 2, 1], [1, 3, 1]).astype(float)
    psf /= psf.sum()
    y = blur_image(rng.random((20, 20)), psf) + 0.01 * rng.standard_normal((20, 20))
    _, hist = tv_deconv_2d(y, psf, weight, iters=40, return_history=True)
    assert np.all(np.diff(hist) <= 0)


def piecewise_constant(rng, n=64):
    img = np.zeros((n, n))
    for _ in range(8):
        x0, y0 = rng.integers(0, n - 16, 2)
        w, h = rng.integers(6, 20, 2)
        img[x0:x0 + w, y0:y0 + h] = rng.uniform(0.2, 1.0)
    return img


def test_tv_beats_wiener_on_piecewise_constant(code32):
    rng = np.random.default_rng(0)
    psf = spatial_psf(code32, OpticalParams(pixel_um=7.8125), max_halfwidth_px=32)
    img = np.pad(piecewise_constant(rng), psf.shape[0] // 2)
    yb = blur_image(img, psf)
    sigma = yb.max() / 100  # 40 dB
    y = yb + sigma * rng.standard_normal(yb.shape)
    w = rsnr(img, wiener_deconv_2d(y, psf, estimate_nsr(y, sigma)))
    t = rsnr(img, tv_deconv_2d(y, psf, sigma, iters=100))
    assert t >= w


def test_tv_validation():
    with pytest.raises(ValueError):
        tv_deconv_2d(np.ones(5), np.ones((1, 1)), 0.1)
    with pytest.raises(ValueError):
        tv_deconv_2d(np.ones((5, 5)), np.ones((1, 1)), -0.1)


# -- metrics ---------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_metrics_scalar_oracle(n, seed):
    rng = np.random.default_rng(seed)
    x, xh = rng.standard_normal(n), rng.standard_normal(n)
    num = math.sqrt(sum(v * v for v in x))
    den = math.sqrt(sum((a - b) ** 2 for a, b in zip(x, xh)))
    assert rsnr(x, xh) == pytest.approx(20 * math.log10(num / den), abs=1e-12)
    dot = sum(a * b for a, b in zip(x, xh))
    nh = math.sqrt(sum(v * v for v in xh))
    ang = math.degrees(math.acos(max(-1.0, min(1.0, dot / (num * nh)))))
    assert sam(x, xh) == pytest.approx(ang, abs=1e-9)


def test_metric_edge_cases():
    x = np.array([1.0, 2.0, 3.0])
    assert rsnr(x, x) == 300.0
    assert rsnr(x, np.zeros(3)) == pytest.approx(0.0)
    assert sam(x, x) == pytest.approx(0.0, abs=1e-6)
    assert sam([1, 0], [0, 1]) == pytest.approx(90.0)
    assert sam_aligned(x, -x) == pytest.approx(0.0, abs=1e-6)


def test_metrics_csv(tmp_path):
    path = write_metrics_csv(tmp_path / "m.csv", [{"scene": "a", "method": "krism", "rsnr_db": 1.5}])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert lines[1].startswith("a,krism")


# -- factor deconvolution --------------------------------------------------------

def test_identity_kernels_leave_factors():
    cube = synth_lowrank_scene(8, 8, 10, 2, seed=0)
    f = krism(Instrument(cube), KrylovConfig(2, 4))
    g = deconv_factors(f, BlurKernels.identity(cube.wavelengths), k=2)
    np.testing.assert_array_equal(g.U, f.U[:, :2])
    np.testing.assert_array_equal(g.V, f.V[:, :2])


def test_rank_one_end_to_end(code32):
    wl = WL
    p = OpticalParams(pixel_um=7.8125)
    kern = make_kernels(code32, p, wl, max_halfwidth_px=16)
    h = kern.spatial_psf.shape[0] // 2
    rng = np.random.default_rng(3)
    amap = np.pad(rng.random((20, 16)) + 0.5, h)
    spec = np.zeros(wl.size)
    spec[PAD:-PAD] = 1.0 + np.sin(np.linspace(0, 3, wl.size - 2 * PAD))
    cube = HsiCube(amap[:, :, None] * spec[None, None, :], wl)
    f = krism(Instrument(blur_cube(cube, kern)), KrylovConfig(1, 3))
    cfg = DeconvConfig("wiener", wiener_nsr=1e-12)
    g = deconv_factors(f, kern, cfg, cfg, k=1)
    assert rsnr(cube.matrix(), reconstruct(g, 1).matrix()) >= 40


def test_deconv_config_validation():
    with pytest.raises(ValueError):
        DeconvConfig("richardson")
    with pytest.raises(ValueError):
        DeconvConfig(eta=-1)
