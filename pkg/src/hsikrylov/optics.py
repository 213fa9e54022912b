"""Physical scalings, code-derived blur kernels and blur application.

Units: focal length in mm, groove density in grooves/mm, pixel pitch and code
pitch in um, wavelengths in nm.  The grating maps wavelength ``lam`` to a
lateral offset ``f * v0 * lam`` on the rainbow plane.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .aperture import ApertureCode
from .cube import HsiCube

PSF_REL_THRESHOLD = 1e-6
DEFAULT_MAX_HALFWIDTH_PX = 128


@dataclass(frozen=True)
class OpticalParams:
    focal_mm: float = 100.0
    groove_per_mm: float = 300.0
    pixel_um: float = 5.0
    design_lambda_nm: float = 500.0

    def __post_init__(self):
        for name in ("focal_mm", "groove_per_mm", "pixel_um", "design_lambda_nm"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")

    def to_json(self) -> dict:
        return {
            "focal_mm": self.focal_mm,
            "groove_per_mm": self.groove_per_mm,
            "pixel_um": self.pixel_um,
            "design_lambda_nm": self.design_lambda_nm,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OpticalParams":
        return cls(*(float(obj[k]) for k in ("focal_mm", "groove_per_mm", "pixel_um", "design_lambda_nm")))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "OpticalParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def spectral_stretch(params: OpticalParams) -> float:
    """Dimensionless ``f * v0``."""
    return params.focal_mm * params.groove_per_mm


def wavelength_to_position(params: OpticalParams, lam_nm) -> np.ndarray | float:
    """Rainbow-plane offset in um of wavelength ``lam_nm``."""
    return spectral_stretch(params) * np.asarray(lam_nm, dtype=np.float64) * 1e-3


def code_pitch_nm(code: ApertureCode, params: OpticalParams) -> float:
    """Wavelength span of one code bit, ``delta / (f v0)``."""
    return code.pitch_um * 1e3 / spectral_stretch(params)


def blur_extents(params: OpticalParams, width_mm: float, height_mm: float) -> tuple[float, float, float]:
    """``(spectral_nm, spatial_x_um, spatial_y_um)`` for a ``W x H`` open box aperture."""
    if width_mm <= 0 or height_mm <= 0:
        raise ValueError("aperture width and height must be positive")
    spectral_nm = width_mm * 1e6 / spectral_stretch(params)
    lam_f_um2 = params.design_lambda_nm * 1e-3 * params.focal_mm * 1e3
    return spectral_nm, lam_f_um2 / (width_mm * 1e3), lam_f_um2 / (height_mm * 1e3)


def _uniform_step(wavelengths) -> float:
    wl = np.asarray(wavelengths, dtype=np.float64)
    if wl.ndim != 1 or wl.size < 2:
        raise ValueError("wavelength grid needs at least two samples")
    d = np.diff(wl)
    if np.any(d <= 0) or np.ptp(d) > 1e-6 * d.mean():
        raise ValueError("wavelength grid must be uniform and increasing")
    return float(d.mean())


def spectral_kernel(code: ApertureCode, params: OpticalParams, wavelengths) -> np.ndarray:
    """Code resampled onto the wavelength grid by box overlap, mirrored, unit sum.

    Bit ``k`` spans ``[k, k+1) * delta_lam``; grid bin ``j`` spans
    ``[j, j+1) * d_lam``.  The result is mirrored (rainbow plane sees
    ``a(-x)``) and zero-padded to odd length so it is centred for
    ``same``-mode convolution.
    """
    step = _uniform_step(wavelengths)
    wl = np.asarray(wavelengths, dtype=np.float64)
    bit = code_pitch_nm(code, params)
    if wl[-1] - wl[0] <= bit:
        raise ValueError("wavelength grid must span more than one code pitch")
    a = code.array()
    if not a.any():
        raise ValueError("all-zero code cannot form a blur kernel")
    edges_code = np.arange(a.size + 1) * bit
    nbins = int(np.ceil(edges_code[-1] / step - 1e-9))
    edges_bin = np.arange(nbins + 1) * step
    k = np.zeros(nbins)
    for i in np.nonzero(a)[0]:
        lo, hi = edges_code[i], edges_code[i + 1]
        ov = np.minimum(edges_bin[1:], hi) - np.maximum(edges_bin[:-1], lo)
        k += np.clip(ov, 0.0, None) * a[i]
    k = k[::-1]
    nz = np.nonzero(k > 1e-12 * k.max())[0]
    k = k[nz[0]: nz[-1] + 1]
    if k.size % 2 == 0:
        k = np.append(k, 0.0)
    return k / k.sum()


def code_psd_samples(code: ApertureCode, u_per_um: np.ndarray) -> np.ndarray:
    """``|sum_k a_k exp(-2j pi k delta u)|^2`` at spatial frequencies ``u`` (1/um)."""
    a = code.array()
    theta = np.outer(np.asarray(u_per_um, dtype=np.float64), np.arange(a.size)) * code.pitch_um
    return np.abs(np.exp(-2j * np.pi * theta) @ a) ** 2


def _psf_x(code, lam_um, f_um, pos_um):
    u = pos_um / (lam_um * f_um)
    env = (code.pitch_um * np.sinc(code.pitch_um * u)) ** 2
    return env * code_psd_samples(code, u)


def _psf_y(height_um, lam_um, f_um, pos_um):
    v = pos_um / (lam_um * f_um)
    return (height_um * np.sinc(height_um * v)) ** 2


def _halfwidth(profile_fn, pitch, cap, rel):
    """Smallest half-width beyond which the profile stays under ``rel * peak`` (up to ``cap``)."""
    n = np.arange(cap + 1)
    vals = profile_fn(n * pitch)
    above = np.nonzero(vals >= rel * vals.max())[0]
    return int(above[-1]) if above.size else 0


def spatial_psf(
    code: ApertureCode,
    params: OpticalParams,
    lambda_nm: float | None = None,
    max_halfwidth_px: int = DEFAULT_MAX_HALFWIDTH_PX,
    supersample: int = 1,
    rel_threshold: float = PSF_REL_THRESHOLD,
) -> np.ndarray:
    """Separable PSF ``|A(x / lam f)|^2 * H^2 sinc^2(H y / lam f)`` on the pixel grid.

    With ``supersample = s > 1`` each pixel averages ``s x s`` point samples
    (pixel integration); ``s = 1`` point-samples at pixel centres.  The
    kernel is square, odd-sized, non-negative and unit-sum.
    """
    if supersample < 1 or max_halfwidth_px < 0:
        raise ValueError("supersample must be >= 1 and max_halfwidth_px >= 0")
    if not code.array().any():
        raise ValueError("all-zero code cannot form a blur kernel")
    lam_um = (lambda_nm or params.design_lambda_nm) * 1e-3
    f_um = params.focal_mm * 1e3
    h_um = code.height_mm * 1e3
    p = params.pixel_um
    fx = lambda x: _psf_x(code, lam_um, f_um, x)
    fy = lambda y: _psf_y(h_um, lam_um, f_um, y)
    hx = _halfwidth(fx, p, max_halfwidth_px, rel_threshold)
    hy = _halfwidth(fy, p, max_halfwidth_px, rel_threshold)
    half = max(hx, hy)
    s = int(supersample)
    sub = (np.arange(s) + 0.5) / s - 0.5
    pos = (np.arange(-half, half + 1)[:, None] + sub[None, :]) * p
    px = fx(pos.ravel()).reshape(pos.shape).mean(axis=1)
    py = fy(pos.ravel()).reshape(pos.shape).mean(axis=1)
    psf = np.outer(px, py)
    return psf / psf.sum()


@dataclass(frozen=True)
class BlurKernels:
    spectral_kernel: np.ndarray
    spatial_psf: np.ndarray
    wavelengths: np.ndarray
    band_psfs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("spectral_kernel", "spatial_psf"):
            k = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(k < 0) or not np.isclose(k.sum(), 1.0, rtol=0, atol=1e-12):
                raise ValueError(f"{name} must be non-negative with unit sum")
            k = k.copy()
            k.setflags(write=False)
            object.__setattr__(self, name, k)

    @classmethod
    def identity(cls, wavelengths) -> "BlurKernels":
        return cls(np.ones(1), np.ones((1, 1)), np.asarray(wavelengths, dtype=np.float64))


def make_kernels(
    code: ApertureCode,
    params: OpticalParams,
    wavelengths,
    per_band: bool = False,
    max_halfwidth_px: int = DEFAULT_MAX_HALFWIDTH_PX,
    supersample: int = 1,
) -> BlurKernels:
    """Spectral kernel and design-wavelength spatial PSF for ``code``.

    ``per_band=True`` additionally stores one PSF per grid wavelength, all
    padded to a common size; ``blur_cube`` then uses them band by band.
    """
    wl = np.asarray(wavelengths, dtype=np.float64)
    spec = spectral_kernel(code, params, wl)
    psf = spatial_psf(code, params, None, max_halfwidth_px, supersample)
    bands = None
    if per_band:
        stack = [spatial_psf(code, params, lam, max_halfwidth_px, supersample) for lam in wl]
        size = max(p.shape[0] for p in stack)
        bands = np.zeros((wl.size, size, size))
        for j, p in enumerate(stack):
            o = (size - p.shape[0]) // 2
            bands[j, o:o + p.shape[0], o:o + p.shape[1]] = p
    return BlurKernels(spec, psf, wl, bands)


def blur_spectrum(profile, kernel) -> np.ndarray:
    """Linear ``same``-size convolution of a 1-D profile with a centred kernel."""
    profile = np.asarray(profile, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.size == 1:
        return profile * kernel[0]
    return fftconvolve(profile, kernel, mode="same")


def blur_image(img, psf) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    psf = np.asarray(psf, dtype=np.float64)
    if psf.size == 1:
        return img * psf.flat[0]
    return fftconvolve(img, psf, mode="same")


def blur_cube(cube: HsiCube, kernels: BlurKernels, radiometric: bool = False,
              design_lambda_nm: float = 500.0) -> HsiCube:
    """Apply spectral and then spatial blur to every pixel and band.

    ``radiometric=True`` weights each band by ``(lam0 / lam)^2`` before
    blurring (the ``1 / lam^2`` falloff of the rainbow-plane intensity).
    """
    if kernels.wavelengths.size != cube.nl or not np.allclose(kernels.wavelengths, cube.wavelengths):
        raise ValueError("kernel wavelength grid does not match the cube")
    data = cube.data.astype(np.float64)
    if radiometric:
        data = data * (design_lambda_nm / cube.wavelengths) ** 2
    k = kernels.spectral_kernel
    if k.size > 1:
        data = fftconvolve(data, k[None, None, :], mode="same", axes=2)
    else:
        data = data * k[0]
    if kernels.band_psfs is not None:
        out = np.empty_like(data)
        for j in range(cube.nl):
            out[:, :, j] = blur_image(data[:, :, j], kernels.band_psfs[j])
        data = out
    elif kernels.spatial_psf.size > 1:
        data = fftconvolve(data, kernels.spatial_psf[:, :, None], mode="same", axes=(0, 1))
    else:
        data = data * kernels.spatial_psf.flat[0]
    if not cube.signed:
        # fft round-off can leave -1e-17 residue on non-negative inputs
        data = np.maximum(data, 0.0)
    return HsiCube(data, cube.wavelengths, signed=cube.signed)


def wave_oracle_rainbow(
    code: ApertureCode,
    params: OpticalParams,
    lambda_nm: float,
    samples_per_bit: int = 8,
    grid_len: int | None = None,
    radiometric: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Rainbow-plane intensity of a monochromatic on-axis point source.

    Follows the phasor chain: field ``a(x2)`` behind the aperture, lens
    Fourier transform to the grating plane, first-order grating phase
    ``exp(2j pi v0 x3)``, second lens transform to the rainbow plane.  Both
    transforms are discrete, so the grid is ``dx = pitch / samples_per_bit``
    on the aperture and rainbow planes and ``lam f / (M dx)`` on the grating.
    Returns ``(x4_um, intensity)``.
    """
    if lambda_nm <= 0 or samples_per_bit < 1:
        raise ValueError("lambda_nm and samples_per_bit must be positive")
    a = np.repeat(code.array(), samples_per_bit)
    dx = code.pitch_um / samples_per_bit
    lam_um = lambda_nm * 1e-3
    f_um = params.focal_mm * 1e3
    v0 = params.groove_per_mm * 1e-3  # grooves per um
    shift = v0 * lam_um * f_um
    M = grid_len or int(2 ** np.ceil(np.log2(shift / dx + 2 * a.size + 1)))
    field2 = np.zeros(M, dtype=np.complex128)
    field2[: a.size] = a
    field3 = np.fft.fft(field2)
    x3 = lam_um * f_um * np.fft.fftfreq(M, d=dx)
    field3 *= np.exp(2j * np.pi * v0 * x3)
    field4 = np.fft.fft(field3) / M
    intensity = np.abs(field4) ** 2
    if radiometric:
        intensity /= (lam_um * f_um) ** 2
    x4 = np.arange(M) * dx
    return x4, intensity
