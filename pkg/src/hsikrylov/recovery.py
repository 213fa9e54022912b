"""Deconvolution of measured singular vectors and reconstruction metrics.

All blur operators here are linear ``same``-size convolutions with zero
padding and an odd, centred kernel, matching ``optics.blur_*``.  Frequency
domain solvers therefore work on the padded grid of length ``n + m - 1``
per axis, where the convolution is exactly circular.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

RSNR_CAP_DB = 300.0


class ConvOperator:
    """``same``-size zero-padded convolution with a fixed kernel, any dimension."""

    def __init__(self, kernel: np.ndarray, shape: tuple[int, ...]):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != len(shape):
            raise ValueError("kernel and signal dimensionality differ")
        if any(s % 2 == 0 for s in kernel.shape):
            raise ValueError("kernel sides must be odd so the kernel is centred")
        self.kernel = kernel
        self.shape = tuple(shape)
        self.grid = tuple(n + m - 1 for n, m in zip(self.shape, kernel.shape))
        self.offset = tuple(m // 2 for m in kernel.shape)
        self.axes = tuple(range(kernel.ndim))
        self.K = np.fft.rfftn(kernel, s=self.grid, axes=self.axes)
        self._inner = tuple(slice(c, c + n) for c, n in zip(self.offset, self.shape))
        self._head = tuple(slice(0, n) for n in self.shape)

    def _embed_head(self, x):
        z = np.zeros(self.grid)
        z[self._head] = x
        return z

    def _embed_inner(self, y):
        z = np.zeros(self.grid)
        z[self._inner] = y
        return z

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = np.fft.irfftn(np.fft.rfftn(self._embed_head(x)) * self.K, s=self.grid, axes=self.axes)
        return z[self._inner]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        z = np.fft.irfftn(np.fft.rfftn(self._embed_inner(y)) * np.conj(self.K), s=self.grid,
                         axes=self.axes)
        return z[self._head]

    def norm_sq(self) -> float:
        """Upper bound on ``||A||^2``: peak of ``|K|^2`` on the padded grid."""
        return float(np.max(np.abs(self.K) ** 2))


def _check_kernel(kernel) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if not np.any(k):
        raise ValueError("all-zero kernel cannot be deconvolved")
    return k


def _wiener(y: np.ndarray, kernel: np.ndarray, nsr: float) -> np.ndarray:
    if nsr < 0:
        raise ValueError("nsr must be >= 0")
    if kernel.size == 1:
        k0 = float(kernel.flat[0])
        return y * k0 / (k0 * k0 + nsr)
    op = ConvOperator(_check_kernel(kernel), y.shape)
    Y = np.fft.rfftn(op._embed_inner(y))
    K = op.K
    denom = np.abs(K) ** 2 + nsr
    with np.errstate(divide="ignore", invalid="ignore"):
        Xf = np.where(denom > 0, Y * np.conj(K) / denom, 0.0)
    return np.fft.irfftn(Xf, s=op.grid, axes=op.axes)[op._head]


def wiener_deconv_1d(y, kernel, nsr: float) -> np.ndarray:
    """``Y conj(K) / (|K|^2 + nsr)`` on the padded grid."""
    y = np.asarray(y, dtype=np.float64).ravel()
    return _wiener(y, np.asarray(kernel, dtype=np.float64).ravel(), nsr)


def wiener_deconv_2d(img, psf, nsr: float) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    return _wiener(img, np.asarray(psf, dtype=np.float64), nsr)


def estimate_nsr(y, sigma: float) -> float:
    """Noise-to-signal power ratio ``n sigma^2 / ||y||^2``."""
    y = np.asarray(y, dtype=np.float64)
    e = float(np.sum(y**2))
    return y.size * sigma**2 / e if e > 0 else 0.0


def forward_diff(x: np.ndarray) -> np.ndarray:
    """First difference with replicate boundary (last entry 0)."""
    d = np.zeros_like(x)
    d[:-1] = x[1:] - x[:-1]
    return d


def forward_diff_adjoint(d: np.ndarray) -> np.ndarray:
    out = np.zeros_like(d)
    out[1:] += d[:-1]
    out[:-1] -= d[:-1]
    return out


def l2_smooth_normal_op(kernel, n: int, eta: float):
    """Returns ``(apply M, A)`` with ``M = A^T A + 2 eta D^T D``."""
    A = ConvOperator(_check_kernel(np.asarray(kernel, dtype=np.float64).ravel()), (n,))

    def apply(x):
        return A.adjoint(A.forward(x)) + 2.0 * eta * forward_diff_adjoint(forward_diff(x))

    return apply, A


def l2_smooth_deconv(y, kernel, eta: float, cg_tol: float = 1e-10, cg_maxiter: int = 2000) -> np.ndarray:
    """Minimise ``1/2 ||y - a * v||^2 + eta ||D v||^2`` by conjugate gradients.

    The normal equations are ``(A^T A + 2 eta D^T D) v = A^T y``; ``cg_tol``
    bounds their residual relative to ``||A^T y||``.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    y = np.asarray(y, dtype=np.float64).ravel()
    apply, A = l2_smooth_normal_op(kernel, y.size, eta)
    rhs = A.adjoint(y)
    if not np.any(rhs):
        return np.zeros_like(y)
    op = LinearOperator((y.size, y.size), matvec=apply, dtype=np.float64)
    x, info = cg(op, rhs, rtol=cg_tol, atol=0.0, maxiter=cg_maxiter)
    if info < 0:
        raise RuntimeError("conjugate gradient breakdown")
    return x


# -- total variation ---------------------------------------------------------


def _grad2(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:-1, :] = u[1:, :] - u[:-1, :]
    gy[:, :-1] = u[:, 1:] - u[:, :-1]
    return gx, gy


def _div2(px, py):
    """Negative adjoint of ``_grad2``."""
    d = np.zeros_like(px)
    d[:-1, :] += px[:-1, :]
    d[1:, :] -= px[:-1, :]
    d[:, :-1] += py[:, :-1]
    d[:, 1:] -= py[:, :-1]
    return d


def tv_norm(u: np.ndarray) -> float:
    gx, gy = _grad2(u)
    return float(np.sum(np.sqrt(gx**2 + gy**2)))


def tv_prox(f: np.ndarray, lam: float, iters: int = 30, p=None):
    """``argmin_u 1/2 ||u - f||^2 + lam TV(u)`` by Chambolle's dual projection.

    Returns ``(u, (px, py))`` so the dual variable can warm-start the next call.
    """
    if lam <= 0:
        return f.copy(), p
    px, py = (np.zeros_like(f), np.zeros_like(f)) if p is None else p
    tau = 0.125
    for _ in range(iters):
        gx, gy = _grad2(_div2(px, py) - f / lam)
        mag = 1.0 + tau * np.sqrt(gx**2 + gy**2)
        px = (px + tau * gx) / mag
        py = (py + tau * gy) / mag
    return f - lam * _div2(px, py), (px, py)


def tv_objective(y, A: ConvOperator, x, weight: float) -> float:
    r = A.forward(x) - y
    return 0.5 * float(np.sum(r**2)) + weight * tv_norm(x)


def tv_deconv_2d(img, psf, weight: float, iters: int = 100, inner_iters: int = 30,
                 return_history: bool = False):
    """Proximal-gradient minimisation of ``1/2 ||y - p * x||^2 + weight TV(x)``.

    Step ``1 / ||p||^2``; the TV prox is solved inexactly, so a step that
    would raise the objective is rejected (monotone variant) and the next
    prox runs with a warm-started dual.
    """
    y = np.asarray(img, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("image must be 2-D")
    if weight < 0 or iters < 1:
        raise ValueError("weight must be >= 0 and iters >= 1")
    A = ConvOperator(_check_kernel(psf), y.shape)
    t = 1.0 / A.norm_sq()
    x = y.copy()
    obj = tv_objective(y, A, x, weight)
    hist = [obj]
    dual = None
    for _ in range(iters):
        z = x - t * A.adjoint(A.forward(x) - y)
        cand, dual = tv_prox(z, t * weight, inner_iters, dual)
        c_obj = tv_objective(y, A, cand, weight)
        if c_obj <= obj:
            x, obj = cand, c_obj
        hist.append(obj)
    return (x, np.asarray(hist)) if return_history else x


# -- metrics -----------------------------------------------------------------


def rsnr(x, xhat) -> float:
    """``20 log10(||x|| / ||x - xhat||)`` in dB, capped at 300 dB."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xhat.shape}")
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ValueError("reference signal is zero")
    err = np.linalg.norm(x - xhat)
    if err == 0:
        return RSNR_CAP_DB
    return float(min(RSNR_CAP_DB, 20 * np.log10(nx / err)))


def sam(x, xhat) -> float:
    """Angle between two vectors in degrees."""
    x = np.asarray(x, dtype=np.float64).ravel()
    xhat = np.asarray(xhat, dtype=np.float64).ravel()
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xhat.shape}")
    nx, nh = np.linalg.norm(x), np.linalg.norm(xhat)
    if nx == 0 or nh == 0:
        raise ValueError("SAM needs two nonzero vectors")
    c = np.clip(np.dot(x, xhat) / (nx * nh), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def align_sign(ref, est) -> np.ndarray:
    """``est`` or ``-est``, whichever correlates positively with ``ref``."""
    est = np.asarray(est, dtype=np.float64)
    return -est if np.dot(np.ravel(ref), np.ravel(est)) < 0 else est


def sam_aligned(ref, est) -> float:
    return sam(ref, align_sign(ref, est))


# -- factor deconvolution ----------------------------------------------------


@dataclass(frozen=True)
class DeconvConfig:
    method: str = "wiener"  # wiener | l2_smooth | tv | none
    wiener_nsr: float = 1e-3
    eta: float = 1.0
    tv_weight: float = 1e-3
    tv_iters: int = 100
    cg_tol: float = 1e-10
    cg_maxiter: int = 2000

    def __post_init__(self):
        if self.method not in ("wiener", "l2_smooth", "tv", "none"):
            raise ValueError(f"unknown deconvolution method {self.method!r}")
        if min(self.wiener_nsr, self.eta, self.tv_weight, self.cg_tol) < 0:
            raise ValueError("weights must be >= 0")
        if self.tv_iters < 1 or self.cg_maxiter < 1:
            raise ValueError("iteration counts must be >= 1")


def deconv_spectrum(v, kernel, cfg: DeconvConfig) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if cfg.method == "none":
        return v
    if np.size(kernel) == 1:
        return v / float(np.ravel(kernel)[0])
    if cfg.method == "wiener":
        return wiener_deconv_1d(v, kernel, cfg.wiener_nsr)
    if cfg.method == "l2_smooth":
        return l2_smooth_deconv(v, kernel, cfg.eta, cfg.cg_tol, cfg.cg_maxiter)
    raise ValueError("tv deconvolution is only defined for images")


def deconv_image(img, psf, cfg: DeconvConfig) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if cfg.method == "none":
        return img
    if np.size(psf) == 1:
        return img / float(np.ravel(psf)[0])
    if cfg.method == "wiener":
        return wiener_deconv_2d(img, psf, cfg.wiener_nsr)
    if cfg.method == "tv":
        return tv_deconv_2d(img, psf, cfg.tv_weight, cfg.tv_iters)
    raise ValueError("l2_smooth deconvolution is only defined for spectra")


def deconv_factors(factors, kernels, spectral: DeconvConfig | None = None,
                   spatial: DeconvConfig | None = None, k: int | None = None):
    """Deblur the top-``k`` singular vectors; singular values are kept.

    Vectors are not renormalised, so ``U' S V'^T`` estimates the unblurred
    matrix.  Returns a new factor set truncated to ``k`` triplets.
    """
    from .cube import image_to_vector, vector_to_image

    spectral = spectral or DeconvConfig("wiener")
    spatial = spatial or DeconvConfig("wiener")
    U, s, V = factors.truncated(k)
    U2 = np.empty_like(U)
    V2 = np.empty_like(V)
    for i in range(s.size):
        V2[:, i] = deconv_spectrum(V[:, i], kernels.spectral_kernel, spectral)
        img = vector_to_image(U[:, i], factors.nx, factors.ny)
        U2[:, i] = image_to_vector(deconv_image(img, kernels.spatial_psf, spatial))
    return replace(factors, U=U2, s=s.copy(), V=V2, rank=s.size)


METRIC_COLUMNS = ("scene", "method", "k", "L", "noise_db", "rsnr_db", "sam_deg", "exposures", "compression")


def write_metrics_csv(path, rows) -> Path:
    """``rows``: iterable of dicts keyed by ``METRIC_COLUMNS``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in METRIC_COLUMNS})
    return path
