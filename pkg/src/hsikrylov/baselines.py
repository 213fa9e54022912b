"""Non-adaptive baselines: Row/Column sketching and Hadamard-multiplexed sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import hadamard

from .cube import HsiCube, cube_from_matrix

PINV_RTOL = 1e-10


@dataclass(frozen=True)
class SketchPair:
    """``Y_row = S_row X`` (``p_row x nl``) and ``Y_col = X S_col`` (``npix x p_col``)."""

    Y_row: np.ndarray
    Y_col: np.ndarray
    S_row: np.ndarray
    S_col: np.ndarray
    nx: int
    ny: int
    wavelengths: np.ndarray
    seed: int

    def __post_init__(self):
        p_row, nl = self.Y_row.shape
        npix, p_col = self.Y_col.shape
        if self.S_row.shape != (p_row, npix) or self.S_col.shape != (nl, p_col):
            raise ValueError("sketch matrices do not match the measurements")
        if min(p_row, p_col) < 1:
            raise ValueError("sketch size must be >= 1")


def gaussian_sketches(npix: int, nl: int, p_row: int, p_col: int, seed: int):
    """``S_row`` (``p_row x npix``) and ``S_col`` (``nl x p_col``), entries ``N(0, 1) / sqrt(p)``."""
    rng = np.random.default_rng(seed)
    S_col = rng.standard_normal((nl, p_col)) / np.sqrt(p_col)
    S_row = rng.standard_normal((p_row, npix)) / np.sqrt(p_row)
    return S_row, S_col


def rowcol_acquire(instr, p: int, seed: int = 0, p_row: int | None = None) -> SketchPair:
    """``p`` sketched images and ``p_row`` (default ``p``) sketched spectra via ``instr``."""
    p_row = p if p_row is None else p_row
    if p < 1 or p_row < 1:
        raise ValueError("sketch size must be >= 1")
    nx, ny, nl = instr.scene.shape
    S_row, S_col = gaussian_sketches(nx * ny, nl, p_row, p, seed)
    Y_col = np.column_stack([instr.image(S_col[:, i]) for i in range(p)])
    Y_row = np.vstack([instr.spectrum(S_row[i]) for i in range(p_row)])
    return SketchPair(Y_row, Y_col, S_row, S_col, nx, ny, instr.scene.wavelengths, seed)


def sketch_exact(X: np.ndarray, p: int, seed: int = 0, p_row: int | None = None,
                 nx: int | None = None, ny: int = 1) -> SketchPair:
    """Noiseless sketches of an explicit matrix."""
    X = np.asarray(X, dtype=np.float64)
    p_row = p if p_row is None else p_row
    S_row, S_col = gaussian_sketches(X.shape[0], X.shape[1], p_row, p, seed)
    return SketchPair(S_row @ X, X @ S_col, S_row, S_col, nx or X.shape[0], ny,
                      np.arange(X.shape[1], dtype=np.float64), seed)


@dataclass(frozen=True)
class RowColEstimate:
    cube: HsiCube
    core_rank: int
    singular_core: bool

    def matrix(self) -> np.ndarray:
        return self.cube.matrix()


def rowcol_recover(sketch: SketchPair, k: int, rtol: float = PINV_RTOL) -> RowColEstimate:
    """Generalised Nystrom estimate ``Y_col pinv(S_row Y_col) Y_row``, truncated to rank ``k``.

    The pseudo-inverse drops singular values below ``rtol * sigma_1``; when
    any are dropped ``singular_core`` is set.
    """
    p_col = sketch.Y_col.shape[1]
    if not 1 <= k <= min(p_col, sketch.Y_row.shape[0]):
        raise ValueError(f"k must lie in [1, {min(p_col, sketch.Y_row.shape[0])}]")
    core = sketch.S_row @ sketch.Y_col
    Uc, sc, Vct = np.linalg.svd(core, full_matrices=False)
    keep = sc > rtol * sc[0] if sc.size and sc[0] > 0 else np.zeros(sc.size, dtype=bool)
    r = int(keep.sum())
    pinv = (Vct[:r].T / sc[:r]) @ Uc[:, :r].T
    Q, Rq = np.linalg.qr(sketch.Y_col)
    M = Rq @ pinv @ sketch.Y_row
    Um, sm, Vmt = np.linalg.svd(M, full_matrices=False)
    k_eff = min(k, sm.size)
    Xk = (Q @ (Um[:, :k_eff] * sm[:k_eff])) @ Vmt[:k_eff]
    cube = cube_from_matrix(Xk, sketch.nx, sketch.ny, sketch.wavelengths, signed=True)
    return RowColEstimate(cube, r, r < sc.size)


def permuted_hadamard(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Row-permuted Sylvester Hadamard matrix of order ``n`` (a power of two) and the permutation."""
    perm = np.random.default_rng(seed).permutation(n)
    return hadamard(n).astype(np.float64)[perm], perm


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def hadamard_acquire_full(instr, seed: int = 0) -> HsiCube:
    """Spectrally Hadamard-multiplexed Nyquist acquisition.

    The band count is zero-padded to ``P = 2^m``; image ``i`` is measured
    with column ``i`` of the permuted ``P x P`` Hadamard matrix restricted to
    the real bands, and ``X = Y H^T / P`` on the padded grid.
    """
    nx, ny, nl = instr.scene.shape
    P = next_pow2(nl)
    H, _ = permuted_hadamard(P, seed)
    Y = np.column_stack([instr.image(H[:nl, i]) for i in range(P)])
    X_pad = Y @ H.T / P
    return cube_from_matrix(X_pad[:, :nl], nx, ny, instr.scene.wavelengths, signed=True)
