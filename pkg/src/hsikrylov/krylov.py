"""Lanczos bidiagonalisation with full reorthogonalisation over measurement operators.

Each iteration takes one image ``r_j = X l_j`` and one spectrum
``l_{j+1} = X.T r_j``.  With full reorthogonalisation the recurrences give
``X L = R B`` with ``B`` upper bidiagonal (``alpha`` on the diagonal,
``beta`` above it), and the estimate ``T = R B L.T`` is factored through the
small SVD of ``B``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cube import HsiCube, cube_from_matrix, image_to_vector

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KrylovConfig:
    """``init``: ``"ones"`` (all-ones spatial image), ``"random"`` (Gaussian
    spectral vector) or an explicit vector.  A vector whose length equals the
    pixel count is taken as a spatial image unless ``init_domain`` says
    otherwise; spatial starts cost one extra spectrum measurement."""

    rank: int
    iters: int
    init: object = "ones"
    init_domain: str | None = None
    breakdown_tol: float = 1e-10
    reorth_passes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.iters <= self.rank:
            raise ValueError("iters must exceed rank")
        if self.reorth_passes < 1:
            raise ValueError("reorth_passes must be >= 1")
        if self.init_domain not in (None, "spatial", "spectral"):
            raise ValueError("init_domain must be 'spatial', 'spectral' or None")
        if isinstance(self.init, str) and self.init not in ("ones", "random"):
            raise ValueError("init must be 'ones', 'random' or a vector")


@dataclass
class LowRankFactors:
    spectral_vectors: np.ndarray  # nl x L, columns l_j
    spatial_vectors: np.ndarray  # npix x L, columns r_j
    alphas: np.ndarray
    betas: np.ndarray
    U: np.ndarray  # npix x L, left singular vectors of T
    s: np.ndarray
    V: np.ndarray  # nl x L
    nx: int
    ny: int
    wavelengths: np.ndarray
    rank: int
    counts: dict = field(default_factory=dict)

    @property
    def iters(self) -> int:
        return self.alphas.size

    @property
    def B(self) -> np.ndarray:
        return bidiagonal(self.alphas, self.betas)

    def truncated(self, k: int | None = None):
        k = self.rank if k is None else k
        if not 1 <= k <= self.s.size:
            raise ValueError(f"k must lie in [1, {self.s.size}], got {k}")
        return self.U[:, :k], self.s[:k], self.V[:, :k]

    def matrix(self, k: int | None = None) -> np.ndarray:
        U, s, V = self.truncated(k)
        return (U * s) @ V.T


def bidiagonal(alphas, betas) -> np.ndarray:
    n = len(alphas)
    B = np.diag(np.asarray(alphas, dtype=np.float64))
    if n > 1:
        B[np.arange(n - 1), np.arange(1, n)] = betas[: n - 1]
    return B


def _reorth(v: np.ndarray, Q: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        for i in range(Q.shape[1]):
            v = v - (Q[:, i] @ v) * Q[:, i]
    return v


def _random_orth(rng, n: int, Q: np.ndarray, passes: int) -> np.ndarray | None:
    """Unit vector orthogonal to the columns of ``Q``; ``None`` if they span R^n."""
    if Q.shape[1] >= n:
        return None
    for _ in range(8):
        v = _reorth(rng.standard_normal(n), Q, passes)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            return v / nv
    return None


def lanczos(
    right_mul: Operator,
    left_mul: Operator,
    n_spatial: int,
    n_spectral: int,
    cfg: KrylovConfig,
) -> dict:
    """Run the bidiagonalisation; returns the raw bases and coefficients.

    ``right_mul(l) = X l`` (length ``n_spatial``) and ``left_mul(r) = X.T r``
    (length ``n_spectral``).  On breakdown the offending vector is replaced
    by a seeded random unit vector orthogonal to the basis; if the basis
    already spans its space the run stops early.
    """
    rng = np.random.default_rng(cfg.seed)
    passes = cfg.reorth_passes
    tol = cfg.breakdown_tol
    init = cfg.init
    if isinstance(init, str):
        if init == "ones":
            l1 = np.asarray(left_mul(np.ones(n_spatial)), dtype=np.float64)
        else:
            l1 = rng.standard_normal(n_spectral)
    else:
        vec = np.asarray(init, dtype=np.float64)
        vec = image_to_vector(vec) if vec.ndim == 2 else vec.ravel()
        domain = cfg.init_domain
        if domain is None:
            domain = "spatial" if vec.size == n_spatial and vec.size != n_spectral else "spectral"
        if domain == "spatial":
            if vec.size != n_spatial:
                raise ValueError(f"spatial init has {vec.size} entries, expected {n_spatial}")
            l1 = np.asarray(left_mul(vec), dtype=np.float64)
        else:
            if vec.size != n_spectral:
                raise ValueError(f"spectral init has {vec.size} entries, expected {n_spectral}")
            l1 = vec
    n1 = np.linalg.norm(l1)
    if not np.isfinite(n1) or n1 == 0:
        raise ValueError("initial vector is zero")

    Lb = np.zeros((n_spectral, cfg.iters))
    Rb = np.zeros((n_spatial, cfg.iters))
    alphas, betas = [], []
    Lb[:, 0] = l1 / n1
    breakdowns = 0
    j = 0
    while j < cfg.iters:
        r = np.asarray(right_mul(Lb[:, j]), dtype=np.float64)
        raw = np.linalg.norm(r)
        r = _reorth(r, Rb[:, :j], passes)
        a = np.linalg.norm(r)
        if a <= tol * max(raw, 1e-300):
            breakdowns += 1
            r = _random_orth(rng, n_spatial, Rb[:, :j], passes)
            if r is None:
                break
        else:
            r = r / a
        Rb[:, j] = r
        alphas.append(a)
        if j + 1 == cfg.iters:
            j += 1
            break
        ell = np.asarray(left_mul(Rb[:, j]), dtype=np.float64)
        raw = np.linalg.norm(ell)
        ell = _reorth(ell, Lb[:, : j + 1], passes)
        b = np.linalg.norm(ell)
        if b <= tol * max(raw, 1e-300):
            breakdowns += 1
            ell = _random_orth(rng, n_spectral, Lb[:, : j + 1], passes)
            if ell is None:
                j += 1
                break
        else:
            ell = ell / b
        Lb[:, j + 1] = ell
        betas.append(b)
        j += 1
    return {
        "L": Lb[:, :j],
        "R": Rb[:, :j],
        "alphas": np.asarray(alphas),
        "betas": np.asarray(betas[: max(j - 1, 0)]),
        "breakdowns": breakdowns,
    }


def factorize(raw: dict, nx: int, ny: int, wavelengths, rank: int, counts: dict | None = None) -> LowRankFactors:
    """SVD of ``B`` rotated into the ``R`` and ``L`` bases."""
    B = bidiagonal(raw["alphas"], raw["betas"])
    P, s, Qt = np.linalg.svd(B)
    U = raw["R"] @ P
    V = raw["L"] @ Qt.T
    c = dict(counts or {})
    c["breakdowns"] = raw["breakdowns"]
    return LowRankFactors(
        spectral_vectors=raw["L"], spatial_vectors=raw["R"], alphas=raw["alphas"], betas=raw["betas"],
        U=U, s=s, V=V, nx=nx, ny=ny, wavelengths=np.asarray(wavelengths, dtype=np.float64),
        rank=min(rank, s.size), counts=c,
    )


def krism(instr, cfg: KrylovConfig) -> LowRankFactors:
    """Lanczos driven by an ``Instrument``'s noisy image and spectrum operators."""
    nx, ny, nl = instr.scene.shape
    raw = lanczos(instr.image, instr.spectrum, nx * ny, nl, cfg)
    return factorize(raw, nx, ny, instr.scene.wavelengths, cfg.rank, instr.log.counts())


def lanczos_matrix(X: np.ndarray, cfg: KrylovConfig, nx: int | None = None, ny: int = 1,
                   wavelengths=None) -> LowRankFactors:
    """Exact-operator run on an explicit matrix (test and oracle helper)."""
    X = np.asarray(X, dtype=np.float64)
    m, n = X.shape
    raw = lanczos(lambda v: X @ v, lambda v: X.T @ v, m, n, cfg)
    wl = np.arange(n, dtype=np.float64) if wavelengths is None else wavelengths
    return factorize(raw, nx or m, ny, wl, cfg.rank)


def reconstruct(factors: LowRankFactors, k: int | None = None) -> HsiCube:
    """Signed cube ``U_k S_k V_k^T``; no clamping."""
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    return cube_from_matrix(factors.matrix(k), factors.nx, factors.ny, factors.wavelengths, signed=True)


_BLOCKS = ("spectral_vectors", "spatial_vectors", "alphas", "betas", "U", "s", "V")


def save_factors(factors: LowRankFactors, path) -> tuple[Path, Path]:
    """JSON manifest plus one little-endian f32 payload holding every block."""
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    blocks, offset, chunks = {}, 0, []
    for name in _BLOCKS:
        arr = np.asarray(getattr(factors, name), dtype="<f4")
        blocks[name] = {"shape": list(arr.shape), "offset": offset, "order": "F"}
        raw = np.ravel(arr, order="F").tobytes()
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "nx": factors.nx,
        "ny": factors.ny,
        "wavelengths_nm": [float(w) for w in factors.wavelengths],
        "rank": factors.rank,
        "iters": factors.iters,
        "dtype": "f32le",
        "counts": factors.counts,
        "blocks": blocks,
    }
    jpath, bpath = base.with_suffix(".json"), base.with_suffix(".bin")
    jpath.write_text(json.dumps(manifest, indent=2))
    bpath.write_bytes(b"".join(chunks))
    return jpath, bpath


def load_factors(path) -> LowRankFactors:
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    manifest = json.loads(base.with_suffix(".json").read_text())
    raw = base.with_suffix(".bin").read_bytes()
    arrays = {}
    for name in _BLOCKS:
        meta = manifest["blocks"][name]
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(raw, dtype="<f4", count=count, offset=meta["offset"])
        arrays[name] = np.reshape(flat.astype(np.float64), shape, order="F")
    return LowRankFactors(
        nx=int(manifest["nx"]), ny=int(manifest["ny"]),
        wavelengths=np.asarray(manifest["wavelengths_nm"], dtype=np.float64),
        rank=int(manifest["rank"]), counts=dict(manifest.get("counts", {})), **arrays,
    )
