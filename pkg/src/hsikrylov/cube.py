"""Hyperspectral cube container, matrix views, synthetic scenes and file I/O.

A cube holds intensities ``data[x, y, band]``.  Its matrix view ``X`` has
``nx * ny`` rows and ``nl`` columns; row ``x + nx * y`` is the spectrum of
pixel ``(x, y)`` (x runs fastest) and column ``j`` is the vectorised image of
band ``j``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter


class CubeFormatError(ValueError):
    """Raised when a cube sidecar or payload is inconsistent."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class HsiCube:
    """Immutable ``nx x ny x nl`` intensity volume on a wavelength grid (nm).

    ``signed=True`` lifts the non-negativity requirement; reconstructions and
    deconvolved cubes use it since neither clamps.
    """

    data: np.ndarray
    wavelengths: np.ndarray
    signed: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if wl.ndim != 1 or wl.size != data.shape[2]:
            raise ValueError(
                f"wavelengths has {wl.size} entries but cube has {data.shape[2]} bands"
            )
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube contains non-finite values")
        if not self.signed and np.any(data < 0):
            raise ValueError("cube intensities must be >= 0 (pass signed=True for signed data)")
        data = data.copy()
        data.setflags(write=False)
        wl = wl.copy()
        wl.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", wl)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def nx(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nl(self) -> int:
        return self.data.shape[2]

    def matrix(self) -> np.ndarray:
        """Matrix view ``X`` of shape ``(nx * ny, nl)``."""
        return cube_to_matrix(self.data)

    def band(self, j: int) -> np.ndarray:
        return self.data[:, :, j]


def cube_to_matrix(data: np.ndarray) -> np.ndarray:
    nx, ny, nl = data.shape
    return np.reshape(data, (nx * ny, nl), order="F")


def matrix_to_cube(X: np.ndarray, nx: int, ny: int) -> np.ndarray:
    X = np.asarray(X)
    if X.shape[0] != nx * ny:
        raise ValueError(f"matrix has {X.shape[0]} rows, expected {nx * ny}")
    return np.reshape(X, (nx, ny, X.shape[1]), order="F")


def image_to_vector(img: np.ndarray) -> np.ndarray:
    return np.reshape(np.asarray(img), -1, order="F")


def vector_to_image(vec: np.ndarray, nx: int, ny: int) -> np.ndarray:
    vec = np.asarray(vec)
    if vec.size != nx * ny:
        raise ValueError(f"vector has {vec.size} entries, expected {nx * ny}")
    return np.reshape(vec, (nx, ny), order="F")


def cube_from_matrix(X: np.ndarray, nx: int, ny: int, wavelengths, signed: bool = True) -> HsiCube:
    return HsiCube(matrix_to_cube(X, nx, ny), wavelengths, signed=signed)


def cube_matvec(cube: HsiCube, spectral_code: np.ndarray) -> np.ndarray:
    """Image ``X @ code`` (shape ``nx x ny``) for a length-``nl`` spectral code."""
    code = np.asarray(spectral_code, dtype=np.float64).ravel()
    if code.size != cube.nl:
        raise ValueError(f"spectral code has length {code.size}, cube has {cube.nl} bands")
    X = cube.matrix().astype(np.float64, copy=False)
    return vector_to_image(X @ code, cube.nx, cube.ny)


def cube_rmatvec(cube: HsiCube, spatial_code: np.ndarray) -> np.ndarray:
    """Spectrum ``X.T @ code`` for an ``nx x ny`` (or flattened) spatial code."""
    code = np.asarray(spatial_code, dtype=np.float64)
    if code.shape == (cube.nx, cube.ny):
        code = image_to_vector(code)
    elif code.size != cube.nx * cube.ny:
        raise ValueError(
            f"spatial code has {code.size} entries, cube has {cube.nx}x{cube.ny} pixels"
        )
    return cube.matrix().astype(np.float64, copy=False).T @ code.ravel()


# -- synthetic scenes ------------------------------------------------------


def _smooth_spectrum(rng: np.random.Generator, wl: np.ndarray) -> np.ndarray:
    span = wl[-1] - wl[0] if wl.size > 1 else 1.0
    spec = np.zeros_like(wl)
    for _ in range(rng.integers(3, 7)):
        center = rng.uniform(wl[0], wl[-1]) if wl.size > 1 else wl[0]
        width = rng.uniform(0.04, 0.25) * span
        spec += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((wl - center) / width) ** 2)
    return spec + 1e-3


def _blob_map(rng: np.random.Generator, nx: int, ny: int) -> np.ndarray:
    field = rng.random((nx, ny))
    sigma = max(1.0, min(nx, ny) / 8.0)
    field = gaussian_filter(field, sigma=sigma, mode="wrap")
    field -= field.min()
    peak = field.max()
    if peak > 0:
        field /= peak
    return field**2 + 1e-3


def synth_lowrank_scene(
    nx: int,
    ny: int,
    nl: int,
    rank: int,
    seed: int = 0,
    noise_floor: float = 0.0,
    wavelengths=None,
) -> HsiCube:
    """Sum of ``rank`` separable (abundance map x spectrum) components.

    Component ``i`` is scaled by ``0.5 ** (i / 2)`` so successive energies
    halve.  A non-zero ``noise_floor`` adds ``noise_floor * max * U(0, 1)``.
    """
    if min(nx, ny, nl) < 1:
        raise ValueError("cube dimensions must be >= 1")
    if rank < 1 or rank > min(nx * ny, nl):
        raise ValueError(f"rank must be in [1, {min(nx * ny, nl)}], got {rank}")
    if not 0.0 <= noise_floor < 1.0:
        raise ValueError("noise_floor must lie in [0, 1)")
    if wavelengths is None:
        wavelengths = np.linspace(400.0, 700.0, nl) if nl > 1 else np.array([550.0])
    wl = np.asarray(wavelengths, dtype=np.float64)
    rng = np.random.default_rng(seed)
    X = np.zeros((nx * ny, nl))
    for i in range(rank):
        amap = image_to_vector(_blob_map(rng, nx, ny))
        spec = _smooth_spectrum(rng, wl)
        scale = 0.5 ** (i / 2) / (np.linalg.norm(amap) * np.linalg.norm(spec))
        X += scale * np.outer(amap, spec)
    if noise_floor > 0:
        X += noise_floor * X.max() * rng.random(X.shape)
    return HsiCube(matrix_to_cube(X, nx, ny), wl)


def two_peak_spectrum(wavelengths, separation_nm: float = 12.0) -> np.ndarray:
    """Two closely spaced narrow peaks on top of a broad hump."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    mid = 0.5 * (wl[0] + wl[-1])
    span = wl[-1] - wl[0]
    narrow = max(2.0, 0.012 * span)
    spec = np.exp(-0.5 * ((wl - (mid - 0.5 * separation_nm)) / narrow) ** 2)
    spec += 0.8 * np.exp(-0.5 * ((wl - (mid + 0.5 * separation_nm)) / narrow) ** 2)
    spec += 0.4 * np.exp(-0.5 * ((wl - (wl[0] + 0.25 * span)) / (0.08 * span)) ** 2)
    return spec


def resolution_chart(n: int = 128, margin: int = 12) -> np.ndarray:
    """Bar-target image in [0, 1]: groups of three bars at shrinking pitch."""
    img = np.full((n, n), 0.1)
    inner = n - 2 * margin
    widths = [6, 4, 3, 2]
    col = margin
    half = n // 2
    for w in widths:
        for b in range(3):
            c0 = col + 2 * b * w
            if c0 + w > margin + inner:
                break
            img[margin:half - 2, c0:c0 + w] = 1.0
            img[c0:c0 + w, half + 2:n - margin] = 1.0
        col += 6 * w + 2
    img[:margin, :] = 0.0
    img[-margin:, :] = 0.0
    img[:, :margin] = 0.0
    img[:, -margin:] = 0.0
    return img


# -- file format -----------------------------------------------------------

_ORDER = "x-fastest,band-major"


def save_cube(cube: HsiCube, path) -> tuple[Path, Path]:
    """Write ``<name>.json`` sidecar and ``<name>.bin`` little-endian f32 payload."""
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "nx": cube.nx,
        "ny": cube.ny,
        "nl": cube.nl,
        "wavelengths_nm": [float(w) for w in cube.wavelengths],
        "dtype": "f32le",
        "order": _ORDER,
    }
    sidecar = base.with_suffix(".json")
    payload = base.with_suffix(".bin")
    sidecar.write_text(json.dumps(header, indent=2))
    payload.write_bytes(np.ravel(cube.data, order="F").astype("<f4").tobytes())
    return sidecar, payload


def load_cube(path) -> HsiCube:
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    sidecar = base.with_suffix(".json")
    payload = base.with_suffix(".bin")
    for p in (sidecar, payload):
        if not p.exists():
            raise FileNotFoundError(f"missing cube file {p}")
    try:
        header = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise CubeFormatError("header", f"invalid JSON ({exc})") from exc
    for key in ("nx", "ny", "nl", "wavelengths_nm", "dtype", "order"):
        if key not in header:
            raise CubeFormatError(key, "missing from sidecar")
    if header["dtype"] != "f32le":
        raise CubeFormatError("dtype", f"unsupported dtype {header['dtype']!r}")
    if header["order"] != _ORDER:
        raise CubeFormatError("order", f"unsupported order {header['order']!r}")
    nx, ny, nl = (int(header[k]) for k in ("nx", "ny", "nl"))
    wl = np.asarray(header["wavelengths_nm"], dtype=np.float64)
    if wl.size != nl:
        raise CubeFormatError("wavelengths", f"{wl.size} entries but nl={nl}")
    raw = payload.read_bytes()
    expected = nx * ny * nl * 4
    if len(raw) != expected:
        raise CubeFormatError("payload", f"payload size {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f4")
    if not np.all(np.isfinite(flat)):
        raise CubeFormatError("payload", "non-finite values")
    data = np.reshape(flat.astype(np.float32), (nx, ny, nl), order="F")
    try:
        return HsiCube(data, wl, signed=bool(np.any(data < 0)))
    except ValueError as exc:
        raise CubeFormatError("wavelengths", str(exc)) from exc
