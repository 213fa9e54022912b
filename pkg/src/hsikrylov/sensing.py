"""Noisy spectrally-coded imager and spatially-coded spectrometer.

``measure_image`` returns ``X @ x`` (an ``nx x ny`` image) and
``measure_spectrum`` returns ``X.T @ x`` (a length-``nl`` spectrum), each
realised as one or two non-negative exposures.  A signed code is split into
``x+ = max(x, 0)`` and ``x- = max(-x, 0)``; each part is scaled to peak 1,
exposed, and the two readings are recombined as ``s+ y+ - s- y-``.

Log kinds: ``"spatial"`` for an image measurement (spectral code in, image
out) and ``"spectral"`` for a spectrum measurement.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cube import HsiCube, image_to_vector, vector_to_image

PHOTON_GAUSS_MIN = 100.0
AUTO_FILL = 0.9


@dataclass(frozen=True)
class NoiseModel:
    """Per-exposure sensor noise.

    ``readout_snr_db=None`` disables readout noise, ``quant_bits=None``
    disables quantisation.  ``full_scale=None`` sets the saturation level of
    each exposure to ``peak / 0.9`` (auto exposure).  Photon counts are
    ``signal / full_scale * full_well``.
    """

    readout_snr_db: float | None = 60.0
    quant_bits: int | None = 12
    photon_noise: bool = True
    full_scale: float | None = None
    seed: int = 0
    full_well: float = 2.0e4

    def __post_init__(self):
        if self.readout_snr_db is not None and not self.readout_snr_db > 0:
            raise ValueError("readout_snr_db must be > 0 (or None to disable)")
        if self.quant_bits is not None and not 4 <= self.quant_bits <= 16:
            raise ValueError("quant_bits must lie in [4, 16] (or None to disable)")
        if self.full_scale is not None and not self.full_scale > 0:
            raise ValueError("full_scale must be > 0")
        if not self.full_well > 0:
            raise ValueError("full_well must be > 0")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "NoiseModel":
        return cls(readout_snr_db=None, quant_bits=None, photon_noise=False, seed=seed)

    @classmethod
    def from_db(cls, noise_db: float, seed: int = 0, photon_noise: bool = True) -> "NoiseModel":
        """``noise_db <= 0`` means a noiseless sensor."""
        if noise_db <= 0:
            return cls.noiseless(seed)
        return cls(readout_snr_db=noise_db, photon_noise=photon_noise, seed=seed)

    @property
    def is_noiseless(self) -> bool:
        return self.readout_snr_db is None and self.quant_bits is None and not self.photon_noise

    def apply(self, signal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        signal = np.asarray(signal, dtype=np.float64)
        if self.is_noiseless:
            return signal.copy()
        peak = float(np.max(signal)) if signal.size else 0.0
        fs = self.full_scale if self.full_scale is not None else peak / AUTO_FILL
        if fs <= 0:
            return signal.copy()
        y = signal
        if self.photon_noise:
            counts = np.clip(signal, 0.0, None) * (self.full_well / fs)
            low = counts < PHOTON_GAUSS_MIN
            noisy = counts + np.sqrt(counts) * rng.standard_normal(counts.shape)
            if np.any(low):
                noisy[low] = rng.poisson(counts[low])
            y = noisy * (fs / self.full_well)
        if self.readout_snr_db is not None:
            sigma = fs / 10 ** (self.readout_snr_db / 20)
            y = y + sigma * rng.standard_normal(y.shape)
        if self.quant_bits is not None:
            q = fs / 2**self.quant_bits
            # mid-rise levels (i + 1/2) q, i = 0 .. 2^b - 1
            idx = np.clip(np.floor(y / q), 0, 2**self.quant_bits - 1)
            y = (idx + 0.5) * q
        return y


def code_checksum(code: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(code, dtype="<f8").tobytes()).hexdigest()[:12]


@dataclass(frozen=True)
class MeasurementRecord:
    index: int
    kind: str
    exposures: int
    seed: int
    checksum: str


@dataclass
class MeasurementLog:
    entries: list[MeasurementRecord] = field(default_factory=list)

    def add(self, kind: str, exposures: int, seed: int, checksum: str) -> MeasurementRecord:
        if kind not in ("spatial", "spectral"):
            raise ValueError(f"unknown measurement kind {kind!r}")
        rec = MeasurementRecord(len(self.entries), kind, exposures, seed, checksum)
        self.entries.append(rec)
        return rec

    def measurements(self, kind: str | None = None) -> int:
        return sum(1 for e in self.entries if kind is None or e.kind == kind)

    def exposures(self, kind: str | None = None) -> int:
        return sum(e.exposures for e in self.entries if kind is None or e.kind == kind)

    def counts(self) -> dict[str, int]:
        return {
            "spatial_measurements": self.measurements("spatial"),
            "spectral_measurements": self.measurements("spectral"),
            "spatial_exposures": self.exposures("spatial"),
            "spectral_exposures": self.exposures("spectral"),
        }

    def extend(self, other: "MeasurementLog") -> None:
        for e in other.entries:
            self.add(e.kind, e.exposures, e.seed, e.checksum)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "kind", "exposures", "seed"])
            for e in self.entries:
                w.writerow([e.index, e.kind, e.exposures, e.seed])
        return path


class Instrument:
    """Noisy measurement operators over a fixed (already blurred) scene.

    Single-writer: every measurement appends to ``log``.  The exposure seed
    is derived from ``(noise.seed, measurement index)`` so a replay of the
    same call sequence is bit-identical.
    """

    def __init__(self, scene: HsiCube, noise: NoiseModel | None = None,
                 log: MeasurementLog | None = None):
        self.scene = scene
        self.noise = noise or NoiseModel.noiseless()
        self.log = log if log is not None else MeasurementLog()
        self._X = scene.matrix().astype(np.float64)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.scene.shape

    def _seed(self) -> int:
        ss = np.random.SeedSequence([int(self.noise.seed), len(self.log.entries)])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def _measure(self, code: np.ndarray, apply_op, kind: str) -> np.ndarray:
        if not np.all(np.isfinite(code)):
            raise ValueError("code contains non-finite values")
        if not np.any(code):
            raise ValueError("zero code cannot be measured")
        seed = self._seed()
        exposures = int(np.any(code > 0)) + int(np.any(code < 0))
        if self.noise.is_noiseless:
            # the split is linear, so the ideal product is the exact answer
            self.log.add(kind, exposures, seed, code_checksum(code))
            return apply_op(code)
        rng = np.random.default_rng(seed)
        out = None
        for sign, part in ((1.0, np.maximum(code, 0.0)), (-1.0, np.maximum(-code, 0.0))):
            s = part.max()
            if s <= 0:
                continue
            y = s * self.noise.apply(apply_op(part / s), rng)
            out = sign * y if out is None else out + sign * y
        self.log.add(kind, exposures, seed, code_checksum(code))
        return out

    def image(self, spectral_code) -> np.ndarray:
        """Noisy ``X @ code`` as a flat length ``nx * ny`` vector."""
        code = np.asarray(spectral_code, dtype=np.float64).ravel()
        if code.size != self.scene.nl:
            raise ValueError(f"spectral code has length {code.size}, scene has {self.scene.nl} bands")
        return self._measure(code, lambda c: self._X @ c, "spatial")

    def spectrum(self, spatial_code) -> np.ndarray:
        """Noisy ``X.T @ code`` for a flat or ``nx x ny`` spatial code."""
        code = np.asarray(spatial_code, dtype=np.float64)
        if code.ndim == 2:
            if code.shape != (self.scene.nx, self.scene.ny):
                raise ValueError(f"spatial code shape {code.shape} does not match the scene")
            code = image_to_vector(code)
        code = code.ravel()
        if code.size != self._X.shape[0]:
            raise ValueError(f"spatial code has {code.size} entries, scene has {self._X.shape[0]} pixels")
        return self._measure(code, lambda c: self._X.T @ c, "spectral")


def measure_image(instr: Instrument, spectral_code) -> np.ndarray:
    """Spectrally-coded image, shape ``nx x ny``."""
    return vector_to_image(instr.image(spectral_code), instr.scene.nx, instr.scene.ny)


def measure_spectrum(instr: Instrument, spatial_code) -> np.ndarray:
    """Spatially-coded spectrum, length ``nl``."""
    return instr.spectrum(spatial_code)


@dataclass(frozen=True)
class Budget:
    m_used: int
    m_used_exposures: int
    m_nyquist: int
    compression: float
    compression_exposures: float
    reduction_factor: float


def m_power(k: int, n12: int, n3: int, a: float = 1.0, b: float = 2.0) -> float:
    """Measurement count ``(a k + b)(N1 N2 + N3)`` of a rank-``k`` power-iteration scheme."""
    return (a * k + b) * (n12 + n3)


def budget(nx: int, ny: int, nl: int, n_image: int, n_spectrum: int,
           exposures_image: int | None = None, exposures_spectrum: int | None = None) -> Budget:
    """Scalar counts for ``n_image`` images and ``n_spectrum`` spectra.

    ``compression`` is ``M_nyquist / M_used`` counting signed measurements;
    ``compression_exposures`` counts physical exposures (defaults to the
    signed counts when exposure tallies are not given).
    """
    if min(nx, ny, nl) < 1 or n_image < 0 or n_spectrum < 0:
        raise ValueError("dimensions must be >= 1 and counts >= 0")
    npix = nx * ny
    m_nyq = npix * nl
    m_used = n_image * npix + n_spectrum * nl
    ei = n_image if exposures_image is None else exposures_image
    es = n_spectrum if exposures_spectrum is None else exposures_spectrum
    m_exp = ei * npix + es * nl
    k = max(n_image, n_spectrum)
    return Budget(
        m_used=m_used,
        m_used_exposures=m_exp,
        m_nyquist=m_nyq,
        compression=m_nyq / m_used if m_used else float("inf"),
        compression_exposures=m_nyq / m_exp if m_exp else float("inf"),
        reduction_factor=k * (1.0 / nl + 1.0 / npix),
    )


def budget_from_log(log: MeasurementLog, nx: int, ny: int, nl: int) -> Budget:
    return budget(nx, ny, nl, log.measurements("spatial"), log.measurements("spectral"),
                  log.exposures("spatial"), log.exposures("spectral"))
