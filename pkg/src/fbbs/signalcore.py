"""Complex-vector and spectral primitives: ULA steering vectors, unitary DFT,
MRT beamforming and gain metrics.

All functions are pure and operate on 1-D numpy arrays of complex128.
The DFT convention is unitary (1/sqrt(N) both directions) so round trips
and Parseval are exact to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChannel, DimensionError, InvalidAngle


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: element count and spacing in wavelengths."""

    n_antennas: int
    spacing_ratio: float = 0.5

    def __post_init__(self):
        if self.n_antennas < 2:
            raise ValueError(f"n_antennas must be >= 2, got {self.n_antennas}")
        if self.spacing_ratio <= 0:
            raise ValueError(f"spacing_ratio must be > 0, got {self.spacing_ratio}")


def steering_vector(phi: float, geom: ArrayGeometry) -> np.ndarray:
    """Unit-norm ULA steering vector for azimuth angle phi (radians).

    Entry n is exp(j * n * 2*pi * (d/lambda) * sin(phi)) / sqrt(N_t).
    """
    if not math.isfinite(phi):
        raise InvalidAngle(f"non-finite azimuth angle: {phi}")
    n = np.arange(geom.n_antennas)
    phase = 2.0 * np.pi * geom.spacing_ratio * np.sin(phi)
    return np.exp(1j * n * phase) / np.sqrt(geom.n_antennas)


def dft(x: np.ndarray) -> np.ndarray:
    """Unitary DFT of a complex vector."""
    return np.fft.fft(np.asarray(x, dtype=np.complex128), norm="ortho")


def idft(x: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT; exact inverse of :func:`dft`."""
    return np.fft.ifft(np.asarray(x, dtype=np.complex128), norm="ortho")


def mrt_beamformer(h: np.ndarray) -> np.ndarray:
    """Constant-modulus MRT beam: phase-align with the channel.

    Entries with h[n] == 0 get phase 0 (np.angle(0) == 0), so the map is
    total on all channels.
    """
    h = np.asarray(h, dtype=np.complex128)
    return np.exp(1j * np.angle(h)) / np.sqrt(h.shape[0])


def beam_gain(h: np.ndarray, w: np.ndarray) -> float:
    """|h^H w|^2 for a single channel/beam pair."""
    h = np.asarray(h)
    w = np.asarray(w)
    if h.shape != w.shape:
        raise DimensionError(f"channel/beam length mismatch: {h.shape} vs {w.shape}")
    return float(np.abs(np.vdot(h, w)) ** 2)


def normalized_gain_db(h: np.ndarray, w: np.ndarray) -> float:
    """Beamforming gain of w relative to the MRT beam, in dB (<= 0)."""
    ref = beam_gain(h, mrt_beamformer(h))
    if ref <= 0.0:
        raise DegenerateChannel("zero channel has no MRT reference gain")
    return 10.0 * math.log10(beam_gain(h, w) / ref)
