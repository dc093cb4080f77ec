"""DFT probing codebook, RSRP measurement, budgeted probe-index selection
and the budget-aware stochastic masking used to build training batches.

RSRP is kept in linear power with transmit power normalized to 1. Noise in
the noisy mode is a complex circular Gaussian added to each per-beam
observation; its variance is calibrated from the median noiseless power
and the target SNR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyMask
from .signalcore import ArrayGeometry


@dataclass(frozen=True)
class Codebook:
    """Set of constant-modulus probing beams, one per row."""

    beams: np.ndarray  # (n_beams, n_antennas) complex128

    @property
    def n_beams(self) -> int:
        return self.beams.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.beams.shape[1]


@dataclass(frozen=True)
class Prompt:
    """Full-length RSRP vector with a binary availability mask.

    values[i] is zero wherever mask[i] is zero, so two prompts built from
    measurements that differ only at masked positions compare equal.
    """

    values: np.ndarray  # (q_max,) float64, linear power, masked entries 0
    mask: np.ndarray  # (q_max,) float64 in {0, 1}

    @property
    def q_active(self) -> int:
        return int(self.mask.sum())


def dft_codebook(geom: ArrayGeometry) -> Codebook:
    """N_t orthonormal single-lobe DFT beams; beam k entry n is
    exp(j*2*pi*k*n/N_t)/sqrt(N_t)."""
    n = geom.n_antennas
    k = np.arange(n)[:, None]
    idx = np.arange(n)[None, :]
    beams = np.exp(2j * np.pi * k * idx / n) / np.sqrt(n)
    return Codebook(beams=beams)


def measure_rsrp(
    h: np.ndarray,
    cb: Codebook,
    snr_db: float | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Per-beam received power |h^H w_i|^2, optionally with complex
    observation noise calibrated to snr_db via the median noiseless power."""
    h = np.asarray(h, dtype=np.complex128)
    resp = cb.beams @ h.conj()  # h^H w_i for every codeword
    if snr_db is None:
        return np.abs(resp) ** 2
    if rng is None:
        raise ConfigError("noisy RSRP measurement requires an rng")
    sigma2 = float(np.median(np.abs(resp) ** 2)) / 10.0 ** (snr_db / 10.0)
    noise = rng.normal(scale=np.sqrt(sigma2 / 2.0), size=(resp.shape[0], 2))
    return np.abs(resp + noise[:, 0] + 1j * noise[:, 1]) ** 2


def uniform_probe_indices(q: int, q_max: int) -> np.ndarray:
    """Budget-q probing indices spread uniformly over the codebook grid:
    floor(j * q_max / q) for j = 0..q-1. Always starts at 0, strictly
    increasing."""
    if not 1 <= q <= q_max:
        raise ConfigError(f"probe budget {q} outside [1, {q_max}]")
    return (np.arange(q) * q_max) // q


def make_prompt(c: np.ndarray, indices: np.ndarray) -> Prompt:
    """Mask a full RSRP vector down to the given probing indices."""
    c = np.asarray(c, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size == 0:
        raise EmptyMask("prompt needs at least one active probing index")
    if indices.min() < 0 or indices.max() >= c.shape[0]:
        raise ConfigError("probing index out of range")
    mask = np.zeros(c.shape[0])
    mask[indices] = 1.0
    return Prompt(values=c * mask, mask=mask)


def stochastic_batch_masks(
    batch_size: int,
    p_full: float,
    budget_set: list[int],
    q_max: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batch of availability masks: floor(p_full*B) all-ones anchors placed
    at random slots, the rest uniformly spaced masks with budgets drawn
    uniformly from budget_set."""
    if len(budget_set) == 0:
        raise ConfigError("budget_set must be nonempty")
    for q in budget_set:
        if not 1 <= q <= q_max:
            raise ConfigError(f"budget {q} outside [1, {q_max}]")
    n_full = int(np.floor(p_full * batch_size))
    masks = np.zeros((batch_size, q_max))
    masks[:n_full] = 1.0
    budgets = rng.choice(np.asarray(budget_set), size=batch_size - n_full)
    for row, q in zip(range(n_full, batch_size), budgets):
        masks[row, uniform_probe_indices(int(q), q_max)] = 1.0
    rng.shuffle(masks, axis=0)
    return masks
