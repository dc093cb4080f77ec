"""Online beam synthesis: few-step latent evolution, constant-modulus beam
recovery, brainstorming over independent priors, and RSRP-based selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError
from .model import VelocityModel
from .probing import Prompt


@dataclass(frozen=True)
class InferenceConfig:
    steps: int = 1
    brainstorm: int = 8
    probe_budget: int = 16
    seed: int = 0
    use_ema: bool = True
    selection_noise_snr_db: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.brainstorm < 1:
            raise ConfigError("brainstorm must be >= 1")


def evolve(model: VelocityModel, z0: torch.Tensor, values: torch.Tensor,
           mask: torch.Tensor, steps: int, instantaneous: bool = False) -> torch.Tensor:
    """T explicit interval updates z <- z + u(z, tau_r, tau_t) * Delta.

    With instantaneous=True the predictor is queried at (tau_r, tau_r),
    i.e. plain Euler integration of the instantaneous field (the Stage-I
    teacher's sampling mode). Exactly `steps` forward passes either way.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    delta = 1.0 / steps
    z = z0
    with torch.no_grad():
        for n in range(steps):
            tau_r = torch.full((z.shape[0],), n * delta, dtype=z.dtype)
            tau_t = tau_r if instantaneous else tau_r + delta
            z = z + model(z, tau_r, tau_t, values, mask) * delta
    return z


def recover_beam(z1: np.ndarray) -> np.ndarray:
    """Map a terminal (2, N_t) latent to a constant-modulus beam:
    w[n] = exp(j*angle(idft(amp * exp(j*phase))[n])) / sqrt(N_t)."""
    phase_row = np.asarray(z1[0], dtype=np.float64)
    amp_row = np.asarray(z1[1], dtype=np.float64)
    g = np.fft.ifft(amp_row * np.exp(1j * phase_row), norm="ortho")
    return np.exp(1j * np.angle(g)) / np.sqrt(phase_row.shape[0])


def sample_priors(m: int, n_channels: int, seq_len: int, gen: torch.Generator) -> torch.Tensor:
    return torch.randn((m, n_channels, seq_len), generator=gen)


def brainstorm(model: VelocityModel, prompt: Prompt, m: int, steps: int,
               gen: torch.Generator, instantaneous: bool = False) -> list[np.ndarray]:
    """M candidate beams from independent standard-normal priors, evolved
    under the same prompt. Candidate order follows prior draw order, so
    prefixes of a longer run are exactly a shorter run."""
    if m < 1:
        raise ConfigError("brainstorm count must be >= 1")
    cfg = model.config
    z0 = sample_priors(m, cfg.n_channels, cfg.seq_len, gen).to(next(model.parameters()).dtype)
    values = torch.from_numpy(np.broadcast_to(prompt.values, (m, prompt.values.shape[0])).copy()).to(z0.dtype)
    mask = torch.from_numpy(np.broadcast_to(prompt.mask, (m, prompt.mask.shape[0])).copy()).to(z0.dtype)
    z1 = evolve(model, z0, values, mask, steps, instantaneous=instantaneous)
    z1 = z1.cpu().numpy()
    return [recover_beam(z1[i]) for i in range(m)]


def select_beam(h: np.ndarray, candidates: list[np.ndarray],
                noise_snr_db: float | None = None,
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, int]:
    """Probe every candidate's received power and return the argmax beam
    (ties broken by lowest index). Noisy probing uses the same median-
    calibrated complex-noise convention as codebook RSRP."""
    if len(candidates) == 0:
        raise ConfigError("candidate set must be nonempty")
    resp = np.array([np.vdot(h, w) for w in candidates])
    powers = np.abs(resp) ** 2
    if noise_snr_db is not None:
        if rng is None:
            raise ConfigError("noisy selection requires an rng")
        sigma2 = float(np.median(powers)) / 10.0 ** (noise_snr_db / 10.0)
        noise = rng.normal(scale=np.sqrt(sigma2 / 2.0), size=(len(candidates), 2))
        powers = np.abs(resp + noise[:, 0] + 1j * noise[:, 1]) ** 2
    best = int(np.argmax(powers))
    return candidates[best], best
