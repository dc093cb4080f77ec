"""Reference methods: budgeted exhaustive DFT search and a discriminative
direct-regression predictor sharing the generative recovery pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError
from .inference import recover_beam
from .model import PROMPT_DB_FLOOR
from .probing import Codebook, uniform_probe_indices
from .sitegen import Dataset
from .training import OptimizerState, adamw_step, full_rsrp_matrix, prompt_db_stats


def exhaustive_select(h: np.ndarray, codebook: Codebook, q: int,
                      noise_snr_db: float | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Probe q uniformly spaced codewords and return the RSRP argmax.
    q = N_w recovers the full-codebook argmax."""
    indices = uniform_probe_indices(q, codebook.n_beams)
    resp = codebook.beams[indices] @ np.asarray(h).conj()
    powers = np.abs(resp) ** 2
    if noise_snr_db is not None:
        if rng is None:
            raise ConfigError("noisy exhaustive selection requires an rng")
        sigma2 = float(np.median(powers)) / 10.0 ** (noise_snr_db / 10.0)
        noise = rng.normal(scale=np.sqrt(sigma2 / 2.0), size=(len(indices), 2))
        powers = np.abs(resp + noise[:, 0] + 1j * noise[:, 1]) ** 2
    return codebook.beams[indices[int(np.argmax(powers))]].copy()


@dataclass(frozen=True)
class DiscriminativeConfig:
    hidden_dims: tuple[int, ...] = ()  # empty: default 2 layers of 4*N_t
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def resolved_hidden(self, n_antennas: int) -> tuple[int, ...]:
        return self.hidden_dims if self.hidden_dims else (4 * n_antennas, 4 * n_antennas)


class DiscriminativePredictor(nn.Module):
    """MLP from a fixed-budget dB-normalized prompt to a (2, N_t) target;
    deterministic one-beam output at inference."""

    def __init__(self, q: int, n_antennas: int, hidden: tuple[int, ...],
                 prompt_mean: float, prompt_std: float, probe_indices: np.ndarray):
        super().__init__()
        self.q = q
        self.n_antennas = n_antennas
        layers: list[nn.Module] = []
        widths = (q, *hidden)
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(w_in, w_out), nn.SiLU()]
        layers.append(nn.Linear(widths[-1], 2 * n_antennas))
        self.net = nn.Sequential(*layers)
        self.register_buffer("prompt_mean", torch.tensor(float(prompt_mean)))
        self.register_buffer("prompt_std", torch.tensor(float(prompt_std)))
        self.register_buffer("probe_indices", torch.from_numpy(probe_indices.astype(np.int64)))

    def features(self, rsrp_full: torch.Tensor) -> torch.Tensor:
        sub = rsrp_full[:, self.probe_indices]
        feats = 10.0 * torch.log10(sub.clamp_min(0.0) + PROMPT_DB_FLOOR)
        return (feats - self.prompt_mean) / self.prompt_std

    def forward(self, rsrp_full: torch.Tensor) -> torch.Tensor:
        out = self.net(self.features(rsrp_full))
        return out.view(-1, 2, self.n_antennas)


def train_discriminative(dataset: Dataset, cfg: DiscriminativeConfig,
                         q: int) -> DiscriminativePredictor:
    """Fit one budget-q regressor on the training split with MSE against the
    angular-domain target rows."""
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    n_t = dataset.n_antennas
    indices = uniform_probe_indices(q, n_t)
    rsrp = full_rsrp_matrix(dataset)
    train_idx = dataset.train_indices
    mean, std = prompt_db_stats(rsrp[train_idx])
    phase, amp = dataset.target_arrays()
    x1 = torch.from_numpy(np.stack([phase[train_idx], amp[train_idx]], axis=1).astype(np.float32))
    c = torch.from_numpy(rsrp[train_idx].astype(np.float32))

    model = DiscriminativePredictor(q, n_t, cfg.resolved_hidden(n_t), mean, std, indices)
    params = [p for _, p in model.named_parameters()]
    opt = OptimizerState.fresh(params)
    n = len(train_idx)
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            pred = model(c[batch])
            loss = ((pred - x1[batch]) ** 2).mean()
            model.zero_grad(set_to_none=True)
            loss.backward()
            grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in params]
            adamw_step(params, grads, opt, cfg.learning_rate, 0.0)
    return model.eval()


def predict_beam(predictor: DiscriminativePredictor, rsrp_full: np.ndarray) -> np.ndarray:
    """Single deterministic beam for one full RSRP vector, recovered through
    the shared constant-modulus pipeline."""
    with torch.no_grad():
        z = predictor(torch.from_numpy(rsrp_full.astype(np.float32)).unsqueeze(0))
    return recover_beam(z[0].numpy())
