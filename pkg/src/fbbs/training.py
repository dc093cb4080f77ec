"""Two-stage optimization of the velocity predictor.

Stage I: conditional flow matching along the linear interpolation path,
regressing the instantaneous velocity target X1 - X0.

Stage II: split-consistency self-distillation of the interval-average
velocity. For each sample an interval (r, t) is drawn, an intermediate
point s = (1-kappa)t + kappa*r splits it, and the prediction u(X_r, r, t)
is regressed onto the stop-gradient target
(1-kappa)*u(X_r, r, s) + kappa*u(X_s, s, t) with
X_s = X_r + (s-r)*u(X_r, r, s) computed without gradient recording.
A fraction p of the batch uses r = t; those entries are anchored to the
Stage-I flow-matching target (the boundary condition u(x, t, t) = v(x, t))
since the split target is vacuous at r = t.

The optimizer is decoupled-weight-decay Adam written out explicitly, with
an EMA shadow of the parameters updated every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError
from .model import ModelConfig, VelocityModel, init_parameters, PROMPT_DB_FLOOR
from .checkpoint import save_checkpoint, state_dict_to_arrays
from .probing import stochastic_batch_masks
from .sitegen import Dataset


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 80
    stage1_epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 2e-4
    weight_decay: float = 0.1
    p: float = 0.7  # fraction of r = t entries in Stage II
    p_full: float = 0.8
    budget_set: tuple[int, ...] = (9, 15, 21, 32)
    ema_decay: float = 0.995
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.stage1_epochs < self.max_epochs:
            raise ConfigError("need 0 < stage1_epochs < max_epochs")
        for name in ("p", "p_full", "ema_decay"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")


@dataclass
class OptimizerState:
    m: list[torch.Tensor]
    v: list[torch.Tensor]
    step: int = 0

    @classmethod
    def fresh(cls, params: list[torch.Tensor]) -> "OptimizerState":
        return cls(m=[torch.zeros_like(p) for p in params],
                   v=[torch.zeros_like(p) for p in params])


def adamw_step(params: list[torch.Tensor], grads: list[torch.Tensor],
               state: OptimizerState, lr: float, weight_decay: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update with bias correction, in place."""
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            p.mul_(1.0 - lr * weight_decay)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.add_(m / bc1 / denom, alpha=-lr)


def ema_update(ema: dict[str, torch.Tensor], model: VelocityModel, decay: float) -> None:
    """ema <- decay*ema + (1-decay)*params, elementwise."""
    with torch.no_grad():
        for name, p in model.named_parameters():
            ema[name].mul_(decay).add_(p, alpha=1.0 - decay)


def full_rsrp_matrix(dataset: Dataset) -> np.ndarray:
    """Noiseless full-codebook RSRP for every record; for the DFT codebook
    this equals the squared angular-domain amplitude row."""
    spec = np.fft.fft(dataset.h, norm="ortho", axis=1)
    return np.abs(spec) ** 2


def prompt_db_stats(rsrp: np.ndarray) -> tuple[float, float]:
    feats = 10.0 * np.log10(rsrp + PROMPT_DB_FLOOR)
    return float(feats.mean()), float(feats.std())


def stage1_loss(model: VelocityModel, x1: torch.Tensor, values: torch.Tensor,
                mask: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Conditional flow-matching loss on a batch of targets."""
    b = x1.shape[0]
    t = torch.rand(b, generator=gen, dtype=x1.dtype)
    x0 = torch.randn(x1.shape, generator=gen, dtype=x1.dtype)
    xt = (1.0 - t)[:, None, None] * x0 + t[:, None, None] * x1
    pred = model(xt, t, t, values, mask)
    return ((pred - (x1 - x0)) ** 2).mean()


def stage2_loss(model: VelocityModel, x1: torch.Tensor, values: torch.Tensor,
                mask: torch.Tensor, gen: torch.Generator,
                p_boundary: float) -> torch.Tensor:
    """Split-consistency distillation loss, boundary entries anchored to the
    flow-matching target."""
    b = x1.shape[0]
    dtype = x1.dtype
    u = torch.rand(2, b, generator=gen, dtype=dtype)
    r = torch.minimum(u[0], u[1])
    t = torch.maximum(u[0], u[1])
    boundary = torch.rand(b, generator=gen, dtype=dtype) < p_boundary
    boundary = boundary | (t <= r)
    r = torch.where(boundary, t, r)
    kappa = torch.rand(b, generator=gen, dtype=dtype)
    s = (1.0 - kappa) * t + kappa * r
    x0 = torch.randn(x1.shape, generator=gen, dtype=dtype)
    xr = (1.0 - r)[:, None, None] * x0 + r[:, None, None] * x1

    sq_sum = x1.new_zeros(())
    split = ~boundary
    if split.any():
        idx = split.nonzero(as_tuple=True)[0]
        xr_s, r_s, t_s, s_s = xr[idx], r[idx], t[idx], s[idx]
        v_s, m_s, k_s = values[idx], mask[idx], kappa[idx]
        with torch.no_grad():
            u_rs = model(xr_s, r_s, s_s, v_s, m_s)
            xs = xr_s + (s_s - r_s)[:, None, None] * u_rs
            u_st = model(xs, s_s, t_s, v_s, m_s)
            target = (1.0 - k_s)[:, None, None] * u_rs + k_s[:, None, None] * u_st
        pred = model(xr_s, r_s, t_s, v_s, m_s)
        sq_sum = sq_sum + ((pred - target) ** 2).sum()
    if boundary.any():
        idx = boundary.nonzero(as_tuple=True)[0]
        pred = model(xr[idx], t[idx], t[idx], values[idx], mask[idx])
        sq_sum = sq_sum + ((pred - (x1[idx] - x0[idx])) ** 2).sum()
    return sq_sum / x1.numel()


def train(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
          checkpoint_path: str, loss_csv_path: str | None = None,
          stage1_checkpoint_path: str | None = None) -> VelocityModel:
    """Run the two-stage loop and write an FBBSCKPT file.

    Optionally snapshots the Stage-I (flow-matching teacher) weights to a
    second checkpoint before distillation continues on the same parameters.
    """
    if dataset.n_antennas != model_config.seq_len:
        raise ConfigError(
            f"dataset N_t={dataset.n_antennas} does not match model seq_len={model_config.seq_len}"
        )
    torch.manual_seed(train_config.seed)
    gen = torch.Generator().manual_seed(train_config.seed)
    mask_rng = np.random.Generator(np.random.Philox(train_config.seed ^ 0x5EEDFACE))

    phase, amp = dataset.target_arrays()
    train_idx = dataset.train_indices
    x1_all = torch.from_numpy(
        np.stack([phase[train_idx], amp[train_idx]], axis=1).astype(np.float32)
    )
    rsrp = full_rsrp_matrix(dataset)
    c_all = torch.from_numpy(rsrp[train_idx].astype(np.float32))
    mean, std = prompt_db_stats(rsrp[train_idx])

    model = init_parameters(model_config, train_config.seed)
    model.set_prompt_normalization(mean, std)
    params = [p for _, p in model.named_parameters()]
    opt = OptimizerState.fresh(params)
    ema = {name: p.detach().clone() for name, p in model.named_parameters()}

    q_max = model.q_max
    n_train = len(train_idx)
    history: list[tuple[int, int, int, float]] = []
    step = 0
    for epoch in range(1, train_config.max_epochs + 1):
        stage = 1 if epoch <= train_config.stage1_epochs else 2
        perm = torch.randperm(n_train, generator=gen)
        for start in range(0, n_train, train_config.batch_size):
            batch = perm[start:start + train_config.batch_size]
            x1 = x1_all[batch]
            masks = stochastic_batch_masks(len(batch), train_config.p_full,
                                           list(train_config.budget_set), q_max, mask_rng)
            mask_t = torch.from_numpy(masks.astype(np.float32))
            values = c_all[batch] * mask_t
            if stage == 1:
                loss = stage1_loss(model, x1, values, mask_t, gen)
            else:
                loss = stage2_loss(model, x1, values, mask_t, gen, train_config.p)
            model.zero_grad(set_to_none=True)
            loss.backward()
            grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in params]
            adamw_step(params, grads, opt, train_config.learning_rate,
                       train_config.weight_decay)
            ema_update(ema, model, train_config.ema_decay)
            step += 1
            history.append((epoch, step, stage, float(loss.detach())))
        if epoch == train_config.stage1_epochs and stage1_checkpoint_path is not None:
            _save(stage1_checkpoint_path, model, ema, model_config, mean, std,
                  dataset.amp_scale)

    _save(checkpoint_path, model, ema, model_config, mean, std, dataset.amp_scale)
    if loss_csv_path is not None:
        with open(loss_csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "step", "stage", "loss"])
            for row in history:
                writer.writerow([row[0], row[1], row[2], f"{row[3]:.8f}"])
    return model


def _save(path: str, model: VelocityModel, ema: dict[str, torch.Tensor],
          config: ModelConfig, mean: float, std: float, amp_scale: float) -> None:
    raw = state_dict_to_arrays(model)
    ema_arrays = {name: t.detach().cpu().numpy().astype(np.float32) for name, t in ema.items()}
    save_checkpoint(path, config, mean, std, amp_scale, raw, ema_arrays)
