"""Analytic-oracle invariant suite, runnable without a test framework.

Every check is against a closed-form or independently computed value:
unitarity, norms, exact round trips, the interval-split identity, an
affine-field integration oracle, finite-difference gradients on a
miniature double-precision model, and a hand-computed optimizer step.
"""

from __future__ import annotations

import numpy as np
import torch

from .inference import recover_beam
from .model import ModelConfig, init_parameters
from .probing import uniform_probe_indices
from .signalcore import ArrayGeometry, dft, idft, mrt_beamformer, steering_vector
from .sitegen import target_sample
from .training import OptimizerState, adamw_step


def _check_dft_unitarity() -> tuple[bool, str]:
    rng = np.random.Generator(np.random.Philox(7))
    worst = 0.0
    for n in (4, 32):
        for _ in range(50):
            x = rng.normal(size=n) + 1j * rng.normal(size=n)
            worst = max(worst, float(np.max(np.abs(idft(dft(x)) - x))))
            worst = max(worst, abs(np.linalg.norm(dft(x)) - np.linalg.norm(x)))
    return worst <= 1e-12, f"max round-trip/Parseval error {worst:.2e}"


def _check_steering_norms() -> tuple[bool, str]:
    rng = np.random.Generator(np.random.Philox(8))
    geom = ArrayGeometry(32)
    worst = max(
        abs(np.linalg.norm(steering_vector(phi, geom)) - 1.0)
        for phi in rng.uniform(-np.pi, np.pi, size=1000)
    )
    return worst <= 1e-12, f"max norm deviation {worst:.2e}"


def _check_mrt_round_trip() -> tuple[bool, str]:
    rng = np.random.Generator(np.random.Philox(9))
    worst = 0.0
    for _ in range(1000):
        h = rng.normal(size=16) + 1j * rng.normal(size=16)
        w_ref = mrt_beamformer(h)
        for s in (1e-3, 1.0, 1e3):
            ts = target_sample(h, s)
            w = recover_beam(np.stack([ts.phase_row, ts.amp_row]))
            worst = max(worst, float(np.max(np.abs(w - w_ref))))
    return worst <= 1e-9, f"max beam deviation {worst:.2e}"


def _check_split_identity() -> tuple[bool, str]:
    rng = np.random.Generator(np.random.Philox(10))
    worst = 0.0
    for _ in range(200):
        r, s, t = np.sort(rng.uniform(size=3))
        if t - r < 1e-6:
            continue
        kappa = (t - s) / (t - r)
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        lhs = (t - r) * ((1 - kappa) * a + kappa * b)
        rhs = (s - r) * a + (t - s) * b
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst <= 1e-12, f"max identity residual {worst:.2e}"


def _check_affine_interval_update() -> tuple[bool, str]:
    # field v(x, tau) = a + b*tau; trajectory x(t) = x(r) + a(t-r) + b(t^2-r^2)/2
    rng = np.random.Generator(np.random.Philox(11))
    worst = 0.0
    for _ in range(200):
        a = rng.normal(size=4)
        b = rng.normal(size=4)
        x_r = rng.normal(size=4)
        r, t = np.sort(rng.uniform(size=2))
        avg = a + b * (r + t) / 2.0
        x_t_update = x_r + (t - r) * avg
        x_t_exact = x_r + a * (t - r) + b * (t * t - r * r) / 2.0
        worst = max(worst, float(np.max(np.abs(x_t_update - x_t_exact))))
    return worst <= 1e-10, f"max trajectory error {worst:.2e}"


def _check_gradients() -> tuple[bool, str]:
    cfg = ModelConfig(embed_dim=16, n_blocks=1, n_heads=2, seq_len=8, cond_dim=16)
    model = init_parameters(cfg, seed=3, dtype=torch.float64)
    # break the exact zeros of the fresh init so gradients probe real paths
    gen = torch.Generator().manual_seed(4)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    x = torch.randn((2, 2, 8), generator=gen, dtype=torch.float64)
    values = torch.rand((2, 8), generator=gen, dtype=torch.float64)
    mask = torch.ones((2, 8), dtype=torch.float64)
    r = torch.tensor([0.2, 0.6], dtype=torch.float64)
    t = torch.tensor([0.7, 0.9], dtype=torch.float64)

    def loss_fn():
        return (model(x, r, t, values, mask) ** 2).sum()

    loss = loss_fn()
    model.zero_grad(set_to_none=True)
    loss.backward()
    params = [p for p in model.parameters() if p.requires_grad]
    flat_sizes = [p.numel() for p in params]
    total = sum(flat_sizes)
    rng = np.random.Generator(np.random.Philox(12))
    coords = rng.choice(total, size=100, replace=False)
    eps = 1e-5
    worst = 0.0
    for c in coords:
        acc = 0
        for p in params:
            if c < acc + p.numel():
                local = c - acc
                with torch.no_grad():
                    flat = p.view(-1)
                    orig = float(flat[local])
                    flat[local] = orig + eps
                    up = float(loss_fn())
                    flat[local] = orig - eps
                    down = float(loss_fn())
                    flat[local] = orig
                fd = (up - down) / (2 * eps)
                ad = float(p.grad.view(-1)[local])
                rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-8)
                worst = max(worst, rel)
                break
            acc += p.numel()
    return worst < 1e-4, f"max relative gradient error {worst:.2e}"


def _check_adamw_oracle() -> tuple[bool, str]:
    p = torch.tensor([1.0], dtype=torch.float64)
    state = OptimizerState.fresh([p])
    adamw_step([p], [torch.tensor([1.0], dtype=torch.float64)], state, lr=0.1, weight_decay=0.0)
    # bias-corrected mhat = vhat = 1 -> p = 1 - 0.1/(1 + 1e-8)
    err1 = abs(float(p) - (1.0 - 0.1 / (1.0 + 1e-8)))
    p2 = torch.tensor([1.0], dtype=torch.float64)
    state2 = OptimizerState.fresh([p2])
    adamw_step([p2], [torch.tensor([0.0], dtype=torch.float64)], state2, lr=0.1, weight_decay=0.1)
    err2 = abs(float(p2) - 0.99)
    worst = max(err1, err2)
    return worst <= 1e-9, f"max optimizer-step error {worst:.2e}"


def _check_probe_indices() -> tuple[bool, str]:
    ok = (list(uniform_probe_indices(4, 8)) == [0, 2, 4, 6]
          and list(uniform_probe_indices(3, 64)) == [0, 21, 42])
    return ok, "exact index sets"


CHECKS = [
    ("dft_unitarity", _check_dft_unitarity),
    ("steering_vector_norms", _check_steering_norms),
    ("mrt_round_trip", _check_mrt_round_trip),
    ("split_consistency_identity", _check_split_identity),
    ("affine_field_interval_update", _check_affine_interval_update),
    ("gradient_finite_difference", _check_gradients),
    ("adamw_single_step", _check_adamw_oracle),
    ("uniform_probe_indices", _check_probe_indices),
]


def run_selftest() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        ok, detail = fn()
        results.append((name, ok, detail))
    return results
