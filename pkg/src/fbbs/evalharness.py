"""Experiment protocols: gain-vs-overhead, gain-vs-steps, budget
generalization, noisy prompts. Emits CSV rows plus a manifest sidecar.

Evaluation is paired by construction: prior draws are seeded identically
for every (Q, M, T, SNR) combination and brainstorm candidates are
prefix-nested, so increasing M can only add candidates, and method/step
comparisons see the same randomness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError
from .inference import select_beam
from .model import VelocityModel
from .probing import dft_codebook, uniform_probe_indices
from .baselines import DiscriminativePredictor, exhaustive_select, predict_beam
from .signalcore import ArrayGeometry
from .sitegen import Dataset
from .training import full_rsrp_matrix

CSV_HEADER = "method,q,m,steps,snr_db,overhead,mean_gain_db,p10_gain_db,n_users,seed"


@dataclass(frozen=True)
class SweepSpec:
    budgets: tuple[int, ...]
    brainstorm: tuple[int, ...] = (8,)
    steps: tuple[int, ...] = (1,)
    snr_db: tuple[float, ...] | None = None
    n_test_users: int = 512
    seed: int = 0

    def __post_init__(self):
        if not self.budgets or not self.brainstorm or not self.steps:
            raise ConfigError("sweep lists must be nonempty")


@dataclass(frozen=True)
class ResultRow:
    method: str
    q: int
    m: int
    steps: int
    snr_db: float | None
    overhead: int
    mean_gain_db: float
    p10_gain_db: float
    n_users: int
    seed: int

    def csv_line(self) -> str:
        snr = "" if self.snr_db is None else f"{self.snr_db:.1f}"
        return (f"{self.method},{self.q},{self.m},{self.steps},{snr},{self.overhead},"
                f"{self.mean_gain_db:.6f},{self.p10_gain_db:.6f},{self.n_users},{self.seed}")


def write_csv(rows: list[ResultRow], path: str) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(CSV_HEADER + "\n")
        for row in rows:
            f.write(row.csv_line() + "\n")


def write_manifest(path: str, config: dict, checkpoint_paths: dict[str, str]) -> None:
    digests = {}
    for name, ckpt_path in checkpoint_paths.items():
        with open(ckpt_path, "rb") as f:
            digests[name] = hashlib.sha256(f.read()).hexdigest()
    with open(path, "w") as f:
        json.dump({"config": config, "checkpoints": digests}, f, indent=2, sort_keys=True)
        f.write("\n")


def test_users(dataset: Dataset, n_test_users: int) -> np.ndarray:
    test_idx = dataset.test_indices
    if n_test_users > len(test_idx):
        raise ConfigError(
            f"n_test_users={n_test_users} exceeds test split size {len(test_idx)}"
        )
    return test_idx[:n_test_users]


def _probed_rsrp(h_batch: np.ndarray, beams: np.ndarray, indices: np.ndarray,
                 snr_db: float | None, rng: np.random.Generator | None) -> np.ndarray:
    """Full-length prompt values: RSRP measured on the given probe indices
    (noise calibrated from the median probed power per user), zeros elsewhere."""
    n_users, n_t = h_batch.shape
    resp = h_batch.conj() @ beams[indices].T  # (n_users, q)
    powers = np.abs(resp) ** 2
    if snr_db is not None:
        sigma2 = np.median(powers, axis=1, keepdims=True) / 10.0 ** (snr_db / 10.0)
        noise = rng.normal(size=(n_users, len(indices), 2)) * np.sqrt(sigma2 / 2.0)[..., None]
        powers = np.abs(resp + noise[..., 0] + 1j * noise[..., 1]) ** 2
    values = np.zeros((n_users, n_t))
    values[:, indices] = powers
    return values


def _recover_beams(z1: np.ndarray) -> np.ndarray:
    """Vectorized constant-modulus recovery for latents of shape (..., 2, N_t)."""
    spectrum = z1[..., 1, :] * np.exp(1j * z1[..., 0, :])
    g = np.fft.ifft(spectrum, norm="ortho", axis=-1)
    return np.exp(1j * np.angle(g)) / np.sqrt(z1.shape[-1])


def generative_gains(model: VelocityModel, dataset: Dataset, users: np.ndarray,
                     q: int, m_list: tuple[int, ...], steps: int, seed: int,
                     snr_db: float | None = None, instantaneous: bool = False,
                     selection_noise_snr_db: float | None = None,
                     chunk: int = 4096) -> dict[int, np.ndarray]:
    """Normalized gains (dB) per user for every brainstorm count in m_list,
    with prefix-nested priors shared across the m values."""
    geom = ArrayGeometry(dataset.n_antennas)
    beams = dft_codebook(geom).beams
    indices = uniform_probe_indices(q, dataset.n_antennas)
    h = dataset.h[users]
    n_users = len(users)
    noise_rng = np.random.Generator(np.random.Philox(seed)) if snr_db is not None else None
    values = _probed_rsrp(h, beams, indices, snr_db, noise_rng)
    mask = np.zeros(dataset.n_antennas)
    mask[indices] = 1.0

    m_max = max(m_list)
    gen = torch.Generator().manual_seed(seed)
    priors = torch.randn((n_users, m_max, 2, dataset.n_antennas), generator=gen)
    dtype = next(model.parameters()).dtype
    flat = priors.reshape(n_users * m_max, 2, dataset.n_antennas).to(dtype)
    values_t = torch.from_numpy(np.repeat(values, m_max, axis=0)).to(dtype)
    mask_t = torch.from_numpy(mask[None]).to(dtype).expand(n_users * m_max, -1)

    delta = 1.0 / steps
    out = torch.empty_like(flat)
    with torch.no_grad():
        for start in range(0, flat.shape[0], chunk):
            z = flat[start:start + chunk].clone()
            v = values_t[start:start + chunk]
            mk = mask_t[start:start + chunk]
            for n in range(steps):
                tau_r = torch.full((z.shape[0],), n * delta, dtype=dtype)
                tau_t = tau_r if instantaneous else tau_r + delta
                z = z + model(z, tau_r, tau_t, v, mk) * delta
            out[start:start + chunk] = z
    z1 = out.reshape(n_users, m_max, 2, dataset.n_antennas).numpy().astype(np.float64)
    w = _recover_beams(z1)  # (n_users, m_max, N_t)

    resp = np.einsum("un,umn->um", h.conj(), w)
    powers = np.abs(resp) ** 2
    if selection_noise_snr_db is not None:
        sel_rng = np.random.Generator(np.random.Philox(seed ^ 0xC0FFEE))
        sigma2 = np.median(powers, axis=1, keepdims=True) / 10.0 ** (selection_noise_snr_db / 10.0)
        noise = sel_rng.normal(size=(*resp.shape, 2)) * np.sqrt(sigma2 / 2.0)[..., None]
        sel_powers = np.abs(resp + noise[..., 0] + 1j * noise[..., 1]) ** 2
    else:
        sel_powers = powers
    mrt_ref = (np.abs(h).sum(axis=1) ** 2) / dataset.n_antennas

    gains: dict[int, np.ndarray] = {}
    for m in m_list:
        chosen = np.argmax(sel_powers[:, :m], axis=1)
        achieved = powers[np.arange(n_users), chosen]
        gains[m] = 10.0 * np.log10(achieved / mrt_ref)
    return gains


def exhaustive_gains(dataset: Dataset, users: np.ndarray, q: int,
                     snr_db: float | None = None, seed: int = 0) -> np.ndarray:
    geom = ArrayGeometry(dataset.n_antennas)
    cb = dft_codebook(geom)
    rng = np.random.Generator(np.random.Philox(seed)) if snr_db is not None else None
    gains = np.zeros(len(users))
    for i, u in enumerate(users):
        h = dataset.h[u]
        w = exhaustive_select(h, cb, q, noise_snr_db=snr_db, rng=rng)
        ref = (np.abs(h).sum() ** 2) / dataset.n_antennas
        gains[i] = 10.0 * np.log10(float(np.abs(np.vdot(h, w)) ** 2) / ref)
    return gains


def discriminative_gains(predictor: DiscriminativePredictor, dataset: Dataset,
                         users: np.ndarray) -> np.ndarray:
    rsrp = full_rsrp_matrix(dataset)
    gains = np.zeros(len(users))
    for i, u in enumerate(users):
        h = dataset.h[u]
        w = predict_beam(predictor, rsrp[u])
        ref = (np.abs(h).sum() ** 2) / dataset.n_antennas
        gains[i] = 10.0 * np.log10(float(np.abs(np.vdot(h, w)) ** 2) / ref)
    return gains


def _row(method: str, q: int, m: int, steps: int, snr_db: float | None,
         overhead: int, gains: np.ndarray, seed: int) -> ResultRow:
    return ResultRow(method=method, q=q, m=m, steps=steps, snr_db=snr_db,
                     overhead=overhead, mean_gain_db=float(np.mean(gains)),
                     p10_gain_db=float(np.percentile(gains, 10)),
                     n_users=len(gains), seed=seed)


def eval_method(method: str, dataset: Dataset, spec: SweepSpec,
                checkpoints: dict | None = None) -> list[ResultRow]:
    """Per-user pipeline for one method over every (Q, M, T, SNR) combination.

    Overhead accounting: Q+M for generative methods, Q for exhaustive,
    Q+1 for the discriminative baseline (one verification probe), 0 for MRT.
    `checkpoints` maps method name -> VelocityModel, and "discriminative"
    -> {q: DiscriminativePredictor}.
    """
    checkpoints = checkpoints or {}
    users = test_users(dataset, spec.n_test_users)
    snr_list: tuple[float | None, ...] = _snr_list(spec.snr_db)
    rows: list[ResultRow] = []
    if method == "mrt":
        gains = np.zeros(len(users))
        rows.append(_row("mrt", 0, 0, 0, None, 0, gains, spec.seed))
        return rows
    if method == "exhaustive":
        for q in spec.budgets:
            for snr in snr_list:
                gains = exhaustive_gains(dataset, users, q, snr_db=snr, seed=spec.seed)
                rows.append(_row("exhaustive", q, 0, 0, snr, q, gains, spec.seed))
        return rows
    if method == "discriminative":
        predictors = checkpoints.get("discriminative")
        if predictors is None:
            raise ConfigError("discriminative evaluation needs trained predictors")
        for q in spec.budgets:
            if q not in predictors:
                raise ConfigError(f"no discriminative predictor for budget {q}")
            gains = discriminative_gains(predictors[q], dataset, users)
            rows.append(_row("discriminative", q, 0, 0, None, q + 1, gains, spec.seed))
        return rows
    if method in ("fbbs", "flow_teacher"):
        model = checkpoints.get(method)
        if model is None:
            raise ConfigError(f"missing checkpoint for method {method}")
        instantaneous = method == "flow_teacher"
        for q in spec.budgets:
            for steps in spec.steps:
                for snr in snr_list:
                    gains = generative_gains(model, dataset, users, q, tuple(spec.brainstorm),
                                             steps, spec.seed, snr_db=snr,
                                             instantaneous=instantaneous)
                    for m in spec.brainstorm:
                        rows.append(_row(method, q, m, steps, snr, q + m, gains[m], spec.seed))
        return rows
    raise ConfigError(f"unknown method {method}")


def _snr_list(snr_db: tuple[float, ...] | None) -> tuple:
    return (None,) if snr_db is None else tuple(snr_db)


def sweep_budget_generalization(model_sparse: VelocityModel, model_dense: VelocityModel,
                                q_grid: tuple[int, ...], dataset: Dataset,
                                m: int = 8, steps: int = 1, n_test_users: int = 512,
                                seed: int = 0) -> list[ResultRow]:
    """Evaluate both budget-training regimes over the same integer budget
    grid without retraining; paired rows, tagged by method suffix."""
    users = test_users(dataset, n_test_users)
    rows: list[ResultRow] = []
    for tag, model in (("fbbs_sparse", model_sparse), ("fbbs_dense", model_dense)):
        for q in q_grid:
            gains = generative_gains(model, dataset, users, q, (m,), steps, seed)
            rows.append(_row(tag, q, m, steps, None, q + m, gains[m], seed))
    return rows


def eval_noisy_prompts(model: VelocityModel, snr_grid: tuple[float | None, ...],
                       q: int, m: int, steps: int, dataset: Dataset,
                       n_test_users: int = 512, seed: int = 0) -> list[ResultRow]:
    """Mean gain per prompt-SNR; a None entry in the grid is the noiseless
    reference row."""
    if not snr_grid:
        raise ConfigError("snr_grid must be nonempty")
    users = test_users(dataset, n_test_users)
    rows = []
    for snr in snr_grid:
        gains = generative_gains(model, dataset, users, q, (m,), steps, seed, snr_db=snr)
        rows.append(_row("fbbs", q, m, steps, snr, q + m, gains[m], seed))
    return rows


def bootstrap_mean_diff(gains_a: np.ndarray, gains_b: np.ndarray, n_boot: int = 2000,
                        seed: int = 0) -> tuple[float, float]:
    """95% percentile bootstrap CI for mean(gains_a - gains_b), paired."""
    diff = np.asarray(gains_a) - np.asarray(gains_b)
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.integers(0, len(diff), size=(n_boot, len(diff)))
    means = diff[idx].mean(axis=1)
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))
