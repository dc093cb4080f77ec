import numpy as np
import pytest
import torch

from fbbs.errors import ConfigError
from fbbs.inference import (InferenceConfig, brainstorm, evolve, recover_beam,
                            sample_priors, select_beam)
from fbbs.model import ModelConfig, init_parameters
from fbbs.probing import (Prompt, dft_codebook, make_prompt, measure_rsrp,
                          uniform_probe_indices)
from fbbs.signalcore import ArrayGeometry, normalized_gain_db, steering_vector

MINI = ModelConfig(embed_dim=16, n_blocks=1, n_heads=2, seq_len=8, cond_dim=16)


class ConstantField(torch.nn.Module):
    def __init__(self, c, cfg=MINI):
        super().__init__()
        self.c = c
        self.config = cfg
        self._anchor = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x, r, t, values, mask):
        return torch.full_like(x, self.c)


class TimeAffineField(torch.nn.Module):
    """u(x, r, t) = (r + t)/2; its exact interval average over [r, t] of the
    instantaneous field v(x, tau) = tau, so the interval update integrates
    z(t) = z(0) + t^2/2 exactly for any step count."""

    def __init__(self, cfg=MINI):
        super().__init__()
        self.config = cfg
        self._anchor = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x, r, t, values, mask):
        return torch.full_like(x, 1.0) * ((r + t) / 2.0)[:, None, None]


def perturbed_model(seed=0, cfg=MINI):
    model = init_parameters(cfg, seed)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen))
    model.set_prompt_normalization(-10.0, 5.0)
    return model


def unit_prompt(q=4, q_max=MINI.seq_len):
    values = np.zeros(q_max)
    values[:q] = np.linspace(0.5, 1.5, q)
    mask = np.zeros(q_max)
    mask[:q] = 1.0
    return Prompt(values=values, mask=mask)


class TestConfig:
    def test_bounds(self):
        with pytest.raises(ConfigError):
            InferenceConfig(steps=0)
        with pytest.raises(ConfigError):
            InferenceConfig(brainstorm=0)


class TestEvolve:
    def make_cond(self, batch=2):
        values = torch.rand((batch, MINI.seq_len),
                            generator=torch.Generator().manual_seed(0))
        mask = torch.ones((batch, MINI.seq_len))
        return values, mask

    def test_constant_field_any_step_count(self):
        # z1 = z0 + c regardless of how the unit interval is partitioned
        values, mask = self.make_cond()
        z0 = torch.randn((2, 2, MINI.seq_len),
                         generator=torch.Generator().manual_seed(1))
        for steps in (1, 2, 3, 7, 64):
            z1 = evolve(ConstantField(0.8), z0, values, mask, steps)
            assert torch.allclose(z1, z0 + 0.8, atol=1e-5)

    def test_time_affine_field_exact_integral(self):
        values, mask = self.make_cond()
        z0 = torch.zeros((2, 2, MINI.seq_len))
        for steps in (1, 2, 5, 32):
            z1 = evolve(TimeAffineField(), z0, values, mask, steps)
            assert torch.allclose(z1, torch.full_like(z0, 0.5), atol=1e-5)

    def test_instantaneous_mode_euler_error(self):
        # Euler on v(tau) = tau gives sum of n*delta^2 = (T-1)/(2T), which
        # converges to 1/2 from below as T grows
        values, mask = self.make_cond()
        z0 = torch.zeros((2, 2, MINI.seq_len))
        for steps in (1, 2, 10):
            z1 = evolve(TimeAffineField(), z0, values, mask, steps,
                        instantaneous=True)
            expected = (steps - 1) / (2.0 * steps)
            assert torch.allclose(z1, torch.full_like(z0, expected), atol=1e-5)

    def test_forward_pass_count(self):
        calls = []

        class Counting(ConstantField):
            def forward(self, x, r, t, values, mask):
                calls.append((float(r[0]), float(t[0])))
                return super().forward(x, r, t, values, mask)

        values, mask = self.make_cond()
        z0 = torch.zeros((2, 2, MINI.seq_len))
        evolve(Counting(0.0), z0, values, mask, steps=4)
        assert len(calls) == 4
        assert calls[0] == (0.0, 0.25)
        assert calls[-1] == (0.75, 1.0)

    def test_zero_steps_rejected(self):
        values, mask = self.make_cond()
        with pytest.raises(ConfigError):
            evolve(ConstantField(0.0), torch.zeros((2, 2, MINI.seq_len)),
                   values, mask, steps=0)


class TestRecoverBeam:
    def test_constant_modulus(self):
        rng = np.random.Generator(np.random.Philox(2))
        z1 = rng.normal(size=(2, 16))
        w = recover_beam(z1)
        assert np.allclose(np.abs(w), 1.0 / 4.0, atol=1e-12)
        assert abs(np.linalg.norm(w) - 1.0) < 1e-12

    def test_amplitude_scale_invariance(self):
        rng = np.random.Generator(np.random.Philox(3))
        z1 = rng.normal(size=(2, 16))
        z1[1] = np.abs(z1[1]) + 0.1
        w_ref = recover_beam(z1)
        for scale in (1e-3, 0.1, 10.0, 1e3):
            scaled = z1.copy()
            scaled[1] *= scale
            assert np.allclose(recover_beam(scaled), w_ref, atol=1e-10)

    def test_exact_spectrum_recovers_mrt_phases(self):
        # feeding the true angular phase/amplitude of h reproduces the
        # phase-conjugate beam, which is gain-optimal among constant-modulus
        geom = ArrayGeometry(16)
        rng = np.random.Generator(np.random.Philox(4))
        h = (steering_vector(0.3, geom) * 2.0
             + 0.5 * steering_vector(-0.7, geom))
        spec = np.fft.fft(h, norm="ortho")
        z1 = np.stack([np.angle(spec), np.abs(spec)])
        w = recover_beam(z1)
        assert normalized_gain_db(h, w) > -1e-9


class TestBrainstorm:
    def test_prefix_nesting(self):
        model = perturbed_model(seed=5)
        prompt = unit_prompt()
        big = brainstorm(model, prompt, m=8, steps=2,
                         gen=torch.Generator().manual_seed(6))
        small = brainstorm(model, prompt, m=3, steps=2,
                           gen=torch.Generator().manual_seed(6))
        for a, b in zip(small, big[:3]):
            assert np.allclose(a, b, atol=1e-12)

    def test_candidates_distinct_and_constant_modulus(self):
        model = perturbed_model(seed=7)
        beams = brainstorm(model, unit_prompt(), m=4, steps=1,
                           gen=torch.Generator().manual_seed(8))
        n = MINI.seq_len
        for w in beams:
            assert np.allclose(np.abs(w), 1.0 / np.sqrt(n), atol=1e-6)
        for i in range(4):
            for j in range(i + 1, 4):
                assert not np.allclose(beams[i], beams[j], atol=1e-8)

    def test_bad_count(self):
        with pytest.raises(ConfigError):
            brainstorm(perturbed_model(), unit_prompt(), m=0, steps=1,
                       gen=torch.Generator().manual_seed(0))


class TestSelectBeam:
    def test_noiseless_argmax(self):
        geom = ArrayGeometry(8)
        h = steering_vector(0.2, geom)
        aligned = h / np.abs(h) / np.sqrt(8)
        others = [steering_vector(a, geom) / np.sqrt(8) for a in (-1.0, 0.9)]
        w, idx = select_beam(h, others + [aligned])
        assert idx == 2
        assert np.allclose(w, aligned)

    def test_tie_breaks_lowest_index(self):
        h = np.ones(4, dtype=complex)
        w0 = np.ones(4, dtype=complex) / 2.0
        w, idx = select_beam(h, [w0, w0.copy(), w0.copy()])
        assert idx == 0

    def test_selection_monotone_in_candidate_count(self):
        # the realized gain of the selected beam never decreases when
        # candidates are appended
        geom = ArrayGeometry(8)
        rng = np.random.Generator(np.random.Philox(9))
        h = rng.normal(size=8) + 1j * rng.normal(size=8)
        cands = [np.exp(2j * np.pi * rng.random(8)) / np.sqrt(8)
                 for _ in range(8)]
        prev = -np.inf
        for m in range(1, 9):
            w, _ = select_beam(h, cands[:m])
            g = normalized_gain_db(h, w)
            assert g >= prev - 1e-12
            prev = g

    def test_noisy_selection_requires_rng(self):
        h = np.ones(4, dtype=complex)
        with pytest.raises(ConfigError):
            select_beam(h, [h / 2.0], noise_snr_db=10.0)

    def test_noisy_selection_converges_at_high_snr(self):
        geom = ArrayGeometry(8)
        rng = np.random.Generator(np.random.Philox(10))
        h = rng.normal(size=8) + 1j * rng.normal(size=8)
        cands = [np.exp(2j * np.pi * rng.random(8)) / np.sqrt(8)
                 for _ in range(6)]
        _, idx_clean = select_beam(h, cands)
        _, idx_noisy = select_beam(h, cands, noise_snr_db=120.0, rng=rng)
        assert idx_noisy == idx_clean

    def test_empty_candidates(self):
        with pytest.raises(ConfigError):
            select_beam(np.ones(4, dtype=complex), [])


class TestEndToEnd:
    def test_prompt_pipeline_yields_valid_beam(self):
        # measure -> prompt -> brainstorm -> select on a real channel,
        # checking only structural invariants at untrained weights
        geom = ArrayGeometry(MINI.seq_len)
        h = steering_vector(0.4, geom) + 0.3 * steering_vector(-0.2, geom)
        cb = dft_codebook(geom)
        rsrp = measure_rsrp(h, cb, snr_db=None, rng=None)
        prompt = make_prompt(rsrp, uniform_probe_indices(4, MINI.seq_len))
        model = perturbed_model(seed=11)
        beams = brainstorm(model, prompt, m=4, steps=3,
                           gen=torch.Generator().manual_seed(12))
        w, idx = select_beam(h, beams)
        assert 0 <= idx < 4
        assert normalized_gain_db(h, w) <= 1e-9
