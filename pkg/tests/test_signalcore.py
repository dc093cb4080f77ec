import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbbs.errors import DegenerateChannel, DimensionError, InvalidAngle
from fbbs.probing import dft_codebook
from fbbs.signalcore import (ArrayGeometry, beam_gain, dft, idft,
                             mrt_beamformer, normalized_gain_db,
                             steering_vector)


def rng():
    return np.random.Generator(np.random.Philox(123))


def random_channel(r, n=16):
    return r.normal(size=n) + 1j * r.normal(size=n)


class TestSteeringVector:
    def test_broadside(self):
        a = steering_vector(0.0, ArrayGeometry(4))
        np.testing.assert_allclose(a, [0.5, 0.5, 0.5, 0.5], atol=1e-15)

    def test_endfire_two_elements(self):
        a = steering_vector(np.pi / 2, ArrayGeometry(2))
        np.testing.assert_allclose(a, [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-12)

    def test_unit_norm_over_random_angles(self):
        geom = ArrayGeometry(32)
        r = rng()
        for phi in r.uniform(-np.pi, np.pi, size=1000):
            assert abs(np.linalg.norm(steering_vector(phi, geom)) - 1.0) <= 1e-12

    def test_nonfinite_angle_rejected(self):
        with pytest.raises(InvalidAngle):
            steering_vector(float("nan"), ArrayGeometry(4))

    def test_bad_geometry_rejected(self):
        with pytest.raises(ValueError):
            ArrayGeometry(1)
        with pytest.raises(ValueError):
            ArrayGeometry(4, spacing_ratio=0.0)


class TestDFT:
    @pytest.mark.parametrize("n", [4, 32])
    def test_round_trip(self, n):
        x = random_channel(rng(), n)
        np.testing.assert_allclose(idft(dft(x)), x, atol=1e-12)
        np.testing.assert_allclose(dft(idft(x)), x, atol=1e-12)

    def test_impulse_flat_spectrum(self):
        np.testing.assert_allclose(dft([1, 0, 0, 0]), [0.5, 0.5, 0.5, 0.5], atol=1e-15)

    def test_parseval(self):
        x = random_channel(rng(), 32)
        assert abs(np.linalg.norm(dft(x)) - np.linalg.norm(x)) <= 1e-12


class TestMRT:
    def test_simple_phases(self):
        w = mrt_beamformer(np.array([1.0, 1j]))
        np.testing.assert_allclose(w, [1 / np.sqrt(2), 1j / np.sqrt(2)], atol=1e-15)

    def test_gain_equals_sum_of_amplitudes(self):
        # independent oracle: direct summation of |h[n]|
        r = rng()
        for _ in range(20):
            h = random_channel(r)
            w = mrt_beamformer(h)
            expected = np.sum(np.abs(h)) / np.sqrt(len(h))
            assert abs(abs(np.vdot(h, w)) - expected) <= 1e-12

    def test_zero_entry_convention(self):
        h = np.array([0.0 + 0.0j, 1.0j])
        w = mrt_beamformer(h)
        assert w[0] == pytest.approx(1 / np.sqrt(2))

    def test_constant_modulus(self):
        h = random_channel(rng())
        w = mrt_beamformer(h)
        np.testing.assert_allclose(np.abs(w), 1 / np.sqrt(len(h)), atol=1e-12)


class TestBeamGain:
    def test_single_entry_channel(self):
        n = 8
        h = np.zeros(n, dtype=complex)
        h[0] = 1.0
        w = mrt_beamformer(random_channel(rng(), n))
        assert beam_gain(h, w) == pytest.approx(1 / n)

    def test_mrt_gain_oracle(self):
        h = random_channel(rng())
        w = mrt_beamformer(h)
        assert beam_gain(h, w) == pytest.approx(np.sum(np.abs(h)) ** 2 / len(h), rel=1e-12)

    def test_orthogonal_cancellation(self):
        h = np.array([1.0, -1.0])
        w = np.array([1.0, 1.0]) / np.sqrt(2)
        assert beam_gain(h, w) == pytest.approx(0.0, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            beam_gain(np.ones(4), np.ones(5))


class TestNormalizedGain:
    def test_mrt_is_zero_db(self):
        h = random_channel(rng())
        assert normalized_gain_db(h, mrt_beamformer(h)) == pytest.approx(0.0, abs=1e-12)

    def test_single_entry_channel_all_beams_zero_db(self):
        h = np.zeros(8, dtype=complex)
        h[0] = 2.0
        w = mrt_beamformer(random_channel(rng(), 8))
        assert normalized_gain_db(h, w) == pytest.approx(0.0, abs=1e-12)

    def test_two_path_best_codeword_matches_exhaustive_oracle(self):
        geom = ArrayGeometry(16)
        h = steering_vector(0.0, geom) + 0.5 * steering_vector(np.deg2rad(30), geom)
        cb = dft_codebook(geom)
        # brute force over every codeword
        best = max(beam_gain(h, cb.beams[k]) for k in range(cb.n_beams))
        expected = 10 * np.log10(best / beam_gain(h, mrt_beamformer(h)))
        achieved = max(normalized_gain_db(h, cb.beams[k]) for k in range(cb.n_beams))
        assert achieved == pytest.approx(expected, abs=1e-12)

    def test_zero_channel_rejected(self):
        with pytest.raises(DegenerateChannel):
            normalized_gain_db(np.zeros(4, dtype=complex), np.ones(4) / 2)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_constant_modulus_never_beats_mrt(self, seed):
        r = np.random.Generator(np.random.Philox(seed))
        h = random_channel(r, 8)
        w = np.exp(1j * r.uniform(-np.pi, np.pi, size=8)) / np.sqrt(8)
        assert normalized_gain_db(h, w) <= 1e-9
