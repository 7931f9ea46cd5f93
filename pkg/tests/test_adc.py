import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.config import FrameConfig
from src.models.schemas import PathSet
from src.services.adc_service import (
    BETA_TABLE,
    adc_model,
    alpha_for_bits,
    beta_for_bits,
    effective_sigma,
    noise_variance,
    quantize,
)


def unit_power_paths(gain=1.0):
    return PathSet.from_doppler(gains=[gain], delays=[1], doppler=[0.0], aoas=[0.0])


class TestBitsModel:
    @pytest.mark.parametrize("bits,alpha", [(1, 0.6366), (3, 0.96546), (5, 0.997501), (None, 1.0)])
    def test_alpha_values(self, bits, alpha):
        assert alpha_for_bits(bits) == pytest.approx(alpha)

    def test_closed_form_above_table(self):
        assert beta_for_bits(6) == pytest.approx(np.sqrt(3) * np.pi / 2 * 2.0 ** -12)

    @pytest.mark.parametrize("bits", [0, -2])
    def test_rejects_non_positive_bits(self, bits):
        with pytest.raises(ValueError):
            alpha_for_bits(bits)

    def test_alpha_increases_to_one(self):
        alphas = [alpha_for_bits(b) for b in range(1, 16)]
        assert np.all(np.diff(alphas) > 0)
        assert alphas[-1] == pytest.approx(1.0, abs=1e-8)

    def test_model_fields(self):
        model = adc_model(2)
        assert model.beta == BETA_TABLE[2]
        assert model.alpha + model.beta == pytest.approx(1.0)


class TestEffectiveSigma:
    def test_three_bit_example(self, small_cfg):
        sigma = effective_sigma(unit_power_paths(), small_cfg, 0.01, 3)
        assert sigma.shape == (small_cfg.MN * small_cfg.N_r,)
        np.testing.assert_allclose(sigma, 0.04300, atol=1e-5)

    def test_infinite_resolution_is_white(self, small_cfg):
        sigma = effective_sigma(unit_power_paths(gain=3.0), small_cfg, 0.2, None)
        np.testing.assert_allclose(sigma, 0.2)

    @given(st.floats(0.0, 0.27), st.floats(0.1, 5.0))
    def test_non_increasing_in_bits_above_distortion_crossover(self, fraction, gain):
        # sigma^2 <= (2 alpha_1 - 1) P keeps d Sigma / d alpha <= 0 for every resolution
        cfg = FrameConfig(M=2, N=1, N_r=2, L=1, P=1)
        paths = unit_power_paths(gain=gain)
        sigma2 = fraction * gain ** 2
        values = [effective_sigma(paths, cfg, sigma2, b)[0] for b in (1, 2, 3, 4, 5, 6, 8, None)]
        assert np.all(np.diff(values) <= 1e-12 * max(values))

    @given(st.floats(1e-4, 10.0), st.floats(0.1, 5.0))
    def test_noise_relative_to_signal_gain_non_increasing(self, sigma2, gain):
        cfg = FrameConfig(M=2, N=1, N_r=2, L=1, P=1)
        paths = unit_power_paths(gain=gain)
        values = [
            effective_sigma(paths, cfg, sigma2, b)[0] / alpha_for_bits(b) ** 2
            for b in (1, 2, 3, 4, 5, 6, 8, None)
        ]
        assert np.all(np.diff(values) <= 1e-12 * max(values))

    def test_low_snr_sigma_grows_with_bits(self):
        cfg = FrameConfig(M=2, N=1, N_r=2, L=1, P=1)
        values = [effective_sigma(unit_power_paths(), cfg, 1.0, b)[0] for b in (1, 3, 5, None)]
        assert np.all(np.diff(values) > 0)
        assert values[-1] == pytest.approx(1.0)


class TestNoiseVariance:
    def test_receive_convention_scales_with_power(self):
        paths = PathSet.from_doppler(gains=[1.0, 1.0j], delays=[1, 2], doppler=[0, 0], aoas=[0, 0.3])
        assert noise_variance(10.0, paths, "receive") == pytest.approx(0.2)

    def test_transmit_convention(self):
        assert noise_variance(20.0, unit_power_paths(gain=5.0), "transmit") == pytest.approx(0.01)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            noise_variance(0.0, unit_power_paths(), "peak")


class TestQuantize:
    def test_infinite_resolution_adds_only_channel_noise(self, small_cfg, rng):
        cfg = small_cfg.with_bits(None)
        r = np.arange(cfg.MN * cfg.N_r) * (1 + 1j)
        obs = quantize(r, unit_power_paths(), cfg, 0.0, rng)
        np.testing.assert_allclose(obs.r_ad, r)
        assert obs.alpha == 1.0
        np.testing.assert_allclose(obs.C_ad_diag, 0.0)

    def test_deterministic(self, small_cfg):
        r = np.ones(small_cfg.MN * small_cfg.N_r, dtype=complex)
        a = quantize(r, unit_power_paths(), small_cfg, 0.1, np.random.default_rng(5))
        b = quantize(r, unit_power_paths(), small_cfg, 0.1, np.random.default_rng(5))
        np.testing.assert_array_equal(a.r_ad, b.r_ad)

    def test_sigma_matches_effective_sigma(self, small_cfg, rng):
        cfg = small_cfg.with_bits(2)
        paths = unit_power_paths(gain=0.7)
        obs = quantize(np.zeros(cfg.MN * cfg.N_r), paths, cfg, 0.05, rng)
        np.testing.assert_allclose(obs.Sigma_diag, effective_sigma(paths, cfg, 0.05, 2))

    def test_one_bit_output_power_equals_alpha(self, rng):
        cfg = FrameConfig(M=1000, N=50, N_r=2, L=1, P=1, b=1)
        paths = unit_power_paths(gain=0.0)
        obs = quantize(np.zeros(cfg.MN * cfg.N_r), paths, cfg, 1.0, rng)
        assert np.mean(np.abs(obs.r_ad) ** 2) == pytest.approx(alpha_for_bits(1), rel=0.02)

    def test_empirical_covariance(self, rng):
        cfg = FrameConfig(M=500, N=100, N_r=2, L=1, P=1, b=3)
        paths = unit_power_paths(gain=1.0)
        clean = np.exp(2j * np.pi * rng.uniform(size=cfg.MN * cfg.N_r))
        obs = quantize(clean, paths, cfg, 0.01, rng)
        residual = obs.r_ad - obs.alpha * clean
        assert np.mean(np.abs(residual) ** 2) == pytest.approx(obs.Sigma_diag[0], rel=0.02)
