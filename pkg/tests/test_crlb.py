import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.config import FrameConfig, Geometry
from src.models.schemas import FimResult, PathSet
from src.services.adc_service import effective_sigma
from src.services.channel_service import build_channel
from src.services.crlb_service import (
    PARAMETER_GROUPS,
    channel_derivatives,
    compute_bounds,
    fisher_matrix,
    invert_fim,
    mean_derivatives,
    parameter_index,
    position_crlb,
    position_crlb_matrix,
)
from src.utils.errors import GeometryError
from tests.oracles import dense_channel, random_path_set

EPS = 1e-6


def unit_pilot(rng, MN):
    return np.exp(2j * np.pi * rng.uniform(size=MN))


def perturbed(paths: PathSet, p: int, which: str, delta: float) -> PathSet:
    gains = paths.gains.copy()
    aoas = paths.aoas.copy()
    doppler = paths.doppler.copy()
    if which == "gain_re":
        gains[p] += delta
    elif which == "gain_im":
        gains[p] += 1j * delta
    elif which == "angle":
        aoas[p] += delta
    else:
        doppler[p] += delta
    return PathSet(
        gains=gains,
        delays=paths.delays,
        doppler_int=np.round(doppler).astype(int),
        doppler_frac=doppler - np.round(doppler),
        aoas=aoas,
    )


def central_difference(paths, cfg, s, p, which):
    plus = build_channel(perturbed(paths, p, which, EPS), cfg).apply(s)
    minus = build_channel(perturbed(paths, p, which, -EPS), cfg).apply(s)
    return (plus - minus) / (2 * EPS)


def fim_result(var_theta: float) -> FimResult:
    return FimResult(
        J=np.eye(4),
        crlb=np.array([1.0, 1.0, var_theta, 1.0]),
        crlb_gain=np.array([2.0]),
        crlb_angle=np.array([var_theta]),
        crlb_doppler=np.array([1.0]),
    )


class TestDerivatives:
    @pytest.mark.parametrize("which", PARAMETER_GROUPS)
    def test_matches_finite_difference(self, small_cfg, rng, which):
        paths = random_path_set(rng, P=2, M=small_cfg.M)
        s = unit_pilot(rng, small_cfg.MN)
        mu = mean_derivatives(paths, small_cfg, s, alpha=1.0)
        for p in range(paths.P):
            analytic = mu[:, parameter_index(which, p, paths.P)]
            numeric = central_difference(paths, small_cfg, s, p, which)
            assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(numeric)

    def test_gain_derivative_independent_of_gain(self, small_cfg, rng):
        s = unit_pilot(rng, small_cfg.MN)
        a = PathSet.from_doppler(gains=[0.3], delays=[1], doppler=[0.2], aoas=[0.4])
        b = PathSet.from_doppler(gains=[-2 + 1j], delays=[1], doppler=[0.2], aoas=[0.4])
        np.testing.assert_allclose(
            channel_derivatives(a, small_cfg, 0, "gain").apply(s),
            channel_derivatives(b, small_cfg, 0, "gain").apply(s),
        )

    def test_endfire_angle_derivative_vanishes(self, small_cfg, rng):
        paths = PathSet.from_doppler(gains=[1.0], delays=[1], doppler=[0.1], aoas=[np.pi / 2])
        out = channel_derivatives(paths, small_cfg, 0, "angle").apply(unit_pilot(rng, small_cfg.MN))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_batch_apply(self, small_cfg, rng):
        paths = random_path_set(rng, P=1, M=small_cfg.M)
        op = channel_derivatives(paths, small_cfg, 0, "doppler")
        S = np.stack([unit_pilot(rng, small_cfg.MN) for _ in range(3)], axis=1)
        out = op.apply(S)
        for j in range(3):
            np.testing.assert_allclose(out[:, j], op.apply(S[:, j]))

    def test_unknown_tag(self, small_cfg, rng):
        with pytest.raises(ValueError):
            channel_derivatives(random_path_set(rng, 1, small_cfg.M), small_cfg, 0, "delay")

    def test_bad_path_index(self, small_cfg, rng):
        with pytest.raises(ValueError):
            channel_derivatives(random_path_set(rng, 1, small_cfg.M), small_cfg, 1, "gain")


class TestFisherMatrix:
    def test_scalar_amplitude_bound(self, small_cfg, rng):
        paths = PathSet.from_doppler(gains=[1.0], delays=[1], doppler=[0.3], aoas=[0.2])
        s = unit_pilot(rng, small_cfg.MN)
        sigma2 = 0.05
        J = fisher_matrix(paths, small_cfg, s, np.full(small_cfg.MN * small_cfg.N_r, sigma2), alpha=1.0)
        mu = dense_channel(paths, small_cfg.MN, small_cfg.N_r) @ s
        expected = 2 * np.linalg.norm(mu) ** 2 / sigma2
        assert J[0, 0] == pytest.approx(expected)
        assert 1 / J[0, 0] == pytest.approx(sigma2 / (2 * np.linalg.norm(mu) ** 2))

    def test_doubling_noise_halves_information(self, small_cfg, rng):
        cfg = small_cfg.with_bits(None)
        paths = random_path_set(rng, P=2, M=cfg.M)
        s = unit_pilot(rng, cfg.MN)
        size = cfg.MN * cfg.N_r
        J1 = fisher_matrix(paths, cfg, s, np.full(size, 0.1))
        J2 = fisher_matrix(paths, cfg, s, np.full(size, 0.2))
        np.testing.assert_allclose(J2, J1 / 2, atol=1e-12)

    def test_one_bit_loses_information(self, small_cfg, rng):
        paths = random_path_set(rng, P=1, M=small_cfg.M)
        s = unit_pilot(rng, small_cfg.MN)
        sigma2 = 1e-6
        J_inf = fisher_matrix(paths, small_cfg.with_bits(None), s, effective_sigma(paths, small_cfg, sigma2, None))
        J_one = fisher_matrix(paths, small_cfg.with_bits(1), s, effective_sigma(paths, small_cfg, sigma2, 1))
        assert np.all(np.diag(J_one) < np.diag(J_inf))

    @given(st.integers(0, 2**31 - 1), st.integers(1, 3))
    def test_symmetric_psd(self, seed, P):
        gen = np.random.default_rng(seed)
        cfg = FrameConfig(M=4, N=2, N_r=3, L=2, P=1)
        paths = random_path_set(gen, P=P, M=cfg.M)
        J = fisher_matrix(paths, cfg, unit_pilot(gen, cfg.MN), np.full(cfg.MN * cfg.N_r, 0.3))
        np.testing.assert_array_equal(J, J.T)
        eigenvalues = np.linalg.eigvalsh(J)
        assert eigenvalues.min() >= -1e-10 * np.linalg.norm(J)

    def test_singular_sigma(self, small_cfg, rng):
        paths = random_path_set(rng, P=1, M=small_cfg.M)
        Sigma = np.full(small_cfg.MN * small_cfg.N_r, 0.1)
        Sigma[3] = 0.0
        with pytest.raises(ValueError, match="singular Sigma"):
            fisher_matrix(paths, small_cfg, unit_pilot(rng, small_cfg.MN), Sigma)


class TestInversion:
    def test_zero_row_is_unbounded(self):
        bounds, unbounded = invert_fim(np.diag([2.0, 0.0, 4.0]))
        np.testing.assert_allclose(bounds, [0.5, np.inf, 0.25])
        assert unbounded

    def test_full_rank(self):
        J = np.array([[2.0, 1.0], [1.0, 2.0]])
        bounds, unbounded = invert_fim(J)
        np.testing.assert_allclose(bounds, np.diag(np.linalg.inv(J)))
        assert not unbounded

    def test_endfire_path_flags_unbounded_angle(self, small_cfg, rng, geometry):
        paths = PathSet.from_doppler(gains=[1.0], delays=[1], doppler=[0.2], aoas=[np.pi / 2])
        result = compute_bounds(
            paths, small_cfg, unit_pilot(rng, small_cfg.MN), np.full(small_cfg.MN * small_cfg.N_r, 0.1), geometry
        )
        assert result.unbounded
        assert np.isinf(result.crlb_angle[0])
        assert np.isinf(result.crlb_position)


class TestBounds:
    def test_gain_bound_sums_real_and_imaginary(self, small_cfg, rng):
        paths = random_path_set(rng, P=1, M=small_cfg.M)
        result = compute_bounds(paths, small_cfg, unit_pilot(rng, small_cfg.MN), np.full(small_cfg.MN * small_cfg.N_r, 0.1))
        assert result.crlb_gain[0] == pytest.approx(result.crlb[0] + result.crlb[1])
        assert result.crlb_position is None

    def test_infinite_resolution_slope(self, small_cfg, rng):
        cfg = small_cfg.with_bits(None)
        paths = random_path_set(rng, P=1, M=cfg.M)
        s = unit_pilot(rng, cfg.MN)
        low = compute_bounds(paths, cfg, s, effective_sigma(paths, cfg, 1e-2, None))
        high = compute_bounds(paths, cfg, s, effective_sigma(paths, cfg, 1e-4, None))
        np.testing.assert_allclose(high.crlb, low.crlb * 1e-2, rtol=1e-8)

    def test_finite_resolution_floor(self, small_cfg, rng):
        cfg = small_cfg.with_bits(3)
        paths = random_path_set(rng, P=1, M=cfg.M)
        s = unit_pilot(rng, cfg.MN)
        bounds = [
            compute_bounds(paths, cfg, s, effective_sigma(paths, cfg, sigma2, 3)).crlb_doppler[0]
            for sigma2 in (1e-1, 1e-3, 1e-8, 1e-10)
        ]
        assert np.all(np.diff(bounds) <= 0)
        assert bounds[-1] > 0
        assert bounds[-1] == pytest.approx(bounds[-2], rel=1e-3)


class TestPositionBound:
    def test_reference_example(self, geometry):
        assert position_crlb(fim_result(1e-6), geometry) == pytest.approx(1.5594, rel=1e-3)

    def test_scales_with_distance_squared(self):
        near = position_crlb(fim_result(1e-6), Geometry(user_position=(300.0, 400.0)))
        far = position_crlb(fim_result(1e-6), Geometry(user_position=(600.0, 800.0)))
        assert far == pytest.approx(4 * near)

    def test_matrix_trace(self, geometry):
        fim = fim_result(2e-6)
        assert np.trace(position_crlb_matrix(fim, geometry)) == pytest.approx(position_crlb(fim, geometry))

    def test_y_axis_user_is_singular(self):
        with pytest.raises(GeometryError):
            position_crlb(fim_result(1e-6), Geometry(user_position=(0.0, 500.0)))
