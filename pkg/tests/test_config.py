from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from pydantic import ValidationError

from src.config import (
    FrameConfig,
    ScenarioConfig,
    load_config,
    parse_config_values,
    require_valid,
    validate,
    worker_count,
)
from src.models.schemas import ResultRow, SweepSpec, parse_bits
from src.utils.errors import ConfigError

REFERENCE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "reference.cfg"


class TestValidate:
    def test_reference_defaults_are_valid(self, reference_cfg):
        report = validate(reference_cfg)
        assert report.valid
        assert report.errors == []
        assert report.K == 9

    def test_subarray_longer_than_array(self):
        report = validate(FrameConfig(L=17))
        assert not report.valid
        assert any("subarray longer than array" in e for e in report.errors)

    def test_delay_grid_overflow(self):
        report = validate(FrameConfig(P=16))
        assert any("delay grid overflow" in e for e in report.errors)

    def test_identifiability(self):
        report = validate(FrameConfig(P=8, L=8))
        assert any("identifiability" in e for e in report.errors)

    def test_require_valid_lists_every_violation(self):
        with pytest.raises(ConfigError) as exc:
            require_valid(FrameConfig(L=17, P=16))
        assert len(exc.value.errors) >= 2

    @given(
        M=st.integers(1, 32),
        N_r=st.integers(2, 16),
        L=st.integers(1, 16),
        P=st.integers(1, 8),
    )
    def test_validate_is_deterministic(self, M, N_r, L, P):
        cfg = FrameConfig(M=M, N_r=N_r, L=L, P=P)
        assert validate(cfg) == validate(cfg)
        assert validate(cfg).K == N_r - L + 1


class TestDerivedQuantities:
    def test_reference_k_max(self, reference_cfg):
        assert reference_cfg.k_max == pytest.approx(0.593, abs=1e-3)

    def test_k_max_override(self):
        assert FrameConfig(k_max_override=0.25).k_max == 0.25

    def test_durations(self, reference_cfg):
        assert reference_cfg.T == pytest.approx(1 / 15e3)
        assert reference_cfg.T_s == pytest.approx(1 / (16 * 15e3))
        assert reference_cfg.MN == 128

    def test_wavelength(self, reference_cfg):
        assert reference_cfg.wavelength == pytest.approx(0.0749, abs=1e-4)

    def test_with_bits(self, reference_cfg):
        assert reference_cfg.with_bits(None).b is None
        assert reference_cfg.with_bits(3).b == 3
        assert reference_cfg.b == 5


class TestParseBits:
    @pytest.mark.parametrize("raw", ["inf", "Infinite", "none", None, float("inf")])
    def test_infinite(self, raw):
        assert parse_bits(raw) is None

    def test_integer(self):
        assert parse_bits("4") == 4
        assert parse_bits(3) == 3

    def test_garbage(self):
        with pytest.raises(ValueError):
            parse_bits("many")


class TestParseConfigValues:
    def test_overrides(self):
        scenario = parse_config_values({"m": "8", "BITS": "inf", "SNR_DB": "0, 10", "USER_X": "100"})
        assert scenario.frame.M == 8
        assert scenario.frame.b is None
        assert scenario.sweep.snr_points == (0.0, 10.0)
        assert scenario.geometry.user_position == (100.0, 883.0)

    def test_lists(self):
        scenario = parse_config_values({"BITS_LIST": "[3, 4, \"inf\"]", "METRICS": "ber,gain_mse"})
        assert scenario.sweep.bits_list == (3, 4, None)
        assert scenario.sweep.metrics == ("ber", "gain_mse")

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_values({"FOO": "1"})
        assert "unknown key: FOO" in exc.value.errors

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config_values({"M": "sixteen"})

    def test_field_constraint(self):
        with pytest.raises(ConfigError):
            parse_config_values({"TRIALS": "0"})

    def test_boolean(self):
        assert parse_config_values({"JOINT_REFIT": "yes"}).estimator.joint_refit is True

    def test_snr_points_have_one_home(self):
        scenario = parse_config_values({"SNR_DB": "30"})
        assert scenario.sweep.snr_points == (30.0,)
        assert "snr_db" not in FrameConfig.model_fields

    def test_estimator_and_downlink_keys(self):
        scenario = parse_config_values(
            {"REFINE_PASSES": "0", "ANGLE_TOL_DEG": "1e-4", "DOWNLINK_SNR": "Uplink", "DETECTOR_CSI": "estimated"}
        )
        assert scenario.estimator.refine_passes == 0
        assert scenario.estimator.angle_tol_deg == 1e-4
        assert scenario.sweep.downlink_snr == "uplink"
        assert scenario.sweep.detector_csi == "estimated"

    def test_unknown_downlink_reference(self):
        with pytest.raises(ConfigError):
            parse_config_values({"DOWNLINK_SNR": "transmit"})


class TestLoadConfig:
    def test_from_file(self, tmp_path):
        path = tmp_path / "scenario.cfg"
        path.write_text("# comment\nM=8\nBITS_LIST=3,inf\nTRIALS=20\n")
        scenario = load_config(str(path))
        assert scenario.frame.M == 8
        assert scenario.sweep.bits_list == (3, None)
        assert scenario.sweep.trials == 20

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.cfg"))

    def test_defaults_without_path(self, monkeypatch):
        monkeypatch.delenv("OTFS_IPAC_CONFIG", raising=False)
        assert load_config() == ScenarioConfig()

    def test_env_fallback(self, tmp_path, monkeypatch):
        path = tmp_path / "env.cfg"
        path.write_text("N=4\n")
        monkeypatch.setenv("OTFS_IPAC_CONFIG", str(path))
        assert load_config().frame.N == 4

    def test_reference_file(self):
        scenario = load_config(str(REFERENCE_CONFIG))
        assert validate(scenario.frame).valid
        assert scenario.sweep.bits_list == (3, 4, 5, None)


class TestConfigHash:
    def test_stable(self):
        assert ScenarioConfig().config_hash() == ScenarioConfig().config_hash()

    def test_sensitive_to_frame(self):
        assert ScenarioConfig().config_hash() != ScenarioConfig(frame=FrameConfig(M=8)).config_hash()

    def test_sensitive_to_snr_points(self):
        other = ScenarioConfig(sweep=SweepSpec(snr_points=(30.0,)))
        assert other.config_hash() != ScenarioConfig().config_hash()

    def test_ignores_output_path(self):
        other = ScenarioConfig(sweep=SweepSpec(output_path="out.csv"))
        assert other.config_hash() == ScenarioConfig().config_hash()


class TestWorkerCount:
    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("OTFS_IPAC_WORKERS", "3")
        assert worker_count() == 3

    def test_invalid(self, monkeypatch):
        monkeypatch.setenv("OTFS_IPAC_WORKERS", "0")
        with pytest.raises(ConfigError):
            worker_count()


class TestSchemas:
    def test_sweep_requires_snr(self):
        with pytest.raises(ValidationError):
            SweepSpec(snr_points=())

    def test_sweep_rejects_unknown_metric(self):
        with pytest.raises(ValidationError):
            SweepSpec(metrics=("throughput",))

    def test_sweep_bits_labels(self):
        assert SweepSpec(bits_list=("inf", 2)).bits_list == (None, 2)

    def test_result_row_bounds(self):
        with pytest.raises(ValidationError):
            ResultRow(snr_db=0, bits=3, metric="gain_mse", value=-1.0, trials=1, seed=1)
        with pytest.raises(ValidationError):
            ResultRow(snr_db=0, bits=3, metric="ber", value=1.5, trials=1, seed=1)

    def test_result_row_csv_fields(self):
        row = ResultRow(snr_db=10, bits=None, metric="ber", value=0.25, trials=4, seed=7)
        assert row.as_csv_fields() == ["10", "inf", "ber", "0.25", "4", "7"]

    def test_geometry_requires_bs_at_origin(self):
        from src.config import Geometry
        with pytest.raises(ValidationError):
            Geometry(bs_position=(1.0, 0.0))
        assert np.allclose(Geometry().u, [883.0, 883.0])
