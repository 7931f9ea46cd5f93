import pytest

from src.main import build_parser, cli_main
from src.services.simulation_service import read_csv
from src.utils import pool_manager

SMALL_CONFIG = """\
M=8
N=4
N_T=2
N_R=4
L=3
P=2
SEED=3
TRIALS=1
SNR_DB=20
BITS_LIST=3,inf
METRICS=position_mse,crlb_position,ber
DOWNLINK_FRAMES=1
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return str(path)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("OTFS_IPAC_WORKERS", "1")
    monkeypatch.delenv("OTFS_IPAC_CONFIG", raising=False)
    monkeypatch.setattr(pool_manager, "_pool_manager", None)


class TestCli:
    def test_validate_defaults(self, capsys):
        assert cli_main(["validate-config"]) == 0
        assert '"valid": true' in capsys.readouterr().out

    def test_validate_invalid_file(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("N_R=4\nL=6\n")
        assert cli_main(["validate-config", "--config", str(path)]) == 1
        assert "subarray longer than array" in capsys.readouterr().out

    def test_unknown_flag(self, capsys):
        assert cli_main(["sweep", "--frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_command(self):
        assert cli_main([]) == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert cli_main(["crlb", "--config", str(tmp_path / "absent.cfg")]) == 1
        assert "error: config file not found" in capsys.readouterr().err

    def test_crlb_smoke(self, small_config, capsys):
        assert cli_main(["crlb", "--config", small_config, "--bits", "5", "--snr", "30"]) == 0
        out = capsys.readouterr().out
        assert "position" in out
        assert out.count("doppler") == 2

    def test_sweep_writes_csv(self, small_config, tmp_path):
        out = tmp_path / "fig.csv"
        assert cli_main(["sweep", "--config", small_config, "--out", str(out), "--quiet"]) == 0
        metadata, rows = read_csv(str(out))
        assert metadata["seed"] == "3"
        assert len(rows) == 2 * 3
        assert {r.bits for r in rows} == {3, None}

    def test_sweep_to_stdout(self, small_config, capsys):
        assert cli_main(["sweep", "--config", small_config, "--bits", "4", "--seed", "9", "--quiet"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "snr_db,bits,metric,value,trials,seed"
        assert len(lines) == 1 + 3
        assert all(l.endswith(",1,9") for l in lines[1:])

    def test_single_trial_dump(self, small_config, tmp_path, capsys):
        dump = tmp_path / "stages.jsonl"
        assert cli_main(["single-trial", "--config", small_config, "--dump", str(dump), "--trial", "2"]) == 0
        assert '"trial_index": 2' in capsys.readouterr().out
        assert len(dump.read_text().splitlines()) > 5

    def test_bad_bits_value(self, capsys):
        assert cli_main(["crlb", "--bits", "many"]) == 2

    def test_sweep_shuts_down_pool(self, small_config, tmp_path, monkeypatch):
        pool = pool_manager.TrialPoolManager(workers=1)
        calls = []
        monkeypatch.setattr(pool, "shutdown", lambda: calls.append("ok"))
        monkeypatch.setattr(pool_manager, "_pool_manager", pool)
        assert cli_main(["sweep", "--config", small_config, "--out", str(tmp_path / "a.csv"), "--quiet"]) == 0
        assert calls == ["ok"]
        assert cli_main(["sweep", "--config", small_config, "--out", str(tmp_path / "missing" / "a.csv"), "--quiet"]) == 1
        assert calls == ["ok", "ok"]


class TestParser:
    def test_lists(self):
        args = build_parser().parse_args(["sweep", "--bits", "3,inf", "--snr", "0,10.5"])
        assert args.bits == [3, None]
        assert args.snr == [0.0, 10.5]
