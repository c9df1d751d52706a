import json

import pytest

from bbmcom import io
from bbmcom.cli import ConfigError, main, parse_config


def test_parse_example():
    cfg = parse_config("simulate --gamma 1 --dim 1 --epochs 12 --replicates 1000 --seed 7".split())
    assert (cfg.gamma, cfg.dim, cfg.epochs, cfg.replicates, cfg.seed) == (1.0, 1, 12, 1000, 7)


def test_negative_epochs_rejected():
    with pytest.raises(ConfigError, match="max_epoch ≥ 0"):
        parse_config(["simulate", "--epochs", "-1"])


def test_flags_override_file(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"gamma": 2, "dim": 2}))
    cfg = parse_config(["simulate", "--config", str(f), "--gamma", "1"])
    assert cfg.gamma == 1.0 and cfg.dim == 2


def test_unknown_key_and_flag(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"gama": 2}))
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config(["simulate", "--config", str(f)])
    with pytest.raises(SystemExit):
        parse_config(["simulate", "--gama", "2"])


def test_sbm_level_rejected_at_parse_time(capsys):
    assert main(["sbm", "--alpha", "1", "--beta", "4", "--level-n", "2"]) == 2
    assert "n > beta/(2 alpha)" in capsys.readouterr().err


def _simulate(tmp_path, name, threads):
    out = tmp_path / name
    code = main(["simulate", "--gamma", "1", "--dim", "2", "--epochs", "5", "--replicates", "12",
                 "--seed", "7", "--mesh", "0.25", "--threads", str(threads), "--out", str(out)])
    assert code == 0
    return out


def test_simulate_is_byte_identical(tmp_path):
    a = _simulate(tmp_path, "a", 1)
    b = _simulate(tmp_path, "b", 1)
    c = _simulate(tmp_path, "c", 4)
    for f in ("snapshots.csv", "com.csv", "com.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes() == (c / f).read_bytes()
    rows = io.read_snapshots(a / "snapshots.csv")
    assert {r["stage"] for r in rows} == {"start", "mesh", "pre", "final"}
    assert sum(1 for r in rows if r["stage"] == "final") == 12 * 16
    cfg = json.loads((a / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["mesh"] == "0.25"
    summary = json.loads((a / "summary.json").read_text())
    assert summary["exit_code"] == 0 and "metadata" in summary


def test_resource_cap_exit(tmp_path):
    code = main(["simulate", "--epochs", "22", "--replicates", "1", "--out", str(tmp_path)])
    assert code == 3
    assert json.loads((tmp_path / "summary.json").read_text())["partial"] is True


def test_sbm_run(tmp_path):
    code = main(["sbm", "--level-n", "20", "--horizon", "3", "--replicates", "30", "--dim", "2",
                 "--out", str(tmp_path), "--format", "csv"])
    assert code == 0
    text = (tmp_path / "sbm.csv").read_text().splitlines()
    assert text[0] == "# schema=1" and text[1].startswith("replicate_id,t,count,N,V1,V2")
    assert not (tmp_path / "sbm.json").exists()
    res = json.loads((tmp_path / "summary.json").read_text())["result"]
    assert res["second_moment"]["erratum_1_plus_beta_over_alpha"] == 2.0


def test_conjecture_always_exits_zero(tmp_path):
    code = main(["conjecture", "--epochs", "10", "--replicates", "100", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "conjecture.json").read_text())
    assert rep["exploratory"] is True
    res = json.loads((tmp_path / "summary.json").read_text())["result"]
    assert res["erf_self_check"]["pass"] is True


@pytest.mark.slow
def test_validate_bbm_defaults(tmp_path, capsys):
    assert main(["validate-bbm", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["result"]["failed"] == []
    assert len(summary["result"]["passed"]) == 8
