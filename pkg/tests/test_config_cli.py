import csv
import os

import pytest

from hybridmmog import cli, harness, pamsim, presets, workload
from hybridmmog import config as configmod
from hybridmmog.harness import ConfigError, SimConfig

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
REFERENCE_CFG = os.path.join(ROOT, "configs", "reference_workload.cfg")

TINY = """
[sim]
steps = 4
vs_count = 8
subsystems = sam

[world]
width = 600
height = 600
H_num = 1
O_num = 50
P_max = 40
lam = 8

[manager]
epoch_steps = 1
"""


def test_round_trip_of_every_preset():
    for name, pre in presets.PRESETS.items():
        back = configmod.loads(configmod.dumps(pre.base))
        assert back == pre.base, name


def test_round_trip_of_odd_fields():
    cfg = SimConfig(n_peers=7, rtt_file=None, pam=pamsim.PamConfig(T_s=(0.25, 1.5), overlay=False),
                    world=workload.WorldConfig(transitions=((0.5, 0.5, 0), (0.1, 0.8, 0.1), (0, 0, 1))))
    assert configmod.loads(configmod.dumps(cfg)) == cfg


def test_shipped_config_matches_its_preset():
    assert configmod.load(REFERENCE_CFG) == presets.PRESETS["reference_workload"].base


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        configmod.load(str(tmp_path / "missing.cfg"))
    for text in ("[nope]\nx = 1\n", "[sim]\nbogus = 1\n", "[sim]\nsteps = many\n", "[world]\np_hot = 3\n",
                 "[sim]\nworld = 1\n", "not an ini file"):
        path = tmp_path / "bad.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError):
            configmod.load(str(path))


def test_overrides():
    cfg = SimConfig()
    cfg = configmod.apply_overrides(cfg, ["manager.risk_limit=0.5", "steps=10", "pam.T_s=0.5,1", "pam.overlay=no",
                                          "n_peers=none", "xi_est=1.0"])
    assert cfg.manager.risk_limit == 0.5 and cfg.steps == 10 and cfg.pam.T_s == (0.5, 1.0)
    assert cfg.pam.overlay is False and cfg.n_peers is None and cfg.manager.xi_est == 1.0
    # pam_world starts as a copy of the SAM world
    cfg = configmod.override(cfg, "pam_world.speed", "20")
    assert cfg.pam_world.speed == 20 and cfg.world.speed == 5
    assert configmod.resolve_key("seed") == ("sim", "seed")       # [sim] wins over [world]
    assert configmod.resolve_key("speed") == ("world", "speed")
    for bad in ("nosuch", "manager.nosuch", "x.y"):
        with pytest.raises(ConfigError):
            configmod.resolve_key(bad)
    with pytest.raises(ConfigError):
        configmod.apply_overrides(cfg, ["steps"])


def test_cli_run_writes_outputs(tmp_path, capsys):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    out = tmp_path / "out"
    assert cli.main(["run", str(path), "--seed", "3", "--set", "manager.risk_limit=0.5", "--out", str(out)]) == 0
    assert "mean_cost_per_minute=" in capsys.readouterr().out
    assert sorted(os.listdir(out))[:2] == ["manifest.txt", "metrics.csv"]
    manifest = (out / "manifest.txt").read_text()
    assert "seed=3" in manifest


def test_cli_config_errors_exit_1(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 1
    assert "config error" in capsys.readouterr().err
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    assert cli.main(["run", str(path), "--set", "manager.LF_bot=0.95"]) == 1
    assert cli.main(["preset", "bogus"]) == 1
    assert cli.main(["sweep", str(path), "--param", "nosuch=1,2"]) == 1


def test_cli_runtime_assertion_exits_2(tmp_path, monkeypatch, capsys):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)

    def broken(cfg):
        raise AssertionError("assignment lost a VS")

    monkeypatch.setattr(harness, "run", broken)
    assert cli.main(["run", str(path)]) == 2
    assert "runtime assertion failed" in capsys.readouterr().err


def test_cli_sweep(tmp_path, capsys):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    out = tmp_path / "sweep"
    assert cli.main(["sweep", str(path), "--param", "manager.risk_limit=0.1,0.9", "--seeds", "0,1", "--out", str(out)]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == presets.SWEEP_FIELDS
    assert [(r["run"], r["seed"]) for r in rows] == [("run000", "0"), ("run000", "1"), ("run001", "0"), ("run001", "1")]
    assert rows[0]["params"] == "manager.risk_limit=0.1"
    assert os.path.isdir(out / "run001_seed1")


def test_server_period_sweep_is_folded_into_tracks():
    grid, fixed = presets.fold_server_periods({"pam.T_s": ["0.5", "1"], "pam.heuristic": ["greedy"]})
    assert grid == {"pam.heuristic": ["greedy"]} and fixed == [("pam.T_s", "0.5,1")]
    assert presets.expand({}) == [[]]
    assert len(presets.expand({"a": [1, 2], "b": [3, 4, 5]})) == 6


def test_cli_preset_listing_and_dump(capsys):
    assert cli.main(["preset", "--list"]) == 0
    listing = capsys.readouterr().out
    for name in presets.names():
        assert name in listing
    assert cli.main(["preset", "reference_workload", "--dump"]) == 0
    dumped = capsys.readouterr().out
    assert configmod.loads(dumped) == presets.PRESETS["reference_workload"].base
    assert cli.main(["preset"]) == 1


def test_cli_analytic_preset(tmp_path, capsys):
    assert cli.main(["preset", "migration_cdf", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "migration_cdf.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["rtt_model", "payload_kb", "fraction_under_1s"] and len(rows) == 9
    fast = tmp_path / "fast.txt"
    fast.write_text("1.0\n2.0\n")
    assert cli.main(["preset", "vs_sizing", "--set", f"rtt_file={fast}", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "vs_sizing.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[2] == ["file", "95", "60"]
    assert cli.main(["preset", "vs_sizing", "--set", "rtt_file=/nonexistent"]) == 1


def test_cli_oracle_check(capsys):
    assert cli.main(["oracle-check", "--coverage-instances", "30", "--placement-instances", "20"]) == 0
    out = capsys.readouterr().out
    assert "coverage: 30 instances, 0 below" in out and "placement: 20 instances, 0 outside" in out


def test_bad_cli_arguments():
    with pytest.raises(SystemExit):
        cli.main(["sweep", "--param", "noequals"])
    with pytest.raises(SystemExit):
        cli.main(["preset", "x", "--seeds", "a,b"])
