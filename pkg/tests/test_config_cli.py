import json
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import ROOT
from curiousfl import cli
from curiousfl.config import from_dict, load_config
from curiousfl.errors import ConfigError
from curiousfl.privacy import calibrate_sigma

DIGITS = os.path.join(ROOT, "data", "digits")

TINY = f"""
[experiment]
rounds = 2
clients = 3

[data]
dir = "{DIGITS}"

[model]
hidden = [8]
activation = "tanh"

[attack]
enabled = false

[bound]
probes = 0
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_every_shipped_config_loads():
    names = sorted(os.listdir(os.path.join(ROOT, "configs")))
    assert "desk.toml" in names
    for name in names:
        cfg = load_config(os.path.join(ROOT, "configs", name))
        assert os.path.exists(cfg.data.train_images)


def test_relative_paths_and_key_mapping(tmp_path):
    cfg = from_dict({"experiment": {"clients": 6, "attacker_id": 3}, "data": {"dir": "d"},
                     "aggregation": {"rule": "trimmed_mean", "beta": 2}, "output": {"dir": "o"}}, tmp_path)
    assert cfg.n_clients == 6 and cfg.attacker_id == 3
    assert cfg.data.train_images == str(tmp_path / "d" / "train-images-idx3-ubyte.gz")
    assert cfg.rule_params == {"beta": 2} and cfg.out_dir == str(tmp_path / "o")


def test_epsilon_calibrates_sigma():
    cfg = from_dict({"experiment": {"rounds": 10, "local_steps": 5, "batch_size": 4, "per_client": 100},
                     "dp": {"epsilon": 2.0}})
    assert cfg.dp.enabled
    assert cfg.dp.sigma == pytest.approx(calibrate_sigma(0.04, 50, 1e-5, 2.0))


@pytest.mark.parametrize("raw", [
    {"nonsense": {}},
    {"experiment": {"clientz": 3}},
    {"model": {"depth": 3}},
    {"aggregation": {"rule": "krum", "beta": 1}},
    {"attack": {"poison": "label_flip"}},
    {"experiment": 3},
    {"experiment": {"clients": 2, "attacker_id": 5}},
])
def test_bad_configs(raw):
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_bad_toml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[experiment\nrounds=1"))


def test_cli_run_and_inspect(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "2"]) == 0
    for name in ("metrics.csv", "summary.json", "rmse_vs_rounds.svg", "accuracy_vs_rounds.svg"):
        assert (out / name).exists()
    assert json.loads((out / "summary.json").read_text())["seed"] == 2
    assert cli.main(["inspect", str(out / "metrics.csv")]) == 0
    assert "2 rounds" in capsys.readouterr().out


def test_cli_multi_seed(tmp_path):
    cfg = _write(tmp_path, TINY)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r"), "--seeds", "2"]) == 0
    assert (tmp_path / "r" / "seed_0" / "metrics.csv").exists()
    assert (tmp_path / "r" / "seed_1" / "metrics.csv").exists()
    assert cli.main(["run", "--config", str(cfg), "--seeds", "0"]) == 2


def test_exit_code_config_error(tmp_path):
    assert cli.main(["run", "--config", str(_write(tmp_path, "[experiment]\nrounds = 0\n"))]) == 2
    assert cli.main(["run", "--config", str(_write(tmp_path, "[bogus]\n"))]) == 2


def test_exit_code_numeric_error(tmp_path):
    cfg = _write(tmp_path, TINY.replace("rounds = 2", "rounds = 3\neta = 1e308"))
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["failed_round"] is not None and "NumericError" in summary["error"]


def test_exit_code_io_error(tmp_path):
    missing = _write(tmp_path, TINY.replace(DIGITS, str(tmp_path / "nowhere")))
    assert cli.main(["run", "--config", str(missing), "--out", str(tmp_path / "o")]) == 4
    assert cli.main(["run", "--config", str(tmp_path / "absent.toml")]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", "--config", str(_write(tmp_path, TINY)), "--out", str(blocker / "o")]) == 4
    assert cli.main(["inspect", str(tmp_path / "absent.csv")]) == 4


def test_inspect_rejects_other_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n")
    assert cli.main(["inspect", str(p)]) == 2


def test_oracle_commands(tmp_path, capsys):
    rows = [[0.0], [0.1], [0.2], [10.0]]
    p = tmp_path / "g.json"
    p.write_text(json.dumps(rows))
    assert cli.main(["oracle", "krum", "--input", str(p), "--attackers", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["selected"] == [0]
    np.testing.assert_allclose(out["scores"], [0.01, 0.01, 0.01, 96.04], atol=1e-12)
    assert cli.main(["oracle", "dnc", "--input", str(p), "--attackers", "1"]) == 0
    assert 3 not in json.loads(capsys.readouterr().out)["selected"]
    p.write_text(json.dumps([[4.0, 1.0], [2.0, 3.0]]))
    assert cli.main(["oracle", "assignment", "--input", str(p)]) == 0
    assert json.loads(capsys.readouterr().out) == {"columns": [1, 0], "cost": 3.0}
    p.write_text("not json")
    assert cli.main(["oracle", "krum", "--input", str(p)]) == 2


def test_module_entry_point_over_stdin():
    proc = subprocess.run([sys.executable, "-m", "curiousfl", "oracle", "multikrum", "--attackers", "0",
                           "--select", "2"], input="[[0],[1],[5],[0.5]]", capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["selected"] == [0, 3]
