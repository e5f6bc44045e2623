import csv

import pytest
import yaml

from mtaffect.cli import main
from mtaffect.config import ConfigError, load_config

TINY = {
    "epochs": 1,
    "data": {"n_groups": 20, "group_size": 8},
}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def test_load_config_nested(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"mode": "mt", "data": {"missing": {"presence": [0.4, 0.5, 0.6]}},
                                    "noise": {"kind": "additive-gaussian", "magnitude": 0.2},
                                    "loss_weights": [1, 0.5, 0.5]}))
    cfg = load_config(path)
    assert cfg.data.missing.presence == (0.4, 0.5, 0.6)
    assert cfg.noise.kind == "additive-gaussian"
    assert cfg.loss_weights == (1.0, 0.5, 0.5)


@pytest.mark.parametrize("raw", [{"epochz": 3}, {"data": {"bogus": 1}}, {"data": {"missing": {"x": 1}}},
                                 {"learning_rate": -1}])
def test_config_errors(tmp_path, raw):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError):
        load_config(path)


def test_unknown_key_exit_code(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("nonsense_key: 1\n")
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d.jsonl")]) == 1


def test_gen_train_eval_round(tmp_path, cfg_file, capsys):
    data = tmp_path / "d.jsonl"
    assert main(["gen-data", "--config", str(cfg_file), "--out", str(data)]) == 0
    assert sum(1 for _ in open(data)) == 160

    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--mode", "mt-sc", "--data", str(data),
                 "--out", str(out)]) == 0
    for name in ("metrics.csv", "checkpoint.npz", "teacher.npz", "curves.png", "config.yaml", "final.csv"):
        assert (out / name).exists(), name
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "split", "ccc_v", "ccc_a", "f1_expr", "acc_expr", "f1_au",
                             "acc_au", "m_va", "m_expr", "m_au", "total_loss", "supervised_fraction"]
    capsys.readouterr()

    assert main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--data", str(data)]) == 0
    text = capsys.readouterr().out
    header, row = text.strip().split("\n")
    assert header.startswith("ccc_v,ccc_a,f1_expr")
    assert len(row.split(",")) == len(header.split(","))


def test_eval_rejects_malformed_data(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--mode", "baseline", "--out", str(out)]) == 0
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": 0}\n')
    assert main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--data", str(bad)]) == 1


def test_ablate_writes_table_and_figure(tmp_path, cfg_file):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg_file), "--seeds", "1", "--out", str(out)]) == 0
    with open(out / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["baseline", "mt", "mt-sc"]
    assert (out / "ablation.png").stat().st_size > 0
    assert (out / "summary.csv").exists()


def test_bad_seeds_is_validation_error(tmp_path, cfg_file):
    assert main(["ablate", "--config", str(cfg_file), "--seeds", "a,b", "--out", str(tmp_path)]) == 1


def test_grad_check_command(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "[PASS] full_model_total_loss" in out
