from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET

import pytest

from behavior_transfer.harness.cli import EXIT_CONFIG, EXIT_INTEGRITY, EXIT_IO, EXIT_OK, main
from behavior_transfer.harness.metrics import COLUMNS

SMALL = """
env.kind = chain
env.size = 8
learner.optimizer = sgd
learner.step_size = 0.1
learner.gamma = 0.8
learner.batch_size = 8
learner.update_every = 8
learner.min_replay = 4
learner.target_period = 20
replay.capacity = 256
replay.sequence_length = 8
run.total_env_steps = 600
run.eval_every = 300
run.eval_episodes = 1
"""


def write_cfg(tmp_path, extra="", name="cfg.txt"):
    p = tmp_path / name
    p.write_text(SMALL + extra)
    return str(p)


@pytest.fixture
def pretrained(tmp_path, capsys):
    out = tmp_path / "pre"
    assert main(["pretrain", "--config", write_cfg(tmp_path, "run.phase = pretrain_ngu\n"), "--out", str(out),
                 "--deterministic"]) == EXIT_OK
    capsys.readouterr()
    return out


def test_pretrain_writes_checkpoint_metrics_and_charts(pretrained):
    assert (pretrained / "checkpoint.json").exists()
    with open(pretrained / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == tuple(COLUMNS) and len(rows) == 3
    for svg in pretrained.glob("*.svg"):
        ET.parse(svg)
    assert "run.phase = pretrain_ngu" in (pretrained / "config.txt").read_text()


def test_transfer_and_eval(tmp_path, pretrained, capsys):
    ckpt = pretrained / "checkpoint.json"
    cfg = write_cfg(tmp_path, f"run.phase = transfer\nexplore.mode = bt_full\nrun.pretrained_checkpoint = {ckpt}\n")
    assert main(["transfer", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "tr")]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["seed"] == 3 and summary["env_steps"] == 600
    assert main(["eval", "--config", cfg, "--checkpoint", str(ckpt), "--episodes", "2"]) == EXIT_OK
    ev = json.loads(capsys.readouterr().out)
    assert set(ev) == {"mean_return", "median_return", "mean_episode_length", "extra_action_usage", "state_coverage"}
    assert ev["extra_action_usage"] == 0.0


def test_sweep_and_plot(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "run.phase = pretrain_ngu\n")
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", cfg, "--seeds", "0,2", "--out", str(out)]) == EXIT_OK
    with open(out / "summary.csv") as fh:
        assert [r["seed"] for r in csv.DictReader(fh)] == ["0", "2"]
    capsys.readouterr()
    assert main(["plot", f"a={out / 'seed_0' / 'metrics.csv'}", f"b={out / 'seed_2' / 'metrics.csv'}",
                 "--out", str(tmp_path / "charts")]) == EXIT_OK
    charts = capsys.readouterr().out.split()
    assert charts
    root = ET.parse(charts[0]).getroot()
    assert len(root.findall(".//{http://www.w3.org/2000/svg}polyline")) == 2


@pytest.mark.parametrize(
    "argv_extra, text",
    [
        ([], "run.phase = transfer\nexplore.mode = bt_full\n"),  # needs a checkpoint
        ([], "run.phase = pretrain_ngu\nrun.total_env_steps = 0\n"),
        ([], "run.phase = pretrain_ngu\nenv.size = banana\n"),
        (["--set", "nosuch.key=1"], "run.phase = pretrain_ngu\n"),
    ],
)
def test_configuration_errors_exit_2(tmp_path, argv_extra, text):
    verb = "transfer" if "transfer" in text else "pretrain"
    assert main([verb, "--config", write_cfg(tmp_path, text), "--out", str(tmp_path / "o"), *argv_extra]) == EXIT_CONFIG


def test_wrong_phase_for_verb_exits_2(tmp_path):
    assert main(["transfer", "--config", write_cfg(tmp_path, "run.phase = pretrain_ngu\n")]) == EXIT_CONFIG


def test_tampered_checkpoint_exits_3(tmp_path, pretrained):
    ckpt = pretrained / "checkpoint.json"
    text = ckpt.read_text()
    i = text.index('"data"') + 10
    ckpt.write_text(text[:i] + ("A" if text[i] != "A" else "B") + text[i + 1:])
    cfg = write_cfg(tmp_path, "run.phase = transfer\n")
    assert main(["eval", "--config", cfg, "--checkpoint", str(ckpt)]) == EXIT_INTEGRITY


def test_missing_config_file_is_a_configuration_error(tmp_path):
    assert main(["pretrain", "--config", str(tmp_path / "absent.txt")]) == EXIT_CONFIG


def test_plot_of_missing_csv_exits_1(tmp_path):
    assert main(["plot", str(tmp_path / "absent.csv"), "--out", str(tmp_path)]) == EXIT_IO
