from __future__ import annotations

import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from behavior_transfer.envs import EnvSpec, make_env
from behavior_transfer.errors import ConfigError, IntegrityError, ValidationError
from behavior_transfer.explore import FrozenPolicy
from behavior_transfer.harness import runner
from behavior_transfer.harness.checkpoint import Checkpoint, checkpoint_from_text, read_checkpoint, write_checkpoint
from behavior_transfer.harness.config import ExperimentConfig, dump_config, parse_config
from behavior_transfer.harness.metrics import (
    COLUMNS,
    EvalRow,
    RunRecord,
    emit_metrics,
    metrics_csv,
    moving_average,
    read_metrics_csv,
    svg_line_chart,
)
from behavior_transfer.harness.runner import evaluate, run_pretrain, transfer_run
from behavior_transfer.learner import make_qfunction, set_q_value


def small_pretrain(**over):
    cfg = ExperimentConfig().replace(
        env=dict(kind="chain", size=8),
        run=dict(phase="pretrain_ngu", total_env_steps=1200, eval_every=500, eval_episodes=1, n_actors=2, actor_refresh=50),
        learner=dict(optimizer="sgd", step_size=0.1, gamma=0.8, batch_size=8, update_every=8, min_replay=4, target_period=20),
        replay=dict(capacity=256, sequence_length=8),
    )
    return cfg.replace(**over) if over else cfg


def small_transfer(ckpt_path, mode="bt_full", **over):
    cfg = ExperimentConfig().replace(
        env=dict(kind="chain", size=8),
        explore=dict(mode=mode),
        run=dict(phase="transfer", total_env_steps=1000, eval_every=300, eval_episodes=1, n_actors=2, actor_refresh=50,
                 pretrained_checkpoint=str(ckpt_path)),
        learner=dict(optimizer="sgd", step_size=0.1, batch_size=8, update_every=8, min_replay=4, target_period=20),
        replay=dict(capacity=256, sequence_length=8),
    )
    return cfg.replace(**over) if over else cfg


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory):
    ckpt, rec = run_pretrain(small_pretrain())
    path = write_checkpoint(ckpt, tmp_path_factory.mktemp("ckpt") / "checkpoint.json")
    return ckpt, rec, path


# --- configuration --------------------------------------------------------------


def test_config_text_roundtrip():
    cfg = ExperimentConfig().replace(env=dict(size=12, distractor_reward=0.25), run=dict(seed=7))
    back = parse_config(dump_config(cfg))
    assert back == cfg
    assert dump_config(back) == dump_config(cfg)


def test_config_grammar():
    cfg = parse_config("""
        # comment
        env.kind = four_rooms
        env.size = 11   # trailing comment
        learner.step_size = 1e-3
        run.deterministic = false
        run.pretrained_checkpoint = "a b.json"
        explore.zeta_cap = 1_000
    """)
    assert (cfg.env.kind, cfg.env.size, cfg.learner.step_size) == ("four_rooms", 11, 1e-3)
    assert cfg.run.deterministic is False and cfg.run.pretrained_checkpoint == "a b.json"
    assert cfg.explore.zeta_cap == 1000
    assert parse_config("run.pretrained_checkpoint = none").run.pretrained_checkpoint is None


@pytest.mark.parametrize("text", ["nosection = 1", "foo.bar = 1", "run.nope = 1", "run.seed = abc", "run.deterministic = yes", "run.seed"])
def test_config_grammar_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize(
    "over",
    [
        dict(explore=dict(mode="bt_full")),
        dict(run=dict(init_mode="partial")),
        dict(run=dict(phase="pretrain_ngu"), explore=dict(mode="bt_flights")),
        dict(run=dict(phase="pretrain_rnd", init_mode="full", pretrained_checkpoint="x")),
        dict(run=dict(init_mode="full", pretrained_checkpoint="x"), explore=dict(mode="bt_action")),
        dict(run=dict(total_env_steps=0)),
        dict(run=dict(phase="finetune")),
        dict(env=dict(size=1)),
    ],
)
def test_invalid_experiments(over):
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(**over).validate()


def test_pretrain_with_zero_budget_is_config_error():
    with pytest.raises(ConfigError):
        run_pretrain(small_pretrain(run=dict(total_env_steps=0)))
    with pytest.raises(ConfigError):
        run_pretrain(ExperimentConfig())


# --- checkpoints ----------------------------------------------------------------


@pytest.mark.parametrize("mode", ["tabular", "encoder_head"])
def test_checkpoint_roundtrip_is_bit_exact(tmp_path, mode):
    qf = make_qfunction(mode, 6, 3, rng=np.random.default_rng(0), hidden=5)
    if mode == "tabular":
        qf.head_params["table"][:] = np.random.default_rng(1).normal(size=(6, 3))
    ckpt = Checkpoint.from_qfunction(qf, phase="pretrain_ngu", steps=10, seed=3)
    back = read_checkpoint(write_checkpoint(ckpt, tmp_path / "c.json"))
    for k, v in qf.params().items():
        assert np.array_equal(back.to_qfunction().params()[k], v)
    assert back.metadata == {"phase": "pretrain_ngu", "steps": 10, "seed": 3}
    assert back.digest == ckpt.digest and back.to_text() == ckpt.to_text()


def test_checkpoint_tampering_is_detected():
    ckpt = Checkpoint.from_qfunction(make_qfunction("tabular", 2, 2, init_value=1.0))
    text = ckpt.to_text()
    with pytest.raises(IntegrityError):
        checkpoint_from_text(text.replace('"steps"', '"stepz"') if '"steps"' in text else text.replace('"repr_mode": "tabular"', '"repr_mode": "tabulaR"'))
    with pytest.raises(IntegrityError):
        checkpoint_from_text("{not json")
    bad = Checkpoint.from_qfunction(make_qfunction("tabular", 2, 2))
    bad.format_version = 99
    with pytest.raises(IntegrityError):
        checkpoint_from_text(bad.to_text())


def test_missing_checkpoint_is_integrity_error(tmp_path):
    with pytest.raises(IntegrityError):
        read_checkpoint(tmp_path / "nope.json")


# --- evaluation -----------------------------------------------------------------


def test_evaluate_deterministic_policy():
    env = make_env(EnvSpec(size=5))
    ev = evaluate(lambda s: 1, env, episodes=3)
    assert ev.returns == [1.0, 1.0, 1.0]
    assert ev.mean_length == 4 and ev.coverage == 5 and ev.usage == 0.0
    with pytest.raises(ValidationError):
        evaluate(lambda s: 1, env, episodes=0)


def test_evaluate_usage_fraction():
    env = make_env(EnvSpec(size=5))
    pi = FrozenPolicy("scripted", table=np.ones(env.n_states, dtype=int))
    qf = make_qfunction("tabular", env.n_states, 3, has_extra_action=True)
    qf.head_params["table"][:, 3] = 1.0
    ev = evaluate(qf, env, 2, pi_p=pi)
    assert ev.usage == 1.0 and ev.mean_return == 1.0
    plain = make_qfunction("tabular", env.n_states, 3)
    set_q_value(plain, 0, 1, 1.0)
    assert evaluate(plain, env).usage == 0.0


# --- metrics --------------------------------------------------------------------


def three_rows():
    rec = RunRecord()
    for i in range(1, 4):
        rec.add(EvalRow(100 * i, float(i), float(i), 10.0, math.nan, 50.0, 0.1 * i, 0.0, 3.0, wall_time=0.5 * i))
    return rec


def test_csv_layout_and_roundtrip(tmp_path):
    rec = three_rows()
    text = metrics_csv(rec)
    lines = text.splitlines()
    assert lines[0].split(",") == list(COLUMNS) and len(lines) == 4
    (tmp_path / "m.csv").write_text(text)
    assert read_metrics_csv(tmp_path / "m.csv").rows == rec.rows


def test_rows_must_increase():
    rec = three_rows()
    with pytest.raises(ValueError):
        rec.add(EvalRow(300, 0, 0, 0, 0, 0, 0, 0, 0))


def test_emit_is_deterministic_and_svg_well_formed(tmp_path):
    rec = three_rows()
    a = emit_metrics(rec, tmp_path / "a", label="x")
    b = emit_metrics(rec, tmp_path / "b", label="x")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    ns = "{http://www.w3.org/2000/svg}"
    root = ET.parse(tmp_path / "a" / "mean_return.svg").getroot()
    assert len(root.findall(f"{ns}polyline")) == 1
    usage = ET.parse(tmp_path / "a" / "extra_action_usage.svg").getroot()
    assert len(usage.findall(f"{ns}polyline")) == 2  # raw and moving average
    assert {p.name for p in a} >= {f"{c}.svg" for c in COLUMNS if c != "env_steps"}


def test_emit_to_unwritable_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_metrics(three_rows(), blocker / "sub")


def test_svg_skips_non_finite_points():
    svg = svg_line_chart("t", [("a", [0, 1, 2], [0.0, math.nan, 1.0])])
    pts = ET.fromstring(svg).find("{http://www.w3.org/2000/svg}polyline").get("points").split()
    assert len(pts) == 2


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.integers(1, 25))
def test_moving_average_matches_window_mean(xs, w):
    out = moving_average(np.array(xs), w)
    for i in range(len(xs)):
        assert out[i] == pytest.approx(np.mean(xs[max(0, i - w + 1) : i + 1]), abs=1e-6)


# --- runs -----------------------------------------------------------------------


def test_pretrain_is_deterministic(pretrained):
    ckpt, rec, _ = pretrained
    ckpt2, rec2 = run_pretrain(small_pretrain())
    assert ckpt2.to_text() == ckpt.to_text()
    assert rec2.rows == rec.rows


def test_row_count_rule(pretrained):
    _, rec, _ = pretrained
    assert [r.env_steps for r in rec.rows] == [500, 1000, 1200]
    cfg = small_pretrain(run=dict(total_env_steps=1000))
    assert len(run_pretrain(cfg)[1].rows) == 1000 // 500


def test_pretraining_ignores_extrinsic_reward(monkeypatch, pretrained):
    ckpt, _, _ = pretrained
    real_make_env = runner.make_env

    def zero_reward_env(spec):
        env = real_make_env(spec)
        step = env.step

        def muted(a):
            s, _, done = step(a)
            return s, 0.0, done

        env.step = muted
        return env

    monkeypatch.setattr(runner, "make_env", zero_reward_env)
    muted_ckpt, _ = run_pretrain(small_pretrain())
    assert muted_ckpt.to_text() == ckpt.to_text()


def test_rnd_pretraining_reduces_prediction_error():
    cfg = small_pretrain(run=dict(phase="pretrain_rnd", total_env_steps=3000, eval_every=300))
    cfg = cfg.replace(intrinsic=dict(rnd_step_size=1e-2))
    _, rec = run_pretrain(cfg)
    err = rec.column("mean_rnd_error")
    assert np.all(np.isfinite(err)) and err[-1] < err[0]


@pytest.mark.parametrize("mode", ["eps_greedy", "ez_greedy_repeat", "bt_flights", "bt_action", "bt_full"])
def test_transfer_modes_keep_policy_frozen(pretrained, mode):
    _, _, path = pretrained
    rec = transfer_run(small_transfer(path, mode))
    assert [r.env_steps for r in rec.rows] == [300, 600, 900, 1000]
    if mode in ("bt_flights", "bt_action", "bt_full"):
        assert rec.info["policy_digest_initial"] == rec.info["policy_digest_final"]
    if mode not in ("bt_action", "bt_full"):
        assert np.all(rec.column("extra_action_usage") == 0)
    if mode in ("eps_greedy", "bt_action"):
        assert np.all(rec.column("flight_step_fraction") == 0)


def test_transfer_is_deterministic(pretrained):
    _, _, path = pretrained
    a = transfer_run(small_transfer(path))
    b = transfer_run(small_transfer(path))
    assert a.rows == b.rows
    assert [e.ret for e in a.episodes] == [e.ret for e in b.episodes]


def test_policy_change_is_integrity_error(pretrained, monkeypatch):
    _, _, path = pretrained
    monkeypatch.setattr(FrozenPolicy, "digest", lambda self: "tampered")
    with pytest.raises(IntegrityError):
        transfer_run(small_transfer(path))


def test_full_init_evaluates_like_checkpoint_before_learning(pretrained):
    ckpt, _, path = pretrained
    cfg = small_transfer(path, "eps_greedy", run=dict(init_mode="full", total_env_steps=50, eval_every=50))
    cfg = cfg.replace(learner=dict(min_replay=10**6))
    rec = transfer_run(cfg)
    env = make_env(cfg.env)
    ev = evaluate(ckpt.to_qfunction(), env, 1)
    assert rec.info["updates"] == 0
    assert rec.rows[0].mean_return == ev.mean_return


def test_architecture_mismatch_is_rejected(pretrained):
    _, _, path = pretrained
    with pytest.raises(ValidationError):
        transfer_run(small_transfer(path, env=dict(kind="chain", size=9)))


def test_threaded_mode_respects_refresh_bound(pretrained):
    _, _, path = pretrained
    cfg = small_transfer(path, run=dict(deterministic=False, total_env_steps=2000, actor_refresh=30))
    rec = transfer_run(cfg)
    assert rec.info["env_steps"] == 2000
    assert rec.info["max_staleness"] <= 30
    assert all(b.env_steps > a.env_steps for a, b in zip(rec.rows, rec.rows[1:]))
