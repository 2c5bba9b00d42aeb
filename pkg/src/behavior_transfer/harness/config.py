"""Experiment configuration and its flat text grammar.

One setting per line, ``section.key = value``. Blank lines and ``#``
comments are ignored. Values are typed by the field they set: integers,
floats (``1e-4`` is fine), booleans (``true``/``false``), strings (bare or
double-quoted), and ``none`` for optional fields. Unknown sections or keys
are configuration errors.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..envs import EnvSpec
from ..errors import ConfigError
from ..explore import EXTRA_ACTION_MODES, MODES, PRETRAINED_MODES
from ..learner import INIT_MODES, REPR_MODES

PHASES = ("pretrain_ngu", "pretrain_rnd", "transfer")


@dataclass
class ExploreConfig:
    mode: str = "eps_greedy"
    # per-actor ladder eps_i = eps_max ** (1 + eps_alpha * i / (N - 1));
    # a non-negative ``eps`` overrides the ladder with one value for every actor
    eps_max: float = 0.4
    eps_alpha: float = 7.0
    eps: float = -1.0
    # ln(eps_levy) ~ U[ln eps_levy_min, ln eps_levy_max]; the lower bound is our choice
    eps_levy_min: float = 1e-4
    eps_levy_max: float = 0.1
    zeta_mu: float = 2.0
    # 0 means 10 * episode_limit
    zeta_cap: int = 0


@dataclass
class LearnerConfig:
    repr_mode: str = "tabular"
    hidden: int = 32
    # initial Q-value of a fresh network (optimism for unvisited states)
    init_value: float = 0.0
    gamma: float = 0.99
    lambda_q: float = 0.7
    lambda_retrace: float = 0.95
    optimizer: str = "adam"
    step_size: float = 2e-4
    adam_eps: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    target_period: int = 1500
    priority_eta: float = 0.9
    batch_size: int = 64
    # environment steps (summed over actors) between learner updates
    update_every: int = 4
    # sequences in replay before the learner starts
    min_replay: int = 64


@dataclass
class IntrinsicConfig:
    k: int = 10
    c: float = 0.001
    eps_kernel: float = 0.001
    xi: float = 0.008
    s_m: float = 8.0
    L: float = 5.0
    d2m_floor: float = 1e-9
    embedding: str = "identity"
    # 0 means the observation dimension (required for identity)
    embed_dim: int = 0
    embed_hidden: int = 32
    embed_step_size: float = 1e-3
    rnd_embed_dim: int = 16
    rnd_hidden: int = 32
    rnd_predictor: str = "mlp"
    rnd_step_size: float = 1e-3
    sigma_floor: float = 1e-8
    # embedding/RND training uses this many trailing transitions per sampled sequence
    train_suffix: int = 5


@dataclass
class ReplayConfig:
    capacity: int = 4096
    sequence_length: int = 16
    overlap: float = 0.5
    priority_exponent: float = 0.9
    is_exponent: float = 0.0


@dataclass
class RunConfig:
    phase: str = "transfer"
    seed: int = 0
    n_actors: int = 4
    actor_refresh: int = 400
    total_env_steps: int = 100_000
    eval_every: int = 5_000
    eval_episodes: int = 5
    init_mode: str = "scratch"
    pretrained_checkpoint: Optional[str] = None
    deterministic: bool = True
    # end the run this many steps after the first goal visit (0: run the full budget)
    stop_after_goal: int = 0


SECTIONS = {
    "env": EnvSpec,
    "explore": ExploreConfig,
    "learner": LearnerConfig,
    "intrinsic": IntrinsicConfig,
    "replay": ReplayConfig,
    "run": RunConfig,
}


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    intrinsic: IntrinsicConfig = field(default_factory=IntrinsicConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def phase(self) -> str:
        return self.run.phase

    def validate(self) -> "ExperimentConfig":
        r, x, lr = self.run, self.explore, self.learner
        self.env.resolved()
        if r.phase not in PHASES:
            raise ConfigError(f"run.phase must be one of {PHASES}")
        if x.mode not in MODES:
            raise ConfigError(f"explore.mode must be one of {MODES}")
        if lr.repr_mode not in REPR_MODES:
            raise ConfigError(f"learner.repr_mode must be one of {REPR_MODES}")
        if r.init_mode not in INIT_MODES:
            raise ConfigError(f"run.init_mode must be one of {INIT_MODES}")
        if r.total_env_steps <= 0:
            raise ConfigError("run.total_env_steps must be positive")
        for name in ("n_actors", "actor_refresh", "eval_every", "eval_episodes"):
            if getattr(r, name) < 1:
                raise ConfigError(f"run.{name} must be >= 1")
        if lr.batch_size < 1 or lr.update_every < 1 or lr.target_period < 1:
            raise ConfigError("learner.batch_size, update_every and target_period must be >= 1")
        if r.phase.startswith("pretrain"):
            if x.mode in PRETRAINED_MODES:
                raise ConfigError(
                    "pretraining explores over the primitive actions only; "
                    f"explore.mode {x.mode!r} needs a pre-trained policy"
                )
            if r.init_mode != "scratch":
                raise ConfigError("pretraining starts from scratch")
        else:
            if x.mode in PRETRAINED_MODES and not r.pretrained_checkpoint:
                raise ConfigError(f"explore.mode {x.mode!r} requires run.pretrained_checkpoint")
            if r.init_mode != "scratch" and not r.pretrained_checkpoint:
                raise ConfigError(f"run.init_mode {r.init_mode!r} requires run.pretrained_checkpoint")
            if r.init_mode == "full" and x.mode in EXTRA_ACTION_MODES:
                raise ConfigError(
                    "full initialization needs matching heads; checkpoints have no extra-action output"
                )
        if not 0.0 < x.eps_levy_min <= x.eps_levy_max:
            raise ConfigError("explore.eps_levy_min must be in (0, eps_levy_max]")
        if x.eps > 1.0:
            raise ConfigError("explore.eps must be <= 1")
        return self

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(run={"seed": 3})``."""
        out = copy_config(self)
        for sec, kv in sections.items():
            obj = getattr(out, sec)
            for k, v in kv.items():
                if not hasattr(obj, k):
                    raise ConfigError(f"unknown key {sec}.{k}")
                setattr(obj, k, v)
        return out


def copy_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return ExperimentConfig(**{name: dataclasses.replace(getattr(cfg, name)) for name in SECTIONS})


# --- text grammar -----------------------------------------------------------------


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _parse_value(raw: str, tp, where: str):
    raw = raw.strip()
    optional = typing.get_origin(tp) is typing.Union and type(None) in typing.get_args(tp)
    if optional:
        if raw.lower() == "none":
            return None
        tp = next(t for t in typing.get_args(tp) if t is not type(None))
    try:
        if tp is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if tp is int:
            return int(raw.replace("_", ""))
        if tp is float:
            return float(raw.replace("_", ""))
        if tp is str:
            if len(raw) >= 2 and raw[0] == raw[-1] == '"':
                return raw[1:-1]
            return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tp.__name__}") from None
    raise ConfigError(f"{where}: unsupported field type {tp}")


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cfg = copy_config(base) if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        lhs, rhs = line.split("=", 1)
        lhs = lhs.strip()
        if "." not in lhs:
            raise ConfigError(f"{where}: key {lhs!r} has no section")
        sec, key = lhs.split(".", 1)
        if sec not in SECTIONS:
            raise ConfigError(f"{where}: unknown section {sec!r}")
        types = _field_types(SECTIONS[sec])
        if key not in types:
            raise ConfigError(f"{where}: unknown key {sec}.{key}")
        setattr(getattr(cfg, sec), key, _parse_value(rhs, types[key], f"{where} ({lhs})"))
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every field of every section, in declaration order."""
    lines = []
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            lines.append(f"{sec}.{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
