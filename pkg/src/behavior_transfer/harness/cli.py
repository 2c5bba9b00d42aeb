"""Command line: ``python -m behavior_transfer <verb> [options]``.

Verbs:

* ``pretrain``  reward-free pre-training; writes ``checkpoint.json`` and metrics
* ``transfer``  learning with task rewards; writes metrics
* ``eval``      greedy evaluation of a checkpoint on the configured environment
* ``sweep``     runs the configured phase for several seeds (``--seeds 0-9``)
* ``plot``      redraws SVG charts from one or more ``metrics.csv`` files

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 integrity error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..envs import make_env
from ..errors import ConfigError, IntegrityError, UsageError, ValidationError
from ..explore import FrozenPolicy
from .checkpoint import read_checkpoint, write_checkpoint
from .config import ExperimentConfig, dump_config, load_config, parse_config
from .metrics import emit_charts, emit_metrics, read_metrics_csv
from .runner import evaluate, run_pretrain, transfer_run

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_INTEGRITY = 0, 1, 2, 3


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("--seeds selects no seeds")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="behavior_transfer", description=__doc__.split("\n\n")[0])
    p.add_argument("verb", choices=("pretrain", "transfer", "eval", "sweep", "plot"))
    p.add_argument("inputs", nargs="*", help="plot: metrics.csv files, optionally as label=path")
    p.add_argument("--config", help="configuration file (section.key = value lines)")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--deterministic", action="store_true", help="single worker, fixed interleave")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="extra config override")
    p.add_argument("--checkpoint", help="eval: checkpoint to evaluate (default run.pretrained_checkpoint)")
    p.add_argument("--episodes", type=int, default=None, help="eval: episode count (default run.eval_episodes)")
    p.add_argument("--seeds", default="0-9", help="sweep: seed list such as 0-9 or 1,3,5")
    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), base=cfg)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.deterministic:
        cfg.run.deterministic = True
    return cfg.validate()


def _run_phase(cfg: ExperimentConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    if cfg.run.phase == "transfer":
        record = transfer_run(cfg)
    else:
        ckpt, record = run_pretrain(cfg)
        write_checkpoint(ckpt, out / "checkpoint.json")
    emit_metrics(record, out, label=f"{cfg.explore.mode} seed {cfg.run.seed}")
    last = record.rows[-1]
    return {
        "seed": cfg.run.seed,
        "env_steps": last.env_steps,
        "final_return": last.mean_return,
        "steps_to_first_reward": last.steps_to_first_reward,
        "steps_to_first_goal": last.steps_to_first_goal,
        "final_state_coverage": last.state_coverage,
    }


def cmd_pretrain(args) -> int:
    cfg = _load(args)
    if cfg.run.phase == "transfer":
        raise ConfigError("pretrain needs run.phase = pretrain_ngu or pretrain_rnd")
    print(json.dumps(_run_phase(cfg, Path(args.out)), sort_keys=True))
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = _load(args)
    if cfg.run.phase != "transfer":
        raise ConfigError("transfer needs run.phase = transfer")
    print(json.dumps(_run_phase(cfg, Path(args.out)), sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    path = args.checkpoint or cfg.run.pretrained_checkpoint
    if not path:
        raise ConfigError("eval needs --checkpoint or run.pretrained_checkpoint")
    env = make_env(cfg.env)
    ckpt = read_checkpoint(path)
    qf = ckpt.to_qfunction()
    if qf.n_actions_base != env.n_actions:
        raise ValidationError("checkpoint action count does not match the environment")
    pi_p = FrozenPolicy("greedy_from_checkpoint", qf=qf, obs_table=env.features) if qf.has_extra_action else None
    ev = evaluate(qf, env, args.episodes or cfg.run.eval_episodes, pi_p=pi_p)
    print(json.dumps({
        "mean_return": ev.mean_return,
        "median_return": ev.median_return,
        "mean_episode_length": ev.mean_length,
        "extra_action_usage": ev.usage,
        "state_coverage": ev.coverage,
    }, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    rows = []
    for seed in _parse_seeds(args.seeds):
        c = cfg.replace(run={"seed": seed})
        rows.append(_run_phase(c, out / f"seed_{seed}"))
        print(json.dumps(rows[-1], sort_keys=True))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_plot(args) -> int:
    if not args.inputs:
        raise ConfigError("plot needs at least one metrics.csv")
    runs = []
    for item in args.inputs:
        label, _, path = item.rpartition("=")
        runs.append((label or Path(path).parent.name or path, read_metrics_csv(path)))
    for p in emit_charts(runs, args.out):
        print(p)
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "transfer": cmd_transfer, "eval": cmd_eval, "sweep": cmd_sweep, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ConfigError, ValidationError, UsageError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
