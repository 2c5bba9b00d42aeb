"""Helpers shared by the experiment scripts: config loading, runs, output."""

from __future__ import annotations

import argparse
import dataclasses
import math
from pathlib import Path

import numpy as np

from behavior_transfer.harness.checkpoint import read_checkpoint, write_checkpoint
from behavior_transfer.harness.config import load_config
from behavior_transfer.harness.metrics import RunRecord, emit_charts, emit_metrics
from behavior_transfer.harness.runner import run_pretrain, transfer_run

CONFIGS = Path(__file__).resolve().parent / "configs"


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, default=10, help="number of transfer seeds")
    p.add_argument("--out", default="out", help="output directory")
    return p


def pretrained(name: str, out: Path) -> Path:
    """Pre-train once per environment; reuses an existing checkpoint in ``out``."""
    path = out / f"pretrain_{name}" / "checkpoint.json"
    if path.exists():
        read_checkpoint(path)
        return path
    ckpt, rec = run_pretrain(load_config(CONFIGS / f"pretrain_{name}.cfg"))
    emit_metrics(rec, path.parent, label=f"pretrain {name}")
    return write_checkpoint(ckpt, path)


def transfer(name: str, ckpt: Path, mode: str, seed: int, out: Path, init_mode: str = "scratch"):
    cfg = load_config(CONFIGS / f"transfer_{name}.cfg").replace(
        explore=dict(mode=mode), run=dict(seed=seed, pretrained_checkpoint=str(ckpt), init_mode=init_mode)
    )
    rec = transfer_run(cfg)
    emit_metrics(rec, out / f"{name}_{mode}_{init_mode}" / f"seed_{seed}", label=f"{mode} seed {seed}")
    return rec


def steps_to_goal(rec) -> float:
    g = rec.rows[-1].steps_to_first_goal
    return math.inf if math.isnan(g) else g


def mean_curve(label: str, records, metrics):
    """Per-row mean of ``metrics`` over runs, on the shortest common evaluation grid."""
    n = min(len(r.rows) for r in records)
    rows = [
        dataclasses.replace(records[0].rows[i], **{m: float(np.mean([getattr(r.rows[i], m) for r in records])) for m in metrics})
        for i in range(n)
    ]
    return label, RunRecord(rows=rows)


def charts(groups: dict, out: Path, metrics):
    return emit_charts([mean_curve(k, v, metrics) for k, v in groups.items()], out, metrics)
