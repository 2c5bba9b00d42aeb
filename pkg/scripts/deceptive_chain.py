"""Deceptive chain: final greedy return of bt_full vs eps_greedy when a
near-start distractor competes with the far goal."""

from __future__ import annotations

from pathlib import Path

from behavior_transfer.envs import distractor_value, make_env
from behavior_transfer.harness.config import load_config

from common import CONFIGS, charts, parser, pretrained, transfer

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    out = Path(args.out)
    env = make_env(load_config(CONFIGS / "transfer_deceptive.cfg").env)
    ckpt = pretrained("deceptive", out)
    runs = {m: [transfer("deceptive", ckpt, m, s, out) for s in range(args.seeds)] for m in ("bt_full", "eps_greedy")}
    for m, recs in runs.items():
        finals = [r.final_return for r in recs]
        goal = sum(f >= env.spec.goal_reward for f in finals)
        trap = sum(abs(f - distractor_value(env)) < 1e-9 for f in finals)
        print(f"{m:10s} finals {finals}  reach goal {goal}/{len(finals)}  stuck on distractor {trap}/{len(finals)}")
    charts(runs, out / "charts_deceptive", ["mean_return"])
