"""Sparse chain: steps to first goal for bt_full, ez_greedy_repeat and eps_greedy,
plus the extra-action usage curve of bt_full."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from common import charts, parser, pretrained, steps_to_goal, transfer

MODES = ("bt_full", "ez_greedy_repeat", "eps_greedy")

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    out = Path(args.out)
    ckpt = pretrained("chain", out)
    runs = {m: [transfer("chain", ckpt, m, s, out) for s in range(args.seeds)] for m in MODES}
    for m, recs in runs.items():
        g = [steps_to_goal(r) for r in recs]
        print(f"{m:18s} median steps to first goal {np.median(g):>9g}  successes {np.isfinite(g).sum()}/{len(g)}")
    for rec_i, rec in enumerate(runs["bt_full"]):
        u = rec.column("extra_action_usage")
        n = max(1, len(u) // 10)
        print(f"bt_full seed {rec_i}: usage first 10% {u[:n].mean():.3f}, last 10% {u[-n:].mean():.3f}")
    charts(runs, out / "charts_chain", ["mean_return", "extra_action_usage"])
