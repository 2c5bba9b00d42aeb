"""Weight initialization: full-init vs scratch on the dense line, and
bt_full from scratch vs full-init without behavior transfer on the deceptive chain."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from common import charts, parser, pretrained, transfer


def steps_to_90(rec) -> float:
    ret, steps = rec.column("mean_return"), rec.column("env_steps")
    return float(steps[np.argmax(ret >= ret[-1] - 0.1 * abs(ret[-1]))])


if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    out = Path(args.out)
    dense = pretrained("dense", out)
    full = [transfer("dense", dense, "eps_greedy", s, out, init_mode="full") for s in range(args.seeds)]
    scratch = [transfer("dense", dense, "eps_greedy", s, out) for s in range(args.seeds)]
    wins = sum(steps_to_90(f) < steps_to_90(s) for f, s in zip(full, scratch))
    print(f"dense line: full-init reaches 90% of final return first in {wins}/{args.seeds} seeds")
    charts({"full init": full, "scratch": scratch}, out / "charts_dense", ["mean_return"])

    deceptive = pretrained("deceptive", out)
    bt = [transfer("deceptive", deceptive, "bt_full", s, out) for s in range(args.seeds)]
    fi = [transfer("deceptive", deceptive, "eps_greedy", s, out, init_mode="full") for s in range(args.seeds)]
    wins = sum(b.final_return >= f.final_return for b, f in zip(bt, fi))
    print(f"deceptive chain: bt_full (scratch) final >= full-init final in {wins}/{args.seeds} seeds")
    charts({"bt_full scratch": bt, "full init, eps_greedy": fi}, out / "charts_deceptive_init", ["mean_return"])
