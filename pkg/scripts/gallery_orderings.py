"""Run the desk-scale Shooting Gallery pipeline for several seeds and tabulate orderings.

    python3 scripts/gallery_orderings.py --out runs/gallery --seeds 0 1 2 3 4
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from predprofile.cli import EXIT_OK, main as cli

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "gallery_desk.cfg"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--out", default="runs/gallery")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    args = ap.parse_args(argv)
    wins = [0, 0, 0]
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}"
        code = cli(["all", "--config", args.config, "--seed", str(seed), "--out", str(out)])
        if code != EXIT_OK:
            return code
        with open(out / "trial0" / "eval.csv", newline="") as fh:
            r = {row["featureSource"]: row for row in csv.DictReader(fh)}
        pp, flat, som = r["pp-lpst-kld"], r["flat-pomdp"], r["som"]
        checks = (float(pp["rmse"]) < float(flat["rmse"]),
                  float(pp["avgReward"]) > float(flat["avgReward"]),
                  float(som["avgReward"]) < float(pp["avgReward"]))
        wins = [w + c for w, c in zip(wins, checks)]
        print(f"seed {seed}: rmse pp {float(pp['rmse']):.4f} flat {float(flat['rmse']):.4f} | reward pp "
              f"{float(pp['avgReward']):+.4f} flat {float(flat['avgReward']):+.4f} som "
              f"{float(som['avgReward']):+.4f} | {checks}", flush=True)
    n = len(args.seeds)
    print(f"rmse pp<flat {wins[0]}/{n}; reward pp>flat {wins[1]}/{n}; reward som<pp {wins[2]}/{n}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
