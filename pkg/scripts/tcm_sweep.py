"""Three Card Monte training-size sweep: eval CSVs, long-format plot data, monotonicity check.

Runs the full pipeline for every (training size, seed) pair, gathers the
evaluation CSVs into one plot-data file and checks that the median RMSE of
each PP method does not increase with training size.

    python3 scripts/tcm_sweep.py --sizes 2000 5000 20000 --seeds 0 1 2 3 4 --out runs/sweep
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from predprofile.cli import EXIT_OK, main as cli
from predprofile.plotdata import emit_plotdata, median_by_size, plot_rows

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "tcm_quick.cfg"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--sizes", type=int, nargs="+", default=[2000, 5000, 20000])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)
    evals = []
    for size in args.sizes:
        for seed in args.seeds:
            out = Path(args.out) / f"n{size}_s{seed}"
            sets = [x for kv in [f"episodes={size}", *args.set] for x in ("--set", kv)]
            code = cli(["all", "--config", args.config, "--seed", str(seed), "--out", str(out), *sets])
            if code != EXIT_OK:
                return code
            evals.append(out / "trial0" / "eval.csv")
    plot = Path(args.out) / "plotdata.csv"
    emit_plotdata(evals, plot)
    rows = plot_rows(evals)
    methods = sorted({r[1] for r in rows if r[1].startswith("pp-")})
    ok = True
    for m in methods:
        med = median_by_size(rows, m)
        mono = all(b[1] <= a[1] for a, b in zip(med, med[1:]))
        ok &= mono
        print(f"{m}: " + ", ".join(f"{s}: {v:.4f}" for s, v in med) + f" -> {'monotone' if mono else 'NOT monotone'}")
    print(f"plot data: {plot}")
    return EXIT_OK if ok else 1


if __name__ == "__main__":
    sys.exit(main())
