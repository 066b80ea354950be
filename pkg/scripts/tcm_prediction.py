"""Three Card Monte prediction error of PP-LPST and PP-POMDP under KLD and CUT.

Trains both model kinds on one data set per translation strategy and reports
RMSE against the exact oracle over an OLGARB-driven evaluation.

    python3 scripts/tcm_prediction.py --episodes 100000 --search-len 4 --steps 100000
"""
from __future__ import annotations

import argparse
import csv
import time

import numpy as np

from predprofile.config import ExperimentConfig
from predprofile.control import RuntimeSource, evaluate
from predprofile.envs import make_env
from predprofile.envs import threecard as tc
from predprofile.pipeline import generate_episodes
from predprofile.ppmodel import LpstRuntime, PpAlphabet, PpPomdpRuntime, lpst_build, train_pp_pomdp
from predprofile.profiles import cluster_profiles, collect_stats, initial_profile_index, translate_all


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=100_000)
    ap.add_argument("--search-len", type=int, default=4)
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="tcm_prediction.csv")
    args = ap.parse_args(argv)
    d = ExperimentConfig()
    t0 = time.perf_counter()
    env = make_env("threecard")
    data = [t.steps for t in generate_episodes(env, args.episodes, d.episode_length, np.random.default_rng(1))]
    stats = collect_stats(data, tc.TESTS, None, args.search_len)
    profiles = cluster_profiles(stats, d.alpha, d.min_trials)
    vals, init = profiles.values(), initial_profile_index(stats, profiles)
    print(f"{len(profiles)} profiles after {time.perf_counter() - t0:.0f}s")
    rows = []
    for strategy in ("kld", "cut"):
        pts = translate_all(data, stats, profiles, strategy)
        alph = PpAlphabet.from_data(pts, len(profiles))
        lpst = lpst_build([alph.encode(p) for p in pts], d.lpst_max_depth, len(profiles))
        model, _ = train_pp_pomdp(pts, alph, None, d.em_iters, d.em_restarts, np.random.default_rng(1))
        makers = {"lpst": lambda: LpstRuntime(lpst, vals, alph, init),
                  "pomdp": lambda: PpPomdpRuntime(model, vals, alph, init)}
        for kind, make in makers.items():
            for seed in args.seeds:
                rec = evaluate(make_env("threecard"), RuntimeSource(make(), kind), args.steps, seed=seed)
                rows.append((strategy, kind, seed, rec.rmse, rec.fallbacks, rec.ambiguous))
                print(f"{strategy}-{kind} seed {seed}: rmse {rec.rmse:.4f} fallbacks {rec.fallbacks} "
                      f"({time.perf_counter() - t0:.0f}s)", flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "model", "seed", "rmse", "fallbacks", "ambiguous"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
