"""Average reward of OLGARB on Three Card Monte under different feature sources.

Sources: a PP-POMDP learned with KLD translation, the exact oracle, the
second-order Markov (SOM) features and a 30-state flat POMDP.  Prints the
whole-run average and the last-window average for every seed.

    python3 scripts/tcm_control.py --steps 1000000 --seeds 0 1 2 3 4
"""
from __future__ import annotations

import argparse
import csv

import numpy as np

from predprofile.config import ExperimentConfig
from predprofile.control import OracleSource, RuntimeSource, SomSource, evaluate
from predprofile.envs import make_env
from predprofile.envs import threecard as tc
from predprofile.pipeline import abstract_steps, generate_episodes
from predprofile.pomdp import FlatPomdpRuntime, em_train
from predprofile.ppmodel import PpAlphabet, PpPomdpRuntime, train_pp_pomdp
from predprofile.profiles import cluster_profiles, collect_stats, initial_profile_index, translate_all


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=100_000)
    ap.add_argument("--flat-episodes", type=int, default=5000)
    ap.add_argument("--steps", type=int, default=1_000_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--window", type=int, default=100_000)
    ap.add_argument("--out", default="tcm_control.csv")
    args = ap.parse_args(argv)
    d = ExperimentConfig()
    env = make_env("threecard")
    data = [t.steps for t in generate_episodes(env, args.episodes, d.episode_length, np.random.default_rng(1))]
    stats = collect_stats(data, tc.TESTS, None, 4)
    profiles = cluster_profiles(stats, d.alpha, d.min_trials)
    vals, init = profiles.values(), initial_profile_index(stats, profiles)
    pts = translate_all(data, stats, profiles, "kld")
    alph = PpAlphabet.from_data(pts, len(profiles))
    pp_model, _ = train_pp_pomdp(pts, alph, None, d.em_iters, d.em_restarts, np.random.default_rng(1))

    flat_data = generate_episodes(env, args.flat_episodes, d.episode_length, np.random.default_rng(2))
    flat, _ = em_train(abstract_steps(flat_data, env.abstraction), d.flat_states, 4, tc.ALPHABET.n_obs,
                       d.flat_iters, 1, np.random.default_rng(3))

    rows = []
    for seed in args.seeds:
        for name in ("pp", "oracle", "som", "flat"):
            e = make_env("threecard")
            if name == "pp":
                src = RuntimeSource(PpPomdpRuntime(pp_model, vals, alph, init), "pp")
            elif name == "oracle":
                src = OracleSource(e.tracker())
            elif name == "som":
                src = SomSource()
            else:
                src = RuntimeSource(FlatPomdpRuntime(flat, e.tests), "flat")
            rec = evaluate(e, src, args.steps, seed=seed, window=args.window)
            last = rec.curve[-1] if rec.curve else float("nan")
            rows.append((seed, name, rec.avg_reward, last, rec.rmse))
            print(f"seed {seed} {name:6s} avg {rec.avg_reward:+.4f} last window {last:+.4f} "
                  f"rmse {rec.rmse:.4f}", flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "source", "avgReward", "lastWindow", "rmse"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
