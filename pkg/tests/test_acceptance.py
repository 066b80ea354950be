"""Acceptance suite: one test per criterion, each printing a single verdict line.

The slow criteria share one trained set of Three Card Monte models (module
fixture).  Run just this file with ``pytest -v -s tests/test_acceptance.py``
to see the verdict lines as they happen; they are also printed under a
normal ``pytest -v`` run.
"""
from __future__ import annotations

import csv
import itertools
import math
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from predprofile.cli import EXIT_OK, main
from predprofile.config import ExperimentConfig
from predprofile.control import (OlgarbState, OracleSource, RuntimeSource, SomSource, evaluate,
                                 log_policy_grad, olgarb_step, policy_probs, policy_sample)
from predprofile.core import phi, predict_test
from predprofile.envs import ballbounce as bb
from predprofile.envs import gallery as g
from predprofile.envs import make_env
from predprofile.envs import threecard as tc
from predprofile.envs.markov import MarkovMdp
from predprofile.machine import MachineOracle, ballbounce_machine, threecard_machine, unroll_runtime
from predprofile.pipeline import abstract_steps, generate_episodes
from predprofile.pomdp import (FlatPomdpRuntime, TabularPomdp, belief_update, em_train, forward)
from predprofile.ppmodel import (LpstRuntime, PpAlphabet, PpPomdpRuntime, lpst_build, train_pp_pomdp)
from predprofile.profiles import (cluster_profiles, collect_stats, critical_value, g_statistic_array,
                                  initial_profile_index, translate_all)
from predprofile.sdm import build_sdm, check_deterministic_bound, numeric_rank

from _reference import gallery_particle_estimate, tcm_histories, tcm_posterior_profile

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DEFAULTS = ExperimentConfig()


def verdict(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


def majority(flags) -> bool:
    flags = list(flags)
    return sum(flags) > len(flags) // 2


# ---------------------------------------------------------------- shared 3CM models

TRAIN_EPISODES = 100_000
SEARCH_LEN = 4


@pytest.fixture(scope="module")
def tcm_models():
    """Profiles plus LPST and PP-POMDP models for both translation strategies."""
    t0 = time.perf_counter()
    env = make_env("threecard")
    data = [t.steps for t in generate_episodes(env, TRAIN_EPISODES, 10, np.random.default_rng(1))]
    stats = collect_stats(data, tc.TESTS, None, SEARCH_LEN)
    profiles = cluster_profiles(stats, DEFAULTS.alpha, DEFAULTS.min_trials)
    vals, init = profiles.values(), initial_profile_index(stats, profiles)
    models, traces = {}, []
    for strategy in ("kld", "cut"):
        pts = translate_all(data, stats, profiles, strategy)
        alph = PpAlphabet.from_data(pts, len(profiles))
        lpst = lpst_build([alph.encode(p) for p in pts], DEFAULTS.lpst_max_depth, len(profiles))
        model, rep = train_pp_pomdp(pts, alph, None, DEFAULTS.em_iters, DEFAULTS.em_restarts,
                                    np.random.default_rng(1))
        traces.extend(rep.traces)
        models[strategy] = (alph, lpst, model)
    return {"values": vals, "init": init, "models": models, "traces": traces,
            "train_seconds": time.perf_counter() - t0}


def _runtime(tcm_models, strategy, kind):
    alph, lpst, model = tcm_models["models"][strategy]
    if kind == "lpst":
        return LpstRuntime(lpst, tcm_models["values"], alph, tcm_models["init"])
    return PpPomdpRuntime(model, tcm_models["values"], alph, tcm_models["init"])


# ---------------------------------------------------------------- 1

def test_c1_tcm_profile_discovery(capsys):
    t0 = time.perf_counter()
    env = make_env("threecard")
    data = [t.steps for t in generate_episodes(env, 20_000, 10, np.random.default_rng(0))]
    stats = collect_stats(data, tc.TESTS, None, DEFAULTS.max_search_len)
    profiles = cluster_profiles(stats, 1e-5, DEFAULTS.min_trials)
    secs = time.perf_counter() - t0
    vals = profiles.values()
    dist = [float(np.min([np.max(np.abs(v - e)) for e in np.eye(3)])) for v in vals]
    ok = len(profiles) == 3 and max(dist) <= 0.05 and secs <= 300
    verdict(capsys, 1, ok, f"{len(profiles)} profiles, max Linf to one-hot {max(dist):.4f}, {secs:.1f}s")


# ---------------------------------------------------------------- 2

@pytest.mark.slow
def test_c2_tcm_prediction_error(capsys, tcm_models):
    t0 = time.perf_counter()
    parts, ok = [], True
    for strategy in ("kld", "cut"):
        for kind in ("lpst", "pomdp"):
            rec = evaluate(make_env("threecard"), RuntimeSource(_runtime(tcm_models, strategy, kind), kind),
                           100_000, seed=0)
            ok &= rec.rmse < 0.02
            parts.append(f"{strategy}-{kind} rmse {rec.rmse:.4f} fb {rec.fallbacks}")
    secs = tcm_models["train_seconds"] + time.perf_counter() - t0
    ok &= secs <= 900
    verdict(capsys, 2, ok, "; ".join(parts) + f"; {secs:.0f}s")


# ---------------------------------------------------------------- 3

@pytest.mark.slow
def test_c3_tcm_control_ordering(capsys, tcm_models):
    t0 = time.perf_counter()
    env = make_env("threecard")
    flat_data = generate_episodes(env, 5000, 10, np.random.default_rng(2))
    flat, _ = em_train(abstract_steps(flat_data, env.abstraction), DEFAULTS.flat_states, 4,
                       tc.ALPHABET.n_obs, DEFAULTS.flat_iters, 1, np.random.default_rng(3))
    rows = []
    for seed in range(5):
        rew = {}
        for name in ("pp", "oracle", "som", "flat"):
            e = make_env("threecard")
            src = {"pp": lambda: RuntimeSource(_runtime(tcm_models, "kld", "pomdp"), "pp"),
                   "oracle": lambda: OracleSource(e.tracker()),
                   "som": SomSource,
                   "flat": lambda: RuntimeSource(FlatPomdpRuntime(flat, e.tests), "flat")}[name]()
            rew[name] = evaluate(e, src, 1_000_000, seed=seed).avg_reward
        rows.append(rew)
    secs = time.perf_counter() - t0
    c_oracle = majority(r["pp"] >= r["oracle"] - 0.005 for r in rows)
    c_som = majority(r["som"] < 0 for r in rows)
    c_flat = majority(r["flat"] < r["pp"] for r in rows)
    ok = c_oracle and c_som and c_flat and secs <= 1800
    detail = " ".join(f"[s{k} pp {r['pp']:+.4f} or {r['oracle']:+.4f} som {r['som']:+.4f} "
                      f"flat {r['flat']:+.4f}]" for k, r in enumerate(rows))
    verdict(capsys, 3, ok, f"pp>=oracle-0.005 {c_oracle}, som<0 {c_som}, flat<pp {c_flat}; "
                           f"{detail}; {secs:.0f}s")


# ---------------------------------------------------------------- 4

@pytest.mark.slow
def test_c4_gallery_ordering(capsys, tmp_path):
    t0 = time.perf_counter()
    rows = []
    for seed in range(5):
        out = tmp_path / f"s{seed}"
        assert main(["all", "--config", str(CONFIGS / "gallery_desk.cfg"), "--seed", str(seed),
                     "--out", str(out)]) == EXIT_OK
        with open(out / "trial0" / "eval.csv", newline="") as fh:
            rows.append({r["featureSource"]: r for r in csv.DictReader(fh)})
    secs = time.perf_counter() - t0

    def num(r, src, col):
        return float(r[src][col])

    c_rmse = majority(num(r, "pp-lpst-kld", "rmse") < num(r, "flat-pomdp", "rmse") for r in rows)
    c_flat = majority(num(r, "pp-lpst-kld", "avgReward") > num(r, "flat-pomdp", "avgReward") for r in rows)
    c_som = majority(num(r, "som", "avgReward") < num(r, "pp-lpst-kld", "avgReward") for r in rows)
    ok = c_rmse and c_flat and c_som and secs <= 3600
    detail = " ".join(f"[s{k} rmse pp {num(r, 'pp-lpst-kld', 'rmse'):.3f} flat {num(r, 'flat-pomdp', 'rmse'):.3f}"
                      f" rew pp {num(r, 'pp-lpst-kld', 'avgReward'):+.4f} flat {num(r, 'flat-pomdp', 'avgReward'):+.4f}"
                      f" som {num(r, 'som', 'avgReward'):+.4f}]" for k, r in enumerate(rows))
    verdict(capsys, 4, ok, f"rmse {c_rmse}, reward vs flat {c_flat}, som below pp {c_som}; {detail}; {secs:.0f}s")


# ---------------------------------------------------------------- 5

def _determinism(samples, tol):
    """Group (abstract key -> profiles); return (worst spread, keys shared by distinct full histories)."""
    groups = defaultdict(list)
    fulls = defaultdict(set)
    for key, full, prof in samples:
        groups[key].append(prof)
        fulls[key].add(full)
    worst = max(float(np.max(np.ptp(np.array(v), axis=0))) for v in groups.values())
    shared = sum(1 for k in groups if len(fulls[k]) > 1)
    repeated = sum(1 for v in groups.values() if len(v) > 1)
    return worst, shared, repeated


def _tcm_samples(n, rng):
    env = make_env("threecard", rng)
    oracle = tc.TcmOracle()
    out = []
    while len(out) < n:
        env.reset()
        h = []
        for _ in range(int(rng.integers(1, 11))):
            a = int(rng.integers(4))
            h.append((a, env.step(a).obs))
        key = tuple(h)
        out.append((key, key, phi(oracle, key, tc.TESTS)))
    return out


def _bb_samples(n, rng, k=10, x=5):
    oracle = bb.BallBounceOracle(k)
    test = bb.full_test(x)
    out = []
    for _ in range(n):
        state, full = bb.BallBounceState(k), []
        for _ in range(int(rng.integers(1, 201))):
            state, pos = bb.bb_step(state)
            full.append((bb.STEP, pos))
        key = tuple((a, bb.bb_abstract(o, x)) for a, o in full)
        out.append((key, tuple(full), np.array([predict_test(oracle, tuple(full), test)])))
    return out


def _gallery_samples(n, rng):
    oracle = g.GalleryOracle()
    test = oracle.tabs.full_test()
    out = []
    while len(out) < n:
        env = make_env("gallery", np.random.default_rng(int(rng.integers(2**32))))
        full = []
        for _ in range(5):
            a = int(rng.integers(2))
            full.append((a, env.step(a).obs))
            key = tuple((b, g.gallery_abstract(o)) for b, o in full)
            out.append((key, tuple(full), np.array([predict_test(oracle, tuple(full), test)])))
    return out[:n]


def test_c5_pp_system_determinism(capsys):
    rng = np.random.default_rng(5)
    parts, ok = [], True
    for name, samples, tol in (("tcm", _tcm_samples(10_000, rng), 0.0),
                               ("ballbounce", _bb_samples(10_000, rng), 0.0),
                               ("gallery", _gallery_samples(10_000, rng), 1e-9)):
        worst, shared, repeated = _determinism(samples, tol)
        ok &= worst <= tol and repeated > 0
        if name == "gallery":
            ok &= shared > 0  # the abstraction actually merges distinct full histories
        parts.append(f"{name} spread {worst:.2e} ({repeated} repeated keys, {shared} merged)")
    verdict(capsys, 5, ok, "; ".join(parts))


# ---------------------------------------------------------------- 6

def test_c6_markov_collapse(capsys):
    mdp = MarkovMdp(n_states=5, seed=0)
    tests = mdp.default_tests()
    pairs = [(a, o) for a in range(mdp.alphabet.n_actions) for o in range(mdp.alphabet.n_obs)]
    by_action = {pa: phi(mdp, (pa,), tests) for pa in pairs}
    worst, checked = 0.0, 0
    for depth in range(0, 4):
        for h in itertools.product(pairs, repeat=depth):
            for pa in pairs:
                worst = max(worst, float(np.max(np.abs(phi(mdp, h + (pa,), tests) - by_action[pa]))))
                checked += 1
    verdict(capsys, 6, worst == 0.0, f"{checked} (history, PP-action) pairs to depth 4, max deviation {worst:.1e}")


# ---------------------------------------------------------------- 7

@pytest.mark.slow
def test_c7_rank_suite(capsys, tcm_models):
    parts, ok = [], True
    r_tcm = numeric_rank(build_sdm(MachineOracle(threecard_machine()), 4, 2)).rank
    ok &= r_tcm == 3
    r_bb = numeric_rank(build_sdm(bb.BallBounceOracle(10), 40, 40)).rank
    ok &= r_bb <= 18
    r_bbpp = numeric_rank(build_sdm(MachineOracle(ballbounce_machine()), 4, 4)).rank
    ok &= r_bbpp <= 3
    parts.append(f"tcm machine rank {r_tcm}, ballbounce k=10 rank {r_bb}, ballbounce PP machine rank {r_bbpp}")
    for strategy in ("kld", "cut"):
        for kind in ("lpst", "pomdp"):
            alph = tcm_models["models"][strategy][0]
            m = unroll_runtime(lambda: _runtime(tcm_models, strategy, kind), len(alph), 3,
                               lambda rt: rt.index)
            if len(m.inputs) >= 2 and len(set(m.state_output)) >= 2:
                rep = check_deterministic_bound(m, 2, 1)
                ok &= rep.passed
                parts.append(f"{strategy}-{kind} rank {rep.rank} >= bound {rep.bound:.3f}")
            else:
                parts.append(f"{strategy}-{kind} bound vacuous")
    verdict(capsys, 7, ok, "; ".join(parts))


# ---------------------------------------------------------------- 8

def _random_pomdp(rng, S, A, O):
    init = rng.dirichlet(np.ones(S))
    T = rng.dirichlet(np.ones(S), size=(S, A))
    E = rng.dirichlet(np.ones(O), size=(S, A, S))
    return TabularPomdp(init, T, E)


def _sample_steps(model, rng, n):
    s = rng.choice(len(model.initial), p=model.initial)
    out = []
    for _ in range(n):
        a = int(rng.integers(model.n_actions))
        s2 = rng.choice(model.n_states, p=model.transition[s, a])
        out.append((a, int(rng.choice(model.n_obs, p=model.emission[s, a, s2]))))
        s = s2
    return out


def test_c8_statistical_machinery(capsys):
    rng = np.random.default_rng(8)
    n, pairs = 500, 100_000
    p = rng.uniform(0.05, 0.95, size=pairs)
    s1, s2 = rng.binomial(n, p), rng.binomial(n, p)
    rate = float(np.mean(g_statistic_array(s1, np.full(pairs, n), s2, np.full(pairs, n)) > critical_value(0.001)))
    c_rate = 0.0005 <= rate <= 0.002

    worst_drop = -np.inf
    env = make_env("threecard")
    seqs = abstract_steps(generate_episodes(env, 1000, 10, np.random.default_rng(1)), env.abstraction)
    runs = [(seqs, 8, 4, 10)]
    for k in range(3):
        m = _random_pomdp(rng, 3, 2, 3)
        runs.append(([_sample_steps(m, rng, 30) for _ in range(100)], 4, 2, 3))
    n_traces = 0
    for data, S, A, O in runs:
        _, rep = em_train(data, S, A, O, 40, 2, np.random.default_rng(len(data)), tol=0.0)
        for tr in rep.traces:
            n_traces += 1
            if len(tr) > 1:
                worst_drop = max(worst_drop, float(np.max(-np.diff(tr))))
    c_em = worst_drop <= 1e-9

    worst_b = 0.0
    for _ in range(50):
        m = _random_pomdp(rng, 4, 3, 5)
        steps = _sample_steps(m, rng, 40)
        alphas, _ = forward(m, steps)
        b = m.initial.copy()
        for t, (a, o) in enumerate(steps):
            b = belief_update(m, b, a, o)
            worst_b = max(worst_b, float(np.max(np.abs(b - alphas[t + 1]))))
    c_belief = worst_b <= 1e-10
    verdict(capsys, 8, c_rate and c_em and c_belief,
            f"G-test null rate {rate:.5f}; worst EM drop {worst_drop:.2e} over {n_traces} traces; "
            f"belief vs forward {worst_b:.1e}")


# ---------------------------------------------------------------- 9

def test_c9_controller(capsys):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        w = rng.normal(size=(6, 3))
        f = np.flatnonzero(rng.random(6) < 0.5)
        f = f if f.size else np.array([0])
        a = int(rng.integers(3))
        g_an = log_policy_grad(w, f, a)
        eps = 1e-6
        g_fd = np.zeros_like(w)
        for i, b in itertools.product(range(6), range(3)):
            wp, wm = w.copy(), w.copy()
            wp[i, b] += eps
            wm[i, b] -= eps
            g_fd[i, b] = (math.log(policy_probs(wp, f)[a]) - math.log(policy_probs(wm, f)[a])) / (2 * eps)
        worst = max(worst, float(np.max(np.abs(g_an - g_fd)) / max(np.max(np.abs(g_fd)), 1e-12)))
    probs = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        w, state = np.zeros((1, 2)), OlgarbState.zeros(1, 2)
        for _ in range(50_000):
            act = policy_sample(w, [0], r)
            olgarb_step(state, w, [0], act, float(r.random() < (0.7 if act == 0 else 0.3)))
        probs.append(float(policy_probs(w, [0])[0]))
    ok = worst < 1e-6 and majority(p > 0.95 for p in probs)
    verdict(capsys, 9, ok, f"gradient rel err {worst:.1e}; Pr(better arm) {np.round(probs, 4).tolist()}")


# ---------------------------------------------------------------- 10

def test_c10_oracle_validation(capsys):
    rng = np.random.default_rng(10)
    worst_g = 0.0
    for k in range(100):
        env = make_env("gallery", np.random.default_rng(1000 + k))
        full = []
        for _ in range(int(rng.integers(1, 9))):
            a = int(rng.integers(2))
            full.append((a, env.step(a).obs))
        exact = g.gallery_oracle([(a, g.gallery_abstract(o)) for a, o in full])[0]
        worst_g = max(worst_g, abs(exact - gallery_particle_estimate(full, 100_000, rng)))
    worst_t, count = 0.0, 0
    for depth in range(7):
        for h in tcm_histories(depth):
            worst_t = max(worst_t, float(np.max(np.abs(tc.tcm_oracle(h) - tcm_posterior_profile(h)))))
            count += 1
    ok = worst_g <= 0.01 and worst_t <= 1e-12
    verdict(capsys, 10, ok, f"gallery vs Monte Carlo max {worst_g:.4f} on 100 histories; "
                            f"tcm max {worst_t:.1e} over {count} histories to depth 6")
