"""Pipeline stages: data, profiles, translation, models, evaluation.

Every stage reads its inputs from the output directory, writes its
artifacts atomically and records them in ``manifest.json``.  Each
(stage, trial) pair draws from its own random stream derived from the
master seed by hashing, so re-running one stage never perturbs another.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import os
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, resolve_path
from .control import OracleSource, RuntimeSource, SomSource, evaluate, evaluate_expert
from .core import Trajectory, read_trajectories, write_trajectories
from .envs import make_env
from .envs.base import identity_abstraction
from .errors import ConfigError, PrerequisiteError, StalenessError
from .machine import load_machine
from .pomdp import FlatPomdpRuntime, em_train, read_model, write_model
from .ppmodel import (LpstRuntime, PpAlphabet, PpPomdpRuntime, lpst_build, read_lpst, train_pp_pomdp,
                      write_lpst)
from .profiles import (collect_stats, cluster_profiles, initial_profile_index, read_pp_trajectories,
                       read_profiles, translate_all, write_pp_trajectories, write_profiles)
from .sdm import check_deterministic_bound

STAGES = ("gen-data", "estimate-profiles", "translate", "train-pp", "train-flat", "evaluate", "sdm-check")
UPSTREAM = {
    "estimate-profiles": ("gen-data",),
    "translate": ("gen-data", "estimate-profiles"),
    "train-pp": ("estimate-profiles", "translate"),
    "train-flat": ("gen-data",),
    "evaluate": ("estimate-profiles", "translate", "train-pp", "train-flat"),
}
MANIFEST = "manifest.json"


def stage_seed(master: int, stage: str, trial: int) -> np.random.SeedSequence:
    digest = hashlib.sha256(f"{master}:{stage}:{trial}".encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:8], "little"))


def stage_rng(master: int, stage: str, trial: int) -> np.random.Generator:
    return np.random.default_rng(stage_seed(master, stage, trial))


def stage_int(master: int, stage: str, trial: int) -> int:
    return int(stage_seed(master, stage, trial).generate_state(1)[0])


@contextlib.contextmanager
def atomic_write(path: Path, mode: str = "w"):
    """Yield a temporary file handle; rename over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _atomic_via(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` for writers that take a path, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- manifest

class Run:
    """Output directory plus its manifest."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = Path(out)
        self.path = self.out / MANIFEST
        if self.path.exists():
            self.manifest = json.loads(self.path.read_text())
        else:
            self.manifest = {"config_hash": cfg.hash, "tool_version": __version__, "stages": {}}

    def trial_dir(self, trial: int) -> Path:
        return self.out / f"trial{trial}"

    def require(self, stage: str, skip: tuple = ()) -> None:
        for up in UPSTREAM.get(stage, ()):
            if up in skip:
                continue
            rec = self.manifest["stages"].get(up)
            if rec is None or not all((self.out / p).exists() for p in rec["artifacts"]):
                raise PrerequisiteError(f"stage {stage!r} needs the outputs of {up!r}; "
                                        f"run `predprofile {up}` first")
            if rec["config_hash"] != self.cfg.hash:
                raise StalenessError(f"outputs of {up!r} were made with config {rec['config_hash']}, "
                                     f"current config is {self.cfg.hash}; re-run {up!r}")

    def record(self, stage: str, artifacts: list, seconds: float) -> None:
        self.manifest["config_hash"] = self.cfg.hash
        self.manifest["tool_version"] = __version__
        self.manifest["stages"][stage] = {
            "config_hash": self.cfg.hash,
            "artifacts": [str(Path(p).relative_to(self.out)) for p in artifacts],
            "seconds": round(seconds, 3),
        }
        with atomic_write(self.path) as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------- helpers

def build_env(cfg: ExperimentConfig, rng=None):
    return make_env(cfg.env, rng, **cfg.env_params)


def abstraction_of(cfg: ExperimentConfig, env):
    return env.abstraction if cfg.abstraction == "default" else identity_abstraction(env.alphabet)


def generate_episodes(env, n: int, length: int, rng: np.random.Generator, seed: int = 0) -> list:
    """Episodes of full observations under the uniform random policy."""
    n_act = env.alphabet.n_actions
    env.rng = rng
    out = []
    actions = rng.integers(n_act, size=(n, length))
    for e in range(n):
        env.reset()
        steps = []
        for a in actions[e].tolist():
            steps.append((a, env.step(a).obs))
        out.append(Trajectory(env.env_id, seed, tuple(steps)))
    return out


def _paths(run: Run, trial: int) -> dict:
    d = run.trial_dir(trial)
    c = run.cfg
    return {
        "data": d / "data.txt",
        "profiles": d / "profiles.csv",
        "pp": d / f"pp_{c.strategy}.txt",
        "lpst": d / f"lpst_{c.strategy}.txt",
        "pp_pomdp": d / f"pp_pomdp_{c.strategy}.txt",
        "flat": d / "flat_pomdp.txt",
        "eval": d / "eval.csv",
        "sdm": run.out / "sdm.csv",
    }


def _abstract_alphabet(cfg, env):
    return abstraction_of(cfg, env).alphabet


def load_data(cfg: ExperimentConfig, path: Path, env) -> list:
    with open(path) as fh:
        return list(read_trajectories(fh, lambda env_id: env.alphabet))


def abstract_steps(data, abstraction) -> list:
    return [tuple((a, abstraction(o)) for a, o in t.steps) for t in data]


# ---------------------------------------------------------------- stages

def stage_gen_data(run: Run) -> list:
    cfg, arts = run.cfg, []
    for k in range(cfg.trials):
        seed = stage_int(cfg.seed, "gen-data", k)
        env = build_env(cfg)
        data = generate_episodes(env, cfg.episodes, cfg.episode_length, np.random.default_rng(seed), seed)
        p = _paths(run, k)["data"]
        with atomic_write(p) as fh:
            fh.write(f"# config_hash={cfg.hash}\n")
            write_trajectories(fh, data, env.alphabet)
        arts.append(p)
    return arts


def _stats(cfg, env, data):
    return collect_stats(data, env.tests, abstraction_of(cfg, env), cfg.max_search_len)


def stage_estimate_profiles(run: Run) -> list:
    cfg, arts = run.cfg, []
    for k in range(cfg.trials):
        env = build_env(cfg)
        paths = _paths(run, k)
        stats = _stats(cfg, env, load_data(cfg, paths["data"], env))
        profiles = cluster_profiles(stats, cfg.alpha, cfg.min_trials)
        _atomic_via(paths["profiles"], lambda tmp: write_profiles(tmp, profiles, _abstract_alphabet(cfg, env)))
        arts.append(paths["profiles"])
    return arts


def stage_translate(run: Run) -> list:
    cfg, arts = run.cfg, []
    for k in range(cfg.trials):
        env = build_env(cfg)
        paths = _paths(run, k)
        data = load_data(cfg, paths["data"], env)
        stats = _stats(cfg, env, data)
        alph = _abstract_alphabet(cfg, env)
        profiles = read_profiles(paths["profiles"], alph)
        pts = translate_all(data, stats, profiles, cfg.strategy, cfg.alpha, abstraction_of(cfg, env))
        _atomic_via(paths["pp"], lambda tmp: write_pp_trajectories(tmp, pts, alph))
        arts.append(paths["pp"])
    return arts


def _load_pp(cfg, env, paths):
    alph = _abstract_alphabet(cfg, env)
    profiles = read_profiles(paths["profiles"], alph)
    pts = read_pp_trajectories(paths["pp"], alph)
    return profiles, pts, PpAlphabet.from_data(pts, len(profiles))


def stage_train_pp(run: Run) -> list:
    cfg, arts = run.cfg, []
    for k in range(cfg.trials):
        env = build_env(cfg)
        paths = _paths(run, k)
        profiles, pts, pp_alph = _load_pp(cfg, env, paths)
        if cfg.pp_model == "lpst":
            lpst = lpst_build([pp_alph.encode(p) for p in pts], cfg.lpst_max_depth, len(profiles))
            _atomic_via(paths["lpst"], lambda tmp: write_lpst(tmp, lpst, pp_alph))
            arts.append(paths["lpst"])
        else:
            model, rep = train_pp_pomdp(pts, pp_alph, cfg.pp_states or None, cfg.em_iters, cfg.em_restarts,
                                        stage_rng(cfg.seed, "train-pp", k))
            extra = {"config_hash": cfg.hash, "final_loglik": repr(rep.final_loglik)}
            _atomic_via(paths["pp_pomdp"], lambda tmp: write_model(tmp, model, extra))
            arts.append(paths["pp_pomdp"])
    return arts


def stage_train_flat(run: Run) -> list:
    cfg, arts = run.cfg, []
    for k in range(cfg.trials):
        env = build_env(cfg)
        paths = _paths(run, k)
        absn = abstraction_of(cfg, env)
        seqs = abstract_steps(load_data(cfg, paths["data"], env), absn)
        if cfg.flat_episodes:
            seqs = seqs[:cfg.flat_episodes]
        model, rep = em_train(seqs, cfg.flat_states, env.alphabet.n_actions, absn.alphabet.n_obs,
                              cfg.flat_iters, cfg.flat_restarts, stage_rng(cfg.seed, "train-flat", k),
                              actions=tuple(env.alphabet.actions))
        extra = {"config_hash": cfg.hash, "final_loglik": repr(rep.final_loglik)}
        _atomic_via(paths["flat"], lambda tmp: write_model(tmp, model, extra))
        arts.append(paths["flat"])
    return arts


def pp_runtime(cfg: ExperimentConfig, env, paths: dict):
    """Trained PP runtime for one trial, rebuilt from its artifacts."""
    data = load_data(cfg, paths["data"], env)
    stats = _stats(cfg, env, data)
    profiles, pts, pp_alph = _load_pp(cfg, env, paths)
    init = initial_profile_index(stats, profiles, cfg.alpha)
    vals = profiles.values()
    if cfg.pp_model == "lpst":
        lpst, _ = read_lpst(paths["lpst"])
        return LpstRuntime(lpst, vals, pp_alph, init)
    return PpPomdpRuntime(read_model(paths["pp_pomdp"]), vals, pp_alph, init)


def source_name(cfg: ExperimentConfig, source: str) -> str:
    if source == "pp":
        return f"pp-{cfg.pp_model}-{cfg.strategy}"
    if source == "flat":
        return "flat-pomdp"
    return source


EVAL_COLUMNS = ("config_hash", "trial", "seed", "episodes", "featureSource", "steps", "avgReward", "rmse")


def stage_evaluate(run: Run) -> list:
    cfg, arts = run.cfg, []
    for k in range(cfg.trials):
        paths = _paths(run, k)
        seed = stage_int(cfg.seed, "evaluate", k)
        rows = []
        for src in cfg.sources:
            env = build_env(cfg)
            if src == "expert":
                rec = evaluate_expert(env, cfg.eval_steps, seed)
            else:
                if src == "pp":
                    source = RuntimeSource(pp_runtime(cfg, env, paths), source_name(cfg, src))
                elif src == "flat":
                    source = RuntimeSource(FlatPomdpRuntime(read_model(paths["flat"]), env.tests), "flat-pomdp")
                elif src == "oracle":
                    source = OracleSource(env.tracker())
                else:
                    source = SomSource()
                rec = evaluate(env, source, cfg.eval_steps, seed, eta=cfg.eta, beta=cfg.beta,
                               kappa=cfg.kappa, joint=cfg.som_joint)
            rows.append(rec)
        names = [t.name or f"t{j}" for j, t in enumerate(build_env(cfg).tests)]
        with atomic_write(paths["eval"]) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVAL_COLUMNS + tuple(f"rmse[{n}]" for n in names) + ("fallbackCount", "ambiguousCount"))
            for rec in rows:
                w.writerow([cfg.hash, k, seed, cfg.episodes, rec.source, rec.steps, repr(rec.avg_reward),
                            repr(rec.rmse)] + [repr(x) for x in rec.per_test_rmse]
                           + [""] * (len(names) - len(rec.per_test_rmse)) + [rec.fallbacks, rec.ambiguous])
        arts.append(paths["eval"])
    return arts


def stage_sdm_check(run: Run) -> list:
    cfg = run.cfg
    if not cfg.machine:
        raise ConfigError("sdm-check needs 'machine = <file>' in the config")
    path = resolve_path(cfg, cfg.machine)
    if not path.exists():
        raise ConfigError(f"machine file {path} not found")
    rep = check_deterministic_bound(load_machine(path), cfg.sdm_lh, cfg.sdm_lt)
    out = _paths(run, 0)["sdm"]
    with atomic_write(out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_hash", "machine", "L_h", "L_t", "rank", "bound", "vacuous", "passed",
                    "inputs", "outputs"])
        w.writerow([cfg.hash, path.name, cfg.sdm_lh, cfg.sdm_lt, rep.rank, repr(rep.bound), rep.vacuous,
                    rep.passed, rep.n_inputs, rep.n_outputs])
    return [out]


RUNNERS = {
    "gen-data": stage_gen_data,
    "estimate-profiles": stage_estimate_profiles,
    "translate": stage_translate,
    "train-pp": stage_train_pp,
    "train-flat": stage_train_flat,
    "evaluate": stage_evaluate,
    "sdm-check": stage_sdm_check,
}


def run_stage(stage: str, cfg: ExperimentConfig, out) -> dict:
    """Run one stage (or ``all``) and return the updated manifest."""
    run = Run(cfg, Path(out))
    if stage == "all":
        order = [s for s in STAGES if s != "sdm-check" or cfg.machine]
        if "flat" not in cfg.sources:
            order.remove("train-flat")
    elif stage in RUNNERS:
        order = [stage]
    else:
        raise ConfigError(f"unknown stage {stage!r}; choose from {STAGES + ('all',)}")
    skip = () if "flat" in cfg.sources else ("train-flat",)
    for s in order:
        run.require(s, skip)
        t0 = time.perf_counter()
        arts = RUNNERS[s](run)
        run.record(s, arts, time.perf_counter() - t0)
    return run.manifest

