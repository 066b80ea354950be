"""OLGARB policy gradient on binary predictive features, plus evaluation.

The policy is a softmax over actions with one weight per (feature, action)
pair.  Learning follows online GPOMDP with an eligibility trace and a
running average-reward baseline:

    z <- beta * z + grad log pi(a | f; w)
    w <- w + eta * (r - rbar_prev) * z
    rbar <- rbar + kappa * (r - rbar)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import numpy as np
from numba import njit

from .errors import ConfigError, ConsistencyError

N_BINS = 10
ETA = 0.01
BETA = 0.95
KAPPA = 0.001


class FeatureMode(Enum):
    PREDICTIVE = "predictive"
    SOM = "som"


def bin_index(p: float) -> int:
    """Half-open bins of width 0.1 with the top bin closed at 1."""
    return min(int(math.floor(N_BINS * p)), N_BINS - 1)


@dataclass
class FeatureSpace:
    """Layout of the binary feature ids.

    Observation and action slots reserve one extra id for "none" (the
    start of the stream, before anything has been seen).
    """

    mode: FeatureMode
    n_tests: int
    n_obs: int
    n_actions: int
    joint: bool = False
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.mode = FeatureMode(self.mode)
        if self.mode is FeatureMode.PREDICTIVE and self.n_tests < 1:
            raise ConfigError("predictive features need at least one test of interest")

    @property
    def size(self) -> int:
        no, na = self.n_obs + 1, self.n_actions + 1
        if self.mode is FeatureMode.PREDICTIVE:
            return N_BINS * self.n_tests + no
        return no * no * na if self.joint else 2 * no + na

    def build(self, profile, last_obs: int | None, prev_obs: int | None = None,
              prev_action: int | None = None) -> list:
        """Active feature ids as a list of ints."""
        no = self.n_obs + 1
        lo = self.n_obs if last_obs is None else last_obs
        if self.mode is FeatureMode.PREDICTIVE:
            if profile is None:
                raise ConfigError("predictive features need a profile")
            vals = profile.tolist() if isinstance(profile, np.ndarray) else list(profile)
            if len(vals) != self.n_tests:
                raise ConfigError(f"profile has {len(vals)} entries, feature space expects {self.n_tests}")
            ids = []
            for j, p in enumerate(vals):
                if not 0.0 <= p <= 1.0:
                    self.clamped += 1
                    p = min(max(p, 0.0), 1.0)
                ids.append(j * N_BINS + min(int(N_BINS * p), N_BINS - 1))
            ids.append(N_BINS * self.n_tests + lo)
            return ids
        po = self.n_obs if prev_obs is None else prev_obs
        pa = self.n_actions if prev_action is None else prev_action
        if self.joint:
            return [(po * (self.n_actions + 1) + pa) * no + lo]
        return [lo, no + po, 2 * no + pa]


def build_features(profile, last_obs, prev_obs=None, prev_action=None, *, mode=FeatureMode.PREDICTIVE,
                   n_obs: int, n_actions: int, joint: bool = False) -> list:
    """One-shot feature construction; see ``FeatureSpace.build``."""
    m = 0 if profile is None else len(profile)
    return FeatureSpace(mode, m, n_obs, n_actions, joint).build(profile, last_obs, prev_obs, prev_action)


# ---------------------------------------------------------------- policy

@njit(cache=True)
def _softmax_rows(w, f):
    n_act = w.shape[1]
    logits = np.zeros(n_act)
    for i in f:
        for a in range(n_act):
            logits[a] += w[i, a]
    e = np.exp(logits - logits.max())
    return e / e.sum()


@njit(cache=True)
def _olgarb_kernel(w, z, f, p, action, reward, beta, eta, baseline):
    """Trace decay plus gradient, then the advantage-weighted step.

    Returns False if any weight became non-finite.
    """
    z *= beta
    for i in f:
        for a in range(z.shape[1]):
            z[i, a] -= p[a]
        z[i, action] += 1.0
    adv = reward - baseline
    ok = True
    if adv != 0.0:
        step = eta * adv
        for i in range(w.shape[0]):
            for a in range(w.shape[1]):
                w[i, a] += step * z[i, a]
                if not np.isfinite(w[i, a]):
                    ok = False
    return ok


def _ids(f) -> np.ndarray:
    return np.asarray(f, dtype=np.int64)


def policy_probs(w: np.ndarray, f) -> np.ndarray:
    """Softmax action probabilities; max-subtraction guards overflow."""
    return _softmax_rows(w, _ids(f))


def _draw(p: np.ndarray, u: float) -> int:
    acc = 0.0
    probs = p.tolist()
    for a, pa in enumerate(probs):
        acc += pa
        if u < acc:
            return a
    return len(probs) - 1


def policy_sample(w: np.ndarray, f, rng: np.random.Generator) -> int:
    return _draw(policy_probs(w, f), rng.random())


def log_policy_grad(w: np.ndarray, f: np.ndarray, action: int) -> np.ndarray:
    """Dense gradient of log pi(action | f; w) with respect to w."""
    g = np.zeros_like(w)
    g[f] = -policy_probs(w, f)
    g[f, action] += 1.0
    return g


@dataclass
class OlgarbState:
    z: np.ndarray
    baseline: float = 0.0
    steps: int = 0
    beta: float = BETA
    eta: float = ETA
    kappa: float = KAPPA

    @classmethod
    def zeros(cls, n_features: int, n_actions: int, **kw) -> "OlgarbState":
        return cls(np.zeros((n_features, n_actions)), **kw)


def new_policy(n_features: int, n_actions: int) -> np.ndarray:
    return np.zeros((n_features, n_actions))


def olgarb_step(state: OlgarbState, w: np.ndarray, f, action: int, reward: float,
                probs: np.ndarray | None = None) -> tuple[OlgarbState, np.ndarray]:
    """One in-place OLGARB update; returns ``(state, w)`` for convenience."""
    ids = _ids(f)
    p = _softmax_rows(w, ids) if probs is None else probs
    ok = _olgarb_kernel(w, state.z, ids, p, action, float(reward), state.beta, state.eta, state.baseline)
    state.baseline += state.kappa * (reward - state.baseline)
    state.steps += 1
    if not (ok and math.isfinite(state.baseline)):
        raise ConsistencyError(f"non-finite OLGARB update at step {state.steps}: "
                               f"baseline={state.baseline}, reward={reward}, active={ids.tolist()}, "
                               f"max|w|={np.nanmax(np.abs(w))}, max|z|={np.nanmax(np.abs(state.z))}")
    return state, w


# ---------------------------------------------------------------- feature sources

class FeatureSource(Protocol):
    name: str

    def reset(self) -> None: ...

    def observe(self, action: int, obs: int) -> None: ...

    def profile(self) -> np.ndarray | None: ...


class OracleSource:
    """Exact profiles from the environment's tracker."""

    name = "oracle"

    def __init__(self, tracker):
        self.tracker = tracker
        self.fallbacks = 0

    def reset(self) -> None:
        self.tracker.reset()

    def observe(self, action: int, obs: int) -> None:
        self.tracker.observe(action, obs)

    def profile(self) -> np.ndarray:
        return self.tracker.profile()


class RuntimeSource:
    """Adapter for PP runtimes (LPST, PP-POMDP) and flat POMDP trackers."""

    def __init__(self, runtime, name: str):
        self.runtime = runtime
        self.name = name

    @property
    def fallbacks(self) -> int:
        return self.runtime.fallbacks

    @property
    def ambiguous(self) -> int:
        return getattr(self.runtime, "ambiguous", 0)

    def reset(self) -> None:
        self.runtime.reset()

    def observe(self, action: int, obs: int) -> None:
        self.runtime.observe(action, obs)

    def profile(self) -> np.ndarray:
        return self.runtime.profile()


class SomSource:
    """No predictions; the policy sees only the recent observations."""

    name = "som"
    fallbacks = 0

    def reset(self) -> None:
        pass

    def observe(self, action: int, obs: int) -> None:
        pass

    def profile(self) -> None:
        return None


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalRecord:
    source: str
    steps: int
    avg_reward: float
    rmse: float  # joint over steps and tests; nan when undefined
    per_test_rmse: tuple
    fallbacks: int = 0
    ambiguous: int = 0
    clamped: int = 0
    seed: int | None = None
    curve: tuple = ()  # mean reward per window, when requested

    @property
    def rmse_defined(self) -> bool:
        return not math.isnan(self.rmse)


def _rmse(se: np.ndarray, n: int) -> tuple[float, tuple]:
    if n == 0 or se is None:
        return float("nan"), tuple(float("nan") for _ in range(0 if se is None else len(se)))
    per = np.sqrt(se / n)
    return float(np.sqrt(se.sum() / (n * len(se)))), tuple(float(x) for x in per)


def evaluate(env, source, steps: int, seed: int = 0, mode: FeatureMode | None = None, *,
             eta: float = ETA, beta: float = BETA, kappa: float = KAPPA, joint: bool = False,
             learn: bool = True, window: int = 0) -> EvalRecord:
    """Run OLGARB online against ``env`` with features from ``source``.

    RMSE compares the source's profile with the exact profile at every
    step; it is undefined (nan) for SOM features.  With ``window > 0`` the
    record also carries the mean reward of each consecutive window.
    """
    if mode is None:
        mode = FeatureMode.SOM if isinstance(source, SomSource) else FeatureMode.PREDICTIVE
    abstraction = env.abstraction
    n_obs, n_act, m = abstraction.alphabet.n_obs, env.alphabet.n_actions, len(env.tests)
    space = FeatureSpace(mode, m, n_obs, n_act, joint)
    ss = np.random.SeedSequence(seed)
    env_seed, pol_seed = ss.spawn(2)
    env.rng = np.random.default_rng(env_seed)
    rng = np.random.default_rng(pol_seed)
    env.reset()
    source.reset()
    tracker = env.tracker()
    w = new_policy(space.size, n_act)
    state = OlgarbState.zeros(space.size, n_act, beta=beta, eta=eta, kappa=kappa)

    scored = mode is FeatureMode.PREDICTIVE
    se = np.zeros(m) if scored else None
    total = 0.0
    curve = []
    last = prev = prev_a = None
    for t in range(steps):
        if window and t and t % window == 0:
            curve.append(total)
        prof = source.profile()
        if scored:
            if prof is None or len(prof) != m:
                raise ConfigError(f"source {source.name} gives {None if prof is None else len(prof)} "
                                  f"predictions; environment has {m} tests")
            d = prof - tracker.profile()
            se += d * d
        f = _ids(space.build(prof, last, prev, prev_a))
        p = _softmax_rows(w, f)
        a = _draw(p, rng.random())
        res = env.step(a)
        o = abstraction(res.obs)
        total += res.reward
        if learn:
            olgarb_step(state, w, f, a, res.reward, p)
        tracker.observe(a, o)
        source.observe(a, o)
        prev, prev_a, last = last, a, o
    rmse, per = _rmse(se, steps)
    if window and steps:
        curve.append(total)
        cum = np.diff(np.array([0.0] + curve))
        sizes = np.diff(np.array([0] + [min(window * (k + 1), steps) for k in range(len(cum))]))
        curve = tuple((cum / sizes).tolist())
    return EvalRecord(source.name, steps, total / steps if steps else float("nan"), rmse, per,
                      getattr(source, "fallbacks", 0), getattr(source, "ambiguous", 0),
                      space.clamped, seed, tuple(curve))


def expert_policy(env, tracker) -> int:
    return env.expert_action(tracker)


def evaluate_expert(env, steps: int, seed: int = 0) -> EvalRecord:
    """Average reward of the hand-coded expert driven by the exact tracker."""
    env.rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    env.reset()
    tracker = env.tracker()
    total = 0.0
    for _ in range(steps):
        a = expert_policy(env, tracker)
        res = env.step(a)
        total += res.reward
        tracker.observe(a, env.abstraction(res.obs))
    return EvalRecord("expert", steps, total / steps if steps else float("nan"), 0.0,
                      tuple(0.0 for _ in env.tests), seed=seed)


def make_sources(names: Sequence[str], env, runtimes: dict) -> list:
    """Feature sources by name: ``oracle``, ``som`` or a key of ``runtimes``."""
    out = []
    for n in names:
        if n == "oracle":
            out.append(OracleSource(env.tracker()))
        elif n == "som":
            out.append(SomSource())
        elif n in runtimes:
            out.append(RuntimeSource(runtimes[n], n))
        else:
            raise ConfigError(f"unknown feature source {n!r}")
    return out
