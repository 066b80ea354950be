"""Tabular POMDPs: belief filtering, likelihood and Baum-Welch training.

Emissions keep the full conditional form ``O[s, a, s', o]`` (observation
depends on the previous state, the action and the new state).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .core import Alphabet, TestOfInterest
from .errors import ConfigError, ImpossibleObservationError, ParseError

NORM_TOL = 1e-10
TINY = 1e-300
FORMAT_TAG = "tabular-pomdp v1"


@dataclass
class TabularPomdp:
    initial: np.ndarray  # (S,)
    transition: np.ndarray  # (S, A, S)
    emission: np.ndarray  # (S, A, S, O)
    actions: tuple = ()
    observations: tuple = ()

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        self.transition = np.asarray(self.transition, dtype=float)
        self.emission = np.asarray(self.emission, dtype=float)
        S, A, S2 = self.transition.shape
        if self.initial.shape != (S,) or S2 != S or self.emission.shape[:3] != (S, A, S):
            raise ConfigError("inconsistent POMDP table shapes")
        if not self.actions:
            self.actions = tuple(f"a{i}" for i in range(A))
        if not self.observations:
            self.observations = tuple(f"o{i}" for i in range(self.emission.shape[3]))
        self._joint = None

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_obs(self) -> int:
        return self.emission.shape[3]

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(tuple(self.actions), tuple(self.observations))

    @property
    def joint(self) -> np.ndarray:
        """J[a, o, s, s'] = T[s, a, s'] * O[s, a, s', o]."""
        if self._joint is None:
            J = self.transition[:, :, :, None] * self.emission
            self._joint = np.ascontiguousarray(J.transpose(1, 3, 0, 2))
        return self._joint

    def validate(self, tol: float = NORM_TOL) -> None:
        for name, arr in (("initial", self.initial), ("transition", self.transition),
                          ("emission", self.emission)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} has negative or non-finite entries")
            if np.max(np.abs(arr.sum(axis=-1) - 1.0)) > tol:
                raise ConfigError(f"{name} rows do not sum to 1")


# ---------------------------------------------------------------- filtering

def belief_update(model: TabularPomdp, b: np.ndarray, a: int, o: int) -> np.ndarray:
    """Posterior over the new hidden state after taking ``a`` and seeing ``o``."""
    num = b @ model.joint[a, o]
    z = num.sum()
    if z <= TINY:
        raise ImpossibleObservationError(f"observation {o} has zero probability after action {a}")
    return num / z


def forward(model: TabularPomdp, steps) -> tuple[np.ndarray, float]:
    """Scaled forward pass: (filtered beliefs (T+1, S), log-likelihood)."""
    alphas = np.empty((len(steps) + 1, model.n_states))
    alphas[0] = model.initial
    ll = 0.0
    J = model.joint
    for t, (a, o) in enumerate(steps):
        v = alphas[t] @ J[a, o]
        c = v.sum()
        if c <= 0.0:
            return alphas[:t + 1], -math.inf
        ll += math.log(c)
        alphas[t + 1] = v / c
    return alphas, ll


def likelihood(model: TabularPomdp, steps) -> float:
    """log p(o_1..o_n | a_1..a_n); -inf for impossible trajectories."""
    return forward(model, steps)[1]


def next_obs_probs(model: TabularPomdp, b: np.ndarray, a: int) -> np.ndarray:
    """p(o | b, a) over the whole observation alphabet."""
    return np.einsum("s,st,sto->o", b, model.transition[:, a, :], model.emission[:, a, :, :])


class PomdpOracle:
    """A POMDP as a generative oracle (belief filtering with prior fallback)."""

    def __init__(self, model: TabularPomdp):
        self.model = model
        self.alphabet = model.alphabet
        self.fallbacks = 0

    def belief(self, history) -> np.ndarray:
        b = self.model.initial
        for a, o in history:
            try:
                b = belief_update(self.model, b, a, o)
            except ImpossibleObservationError:
                self.fallbacks += 1
                b = self.model.initial
        return b

    def next_obs_dist(self, history, action: int) -> dict:
        p = next_obs_probs(self.model, self.belief(history), action)
        p = p / p.sum()
        return {int(o): float(v) for o, v in enumerate(p) if v > 0.0}


def _test_matrix(model: TabularPomdp, test: TestOfInterest) -> np.ndarray:
    """Vector q with p(test | belief b) = b @ q (any number of predicate steps)."""
    q = np.ones(model.n_states)
    for a, pred in reversed(test.steps):
        idx = np.fromiter(sorted(pred), dtype=np.int64)
        J = model.joint[a][idx]  # (|pred|, S, S')
        q = np.einsum("kst,t->s", J, q)
    return q


class FlatPomdpRuntime:
    """Incremental belief tracker producing test predictions each step."""

    def __init__(self, model: TabularPomdp, tests: Sequence[TestOfInterest]):
        self.model = model
        self.tests = tuple(tests)
        self.Q = np.stack([_test_matrix(model, t) for t in self.tests], axis=1) if self.tests \
            else np.zeros((model.n_states, 0))
        self.fallbacks = 0
        self.reset()

    def reset(self) -> None:
        self.b = self.model.initial.copy()

    def observe(self, a: int, o: int) -> None:
        num = self.b @ self.model.joint[a, o]
        z = num.sum()
        if z <= TINY:
            self.fallbacks += 1
            self.b = self.model.initial.copy()
        else:
            self.b = num / z

    def profile(self) -> np.ndarray:
        return np.clip(self.b @ self.Q, 0.0, 1.0)


def flat_predict(model: TabularPomdp, history, tests: Sequence[TestOfInterest]) -> tuple[np.ndarray, int]:
    """Model-implied profile at ``history`` and the number of prior resets used."""
    rt = FlatPomdpRuntime(model, tests)
    for a, o in history:
        rt.observe(a, o)
    return rt.profile(), rt.fallbacks


# ---------------------------------------------------------------- EM

@dataclass
class EmReport:
    traces: list = field(default_factory=list)  # one log-likelihood trace per restart
    selected: int = 0
    iterations: int = 0

    @property
    def trace(self) -> list:
        return self.traces[self.selected]

    @property
    def final_loglik(self) -> float:
        return self.trace[-1]


class _Batch:
    """Padded (N, T) action/observation arrays; pads use an identity step."""

    def __init__(self, data, n_actions: int, n_obs: int):
        seqs = [s for s in data if len(s) > 0]
        self.N = len(seqs)
        self.T = max((len(s) for s in seqs), default=0)
        self.K = n_actions * n_obs  # id K marks padding
        pair = np.full((self.N, self.T), self.K, dtype=np.int64)
        for i, s in enumerate(seqs):
            arr = np.asarray(s, dtype=np.int64).reshape(-1, 2)
            pair[i, :len(arr)] = arr[:, 0] * n_obs + arr[:, 1]
        self.pair = pair
        self.n_obs = n_obs


def _random_model(S: int, A: int, O: int, rng: np.random.Generator) -> tuple:
    init = rng.dirichlet(np.ones(S))
    T = rng.dirichlet(np.ones(S), size=(S, A))
    E = rng.dirichlet(np.ones(O), size=(S, A, S))
    return init, T, E


def _estep(init, T, E, batch: _Batch, chunk: int):
    """Expected counts over all sequences: (loglik, init counts, pair counts (K, S, S)).

    Pair counts are accumulated as grouped ``alpha^T beta`` products and
    multiplied by the joint transition-emission table once at the end.
    """
    S = init.shape[0]
    K = batch.K
    J = (T[:, :, :, None] * E).transpose(1, 3, 0, 2).reshape(K, S, S)
    Jp = np.concatenate([J, np.eye(S)[None]], axis=0)
    ll = 0.0
    g0 = np.zeros(S)
    outer = np.zeros((K, S, S))
    for lo in range(0, batch.N, chunk):
        pair = batch.pair[lo:lo + chunk]
        n, Tn = pair.shape
        alpha = np.empty((Tn + 1, n, S))
        c = np.empty((Tn, n))
        alpha[0] = init
        for t in range(Tn):
            v = np.matmul(alpha[t][:, None, :], Jp[pair[:, t]])[:, 0]
            c[t] = v.sum(axis=1)
            alpha[t + 1] = v / c[t][:, None]
        ll += float(np.log(c).sum())
        scaled = np.empty((Tn, n, S))  # beta_{t+1} / c_t
        beta = np.ones((n, S))
        for t in range(Tn - 1, -1, -1):
            scaled[t] = beta / c[t][:, None]
            beta = np.matmul(Jp[pair[:, t]], scaled[t][:, :, None])[:, :, 0]
        g0 += (alpha[0] * beta).sum(axis=0)
        keys = pair.T.ravel()
        order = np.argsort(keys, kind="stable")
        bounds = np.searchsorted(keys[order], np.arange(K + 1))
        left = alpha[:Tn].reshape(-1, S)
        right = scaled.reshape(-1, S)
        for k in range(K):
            sel = order[bounds[k]:bounds[k + 1]]
            if len(sel):
                outer[k] += left[sel].T @ right[sel]
    return ll, g0, outer * J


def _normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x.sum(axis=axis, keepdims=True)
    n = x.shape[axis]
    out = np.where(z > 0, x / np.where(z > 0, z, 1.0), 1.0 / n)
    return out


def _mstep(g0, C, A: int, O: int):
    S = g0.shape[0]
    C = C.reshape(A, O, S, S)
    init = _normalize(g0)
    T = _normalize(C.sum(axis=1).transpose(1, 0, 2))  # (S, A, S')
    E = _normalize(C.transpose(2, 0, 3, 1))  # (S, A, S', O)
    return init, T, E


def em_train(data, n_states: int, n_actions: int, n_obs: int, max_iters: int = 50,
             n_restarts: int = 3, rng: np.random.Generator | None = None, tol: float = 1e-6,
             chunk: int = 4096, actions: tuple = (), observations: tuple = ()) -> tuple[TabularPomdp, EmReport]:
    """Action-conditioned Baum-Welch from Dirichlet(1) starts; best restart wins.

    ``data`` is a list of step sequences ``[(a, o), ...]``.  Empty sequences
    are ignored; the trace of each restart records the log-likelihood before
    every M-step and at the returned parameters.
    """
    if n_states < 1:
        raise ConfigError("n_states must be >= 1")
    if n_restarts < 1 or max_iters < 0:
        raise ConfigError("need n_restarts >= 1 and max_iters >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    batch = _Batch(data, n_actions, n_obs)
    if batch.N == 0:
        raise ConfigError("em_train needs non-empty data")
    report = EmReport()
    best = None
    for r in range(n_restarts):
        params = _random_model(n_states, n_actions, n_obs, rng)
        trace = []
        for it in range(max_iters):
            ll, g0, C = _estep(*params, batch, chunk)
            trace.append(ll)
            if it > 0 and ll - trace[-2] < tol:
                break
            params = _mstep(g0, C, n_actions, n_obs)
        else:
            trace.append(_estep(*params, batch, chunk)[0])
        report.traces.append(trace)
        report.iterations = max(report.iterations, len(trace))
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], r, params)
    _, report.selected, (init, T, E) = best
    model = TabularPomdp(init, T, E, actions, observations)
    return model, report


# ---------------------------------------------------------------- serialization

def _fmt(row) -> str:
    return " ".join("%.17g" % v for v in row)


def write_model(path, model: TabularPomdp, extra: dict | None = None) -> None:
    S, A, O = model.n_states, model.n_actions, model.n_obs
    lines = [f"# {FORMAT_TAG}"]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}={v}")
    lines += [f"states {S}", f"actions {A} " + " ".join(model.actions),
              f"observations {O} " + " ".join(model.observations),
              "initial " + _fmt(model.initial), "T"]
    for s in range(S):
        for a in range(A):
            lines.append(f"{s} {a} " + _fmt(model.transition[s, a]))
    lines.append("O")
    for s in range(S):
        for a in range(A):
            for t in range(S):
                lines.append(f"{s} {a} {t} " + _fmt(model.emission[s, a, t]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_model(path) -> TabularPomdp:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != f"# {FORMAT_TAG}":
        raise ParseError(f"{path}: missing '{FORMAT_TAG}' header")
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]
    try:
        it = iter(body)
        S = int(next(it)[1].split()[1])
        toks = next(it)[1].split()
        A, actions = int(toks[1]), tuple(toks[2:])
        toks = next(it)[1].split()
        O, observations = int(toks[1]), tuple(toks[2:])
        init = np.array([float(x) for x in next(it)[1].split()[1:]])
        if next(it)[1] != "T":
            raise ValueError("expected T section")
        T = np.empty((S, A, S))
        for _ in range(S * A):
            toks = next(it)[1].split()
            T[int(toks[0]), int(toks[1])] = [float(x) for x in toks[2:]]
        if next(it)[1] != "O":
            raise ValueError("expected O section")
        E = np.empty((S, A, S, O))
        for _ in range(S * A * S):
            toks = next(it)[1].split()
            E[int(toks[0]), int(toks[1]), int(toks[2])] = [float(x) for x in toks[3:]]
    except (StopIteration, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    return TabularPomdp(init, T, E, actions, observations)
