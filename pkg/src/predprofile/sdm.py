"""Finite blocks of the system dynamics matrix and rank checks.

Rows are the histories of length <= L_h reachable under a uniform random
policy; columns are singleton-observation tests of length <= L_t.  Columns
that are zero on every row carry no rank and are not materialized, which
keeps long-test blocks of sparse deterministic systems small.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, PreconditionError, SizeError
from .machine import DeterministicMachine, MachineOracle

DEFAULT_CAP = 2_000_000
RANK_TOL = 1e-8


@dataclass
class SdmBlock:
    rows: list  # histories
    cols: list  # tests as tuples of (action, observation)
    entries: np.ndarray
    row_weights: np.ndarray
    policy: str = "uniform"


@dataclass
class RankReport:
    rank: int
    singular_values: np.ndarray
    tolerance: float


def _dist(oracle, h, a, partial: bool) -> dict:
    d = oracle.next_obs_dist(h, a)
    if not d and not partial:
        raise DataError(f"empty distribution at history {h} action {a}")
    return {o: p for o, p in d.items() if p > 0.0}


def reachable_histories(oracle, L_h: int, partial: bool = False) -> tuple[list, list]:
    """Histories with positive probability under uniform actions, with weights."""
    na = oracle.alphabet.n_actions
    rows, weights = [()], [1.0]
    frontier = [((), 1.0)]
    for _ in range(L_h):
        nxt = []
        for h, w in frontier:
            for a in range(na):
                for o, p in sorted(_dist(oracle, h, a, partial).items()):
                    g = h + ((a, o),)
                    nxt.append((g, w * p / na))
        rows += [h for h, _ in nxt]
        weights += [w for _, w in nxt]
        frontier = nxt
    return rows, weights


def _test_probs(oracle, h, L_t: int, partial: bool, out: dict, prefix=(), prob=1.0, budget=None):
    out[prefix] = prob
    if budget is not None and len(out) > budget:
        raise SizeError(f"more than {budget} non-zero tests at one history")
    if len(prefix) == L_t:
        return
    for a in range(oracle.alphabet.n_actions):
        for o, p in _dist(oracle, h + prefix, a, partial).items():
            _test_probs(oracle, h, L_t, partial, out, prefix + ((a, o),), prob * p, budget)


def build_sdm(oracle, L_h: int, L_t: int, cap: int = DEFAULT_CAP, partial: bool = False) -> SdmBlock:
    """Block of p(t | h) over reachable rows and all non-zero tests.

    ``partial`` allows an oracle to return an empty distribution for an
    undefined action (prediction-profile systems); such tests score 0.
    """
    rows, weights = reachable_histories(oracle, L_h, partial)
    per_row = []
    cols: set = set()
    for h in rows:
        probs: dict = {}
        _test_probs(oracle, h, L_t, partial, probs, budget=cap)
        per_row.append(probs)
        cols.update(probs)
        if len(rows) * len(cols) > cap:
            raise SizeError(f"block {len(rows)} x >={len(cols)} exceeds cap {cap}")
    cols_sorted = sorted(cols, key=lambda t: (len(t), t))
    cix = {t: j for j, t in enumerate(cols_sorted)}
    M = np.zeros((len(rows), len(cols_sorted)))
    for i, probs in enumerate(per_row):
        for t, p in probs.items():
            M[i, cix[t]] = p
    return SdmBlock(rows, cols_sorted, M, np.array(weights))


def numeric_rank(block, tol: float = RANK_TOL) -> RankReport:
    M = block.entries if isinstance(block, SdmBlock) else np.asarray(block, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DataError("block has non-finite entries")
    if M.size == 0:
        return RankReport(0, np.zeros(0), tol)
    sv = np.linalg.svd(M, compute_uv=False)
    top = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > tol * top)) if top > 0 else 0
    return RankReport(rank, sv, tol)


def prop15_bound(n_actions: int, n_obs: int) -> tuple[float, bool]:
    """Lower bound on the linear dimension of a deterministic system.

    Returns ``(bound, vacuous)``; the bound is 0 and ``vacuous`` is True
    when either alphabet has fewer than two symbols.
    """
    if n_actions < 2 or n_obs < 2:
        return 0.0, True
    return (math.log(n_actions - 1) + math.log(n_obs - 1)) / math.log(n_actions), False


@dataclass
class BoundReport:
    rank: int
    bound: float
    vacuous: bool
    passed: bool
    n_inputs: int
    n_outputs: int
    singular_values: np.ndarray = field(repr=False, default=None)


def check_deterministic(machine: DeterministicMachine) -> None:
    """Exhaustive scan: every (state, input) maps to at most one state."""
    seen: dict = {}
    for (s, i), t in machine.delta.items():
        if seen.setdefault((s, i), t) != t:
            raise PreconditionError(f"non-deterministic transition at state {machine.states[s]}, "
                                    f"input {machine.inputs[i]}")
        if not 0 <= t < len(machine.states):
            raise PreconditionError(f"transition to unknown state from {machine.states[s]}")


def check_deterministic_bound(machine: DeterministicMachine, L_h: int = 3, L_t: int = 2,
                              cap: int = DEFAULT_CAP) -> BoundReport:
    """Rank of the machine's block versus the lower bound on linear dimension."""
    check_deterministic(machine)
    block = build_sdm(MachineOracle(machine), L_h, L_t, cap, partial=not machine.complete)
    rep = numeric_rank(block)
    n_out = len(set(machine.state_output))
    bound, vacuous = prop15_bound(len(machine.inputs), n_out)
    return BoundReport(rep.rank, bound, vacuous, rep.rank >= bound - 1e-12,
                       len(machine.inputs), n_out, rep.singular_values)


class PpSystemOracle:
    """The prediction-profile system of an environment as a partial oracle.

    PP-actions are ``(action, observation)`` pairs of the underlying system
    and PP-observations are indices into ``profiles`` (discovered on the fly
    when ``profiles`` is a list).  Impossible PP-actions yield an empty
    distribution.
    """

    def __init__(self, oracle, tests, pp_actions, profiles: list | None = None, decimals: int = 9):
        from .core import phi

        self._phi = phi
        self.oracle, self.tests = oracle, tests
        self.pp_actions = list(pp_actions)
        self.profiles = profiles if profiles is not None else []
        self.decimals = decimals
        names = [f"{oracle.alphabet.action_name(a)}:{oracle.alphabet.obs_name(o)}" for a, o in self.pp_actions]
        self._cache: dict = {}
        self.alphabet = _PpActions(names)

    def profile_index(self, h) -> int:
        key = tuple(np.round(self._phi(self.oracle, h, self.tests), self.decimals))
        if key not in self.profiles:
            self.profiles.append(key)
        return self.profiles.index(key)

    def _underlying(self, pp_history):
        return tuple(self.pp_actions[i] for i, _ in pp_history)

    def next_obs_dist(self, pp_history, pp_action: int) -> dict:
        key = (pp_history, pp_action)
        if key in self._cache:
            return self._cache[key]
        h = self._underlying(pp_history)
        a, o = self.pp_actions[pp_action]
        if self.oracle.next_obs_dist(h, a).get(o, 0.0) <= 0.0:
            res: dict = {}
        else:
            res = {self.profile_index(h + ((a, o),)): 1.0}
        self._cache[key] = res
        return res


class _PpActions:
    """Action-side alphabet of a PP system (its observations grow lazily)."""

    def __init__(self, names):
        self.actions = tuple(names)
        self.n_actions = len(self.actions)
