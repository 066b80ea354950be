"""Alphabets, histories, tests of interest and exact test prediction.

A history is a tuple of ``(action, observation)`` index pairs.  A test of
interest is a tuple of ``(action, predicate)`` steps where the predicate is a
frozenset of observation indices.  Predictions are computed with the chain
rule against any object implementing :class:`GenerativeOracle`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Protocol, Sequence, TextIO

import numpy as np

from .errors import ConfigError, ConsistencyError, ParseError

History = tuple  # tuple[tuple[int, int], ...]
NULL_HISTORY: tuple = ()

NORM_TOL = 1e-12


@dataclass(frozen=True)
class Alphabet:
    """Named action and observation symbols with dense integer indices.

    ``observations`` may be any sequence supporting ``len``, indexing and
    ``index`` (the gallery uses a lazily decoded sequence of 2**23 codes).
    """

    actions: tuple
    observations: Sequence[str]
    _action_ix: dict = field(init=False, repr=False, compare=False)
    _obs_ix: dict | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.actions or len(self.observations) == 0:
            raise ConfigError("alphabet lists must be non-empty")
        aix = {name: i for i, name in enumerate(self.actions)}
        if len(aix) != len(self.actions):
            raise ConfigError("duplicate action names")
        object.__setattr__(self, "_action_ix", aix)
        oix = None
        if isinstance(self.observations, (list, tuple)):
            oix = {name: i for i, name in enumerate(self.observations)}
            if len(oix) != len(self.observations):
                raise ConfigError("duplicate observation names")
        object.__setattr__(self, "_obs_ix", oix)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    def action_index(self, name: str) -> int:
        try:
            return self._action_ix[name]
        except KeyError:
            raise ConfigError(f"unknown action {name!r}") from None

    def obs_index(self, name: str) -> int:
        try:
            if self._obs_ix is not None:
                return self._obs_ix[name]
            return self.observations.index(name)
        except (KeyError, ValueError):
            raise ConfigError(f"unknown observation {name!r}") from None

    def action_name(self, i: int) -> str:
        return self.actions[i]

    def obs_name(self, i: int) -> str:
        return self.observations[i]

    def check_history(self, h: History) -> None:
        na, no = self.n_actions, self.n_obs
        for a, o in h:
            if not (0 <= a < na and 0 <= o < no):
                raise ConfigError(f"step {(a, o)} outside alphabet ({na} actions, {no} observations)")

    def format_history(self, h: History) -> str:
        return " ".join(f"{self.actions[a]}:{self.observations[o]}" for a, o in h)

    def parse_history(self, text: str) -> History:
        steps = []
        for tok in text.split():
            a, _, o = tok.partition(":")
            steps.append((self.action_index(a), self.obs_index(o)))
        return tuple(steps)


@dataclass(frozen=True)
class TestOfInterest:
    """A test: a sequence of (action, allowed observation set) steps."""

    steps: tuple
    name: str = ""

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        steps = tuple((int(a), frozenset(p)) for a, p in self.steps)
        for _, pred in steps:
            if not pred:
                raise ConfigError("observation predicate must be non-empty")
        object.__setattr__(self, "steps", steps)
        # predicate bounds, so validation stays cheap for huge sets
        object.__setattr__(self, "_bounds", tuple((min(p), max(p)) for _, p in steps))

    def __len__(self):
        return len(self.steps)

    @property
    def actions(self) -> tuple:
        return tuple(a for a, _ in self.steps)

    def check(self, alphabet: Alphabet) -> None:
        for (a, _), (lo, hi) in zip(self.steps, self._bounds):
            if not 0 <= a < alphabet.n_actions:
                raise ConfigError(f"test action {a} outside alphabet")
            if lo < 0 or hi >= alphabet.n_obs:
                raise ConfigError("test predicate outside observation alphabet")


@dataclass(frozen=True)
class Trajectory:
    env_id: str
    seed: int
    steps: tuple

    def __len__(self):
        return len(self.steps)

    @property
    def actions(self) -> tuple:
        return tuple(a for a, _ in self.steps)

    @property
    def observations(self) -> tuple:
        return tuple(o for _, o in self.steps)


class GenerativeOracle(Protocol):
    """Exact next-observation distributions p(o | h, a)."""

    alphabet: Alphabet

    def next_obs_dist(self, history: History, action: int) -> Mapping[int, float]:
        ...


def check_normalized(dist: Mapping[int, float], tol: float = NORM_TOL) -> None:
    # lazy mappings over huge alphabets expose their mass directly
    total = dist.total() if hasattr(dist, "total") else math.fsum(dist.values())
    if abs(total - 1.0) > tol:
        raise ConsistencyError(f"oracle distribution sums to {total!r}")


def _predict_steps(oracle: GenerativeOracle, h: History, steps: tuple) -> float:
    a, pred = steps[0]
    dist = oracle.next_obs_dist(h, a)
    check_normalized(dist)
    rest = steps[1:]
    if hasattr(dist, "items_in"):
        # lazy distributions enumerate their own support inside pred
        pairs = dist.items_in(pred)
    elif len(pred) <= len(dist):
        pairs = ((o, dist.get(o, 0.0)) for o in sorted(pred))
    else:
        pairs = ((o, p) for o, p in dist.items() if o in pred)
    total = 0.0
    for o, p in pairs:
        if p <= 0.0:
            continue
        total += p if not rest else p * _predict_steps(oracle, h + ((a, o),), rest)
    return total


def predict_test(oracle: GenerativeOracle, h: History, t: TestOfInterest) -> float:
    """p(t | h) by the chain rule; the empty test has probability 1."""
    if not t.steps:
        return 1.0
    oracle.alphabet.check_history(h)
    t.check(oracle.alphabet)
    return _predict_steps(oracle, tuple(h), t.steps)


def phi(oracle: GenerativeOracle, h: History, tests: Sequence[TestOfInterest]) -> np.ndarray:
    """Prediction profile: one prediction per test of interest."""
    return np.array([predict_test(oracle, h, t) for t in tests], dtype=float)


class Outcome(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    NOT_APPLICABLE = "not-applicable"


def test_outcome(traj: Trajectory | History, offset: int, t: TestOfInterest) -> Outcome:
    """Outcome of ``t`` started right after the first ``offset`` steps."""
    steps = traj.steps if isinstance(traj, Trajectory) else traj
    if not 0 <= offset <= len(steps):
        raise ValueError("offset outside trajectory")
    if offset + len(t.steps) > len(steps):
        return Outcome.NOT_APPLICABLE
    ok = True
    for (ta, pred), (a, o) in zip(t.steps, steps[offset:]):
        if a != ta:
            return Outcome.NOT_APPLICABLE
        if o not in pred:
            ok = False
    return Outcome.SUCCESS if ok else Outcome.FAILURE


test_outcome.__test__ = False  # type: ignore[attr-defined]


# ---------------------------------------------------------------- trajectory I/O

def format_trajectory(traj: Trajectory, alphabet: Alphabet) -> str:
    body = " ".join(f"{alphabet.actions[a]} {alphabet.observations[o]}" for a, o in traj.steps)
    return f"{traj.env_id} {traj.seed} {body}".rstrip()


def write_trajectories(fh: TextIO, trajs: Iterable[Trajectory], alphabet: Alphabet) -> None:
    for traj in trajs:
        fh.write(format_trajectory(traj, alphabet))
        fh.write("\n")


def read_trajectories(fh: TextIO, alphabet_for) -> Iterator[Trajectory]:
    """Parse trajectory lines.  ``alphabet_for(env_id)`` returns the alphabet."""
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) < 2 or len(toks) % 2:
            raise ParseError(f"line {lineno}: expected 'envId seed (action obs)*'")
        env_id = toks[0]
        try:
            seed = int(toks[1])
            alphabet = alphabet_for(env_id)
            steps = tuple(
                (alphabet.action_index(toks[i]), alphabet.obs_index(toks[i + 1]))
                for i in range(2, len(toks), 2)
            )
        except (ConfigError, ValueError, KeyError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        yield Trajectory(env_id, seed, steps)
