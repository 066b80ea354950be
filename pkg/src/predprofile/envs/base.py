"""Common environment plumbing: step results, abstractions and trackers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from ..core import Alphabet, TestOfInterest

REWARD_VALUES = frozenset({-5.0, -1.0, 0.0, 1.0, 10.0})


@dataclass(frozen=True)
class StepResult:
    obs: int
    reward: float
    info: Any = None


@dataclass(frozen=True)
class Abstraction:
    """Many-to-one map from full observation indices to abstract ones."""

    name: str
    alphabet: Alphabet
    fn: Callable[[int], int]

    def __call__(self, obs: int) -> int:
        return self.fn(obs)


def identity_abstraction(alphabet: Alphabet) -> Abstraction:
    return Abstraction("none", alphabet, lambda o: o)


class Tracker(Protocol):
    """Incremental exact oracle over the abstract observation stream."""

    def reset(self) -> None: ...

    def observe(self, action: int, obs: int) -> None: ...

    def profile(self) -> np.ndarray: ...


class Environment(Protocol):
    env_id: str
    alphabet: Alphabet
    abstraction: Abstraction
    tests: Sequence[TestOfInterest]

    def reset(self) -> None: ...

    def step(self, action: int) -> StepResult: ...

    def tracker(self) -> Tracker: ...

    def expert_action(self, tracker: Tracker) -> int: ...
