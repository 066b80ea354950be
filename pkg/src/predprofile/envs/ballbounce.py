"""1D Ball Bounce: a ball walks along a strip of k pixels, reflecting at the ends.

The system is uncontrolled and modelled with a single dummy action.  The
abstraction keeps the 3-pixel window centred on pixel ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Alphabet, TestOfInterest
from ..errors import ConfigError, MalformedHistoryError
from .base import Abstraction, StepResult

ENV_ID = "ballbounce"
STEP = 0
LEFT, CENTRE, RIGHT = 4, 2, 1
WINDOW_NAMES = tuple(f"w{i:03b}" for i in range(8))


@dataclass(frozen=True)
class BallBounceState:
    k: int
    pos: int = 0
    dir: int = 1


def bb_step(state: BallBounceState) -> tuple[BallBounceState, int]:
    pos = state.pos + state.dir
    d = state.dir
    if pos == 0 or pos == state.k - 1:
        d = -d
    return BallBounceState(state.k, pos, d), pos


def check_x(k: int, x: int) -> None:
    if k < 3:
        raise ConfigError("Ball Bounce needs k >= 3")
    if not 1 <= x <= k - 2:
        raise ConfigError(f"window centre x={x} must lie in [1, {k - 2}]")


def bb_abstract(obs: int, x: int) -> int:
    """3-bit window code: left/centre/right pixel of x is black."""
    return (LEFT if obs == x - 1 else 0) | (CENTRE if obs == x else 0) | (RIGHT if obs == x + 1 else 0)


def full_alphabet(k: int) -> Alphabet:
    return Alphabet(("step",), tuple(f"p{i}" for i in range(k)))


WINDOW_ALPHABET = Alphabet(("step",), WINDOW_NAMES)
WINDOW_TEST = TestOfInterest(((STEP, {o for o in range(8) if o & CENTRE}),), name="step->x")


def full_test(x: int) -> TestOfInterest:
    return TestOfInterest(((STEP, {x}),), name="step->x")


class BallBounceTracker:
    """Exact tracker; validates full or windowed observations."""

    def __init__(self, k: int, x: int, abstract: bool = True):
        check_x(k, x)
        self.k, self.x, self.abstract = k, x, abstract
        self.reset()

    def reset(self) -> None:
        self.state = BallBounceState(self.k)

    def observe(self, action: int, obs: int) -> None:
        if action != STEP:
            raise MalformedHistoryError("Ball Bounce has a single action")
        nxt, pos = bb_step(self.state)
        expect = bb_abstract(pos, self.x) if self.abstract else pos
        if obs != expect:
            raise MalformedHistoryError(f"observed {obs}, ball must be at {pos}")
        self.state = nxt

    def profile(self) -> np.ndarray:
        return np.array([1.0 if self.state.pos + self.state.dir == self.x else 0.0])


def bb_oracle(history, x: int, k: int = 10, abstract: bool = True) -> np.ndarray:
    tr = BallBounceTracker(k, x, abstract)
    for a, o in history:
        tr.observe(a, o)
    return tr.profile()


class BallBounceOracle:
    """Deterministic generative oracle over full or windowed observations."""

    def __init__(self, k: int, x: int | None = None):
        self.k, self.x = k, x
        if x is None:
            self.alphabet = full_alphabet(k)
        else:
            check_x(k, x)
            self.alphabet = WINDOW_ALPHABET

    def next_obs_dist(self, history, action: int) -> dict:
        state = BallBounceState(self.k)
        for a, o in history:
            state, pos = bb_step(state)
            seen = pos if self.x is None else bb_abstract(pos, self.x)
            if a != STEP or o != seen:
                raise MalformedHistoryError(f"impossible step {(a, o)}")
        _, pos = bb_step(state)
        return {pos if self.x is None else bb_abstract(pos, self.x): 1.0}


class BallBounce:
    env_id = ENV_ID
    reward_bounds = (0.0, 0.0)

    def __init__(self, rng: np.random.Generator | None = None, k: int = 10, x: int = 5):
        check_x(k, x)
        self.k, self.x = k, x
        self.alphabet = full_alphabet(k)
        self.abstraction = Abstraction("bb_window", WINDOW_ALPHABET, lambda o: bb_abstract(o, x))
        self.tests = (WINDOW_TEST,)
        self.reset()

    def reset(self) -> None:
        self.state = BallBounceState(self.k)

    def step(self, action: int) -> StepResult:
        self.state, pos = bb_step(self.state)
        return StepResult(pos, 0.0, self.state)

    def tracker(self) -> BallBounceTracker:
        return BallBounceTracker(self.k, self.x)

    def expert_action(self, tracker) -> int:
        return STEP


def ball_bounce_pomdp(k: int):
    """The 2k-2 state hidden-state model (states = (pos, dir) on the cycle)."""
    from ..pomdp import TabularPomdp

    cycle = [(p, 1) for p in range(k - 1)] + [(p, -1) for p in range(k - 1, 0, -1)]
    n = len(cycle)
    T = np.zeros((n, 1, n))
    O = np.zeros((n, 1, n, k))
    for s in range(n):
        T[s, 0, (s + 1) % n] = 1.0
        # emission depends only on the arriving state
        O[s, 0, np.arange(n), [c[0] for c in cycle]] = 1.0
    init = np.zeros(n)
    init[0] = 1.0
    return TabularPomdp(init, T, O, actions=("step",), observations=tuple(f"p{i}" for i in range(k)))
