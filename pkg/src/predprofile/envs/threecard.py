"""Three Card Monte.

A dealer shows where the ace starts (card 2), swaps pairs of cards, and
eventually asks for a guess.  The agent can watch or flip any card; flips
cost 1 while the cards are being mixed, and a flip at the guess prompt pays
+1 if it finds the ace.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..core import Alphabet, TestOfInterest, check_normalized
from ..errors import MalformedHistoryError
from .base import StepResult, identity_abstraction

ENV_ID = "threecard"

WATCH, FLIP1, FLIP2, FLIP3 = range(4)
ACTIONS = ("watch", "flip1", "flip2", "flip3")

POS1, POS2, POS3, SWAP12, SWAP13, SWAP23, GUESS, ACE, NOTACE, FORFEIT = range(10)
OBSERVATIONS = ("pos1", "pos2", "pos3", "swap12", "swap13", "swap23",
                "guess", "ace", "notace", "forfeit")

PAIRS = ((1, 2), (1, 3), (2, 3))
SWAP_OBS = (SWAP12, SWAP13, SWAP23)

DEALING, MIXING, GUESS_PROMPTED = "dealing", "mixing", "guessPrompted"

ALPHABET = Alphabet(ACTIONS, OBSERVATIONS)
TESTS = tuple(TestOfInterest(((a, {ACE}),), name=f"{ACTIONS[a]}->ace")
              for a in (FLIP1, FLIP2, FLIP3))


@dataclass(frozen=True)
class TcmState:
    ace: int = 2
    counts: tuple = (0, 0, 0)
    phase: str = DEALING

    def __post_init__(self):
        if self.ace not in (1, 2, 3) or self.phase not in (DEALING, MIXING, GUESS_PROMPTED):
            raise ValueError(f"invalid state {self}")


INITIAL_STATE = TcmState()


def swap_distribution(counts) -> np.ndarray:
    """Probabilities of (swap12, swap13, swap23, guess) after a watch."""
    counts = np.asarray(counts)
    least = counts == counts.min()
    p = np.empty(4)
    if least.all():
        p[:3] = 0.9 / 3
    else:
        p[:3] = np.where(least, 0.5 / least.sum(), 0.4 / (~least).sum())
    p[3] = 0.1
    return p


@lru_cache(maxsize=4096)
def _swap_cdf(counts: tuple) -> tuple:
    return tuple(np.cumsum(swap_distribution(counts))[:3])


def _swap(ace: int, pair) -> int:
    i, j = pair
    if ace == i:
        return j
    if ace == j:
        return i
    return ace


def _flip_obs(action: int, ace: int) -> int:
    return ACE if action == ace else NOTACE


def tcm_step(state: TcmState, action: int, rng: np.random.Generator) -> tuple[TcmState, StepResult]:
    """One environment step; flips use action index == card number."""
    if state.phase == DEALING:
        obs = POS1 + state.ace - 1 if action == WATCH else _flip_obs(action, state.ace)
        return replace(state, phase=MIXING), StepResult(obs, 0.0, state)
    if state.phase == MIXING:
        if action != WATCH:
            return state, StepResult(_flip_obs(action, state.ace), -1.0, state)
        k = bisect.bisect_right(_swap_cdf(state.counts), rng.random())
        if k == 3:
            return replace(state, phase=GUESS_PROMPTED), StepResult(GUESS, 0.0, state)
        counts = list(state.counts)
        counts[k] += 1
        nxt = TcmState(_swap(state.ace, PAIRS[k]), tuple(counts), MIXING)
        return nxt, StepResult(SWAP_OBS[k], 0.0, state)
    # guess prompt: any action resolves the game
    if action == WATCH:
        return INITIAL_STATE, StepResult(FORFEIT, -1.0, state)
    reward = 1.0 if action == state.ace else -1.0
    return INITIAL_STATE, StepResult(_flip_obs(action, state.ace), reward, state)


_ONE_HOT = tuple(np.eye(3)[i] for i in range(3))
for _v in _ONE_HOT:
    _v.flags.writeable = False


class TcmTracker:
    """Reconstructs the latent state exactly from observations."""

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.state = INITIAL_STATE

    def observe(self, action: int, obs: int) -> None:
        s = self.state
        bad = False
        if s.phase == DEALING:
            expect = POS1 + s.ace - 1 if action == WATCH else _flip_obs(action, s.ace)
            bad = obs != expect
            nxt = replace(s, phase=MIXING)
        elif s.phase == MIXING:
            if action != WATCH:
                bad = obs != _flip_obs(action, s.ace)
                nxt = s
            elif obs == GUESS:
                nxt = replace(s, phase=GUESS_PROMPTED)
            elif obs in SWAP_OBS:
                k = SWAP_OBS.index(obs)
                counts = list(s.counts)
                counts[k] += 1
                nxt = TcmState(_swap(s.ace, PAIRS[k]), tuple(counts), MIXING)
            else:
                bad, nxt = True, s
        else:
            expect = FORFEIT if action == WATCH else _flip_obs(action, s.ace)
            bad = obs != expect
            nxt = INITIAL_STATE
        if bad:
            raise MalformedHistoryError(
                f"{ACTIONS[action]}/{OBSERVATIONS[obs]} impossible in {s}")
        self.state = nxt

    def profile(self) -> np.ndarray:
        return _ONE_HOT[self.state.ace - 1]

    @property
    def ace(self) -> int:
        return self.state.ace

    @property
    def phase(self) -> str:
        return self.state.phase


def replay(history) -> TcmState:
    tr = TcmTracker()
    for a, o in history:
        tr.observe(a, o)
    return tr.state


def tcm_oracle(history) -> np.ndarray:
    """One-hot profile over the three flip tests."""
    tr = TcmTracker()
    for a, o in history:
        tr.observe(a, o)
    return tr.profile().copy()


def next_obs_dist(state: TcmState, action: int) -> dict:
    if state.phase == DEALING:
        return {(POS1 + state.ace - 1 if action == WATCH else _flip_obs(action, state.ace)): 1.0}
    if state.phase == MIXING and action == WATCH:
        p = swap_distribution(state.counts)
        return {SWAP12: p[0], SWAP13: p[1], SWAP23: p[2], GUESS: p[3]}
    if action == WATCH:
        return {FORFEIT: 1.0}
    return {_flip_obs(action, state.ace): 1.0}


class TcmOracle:
    """Generative oracle: exact next-observation distribution."""

    alphabet = ALPHABET

    def next_obs_dist(self, history, action: int) -> dict:
        dist = next_obs_dist(replay(history), action)
        check_normalized(dist)
        return dist


class ThreeCardMonte:
    env_id = ENV_ID
    alphabet = ALPHABET
    abstraction = identity_abstraction(ALPHABET)
    tests = TESTS
    reward_bounds = (-1.0, 1.0)

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.state = INITIAL_STATE

    def reset(self) -> None:
        self.state = INITIAL_STATE

    def step(self, action: int) -> StepResult:
        self.state, res = tcm_step(self.state, action, self.rng)
        return res

    def tracker(self) -> TcmTracker:
        return TcmTracker()

    def expert_action(self, tracker: TcmTracker) -> int:
        """Watch until the guess prompt, then flip the tracked ace."""
        return tracker.ace if tracker.phase == GUESS_PROMPTED else WATCH
