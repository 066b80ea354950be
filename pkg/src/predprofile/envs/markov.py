"""Small synthetic Markov decision process whose observation is the state."""
from __future__ import annotations

import numpy as np

from ..core import Alphabet, TestOfInterest

ENV_ID = "markov"


class MarkovMdp:
    """Fully observed MDP with Dirichlet(1) transition rows.

    Acts as its own generative oracle: p(o | h, a) = P[a, last state, o].
    """

    def __init__(self, n_states: int = 5, n_actions: int = 2, seed: int = 0, start: int = 0):
        rng = np.random.default_rng(seed)
        self.P = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
        self.start = start
        self.alphabet = Alphabet(tuple(f"a{i}" for i in range(n_actions)),
                                 tuple(f"s{i}" for i in range(n_states)))

    def next_obs_dist(self, history, action: int) -> dict:
        s = history[-1][1] if history else self.start
        return {o: float(p) for o, p in enumerate(self.P[action, s]) if p > 0.0}

    def default_tests(self) -> tuple:
        return (
            TestOfInterest(((0, {0, 1}),), name="a0->{s0,s1}"),
            TestOfInterest(((1, {3}),), name="a1->s3"),
            TestOfInterest(((0, {2}), (1, {4})), name="a0 s2 a1 s4"),
        )
