"""Models of the prediction-profile system and their self-fed runtimes.

PP-actions are (action, abstract observation) pairs; PP-observations are
profile indices.  A runtime never sees true profiles: after each PP-action it
predicts the next profile and feeds that prediction back as if observed.

Two representations are provided:

* a looping predictive suffix tree (LPST) whose contexts are the most recent
  (PP-action, profile) symbols, read backwards;
* a PP-POMDP, a tabular POMDP over the PP alphabet run with argmax updates.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError
from .pomdp import TabularPomdp, em_train, next_obs_probs
from .profiles import PPTrajectory

BOS = "^"  # beginning-of-episode context symbol
UNIQUE, AMBIGUOUS, SPLIT = "unique", "ambiguous", "split"


@dataclass
class PpAlphabet:
    pp_actions: list  # (action, abstract obs) pairs, sorted
    n_profiles: int
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.pp_actions = [tuple(p) for p in self.pp_actions]
        self.index = {p: i for i, p in enumerate(self.pp_actions)}

    @classmethod
    def from_data(cls, pp_data: Sequence[PPTrajectory], n_profiles: int) -> "PpAlphabet":
        pairs = sorted({pa for pt in pp_data for pa, _ in pt.steps})
        return cls(pairs, n_profiles)

    def __len__(self) -> int:
        return len(self.pp_actions)

    def lookup(self, a: int, o: int) -> int | None:
        return self.index.get((a, o))

    def encode(self, pt: PPTrajectory) -> list:
        return [(self.index[pa], k) for pa, k in pt.steps]

    def names(self, alphabet) -> tuple:
        return tuple(f"{alphabet.action_name(a)}:{alphabet.obs_name(o)}" for a, o in self.pp_actions)


# ---------------------------------------------------------------- LPST

@dataclass(eq=False)
class LpstNode:
    suffix: tuple  # context symbols, most recent first
    entries: dict = field(default_factory=dict)  # pa -> (kind, payload)
    table: dict = field(default_factory=dict)  # pa -> Counter of next profiles
    children: dict = field(default_factory=dict)  # symbol -> LpstNode
    loop: "LpstNode | None" = None

    @property
    def depth(self) -> int:
        return len(self.suffix)

    def signature(self) -> dict:
        return {pa: frozenset(c) for pa, c in self.table.items()}


@dataclass
class Lpst:
    root: LpstNode
    max_depth: int
    n_profiles: int

    def nodes(self):
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(n.children[k] for k in sorted(n.children, key=_sym_key, reverse=True))

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes())


def _sym_key(sym):
    return (-1, -1) if sym == BOS else sym


def lpst_build(pp_data: Sequence, max_depth: int = 8, n_profiles: int | None = None) -> Lpst:
    """Grow the suffix tree over encoded PP trajectories ``[(pa, rho), ...]``.

    An entry becomes unique when a single profile followed the context,
    otherwise the context is extended by one older symbol until ``max_depth``
    or the start of the episode, where the remaining set is kept as an
    ambiguity set.
    """
    seqs = [list(s) for s in pp_data if len(s)]
    if not seqs:
        raise ConfigError("lpst_build needs non-empty PP data")
    if n_profiles is None:
        n_profiles = 1 + max(k for s in seqs for _, k in s)
    instances = [(i, p) for i, s in enumerate(seqs) for p in range(len(s))]
    root = LpstNode(())
    _grow(root, instances, seqs, max_depth)
    _add_loops(root, [])
    return Lpst(root, max_depth, n_profiles)


def _context(seqs, inst, d):
    i, p = inst
    j = p - 1 - d
    if j >= 0:
        return seqs[i][j]
    return BOS if j == -1 else None


def _grow(node: LpstNode, instances, seqs, max_depth: int) -> None:
    by_pa: dict = {}
    for inst in instances:
        by_pa.setdefault(seqs[inst[0]][inst[1]][0], []).append(inst)
    to_split: dict = {}
    d = node.depth
    for pa in sorted(by_pa):
        insts = by_pa[pa]
        counts = Counter(seqs[i][p][1] for i, p in insts)
        node.table[pa] = counts
        if len(counts) == 1:
            node.entries[pa] = (UNIQUE, next(iter(counts)))
            continue
        exhausted = node.suffix and node.suffix[-1] == BOS
        if d >= max_depth or exhausted:
            node.entries[pa] = (AMBIGUOUS, tuple(sorted(counts)))
            continue
        node.entries[pa] = (SPLIT, None)
        for inst in insts:
            to_split.setdefault(_context(seqs, inst, d), []).append(inst)
    for sym in sorted(to_split, key=_sym_key):
        child = LpstNode(node.suffix + (sym,))
        node.children[sym] = child
        _grow(child, to_split[sym], seqs, max_depth)


def _add_loops(node: LpstNode, ancestors: list) -> None:
    if ancestors:
        sig = node.signature()
        for anc in reversed(ancestors):
            if anc.signature() == sig:
                node.loop = anc
                break
    ancestors.append(node)
    for sym in sorted(node.children, key=_sym_key):
        _add_loops(node.children[sym], ancestors)
    ancestors.pop()


@dataclass
class StepOutcome:
    prediction: np.ndarray
    index: int
    kind: str  # unique | ambiguous | fallback
    candidates: tuple


def lpst_lookup(lpst: Lpst, context: Sequence, pa: int | None) -> tuple[str, tuple]:
    """Deepest matching entry for ``pa`` given ``context`` (most recent first).

    Returns (kind, candidate profile indices) with kind in
    {unique, ambiguous, fallback}.
    """
    node = lpst.root
    if pa is None or pa not in node.entries:
        return "fallback", tuple(range(lpst.n_profiles))
    d = 0
    while True:
        kind, payload = node.entries[pa]
        if kind == UNIQUE:
            return UNIQUE, (payload,)
        if kind == AMBIGUOUS:
            return AMBIGUOUS, payload
        sym = context[d] if d < len(context) else None
        child = node.children.get(sym)
        if (child is None or pa not in child.entries) and node.loop is not None:
            child = node.loop.children.get(sym)
        if child is None or pa not in child.entries:
            return "fallback", tuple(sorted(node.table[pa]))
        node = child
        d += 1


def lpst_runtime_step(lpst: Lpst, context: Sequence, pa: int | None, profile_values: np.ndarray,
                      rng: np.random.Generator) -> StepOutcome:
    """Prediction (mean over the candidate set) and the index fed back."""
    kind, cand = lpst_lookup(lpst, context, pa)
    if len(cand) == 1:
        idx = cand[0]
        return StepOutcome(profile_values[idx], idx, kind, cand)
    pred = profile_values[list(cand)].mean(axis=0)
    idx = int(cand[rng.integers(len(cand))])
    return StepOutcome(pred, idx, kind, cand)


class LpstRuntime:
    """Self-fed LPST predictor over a continuing PP-action stream."""

    def __init__(self, lpst: Lpst, profile_values: np.ndarray, pp_alphabet: PpAlphabet,
                 initial_index: int = 0, seed: int = 0):
        self.lpst = lpst
        self.values = np.asarray(profile_values, dtype=float)
        self.pp_alphabet = pp_alphabet
        self.initial_index = initial_index
        self.seed = seed
        self.memory = max(lpst.depth, 1) + 1
        self.fallbacks = 0
        self.ambiguous = 0
        self.reset()

    def reset(self) -> None:
        self.rng = np.random.default_rng(self.seed)
        self.context: list = []
        self.steps = 0
        self.index = self.initial_index
        self.current = self.values[self.initial_index]

    def _ctx(self) -> list:
        return self.context + [BOS] if self.steps < self.memory else self.context

    def observe_step(self, pa: int | None) -> np.ndarray:
        out = lpst_runtime_step(self.lpst, self._ctx(), pa, self.values, self.rng)
        if out.kind == "fallback":
            self.fallbacks += 1
        elif out.kind == AMBIGUOUS:
            self.ambiguous += 1
        self.context.insert(0, (pa, out.index))
        del self.context[self.memory:]
        self.steps += 1
        self.index = out.index
        self.current = out.prediction
        return self.current

    def observe(self, a: int, o: int) -> None:
        self.observe_step(self.pp_alphabet.lookup(a, o))

    def current_profile(self) -> np.ndarray:
        return self.current

    profile = current_profile


# ---------------------------------------------------------------- PP-POMDP

class PpPomdpRuntime:
    """Argmax-self-fed belief tracking over the PP alphabet."""

    def __init__(self, model: TabularPomdp, profile_values: np.ndarray, pp_alphabet: PpAlphabet,
                 initial_index: int = 0):
        self.model = model
        self.values = np.asarray(profile_values, dtype=float)
        self.pp_alphabet = pp_alphabet
        self.initial_index = initial_index
        self.fallbacks = 0
        self.ambiguous = 0
        self.reset()

    def reset(self) -> None:
        self.b = self.model.initial.copy()
        self.index = self.initial_index
        self.current = self.values[self.initial_index]

    def observe_step(self, pa: int | None) -> np.ndarray:
        if pa is None:
            self.fallbacks += 1
            self.b = self.model.initial.copy()
            return self.current
        p = next_obs_probs(self.model, self.b, pa)
        idx = int(np.argmax(p))
        num = self.b @ self.model.joint[pa, idx]
        z = num.sum()
        if z <= 1e-300:
            self.fallbacks += 1
            self.b = self.model.initial.copy()
        else:
            self.b = num / z
        self.index = idx
        self.current = self.values[idx]
        return self.current

    def observe(self, a: int, o: int) -> None:
        self.observe_step(self.pp_alphabet.lookup(a, o))

    def current_profile(self) -> np.ndarray:
        return self.current

    profile = current_profile


def pp_pomdp_wrap(model: TabularPomdp, profile_values, pp_alphabet: PpAlphabet,
                  initial_index: int = 0) -> PpPomdpRuntime:
    return PpPomdpRuntime(model, profile_values, pp_alphabet, initial_index)


def train_pp_pomdp(pp_data: Sequence[PPTrajectory], pp_alphabet: PpAlphabet, n_states: int | None = None,
                   max_iters: int = 50, n_restarts: int = 3, rng=None, tol: float = 1e-6):
    """EM on PP symbol streams; truncated trajectories contribute their prefix."""
    seqs = [pp_alphabet.encode(pt) for pt in pp_data]
    if not any(seqs):
        raise ConfigError("train_pp_pomdp needs non-empty PP data")
    n_states = n_states or 2 * pp_alphabet.n_profiles
    return em_train(seqs, n_states, len(pp_alphabet), pp_alphabet.n_profiles, max_iters,
                    n_restarts, rng, tol, observations=tuple(f"rho{k}" for k in range(pp_alphabet.n_profiles)))


def threecard_pp_pomdp(pp_alphabet: PpAlphabet, profile_order: Sequence[int] = (1, 2, 3)) -> TabularPomdp:
    """Exact PP system of Three Card Monte as a 6-state deterministic POMDP.

    Hidden state = (ace position, guess prompt pending).  ``profile_order[k]``
    is the ace position of profile index ``k``.
    """
    from .envs import threecard as tc

    S = 6  # state = 2 * (ace - 1) + prompted
    A = len(pp_alphabet)
    rho_of = {ace: k for k, ace in enumerate(profile_order)}
    T = np.zeros((S, A, S))
    E = np.zeros((S, A, S, len(profile_order)))
    for s in range(S):
        ace, prompted = s // 2 + 1, s % 2
        for i, (a, o) in enumerate(pp_alphabet.pp_actions):
            if prompted:
                nace, nprompt = 2, 0  # the game resets after any action
            elif a == tc.WATCH and o in tc.SWAP_OBS:
                pair = tc.PAIRS[tc.SWAP_OBS.index(o)]
                nace, nprompt = tc._swap(ace, pair), 0
            elif a == tc.WATCH and o == tc.GUESS:
                nace, nprompt = ace, 1
            elif a == tc.WATCH and o in (tc.POS1, tc.POS2, tc.POS3):
                nace, nprompt = o - tc.POS1 + 1, 0
            elif a != tc.WATCH and o == tc.ACE:
                nace, nprompt = a, 0
            else:
                nace, nprompt = ace, 0
            T[s, i, 2 * (nace - 1) + nprompt] = 1.0
            # the emitted profile depends only on the arriving state
            for t in range(S):
                E[s, i, t, rho_of[t // 2 + 1]] = 1.0
    init = np.zeros(S)
    init[2] = 1.0  # ace at 2, no prompt
    return TabularPomdp(init, T, E)


# ---------------------------------------------------------------- LPST text format

def _sym_str(sym) -> str:
    return BOS if sym == BOS else f"{sym[0]}/{sym[1]}"


def _parse_sym(tok: str):
    if tok == BOS:
        return BOS
    pa, rho = tok.split("/")
    return (int(pa), int(rho))


def _suffix_str(suffix) -> str:
    return ",".join(_sym_str(s) for s in suffix) or "-"


def write_lpst(path, lpst: Lpst, pp_alphabet: PpAlphabet | None = None, names: Sequence[str] = ()) -> None:
    lines = ["# lpst v1", f"max_depth {lpst.max_depth}", f"profiles {lpst.n_profiles}"]
    if pp_alphabet is not None:
        for i, (a, o) in enumerate(pp_alphabet.pp_actions):
            label = f" {names[i]}" if names else ""
            lines.append(f"ppaction {i} {a} {o}{label}")
    for node in lpst.nodes():
        pad = "  " * node.depth
        loop = f" loop {_suffix_str(node.loop.suffix)}" if node.loop is not None else ""
        lines.append(f"{pad}node {_suffix_str(node.suffix)}{loop}")
        for pa in sorted(node.entries):
            kind, payload = node.entries[pa]
            table = ",".join(f"{k}:{c}" for k, c in sorted(node.table[pa].items()))
            if kind == UNIQUE:
                pl = str(payload)
            elif kind == AMBIGUOUS:
                pl = ",".join(map(str, payload))
            else:
                pl = "-"
            lines.append(f"{pad}  entry {pa} {kind} {pl} {table}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_lpst(path) -> tuple[Lpst, PpAlphabet | None]:
    nodes: dict = {}
    pending_loops = []
    pp_actions = []
    max_depth = n_profiles = None
    current = None
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "# lpst v1":
        raise ParseError(f"{path}: missing lpst header")
    try:
        for lineno, line in enumerate(lines[1:], 2):
            toks = line.split()
            if not toks:
                continue
            if toks[0] == "max_depth":
                max_depth = int(toks[1])
            elif toks[0] == "profiles":
                n_profiles = int(toks[1])
            elif toks[0] == "ppaction":
                pp_actions.append((int(toks[2]), int(toks[3])))
            elif toks[0] == "node":
                suffix = () if toks[1] == "-" else tuple(_parse_sym(t) for t in toks[1].split(","))
                current = LpstNode(suffix)
                nodes[suffix] = current
                if suffix:
                    nodes[suffix[:-1]].children[suffix[-1]] = current
                if len(toks) == 4 and toks[2] == "loop":
                    target = () if toks[3] == "-" else tuple(_parse_sym(t) for t in toks[3].split(","))
                    pending_loops.append((current, target))
            elif toks[0] == "entry":
                pa, kind, pl, table = int(toks[1]), toks[2], toks[3], toks[4]
                if kind == UNIQUE:
                    payload = int(pl)
                elif kind == AMBIGUOUS:
                    payload = tuple(int(x) for x in pl.split(","))
                else:
                    payload = None
                current.entries[pa] = (kind, payload)
                current.table[pa] = Counter({int(k): int(c) for k, c in
                                             (kv.split(":") for kv in table.split(","))})
            else:
                raise ValueError(f"unknown directive {toks[0]!r}")
        for node, target in pending_loops:
            node.loop = nodes[target]
    except (ValueError, KeyError, IndexError, AttributeError) as exc:
        raise ParseError(f"{path} line {lineno}: {exc}") from None
    lpst = Lpst(nodes[()], max_depth, n_profiles)
    alph = PpAlphabet(pp_actions, n_profiles) if pp_actions else None
    return lpst, alph
