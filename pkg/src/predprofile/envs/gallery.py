"""Shooting Gallery.

An 8x8 range holds 2x2 obstacles placed on a fixed 4x4 block grid.  A target
moves diagonally, bouncing off walls and obstacles, and sometimes sticks in
place.  The agent watches or shoots at a fixed crosshairs cell.

Full observations are integer codes ``reset << 22 | mask << 6 | cell`` where
``mask`` has one bit per obstacle block.  The abstraction keeps the reset
flag, the target cell and the blocked/free pattern of its 8 neighbours.
"""
from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..core import Alphabet, TestOfInterest
from ..errors import ConfigError, ConsistencyError, MalformedHistoryError
from .base import Abstraction, StepResult

ENV_ID = "gallery"
SIZE = 8
NCELLS = SIZE * SIZE
NBLOCKS = 16
WATCH, SHOOT = 0, 1
ACTIONS = ("watch", "shoot")
DIRS = ((-1, -1), (-1, 1), (1, -1), (1, 1))
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
NEIGHBOUR_BIT = {d: k for k, d in enumerate(NEIGHBOURS)}
RESET_BIT = 1 << 22
N_FULL_OBS = 1 << 23

STICK, RESET_P, NO_RESET = 0.3, 0.01, 0.99


def cell(r: int, c: int) -> int:
    return r * SIZE + c


def block_of(r: int, c: int) -> int:
    return (r // 2) * 4 + c // 2


def mask_blocked(mask: int, r: int, c: int) -> bool:
    if not (0 <= r < SIZE and 0 <= c < SIZE):
        return True
    return bool(mask >> block_of(r, c) & 1)


def mask_grid(mask: int) -> np.ndarray:
    """8x8 boolean occupancy grid for a block mask."""
    blocks = np.array([(mask >> b) & 1 for b in range(NBLOCKS)], dtype=bool).reshape(4, 4)
    return np.kron(blocks, np.ones((2, 2), dtype=bool))


def resolve_bounce(pos: tuple, d: tuple, blocked) -> tuple:
    """Next (cell, direction) of a target at ``pos`` heading ``d``.

    ``blocked(r, c)`` reports obstacles and out-of-range cells; a grid array
    is also accepted.
    """
    if isinstance(blocked, np.ndarray):
        grid = blocked
        blocked = lambda r, c: not (0 <= r < SIZE and 0 <= c < SIZE) or bool(grid[r, c])
    r, c = pos
    dr, dc = d
    if blocked(r, c):
        raise ConsistencyError(f"target at {pos} is inside an obstacle")
    if not blocked(r + dr, c + dc):
        return (r + dr, c + dc), (dr, dc)
    flip_r, flip_c = blocked(r + dr, c), blocked(r, c + dc)
    if not flip_r and not flip_c:
        flip_r = flip_c = True
    nr, nc = (-dr if flip_r else dr), (-dc if flip_c else dc)
    if not blocked(r + nr, c + nc):
        return (r + nr, c + nc), (nr, nc)
    if not blocked(r - dr, c - dc):
        return (r - dr, c - dc), (-dr, -dc)
    return (r, c), (dr, dc)


@lru_cache(maxsize=8192)
def bounce_table(mask: int) -> tuple:
    """table[cell][dir] -> (cell', dir') for every free cell of a layout."""
    blocked = lambda r, c: mask_blocked(mask, r, c)
    table = []
    for p in range(NCELLS):
        r, c = divmod(p, SIZE)
        if blocked(r, c):
            table.append(None)
            continue
        row = []
        for d in DIRS:
            (nr, nc), nd = resolve_bounce((r, c), d, blocked)
            row.append((cell(nr, nc), DIRS.index(nd)))
        table.append(tuple(row))
    return tuple(table)


def neighbour_pattern(mask: int, p: int) -> int:
    r, c = divmod(p, SIZE)
    pat = 0
    for k, (dr, dc) in enumerate(NEIGHBOURS):
        if mask_blocked(mask, r + dr, c + dc):
            pat |= 1 << k
    return pat


@lru_cache(maxsize=None)
def pattern_bounce(p: int, pattern: int) -> tuple:
    """Bounce outcomes for the 4 directions using only the local pattern."""
    r, c = divmod(p, SIZE)

    def blocked(rr, cc):
        if (rr, cc) == (r, c):
            return False
        return bool(pattern >> NEIGHBOUR_BIT[(rr - r, cc - c)] & 1)

    out = []
    for d in DIRS:
        (nr, nc), nd = resolve_bounce((r, c), d, blocked)
        out.append((cell(nr, nc), DIRS.index(nd)))
    return tuple(out)


# ---------------------------------------------------------------- encodings

def encode(reset: bool, mask: int, p: int) -> int:
    return (RESET_BIT if reset else 0) | mask << 6 | p


def decode(code: int) -> tuple:
    return bool(code & RESET_BIT), (code >> 6) & 0xFFFF, code & 63


class FullObservations(Sequence):
    """Lazily named sequence of all 2**23 full observation codes."""

    def __len__(self):
        return N_FULL_OBS

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if not 0 <= i < N_FULL_OBS:
            raise IndexError(i)
        reset, mask, p = decode(i)
        return f"{'R' if reset else 'T'}{mask:04x}.{p // SIZE}{p % SIZE}"

    def index(self, name, *args):
        try:
            kind, rest = name[0], name[1:]
            mhex, pos = rest.split(".")
            if kind not in "RT" or len(mhex) != 4 or len(pos) != 2:
                raise ValueError
            return encode(kind == "R", int(mhex, 16), int(pos[0]) * SIZE + int(pos[1]))
        except (ValueError, IndexError):
            raise ValueError(f"{name!r} is not a gallery observation") from None


FULL_ALPHABET = Alphabet(ACTIONS, FullObservations())


@dataclass(frozen=True)
class GalleryParams:
    crosshairs: tuple = (4, 4)
    block_prob: float = 0.1

    def __post_init__(self):
        r, c = self.crosshairs
        if not (0 <= r < SIZE and 0 <= c < SIZE):
            raise ConfigError(f"crosshairs {self.crosshairs} off the grid")
        if not 0.0 <= self.block_prob < 1.0:
            raise ConfigError("block_prob must be in [0, 1)")

    @property
    def x_cell(self) -> int:
        return cell(*self.crosshairs)

    @property
    def x_block(self) -> int:
        return block_of(*self.crosshairs)


class _GalleryTables:
    """Per-parameter tables: reset distribution and the abstract alphabet."""

    def __init__(self, params: GalleryParams):
        self.params = params
        xb, xc = params.x_block, params.x_cell
        masks = np.arange(1 << NBLOCKS)
        masks = masks[(masks >> xb) & 1 == 0]
        nblk = np.array([bin(m).count("1") for m in masks])
        q = params.block_prob
        pm = q ** nblk * (1 - q) ** (NBLOCKS - 1 - nblk)
        self.masks = masks
        self.mask_prob = pm / math.fsum(pm)
        self.mask_total = math.fsum(self.mask_prob)
        self.mask_row = {int(m): i for i, m in enumerate(masks)}
        self.nfree = NCELLS - 4 * nblk
        # abstract alphabet: exhaustive over layouts and free cells
        bits = (masks[:, None] >> np.arange(NBLOCKS)[None, :]) & 1
        keys = set()
        for p in range(NCELLS):
            r, c = divmod(p, SIZE)
            free = bits[:, block_of(r, c)] == 0
            pat = np.zeros(len(masks), dtype=np.int64)
            for k, (dr, dc) in enumerate(NEIGHBOURS):
                rr, cc = r + dr, c + dc
                if 0 <= rr < SIZE and 0 <= cc < SIZE:
                    pat |= bits[:, block_of(rr, cc)] << k
                else:
                    pat |= 1 << k
            for pt in np.unique(pat[free]):
                keys.add((0, p, int(pt)))
                if p != xc:
                    keys.add((1, p, int(pt)))
        self.abstract_keys = tuple(sorted(keys))
        self.abstract_index = {k: i for i, k in enumerate(self.abstract_keys)}
        names = tuple(f"{'R' if rs else 'T'}{p // SIZE}{p % SIZE}.{pt:02x}"
                      for rs, p, pt in self.abstract_keys)
        self.abstract_alphabet = Alphabet(ACTIONS, names)
        hit = frozenset(i for i, (rs, p, _) in enumerate(self.abstract_keys) if not rs and p == xc)
        self.test = TestOfInterest(((WATCH, hit),), name="watch->target@X")

    def reset_prob(self, mask: int, p: int) -> float:
        row = self.mask_row.get(mask)
        if row is None or p == self.params.x_cell or mask_blocked(mask, *divmod(p, SIZE)):
            return 0.0
        return float(self.mask_prob[row] / (self.nfree[row] - 1))

    def abstract(self, code: int) -> int:
        reset, mask, p = decode(code)
        return self.abstract_index[(int(reset), p, neighbour_pattern(mask, p))]

    def full_test(self) -> TestOfInterest:
        xc = self.params.x_cell
        codes = {encode(False, int(m), xc) for m in self.masks}
        return TestOfInterest(((WATCH, codes),), name="watch->target@X")


@lru_cache(maxsize=8)
def tables(params: GalleryParams = GalleryParams()) -> _GalleryTables:
    return _GalleryTables(params)


def gallery_abstract(code: int, params: GalleryParams = GalleryParams()) -> int:
    return tables(params).abstract(code)


def abstract_key(index: int, params: GalleryParams = GalleryParams()) -> tuple:
    """(reset flag, cell, neighbour pattern) of an abstract observation."""
    return tables(params).abstract_keys[index]


# ---------------------------------------------------------------- dynamics

@dataclass(frozen=True)
class GalleryState:
    mask: int = 0
    pos: int = -1
    dir: int = 0
    pending_reset: bool = True

    @property
    def grid(self) -> np.ndarray:
        return mask_grid(self.mask)


def draw_reset(rng: np.random.Generator, params: GalleryParams) -> GalleryState:
    xb, xc = params.x_block, params.x_cell
    while True:
        bits = rng.random(NBLOCKS) < params.block_prob
        if not bits[xb]:
            break
    mask = int(np.dot(bits, 1 << np.arange(NBLOCKS)))
    free = [p for p in range(NCELLS) if p != xc and not (mask >> block_of(*divmod(p, SIZE)) & 1)]
    pos = free[int(rng.integers(len(free)))]
    return GalleryState(mask, pos, int(rng.integers(4)), False)


def gallery_step(state: GalleryState, action: int, rng: np.random.Generator,
                 params: GalleryParams = GalleryParams()) -> tuple[GalleryState, StepResult]:
    """Reset (forced or spontaneous), else stick or bounce; then reward the shot."""
    shoot = action == SHOOT
    if state.pending_reset or rng.random() < RESET_P:
        nxt = draw_reset(rng, params)
        return nxt, StepResult(encode(True, nxt.mask, nxt.pos), -5.0 if shoot else 0.0, state)
    if rng.random() < STICK:
        pos, d = state.pos, state.dir
    else:
        pos, d = bounce_table(state.mask)[state.pos][state.dir]
    hit = shoot and pos == params.x_cell
    reward = 10.0 if hit else (-5.0 if shoot else 0.0)
    return (GalleryState(state.mask, pos, d, hit),
            StepResult(encode(False, state.mask, pos), reward, state))


class GalleryTracker:
    """Exact belief over the target direction from abstract observations."""

    def __init__(self, params: GalleryParams = GalleryParams()):
        self.params = params
        self.keys = tables(params).abstract_keys
        self.x = params.x_cell
        self.reset()

    def reset(self) -> None:
        self.pending = True
        self.pos = -1
        self.pattern = 0
        self.support = (0, 1, 2, 3)
        self.last_action = None

    def observe(self, action: int, obs: int) -> None:
        reset, p, pattern = self.keys[obs]
        if reset:
            if p == self.x:
                raise MalformedHistoryError("reset places the target on the crosshairs")
            self.pos, self.pattern, self.support, self.pending = p, pattern, (0, 1, 2, 3), False
            return
        if self.pending:
            raise MalformedHistoryError("non-reset observation while a reset is due")
        moves = pattern_bounce(self.pos, self.pattern)
        weight = [0.0] * 4
        w0 = 1.0 / len(self.support)
        for d in self.support:
            if p == self.pos:
                weight[d] += STICK * w0
            q, nd = moves[d]
            if q == p:
                weight[nd] += (1.0 - STICK) * w0
        support = tuple(d for d in range(4) if weight[d] > 0.0)
        if not support:
            raise MalformedHistoryError(f"target cannot reach cell {p} from {self.pos}")
        ws = [weight[d] for d in support]
        if max(ws) - min(ws) > 1e-12 * max(ws):
            raise ConsistencyError(f"direction belief not uniform: {weight}")
        self.pos, self.pattern, self.support = p, pattern, support
        self.pending = action == SHOOT and p == self.x

    def profile(self) -> np.ndarray:
        return np.array([self.prediction()])

    def prediction(self) -> float:
        if self.pending:
            return 0.0
        moves = pattern_bounce(self.pos, self.pattern)
        k = sum(1 for d in self.support if moves[d][0] == self.x)
        return NO_RESET * (STICK * (self.pos == self.x) + (1.0 - STICK) * k / len(self.support))


def gallery_oracle(history, params: GalleryParams = GalleryParams()) -> np.ndarray:
    """Profile of an abstract-observation history."""
    tr = GalleryTracker(params)
    for a, o in history:
        tr.observe(a, o)
    return tr.profile()


@lru_cache(maxsize=16)
def _reset_codes(pred: frozenset) -> tuple:
    return tuple(sorted(o for o in pred if decode(o)[0]))


class _ResetDist(Mapping):
    """Lazy distribution over reset observations, scaled by ``weight``."""

    def __init__(self, tabs: _GalleryTables, weight: float = 1.0):
        self.tabs, self.weight = tabs, weight

    def __getitem__(self, code):
        reset, mask, p = decode(code)
        pr = self.tabs.reset_prob(mask, p) if reset else 0.0
        if pr == 0.0:
            raise KeyError(code)
        return self.weight * pr

    def __iter__(self):
        xc = self.tabs.params.x_cell
        for m in self.tabs.masks:
            m = int(m)
            for p in range(NCELLS):
                if p != xc and not mask_blocked(m, *divmod(p, SIZE)):
                    yield encode(True, m, p)

    def __len__(self):
        return int(np.sum(self.tabs.nfree - 1))

    def total(self) -> float:
        return self.weight * self.tabs.mask_total

    def items_in(self, pred: frozenset):
        for code in _reset_codes(pred):
            pr = self.tabs.reset_prob(*decode(code)[1:])
            if pr > 0.0:
                yield code, self.weight * pr


class _MixtureDist(Mapping):
    def __init__(self, local: dict, reset: _ResetDist):
        self.local, self.reset = local, reset

    def __getitem__(self, code):
        if code in self.local:
            return self.local[code]
        return self.reset[code]

    def __iter__(self):
        yield from self.local
        yield from self.reset

    def __len__(self):
        return len(self.local) + len(self.reset)

    def total(self) -> float:
        return math.fsum(self.local.values()) + self.reset.total()

    def items_in(self, pred: frozenset):
        yield from ((o, p) for o, p in self.local.items() if o in pred)
        yield from self.reset.items_in(pred)


class GalleryOracle:
    """Generative oracle over full observation codes."""

    alphabet = FULL_ALPHABET

    def __init__(self, params: GalleryParams = GalleryParams()):
        self.params = params
        self.tabs = tables(params)

    def next_obs_dist(self, history, action: int) -> Mapping:
        tr = GalleryTracker(self.params)
        mask = 0
        for a, o in history:
            tr.observe(a, self.tabs.abstract(o))
            mask = decode(o)[1]
        if tr.pending:
            return _ResetDist(self.tabs)
        local: dict = {}
        stay = encode(False, mask, tr.pos)
        local[stay] = NO_RESET * STICK
        moves = bounce_table(mask)[tr.pos]
        for d in tr.support:
            code = encode(False, mask, moves[d][0])
            local[code] = local.get(code, 0.0) + NO_RESET * (1 - STICK) / len(tr.support)
        return _MixtureDist(local, _ResetDist(self.tabs, RESET_P))


class ShootingGallery:
    env_id = ENV_ID
    reward_bounds = (-5.0, 10.0)

    def __init__(self, rng: np.random.Generator, params: GalleryParams = GalleryParams()):
        self.rng = rng
        self.params = params
        tabs = tables(params)
        self.alphabet = FULL_ALPHABET
        self.abstraction = Abstraction("gallery_local", tabs.abstract_alphabet, tabs.abstract)
        self.tests = (tabs.test,)
        self.state = GalleryState()

    def reset(self) -> None:
        self.state = GalleryState()

    def step(self, action: int) -> StepResult:
        self.state, res = gallery_step(self.state, action, self.rng, self.params)
        return res

    def tracker(self) -> GalleryTracker:
        return GalleryTracker(self.params)

    def expert_action(self, tracker: GalleryTracker) -> int:
        """Shoot when the hit probability beats the +10/-5 break-even of 1/3."""
        return SHOOT if tracker.prediction() > 1.0 / 3.0 else WATCH
