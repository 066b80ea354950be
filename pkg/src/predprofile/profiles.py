"""History statistics, homogeneity tests, profile clustering and translation.

Counts are collected for every episode prefix: a prefix is *visited* once per
episode that passes through it, and a test gets a *trial* when its actions
are taken right after the prefix.  Profiles are clustered greedily from the
best-supported histories, and each training episode is then rewritten as a
sequence of (PP-action, profile index) pairs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import xlogy
from scipy.stats import chi2

from .core import Alphabet, Outcome, TestOfInterest, Trajectory, test_outcome
from .errors import ConfigError, DataError, ParseError

KLD_EPS = 1e-6
DEFAULT_ALPHA = 1e-5
DEFAULT_MIN_TRIALS = 10


# ---------------------------------------------------------------- statistics

@dataclass
class HistoryStats:
    """Per-history visit counts plus (trial, success) counts per test.

    ``table[h]`` is a list ``[visits, trials_0..trials_{m-1}, succ_0..succ_{m-1}]``.
    """

    tests: tuple
    max_len: int
    table: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.tests)

    def __contains__(self, h) -> bool:
        return h in self.table

    def __len__(self) -> int:
        return len(self.table)

    def visits(self, h) -> int:
        return self.table[h][0]

    def counts(self, h) -> tuple[np.ndarray, np.ndarray]:
        """(successes, trials) arrays at history ``h``."""
        rec = self.table[h]
        m = self.m
        return np.array(rec[1 + m:], dtype=np.int64), np.array(rec[1:1 + m], dtype=np.int64)

    def estimate(self, h) -> np.ndarray:
        s, t = self.counts(h)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(t > 0, s / np.maximum(t, 1), np.nan)

    def merge(self, other: "HistoryStats") -> None:
        for h, rec in other.table.items():
            mine = self.table.get(h)
            if mine is None:
                self.table[h] = list(rec)
            else:
                for i, v in enumerate(rec):
                    mine[i] += v


def collect_stats(data: Iterable, tests: Sequence[TestOfInterest],
                  abstraction: Callable[[int], int] | None = None, max_len: int = 10) -> HistoryStats:
    """Tally every prefix (length <= ``max_len``) of every episode.

    ``data`` holds :class:`Trajectory` objects or raw step tuples.
    """
    tests = tuple(tests)
    stats = HistoryStats(tests, max_len)
    m = len(tests)
    table = stats.table
    one_step = all(len(t.steps) == 1 for t in tests)
    heads = [(t.steps[0][0], t.steps[0][1]) for t in tests] if one_step else None
    for traj in data:
        steps = traj.steps if isinstance(traj, Trajectory) else traj
        if abstraction is not None:
            steps = tuple((a, abstraction(o)) for a, o in steps)
        n = len(steps)
        for i in range(min(n, max_len) + 1):
            h = steps[:i]
            rec = table.get(h)
            if rec is None:
                rec = table[h] = [0] * (1 + 2 * m)
            rec[0] += 1
            if one_step:
                if i == n:
                    continue
                a, o = steps[i]
                for j, (ta, pred) in enumerate(heads):
                    if a == ta:
                        rec[1 + j] += 1
                        if o in pred:
                            rec[1 + m + j] += 1
            else:
                for j, t in enumerate(tests):
                    out = test_outcome(steps, i, t)
                    if out is not Outcome.NOT_APPLICABLE:
                        rec[1 + j] += 1
                        if out is Outcome.SUCCESS:
                            rec[1 + m + j] += 1
    return stats


# ---------------------------------------------------------------- G-test

class GTestResult(NamedTuple):
    rejects: bool
    statistic: float
    low_data: bool


@lru_cache(maxsize=64)
def critical_value(alpha: float) -> float:
    """chi-square(1) upper quantile at level ``alpha``."""
    return float(chi2.isf(alpha, 1))


def g_statistic(s1: int, t1: int, s2: int, t2: int) -> float:
    """2x2 log-likelihood ratio statistic; empty cells contribute 0."""
    n = t1 + t2
    succ = s1 + s2
    fail = n - succ
    if n == 0 or succ == 0 or fail == 0:
        return 0.0
    g = 0.0
    for obs, row, col in ((s1, t1, succ), (t1 - s1, t1, fail), (s2, t2, succ), (t2 - s2, t2, fail)):
        if obs > 0:
            g += obs * math.log(obs * n / (row * col))
    return max(2.0 * g, 0.0)


def g_statistic_array(s1, t1, s2, t2) -> np.ndarray:
    """Vectorised :func:`g_statistic`."""
    s1, t1, s2, t2 = (np.asarray(x, dtype=float) for x in (s1, t1, s2, t2))
    n = t1 + t2
    succ, fail = s1 + s2, n - s1 - s2
    with np.errstate(divide="ignore", invalid="ignore"):
        g = 0.0
        for obs, row, col in ((s1, t1, succ), (t1 - s1, t1, fail), (s2, t2, succ), (t2 - s2, t2, fail)):
            g = g + xlogy(obs, obs * n / (row * col))
    return np.maximum(np.nan_to_num(2.0 * g), 0.0)


def _check_counts(s: int, t: int) -> None:
    if s < 0 or t < 0 or s > t:
        raise DataError(f"inconsistent counts: {s} successes in {t} trials")


def g_test(s1: int, t1: int, s2: int, t2: int, alpha: float = DEFAULT_ALPHA,
           min_trials: int = 0) -> GTestResult:
    """Homogeneity test of two binomial samples (df = 1)."""
    _check_counts(s1, t1)
    _check_counts(s2, t2)
    if t1 == 0 or t2 == 0:
        return GTestResult(False, 0.0, True)
    g = g_statistic(s1, t1, s2, t2)
    return GTestResult(g > critical_value(alpha), g, min(t1, t2) < min_trials)


# ---------------------------------------------------------------- profiles

@dataclass(frozen=True)
class EstimatedProfile:
    successes: tuple
    trials: tuple
    exemplar: tuple = ()

    @property
    def values(self) -> np.ndarray:
        s, t = np.array(self.successes, float), np.array(self.trials, float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(t > 0, s / np.maximum(t, 1), np.nan)

    @property
    def defined(self) -> np.ndarray:
        return np.array(self.trials) > 0


def _differ(s1, t1, s2, t2, crit: float) -> bool:
    for a, b, c, d in zip(s1, t1, s2, t2):
        if b > 0 and d > 0 and g_statistic(a, b, c, d) > crit:
            return True
    return False


def profiles_differ(a: EstimatedProfile, b: EstimatedProfile, alpha: float = DEFAULT_ALPHA) -> bool:
    """True iff the homogeneity test rejects for any test with data on both sides."""
    for s, t in zip(a.successes + b.successes, a.trials + b.trials):
        _check_counts(s, t)
    return _differ(a.successes, a.trials, b.successes, b.trials, critical_value(alpha))


@dataclass
class ProfileSet:
    profiles: list
    alpha: float = DEFAULT_ALPHA
    min_trials: int = DEFAULT_MIN_TRIALS

    def __len__(self) -> int:
        return len(self.profiles)

    def __getitem__(self, i) -> EstimatedProfile:
        return self.profiles[i]

    def values(self) -> np.ndarray:
        """(n, m) matrix of point estimates (nan where undefined)."""
        if not self.profiles:
            return np.zeros((0, 0))
        return np.vstack([p.values for p in self.profiles])

    def nearest(self, target) -> int:
        """Index of the profile closest in L-infinity (ties -> lowest)."""
        vals = np.nan_to_num(self.values(), nan=0.5)
        return int(np.argmin(np.max(np.abs(vals - np.asarray(target)[None, :]), axis=1)))


def cluster_profiles(stats: HistoryStats, alpha: float = DEFAULT_ALPHA,
                     min_trials: int = DEFAULT_MIN_TRIALS) -> ProfileSet:
    """Greedy clustering over histories ordered by visits (desc), length, lexicographic."""
    crit = critical_value(alpha)
    m = stats.m
    order = sorted(stats.table.items(), key=lambda kv: (-kv[1][0], len(kv[0]), kv[0]))
    found: list = []
    for h, rec in order:
        if rec[0] < min_trials:
            break  # trials never exceed visits
        trials, succ = rec[1:1 + m], rec[1 + m:]
        if m == 0 or min(trials) < min_trials:
            continue
        if all(_differ(succ, trials, p.successes, p.trials, crit) for p in found):
            found.append(EstimatedProfile(tuple(succ), tuple(trials), h))
    return ProfileSet(found, alpha, min_trials)


class MatchKind(Enum):
    UNIQUE = "unique"
    MULTIPLE = "multiple"
    NONE = "none"


class MatchResult(NamedTuple):
    kind: MatchKind
    indices: tuple

    @property
    def index(self) -> int:
        return self.indices[0]


def match_profile(counts, profiles: ProfileSet, alpha: float = DEFAULT_ALPHA) -> MatchResult:
    """Profiles not significantly different from the counts ``(succ, trials)``."""
    succ, trials = (tuple(int(x) for x in c) for c in counts)
    crit = critical_value(alpha)
    ok = tuple(i for i, p in enumerate(profiles.profiles)
               if not _differ(succ, trials, p.successes, p.trials, crit))
    if len(ok) == 1:
        return MatchResult(MatchKind.UNIQUE, ok)
    if not ok:
        return MatchResult(MatchKind.NONE, ())
    return MatchResult(MatchKind.MULTIPLE, ok)


def _bern_kl(p: float, q: float) -> float:
    kl = 0.0
    if p > 0.0:
        kl += p * math.log(p / q)
    if p < 1.0:
        kl += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return kl


def kld_match(counts, candidates: Sequence[int], profiles: ProfileSet, eps: float = KLD_EPS) -> int:
    """Candidate with the smallest summed Bernoulli KL divergence (ties -> lowest)."""
    if not candidates:
        raise ValueError("kld_match needs at least one candidate")
    succ, trials = counts
    best, best_d = None, math.inf
    for i in sorted(candidates):
        vals = profiles[i].values
        d = 0.0
        for s, t, rho in zip(succ, trials, vals):
            if t == 0:
                continue
            q = 0.5 if math.isnan(rho) else min(max(float(rho), eps), 1.0 - eps)
            d += _bern_kl(s / t, q)
        if d < best_d:
            best, best_d = i, d
    return best


# ---------------------------------------------------------------- translation

@dataclass
class PPTrajectory:
    steps: list  # [((action, abstract obs), profile index), ...]
    truncated: str | None = None  # None | "ambiguous" | "nomatch" | "unseen"
    suffix_stats: bool = False  # some prefix was matched through its suffix

    def __len__(self):
        return len(self.steps)


STRATEGIES = ("kld", "cut")


def _lookup(stats: HistoryStats, prefix: tuple) -> tuple:
    """Stored key for a prefix: itself, or its length-max_len suffix."""
    return prefix if len(prefix) <= stats.max_len else prefix[len(prefix) - stats.max_len:]


def match_history(stats: HistoryStats, h: tuple, profiles: ProfileSet, alpha: float,
                  strategy: str) -> tuple[int | None, str | None]:
    """(profile index, None) or (None, truncation reason) for one prefix."""
    key = _lookup(stats, h)
    if key not in stats:
        return None, "unseen"
    counts = stats.counts(key)
    res = match_profile(counts, profiles, alpha)
    if res.kind is MatchKind.UNIQUE:
        return res.index, None
    if res.kind is MatchKind.NONE:
        return None, "nomatch"
    if strategy == "cut":
        return None, "ambiguous"
    return kld_match(counts, res.indices, profiles), None


def translate(traj, stats: HistoryStats, profiles: ProfileSet, strategy: str = "kld",
              alpha: float | None = None, abstraction: Callable[[int], int] | None = None) -> PPTrajectory:
    """Rewrite an episode as (PP-action, profile index) pairs."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    alpha = profiles.alpha if alpha is None else alpha
    steps = traj.steps if isinstance(traj, Trajectory) else traj
    if abstraction is not None:
        steps = tuple((a, abstraction(o)) for a, o in steps)
    out = PPTrajectory([])
    for i in range(1, len(steps) + 1):
        prefix = steps[:i]
        if i > stats.max_len:
            out.suffix_stats = True
        idx, reason = match_history(stats, prefix, profiles, alpha, strategy)
        if idx is None:
            out.truncated = reason
            break
        out.steps.append((steps[i - 1], idx))
    return out


def translate_all(data: Iterable, stats: HistoryStats, profiles: ProfileSet, strategy: str = "kld",
                  alpha: float | None = None, abstraction=None) -> list:
    return [translate(t, stats, profiles, strategy, alpha, abstraction) for t in data]


def initial_profile_index(stats: HistoryStats, profiles: ProfileSet, alpha: float | None = None) -> int:
    """Profile of the null history (KLD resolution when ambiguous, else 0)."""
    alpha = profiles.alpha if alpha is None else alpha
    idx, _ = match_history(stats, (), profiles, alpha, "kld")
    return 0 if idx is None else idx


# ---------------------------------------------------------------- file formats

def write_profiles(path, profiles: ProfileSet, alphabet: Alphabet) -> None:
    m = len(profiles[0].trials) if len(profiles) else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write(f"# alpha={profiles.alpha!r} min_trials={profiles.min_trials}\n")
        w.writerow(["index"] + [f"v{j}" for j in range(m)]
                   + [c for j in range(m) for c in (f"s{j}", f"t{j}")] + ["exemplar"])
        for i, p in enumerate(profiles.profiles):
            vals = ["" if math.isnan(v) else repr(float(v)) for v in p.values]
            counts = [c for s, t in zip(p.successes, p.trials) for c in (s, t)]
            w.writerow([i] + vals + counts + [alphabet.format_history(p.exemplar)])


def read_profiles(path, alphabet: Alphabet) -> ProfileSet:
    with open(path, newline="") as fh:
        header = fh.readline()
        rows = list(csv.reader(fh))
    try:
        meta = dict(kv.split("=", 1) for kv in header.lstrip("# ").split())
        alpha, min_trials = float(meta["alpha"]), int(meta["min_trials"])
        cols = rows[0]
    except (ValueError, KeyError, IndexError):
        raise ParseError(f"{path} line 1: bad profile header") from None
    m = sum(1 for c in cols if c.startswith("v"))
    out = []
    for lineno, row in enumerate(rows[1:], 3):
        try:
            counts = [int(x) for x in row[1 + m:1 + 3 * m]]
            out.append(EstimatedProfile(tuple(counts[0::2]), tuple(counts[1::2]),
                                        alphabet.parse_history(row[1 + 3 * m])))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path} line {lineno}: {exc}") from None
    return ProfileSet(out, alpha, min_trials)


def format_pp_trajectory(pt: PPTrajectory, alphabet: Alphabet) -> str:
    toks = [f"{alphabet.action_name(a)}:{alphabet.obs_name(o)} {k}" for (a, o), k in pt.steps]
    if pt.truncated:
        toks.append(f"[TRUNCATED:{pt.truncated}]")
    if pt.suffix_stats:
        toks.append("[SUFFIX]")
    return " ".join(toks)


def parse_pp_trajectory(line: str, alphabet: Alphabet) -> PPTrajectory:
    toks = line.split()
    pt = PPTrajectory([])
    i = 0
    while i < len(toks):
        tok = toks[i]
        if tok.startswith("[TRUNCATED:"):
            pt.truncated = tok[len("[TRUNCATED:"):-1]
            i += 1
        elif tok == "[SUFFIX]":
            pt.suffix_stats = True
            i += 1
        else:
            a, _, o = tok.partition(":")
            pt.steps.append(((alphabet.action_index(a), alphabet.obs_index(o)), int(toks[i + 1])))
            i += 2
    return pt


def write_pp_trajectories(path, pts: Iterable[PPTrajectory], alphabet: Alphabet) -> None:
    with open(path, "w") as fh:
        for pt in pts:
            fh.write(format_pp_trajectory(pt, alphabet) + "\n")


def read_pp_trajectories(path, alphabet: Alphabet) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                continue
            try:
                out.append(parse_pp_trajectory(line, alphabet))
            except (ValueError, IndexError, ConfigError) as exc:
                raise ParseError(f"{path} line {lineno}: {exc}") from None
    return out
