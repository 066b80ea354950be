"""Explicit deterministic output machines (Moore style).

A machine emits the output label of the state it enters.  Used to write
down prediction-profile systems by hand and to unroll learned runtimes.

Text format, one directive per line (``#`` starts a comment)::

    start <state>
    state <name> <output>
    trans <state> <input> <next-state>
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .core import Alphabet
from .errors import MalformedHistoryError, ParseError, PreconditionError


@dataclass
class DeterministicMachine:
    states: list
    inputs: list
    outputs: list
    start: int
    state_output: list  # state index -> output index
    delta: dict = field(default_factory=dict)  # (state, input) -> state
    complete: bool = True  # undefined inputs self-loop when True

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(tuple(self.inputs), tuple(self.outputs))

    def step(self, s: int, inp: int) -> int | None:
        nxt = self.delta.get((s, inp))
        if nxt is None and self.complete:
            return s
        return nxt

    def run(self, inputs: Iterable[int]) -> int:
        s = self.start
        for i in inputs:
            s = self.step(s, i)
            if s is None:
                raise MalformedHistoryError(f"input {self.inputs[i]} undefined")
        return s


class MachineOracle:
    """Generative view: action = input, observation = emitted output."""

    def __init__(self, machine: DeterministicMachine):
        self.machine = machine
        self.alphabet = machine.alphabet

    def next_obs_dist(self, history, action: int) -> dict:
        m = self.machine
        s = m.start
        for a, o in history:
            s = m.step(s, a)
            if s is None or m.state_output[s] != o:
                raise MalformedHistoryError(f"step {(a, o)} impossible")
        nxt = m.step(s, action)
        if nxt is None:
            return {}
        return {m.state_output[nxt]: 1.0}


def parse_machine(lines: Iterable[str], complete: bool = True) -> DeterministicMachine:
    """Parse the text format; conflicting transitions raise PreconditionError."""
    states: dict = {}
    outputs: dict = {}
    inputs: dict = {}
    state_out: list = []
    trans: dict = {}
    start = None
    pending = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kind = toks[0]
        if kind == "start" and len(toks) == 2:
            start = toks[1]
        elif kind == "state" and len(toks) == 3:
            if toks[1] in states:
                raise ParseError(f"line {lineno}: state {toks[1]} declared twice")
            states[toks[1]] = len(states)
            state_out.append(outputs.setdefault(toks[2], len(outputs)))
        elif kind == "trans" and len(toks) == 4:
            pending.append((lineno, toks[1], toks[2], toks[3]))
        else:
            raise ParseError(f"line {lineno}: cannot parse {line!r}")
    for lineno, src, inp, dst in pending:
        if src not in states or dst not in states:
            raise ParseError(f"line {lineno}: undeclared state in transition")
        i = inputs.setdefault(inp, len(inputs))
        key = (states[src], i)
        if key in trans and trans[key] != states[dst]:
            raise PreconditionError(f"non-deterministic transition: state {src} input {inp}")
        trans[key] = states[dst]
    if start is None or start not in states:
        raise ParseError("missing or unknown start state")
    return DeterministicMachine(list(states), list(inputs), list(outputs), states[start],
                                state_out, trans, complete)


def load_machine(path, complete: bool = True) -> DeterministicMachine:
    with open(path) as fh:
        return parse_machine(fh, complete)


def format_machine(m: DeterministicMachine) -> str:
    out = [f"start {m.states[m.start]}"]
    out += [f"state {name} {m.outputs[m.state_output[i]]}" for i, name in enumerate(m.states)]
    out += [f"trans {m.states[s]} {m.inputs[i]} {m.states[t]}" for (s, i), t in sorted(m.delta.items())]
    return "\n".join(out) + "\n"


def threecard_machine() -> DeterministicMachine:
    """Ace-position machine: swaps permute the ace; reveals pin it down."""
    text = ["start ace2"]
    text += [f"state ace{i} {'-'.join('1' if j == i else '0' for j in (1, 2, 3))}" for i in (1, 2, 3)]
    swaps = {"swap12": (1, 2), "swap13": (1, 3), "swap23": (2, 3)}
    for i in (1, 2, 3):
        for name, (p, q) in swaps.items():
            j = q if i == p else p if i == q else i
            text.append(f"trans ace{i} watch:{name} ace{j}")
        for j in (1, 2, 3):
            text.append(f"trans ace{i} watch:pos{j} ace{j}")
            text.append(f"trans ace{i} flip{j}:ace ace{j}")
    return parse_machine(text)


def ballbounce_machine() -> DeterministicMachine:
    """Window-centre machine: white, entering (black next), at centre."""
    text = ["start W", "state W 0", "state B 1", "state C 0",
            "trans W step:w000 W", "trans W step:w100 B", "trans W step:w001 B",
            "trans B step:w010 C", "trans C step:w100 W", "trans C step:w001 W"]
    return parse_machine(text)


def unroll_runtime(make_runtime: Callable[[], object], n_inputs: int, depth: int,
                   profile_index: Callable[[object], int],
                   input_names: Sequence[str] | None = None) -> DeterministicMachine:
    """Tree machine of a deterministic runtime explored to ``depth``.

    ``make_runtime()`` returns a fresh runtime with ``observe_step(i)``;
    ``profile_index(runtime)`` labels its current state.
    """
    states, outs, delta = [()], [], {}
    rt = make_runtime()
    outs.append(profile_index(rt))
    frontier = [()]
    for _ in range(depth):
        nxt = []
        for seq in frontier:
            for i in range(n_inputs):
                rt = make_runtime()
                for j in seq + (i,):
                    rt.observe_step(j)
                child = seq + (i,)
                states.append(child)
                outs.append(profile_index(rt))
                nxt.append(child)
        frontier = nxt
    index = {s: k for k, s in enumerate(states)}
    for s in states:
        if len(s) < depth:
            for i in range(n_inputs):
                delta[(index[s], i)] = index[s + (i,)]
    labels = sorted(set(outs))
    out_ix = {v: k for k, v in enumerate(labels)}
    names = list(input_names) if input_names is not None else [f"i{i}" for i in range(n_inputs)]
    return DeterministicMachine([".".join(map(str, s)) or "root" for s in states], names,
                                [str(v) for v in labels], 0, [out_ix[v] for v in outs], delta,
                                complete=False)
