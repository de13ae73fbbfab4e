"""Bounded execution traces of a CPT.

Conditions are free: every branch of an exclusive node and every iteration
count of a loop up to ``loop_bound`` is possible.  Parallel children
interleave at activity granularity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

from .errors import BoundExceeded
from .model import Activity, CptNode, OperatorKind, require_valid

DEFAULT_CAP = 100_000
MAX_LOOP_BOUND = 3

Trace = tuple


@dataclass(frozen=True)
class TraceSet:
    traces: frozenset
    loop_bound: int

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self.sorted())

    def __contains__(self, trace) -> bool:
        return tuple(trace) in self.traces

    def sorted(self) -> list:
        return sorted(self.traces, key=",".join)

    def lines(self) -> list[str]:
        return sorted(",".join(t) for t in self.traces)


@lru_cache(maxsize=4096)
def _shuffle(x: Trace, y: Trace) -> frozenset:
    if not x:
        return frozenset([y])
    if not y:
        return frozenset([x])
    left = {(x[0],) + rest for rest in _shuffle(x[1:], y)}
    right = {(y[0],) + rest for rest in _shuffle(x, y[1:])}
    return frozenset(left | right)


def _guard(out: set, cap: int) -> set:
    if len(out) > cap:
        raise BoundExceeded(f"trace set exceeds cap of {cap}")
    return out


def _concat(xs: set, ys: set, cap: int) -> set:
    out: set = set()
    for x in xs:
        out.update(x + y for y in ys)
        _guard(out, cap)
    return out


def _interleave(xs: set, ys: set, cap: int) -> set:
    out: set = set()
    for x in xs:
        for y in ys:
            out |= _shuffle(x, y)
            _guard(out, cap)
    return out


def _traces(node: CptNode, bound: int, cap: int) -> set:
    el = node.element
    if node.is_leaf:
        return {(el.label,)} if isinstance(el, Activity) else {()}
    kind = node.kind
    kids = node.children
    if kind is OperatorKind.SEQUENCE:
        out = {()}
        for child in kids:
            out = _concat(out, _traces(child, bound, cap), cap)
        return out
    if kind is OperatorKind.PARALLEL:
        out = {()}
        for child in kids:
            out = _interleave(out, _traces(child, bound, cap), cap)
        return out
    if kind is OperatorKind.EXCLUSIVE:
        return _guard(_traces(kids[0], bound, cap) | _traces(kids[1], bound, cap), cap)
    # loop: the first child is a guard and contributes no activities
    body = _traces(kids[1], bound, cap)
    out, layer = {()}, {()}
    for _ in range(bound):
        layer = _concat(layer, body, cap)
        out = _guard(out | layer, cap)
    return out


def enumerate_traces(node: CptNode, loop_bound: int = 2, cap: int = DEFAULT_CAP,
                     strict: bool = True) -> TraceSet:
    """All activity sequences of ``node`` with each loop run 0..loop_bound times.

    ``strict=False`` skips validation so rough (unrationalized) trees can be
    compared; a loop's first child is then read as a guard whatever it is.
    """
    if not 0 <= loop_bound <= MAX_LOOP_BOUND:
        raise ValueError(f"loop_bound must be in [0, {MAX_LOOP_BOUND}]")
    if strict:
        require_valid(node, free_labels=True)
    return TraceSet(frozenset(_traces(node, loop_bound, cap)), loop_bound)


def trace_equivalent(x: CptNode, y: CptNode, loop_bound: int = 2, cap: int = DEFAULT_CAP,
                     strict: bool = True) -> bool:
    tx = enumerate_traces(x, loop_bound, cap, strict)
    ty = enumerate_traces(y, loop_bound, cap, strict)
    return tx.traces == ty.traces
