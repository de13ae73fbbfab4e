"""Random CPT generation: shape tree, element assignment, rationalization.

Randomness comes from :class:`random.Random` (Mersenne Twister), whose
``random()``/``randrange()`` streams are stable across platforms for a given
integer seed.  Batch items use sub-seeds derived with BLAKE2b so any item can
be regenerated on its own.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Iterator, Optional

from .errors import InvalidParams, ShapeError
from .model import (
    CONDITION_RE,
    Activity,
    Condition,
    CptNode,
    Operator,
    OperatorKind,
)

SEED_LIMIT = 2**64

_BINARY_CHOICES = (
    OperatorKind.SEQUENCE,
    OperatorKind.EXCLUSIVE,
    OperatorKind.PARALLEL,
    OperatorKind.LOOP,
)
_NARY_CHOICES = (OperatorKind.SEQUENCE, OperatorKind.PARALLEL)


@dataclass(frozen=True)
class GenParams:
    depth: int = 5
    p_zero: float = 0.3
    p_two: float = 0.4
    num_low: int = 3
    num_up: int = 5
    seed: int = 0

    def check(self) -> None:
        problems = []
        if not isinstance(self.depth, int) or self.depth < 1:
            problems.append("depth must be an integer >= 1")
        for name in ("p_zero", "p_two"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if self.p_zero + self.p_two > 1.0 + 1e-12:
            problems.append("p_zero + p_two must not exceed 1")
        if self.num_low < 3:
            problems.append("num_low must be >= 3")
        if self.num_up < self.num_low:
            problems.append("num_up must be >= num_low")
        if not isinstance(self.seed, int) or not 0 <= self.seed < SEED_LIMIT:
            problems.append("seed must be an integer in [0, 2**64)")
        if problems:
            raise InvalidParams("; ".join(problems))

    def as_dict(self) -> dict:
        return asdict(self)


def default_params(**overrides) -> GenParams:
    """Shipped defaults from ``data/defaults.json`` with optional overrides."""
    text = resources.files("cptsketch").joinpath("data/defaults.json").read_text()
    values = json.loads(text)["gen"]
    values.update(overrides)
    return GenParams(**values)


def derive_seed(seed: int, index: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class ShapeNode:
    children: list = field(default_factory=list)

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def _child_count(params: GenParams, rng: random.Random) -> int:
    r = rng.random()
    if r < params.p_zero:
        return 0
    if r < params.p_zero + params.p_two:
        return 2
    return rng.randint(params.num_low, params.num_up)


def random_tree(params: GenParams, rng: Optional[random.Random] = None) -> ShapeNode:
    """Breadth-first random shape with at most ``params.depth`` levels."""
    params.check()
    rng = random.Random(params.seed) if rng is None else rng
    root = ShapeNode()
    queue = deque([(root, 1)])
    while queue:
        node, level = queue.popleft()
        if level >= params.depth:
            continue
        node.children = [ShapeNode() for _ in range(_child_count(params, rng))]
        queue.extend((child, level + 1) for child in node.children)
    return root


def assign_elements(shape: ShapeNode, rng: random.Random) -> CptNode:
    """Turn a shape into a rough CPT; labels come from pre-order counters."""
    counters = {"a": 0, "c": 0}

    def build(node: ShapeNode) -> CptNode:
        n = len(node.children)
        if n == 0:
            counters["a"] += 1
            return CptNode(Activity(f"a_{counters['a']}"))
        if n == 1:
            raise ShapeError("shape contains a node with exactly one child")
        kind = rng.choice(_BINARY_CHOICES if n == 2 else _NARY_CHOICES)
        cond = None
        if kind is OperatorKind.EXCLUSIVE:
            counters["c"] += 1
            cond = f"c_{counters['c']}"
        return CptNode(Operator(kind, cond), tuple(build(c) for c in node.children))

    return build(shape)


def _max_condition_index(node: CptNode) -> int:
    best = 0
    for _, n in node.walk():
        el = n.element
        label = el.label if isinstance(el, Condition) else getattr(el, "condition", None)
        if label and CONDITION_RE.match(label):
            best = max(best, int(label[2:]))
    return best


def rationalize(rough: CptNode, mode: str = "splice", fix_loops: bool = True) -> CptNode:
    """Repair the three irrational structures until none remain.

    ``mode="splice"`` hoists the children of a same-kind sequence/parallel
    child into its parent; ``mode="delete"`` drops that child subtree instead,
    falling back to splicing when deletion would leave fewer than two
    children.  Loop guards that are not condition leaves are replaced by
    fresh condition labels numbered after the largest one already present.
    """
    if mode not in ("splice", "delete"):
        raise ValueError(f"unknown mode {mode!r}")
    fresh = [_max_condition_index(rough)]

    def repair(node: CptNode) -> CptNode:
        if node.is_leaf:
            return node
        kind = node.kind
        kids = [repair(c) for c in node.children]
        changed = any(k is not c for k, c in zip(kids, node.children))
        if kind.is_nary:
            same = [c.kind is kind for c in kids]
            if any(same):
                kept = [c for c, s in zip(kids, same) if not s]
                if mode == "delete" and len(kept) >= 2:
                    kids = kept
                else:
                    flat = []
                    for c, s in zip(kids, same):
                        flat.extend(c.children if s else (c,))
                    kids = flat
                changed = True
        elif kind is OperatorKind.LOOP and fix_loops and not isinstance(kids[0].element, Condition):
            fresh[0] += 1
            kids[0] = CptNode(Condition(f"c_{fresh[0]}"))
            changed = True
        return CptNode(node.element, tuple(kids)) if changed else node

    return repair(rough)


def generate_cpt(params: GenParams) -> CptNode:
    params.check()
    rng = random.Random(params.seed)
    return rationalize(assign_elements(random_tree(params, rng), rng))


def generate_rough(params: GenParams) -> CptNode:
    """Element-assigned tree before rationalization, same stream as generate_cpt."""
    params.check()
    rng = random.Random(params.seed)
    return assign_elements(random_tree(params, rng), rng)


def generate_batch(params: GenParams, n: int, start: int = 0) -> Iterator[CptNode]:
    params.check()
    if n < 1:
        raise InvalidParams("batch size must be >= 1")
    for i in range(start, start + n):
        yield generate_cpt(replace(params, seed=derive_seed(params.seed, i)))
