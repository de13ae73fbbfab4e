"""Conditional process tree data model, structural statistics and validation."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .errors import InvalidTree

ACTIVITY_RE = re.compile(r"a_[1-9][0-9]*\Z")
CONDITION_RE = re.compile(r"c_[1-9][0-9]*\Z")


class OperatorKind(enum.Enum):
    SEQUENCE = "seq"
    EXCLUSIVE = "xor"
    PARALLEL = "par"
    LOOP = "loop"

    @property
    def glyph(self) -> str:
        return _GLYPHS[self]

    @property
    def is_nary(self) -> bool:
        return self in (OperatorKind.SEQUENCE, OperatorKind.PARALLEL)


_GLYPHS = {
    OperatorKind.SEQUENCE: "→",
    OperatorKind.EXCLUSIVE: "×",
    OperatorKind.PARALLEL: "∧",
    OperatorKind.LOOP: "∝",
}


@dataclass(frozen=True)
class Activity:
    label: str


@dataclass(frozen=True)
class Condition:
    label: str


@dataclass(frozen=True)
class Silent:
    pass


@dataclass(frozen=True)
class Operator:
    kind: OperatorKind
    condition: Optional[str] = None


Element = Union[Activity, Condition, Silent, Operator]
Path = tuple


@dataclass(frozen=True)
class CptNode:
    element: Element
    children: tuple = field(default=())

    def __post_init__(self):
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    @property
    def is_leaf(self) -> bool:
        return not isinstance(self.element, Operator)

    @property
    def kind(self) -> Optional[OperatorKind]:
        return self.element.kind if isinstance(self.element, Operator) else None

    def walk(self, path: Path = ()) -> Iterator[tuple[Path, "CptNode"]]:
        """Pre-order iteration over ``(path, node)`` pairs."""
        stack = [(path, self)]
        while stack:
            p, node = stack.pop()
            yield p, node
            kids = node.children
            for i in range(len(kids) - 1, -1, -1):
                stack.append((p + (i,), kids[i]))

    def at(self, path: Path) -> "CptNode":
        node = self
        for i in path:
            node = node.children[i]
        return node

    def replace_at(self, path: Path, new: "CptNode") -> "CptNode":
        if not path:
            return new
        head, rest = path[0], path[1:]
        kids = list(self.children)
        kids[head] = kids[head].replace_at(rest, new)
        return CptNode(self.element, tuple(kids))

    def __str__(self) -> str:
        from .notation import serialize

        return serialize(self, "ascii", check=False)


# Construction helpers; these do not validate.

def activity(label: str) -> CptNode:
    return CptNode(Activity(label))


def condition(label: str) -> CptNode:
    return CptNode(Condition(label))


def silent() -> CptNode:
    return CptNode(Silent())


def seq(*children: CptNode) -> CptNode:
    return CptNode(Operator(OperatorKind.SEQUENCE), children)


def par(*children: CptNode) -> CptNode:
    return CptNode(Operator(OperatorKind.PARALLEL), children)


def xor(cond: str, left: CptNode, right: CptNode) -> CptNode:
    return CptNode(Operator(OperatorKind.EXCLUSIVE, cond), (left, right))


def loop(cond: Union[str, CptNode], body: CptNode) -> CptNode:
    first = condition(cond) if isinstance(cond, str) else cond
    return CptNode(Operator(OperatorKind.LOOP), (first, body))


@dataclass(frozen=True)
class Violation:
    path: Path
    rule: str
    message: str

    def __str__(self) -> str:
        where = ".".join(map(str, self.path)) or "<root>"
        return f"{where}: {self.rule}: {self.message}"


def _label_ok(label, pattern, free_labels):
    if not isinstance(label, str) or not label:
        return False
    if pattern.match(label):
        return True
    return free_labels and '"' not in label and label.strip() == label


def validate(node: CptNode, free_labels: bool = False) -> list[Violation]:
    """Return every well-formedness and rationality violation in ``node``.

    With ``free_labels`` set, instantiated labels (arbitrary text without
    double quotes) are accepted alongside the ``a_<n>``/``c_<n>`` forms.
    """
    out: list[Violation] = []
    for path, n in node.walk():
        el, kids = n.element, n.children
        if isinstance(el, (Activity, Condition, Silent)):
            if kids:
                out.append(Violation(path, "leaf-has-children", "leaves take no children"))
            if isinstance(el, Activity) and not _label_ok(el.label, ACTIVITY_RE, free_labels):
                out.append(Violation(path, "bad-label", f"bad activity label {el.label!r}"))
            if isinstance(el, Condition) and not _label_ok(el.label, CONDITION_RE, free_labels):
                out.append(Violation(path, "bad-label", f"bad condition label {el.label!r}"))
            continue
        if not isinstance(el, Operator) or not isinstance(el.kind, OperatorKind):
            out.append(Violation(path, "unknown-element", f"unknown element {el!r}"))
            continue
        kind = el.kind
        if kind is OperatorKind.EXCLUSIVE:
            if el.condition is None:
                out.append(Violation(path, "xor-missing-condition", "exclusive node needs a condition"))
            elif not _label_ok(el.condition, CONDITION_RE, free_labels):
                out.append(Violation(path, "bad-label", f"bad condition label {el.condition!r}"))
        elif el.condition is not None:
            out.append(Violation(path, "unexpected-condition", f"{kind.value} carries no condition"))
        if kind.is_nary:
            if len(kids) < 2:
                out.append(Violation(path, f"{kind.value}-arity", "needs at least 2 children"))
            for i, child in enumerate(kids):
                if child.kind is kind:
                    out.append(Violation(
                        path + (i,), f"{kind.value}-under-{kind.value}",
                        f"{kind.value} node nested directly in {kind.value} node",
                    ))
        elif len(kids) != 2:
            out.append(Violation(path, f"{kind.value}-arity", "needs exactly 2 children"))
        if kind is OperatorKind.LOOP and kids and not isinstance(kids[0].element, Condition):
            out.append(Violation(
                path + (0,), "loop-first-child-not-condition",
                "first child of a loop must be a condition leaf",
            ))
    return out


def require_valid(node: CptNode, free_labels: bool = False) -> None:
    violations = validate(node, free_labels)
    if violations:
        raise InvalidTree(violations)


@dataclass(frozen=True)
class TreeStats:
    depth: int
    node_count: int
    activity_count: int
    operator_count: int
    max_selection_nesting: int
    max_loop_nesting: int

    def as_dict(self) -> dict:
        return {
            "depth": self.depth,
            "node_count": self.node_count,
            "activity_count": self.activity_count,
            "operator_count": self.operator_count,
            "max_selection_nesting": self.max_selection_nesting,
            "max_loop_nesting": self.max_loop_nesting,
        }


def _stats(node: CptNode) -> tuple:
    el = node.element
    if not node.children:
        return (1, 1, int(isinstance(el, Activity)), int(isinstance(el, Operator)),
                int(node.kind is OperatorKind.EXCLUSIVE), int(node.kind is OperatorKind.LOOP))
    depth = nodes = acts = ops = sel = lp = 0
    for child in node.children:
        d, n, a, o, s, l = _stats(child)
        depth, sel, lp = max(depth, d), max(sel, s), max(lp, l)
        nodes += n
        acts += a
        ops += o
    return (depth + 1, nodes + 1, acts + int(isinstance(el, Activity)),
            ops + int(isinstance(el, Operator)),
            sel + int(node.kind is OperatorKind.EXCLUSIVE),
            lp + int(node.kind is OperatorKind.LOOP))


def stats(node: CptNode, free_labels: bool = False) -> TreeStats:
    require_valid(node, free_labels)
    return TreeStats(*_stats(node))


def activity_labels(node: CptNode) -> list[str]:
    return [n.element.label for _, n in node.walk() if isinstance(n.element, Activity)]


def condition_labels(node: CptNode) -> list[str]:
    out = []
    for _, n in node.walk():
        if isinstance(n.element, Condition):
            out.append(n.element.label)
        elif n.kind is OperatorKind.EXCLUSIVE and n.element.condition is not None:
            out.append(n.element.condition)
    return out
