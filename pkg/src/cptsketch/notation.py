"""Textual CPT notation: a recursive-descent parser and canonical serializer.

Grammar (whitespace between tokens is ignored)::

    tree      := activity | condition | silent | seq | par | xor | loop ;
    seq       := ("seq" | "→") "(" tree ("," tree)+ ")" ;
    par       := ("par" | "∧") "(" tree ("," tree)+ ")" ;
    xor       := ("xor" | "×") "_" cond "(" tree "," tree ")" ;
    loop      := ("loop" | "∝") "(" cond "," tree ")" ;
    activity  := "a" "_"? digits | '"' text '"' ;
    cond      := "c" "_"? digits | 'c"' text '"' ;
    silent    := "tau" | "τ" ;

Quoted labels carry instantiated free text and may not contain '"'.
The parser accepts any tree as a loop's first argument so that irrational
input can still reach ``validate``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .errors import InputError
from .model import (
    ACTIVITY_RE,
    CONDITION_RE,
    Activity,
    Condition,
    CptNode,
    Operator,
    OperatorKind,
    Silent,
    require_valid,
)


@dataclass(frozen=True)
class SourceSpan:
    start: int
    end: int


class ParseErrorKind(enum.Enum):
    UNEXPECTED_TOKEN = "UnexpectedToken"
    ARITY_MISMATCH = "ArityMismatch"
    UNKNOWN_OPERATOR = "UnknownOperator"
    BAD_LABEL = "BadLabel"
    UNBALANCED_PAREN = "UnbalancedParen"


class ParseError(InputError):
    def __init__(self, kind: ParseErrorKind, span: SourceSpan, message: str):
        self.kind = kind
        self.span = span
        self.message = message
        super().__init__(f"{kind.value} at bytes {span.start}..{span.end}: {message}")


_WORD = re.compile(r"[A-Za-z0-9_]+")
_NUMBERED = re.compile(r"([ac])_?([0-9]+)\Z")
_GLYPH_KINDS = {
    "→": OperatorKind.SEQUENCE,
    "∧": OperatorKind.PARALLEL,
    "×": OperatorKind.EXCLUSIVE,
    "∝": OperatorKind.LOOP,
}
_WORD_KINDS = {
    "seq": OperatorKind.SEQUENCE,
    "par": OperatorKind.PARALLEL,
    "loop": OperatorKind.LOOP,
}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.depth = 0

    def span(self, start, end=None) -> SourceSpan:
        end = self.pos if end is None else end
        return SourceSpan(len(self.text[:start].encode()), len(self.text[:end].encode()))

    def fail(self, kind, message, start=None, end=None):
        start = self.pos if start is None else start
        end = start + 1 if end is None else end
        end = min(max(end, start), len(self.text))
        raise ParseError(kind, self.span(start, end), message)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        got = self.peek()
        if got == ch:
            self.pos += 1
            return
        if got == "":
            kind = ParseErrorKind.UNBALANCED_PAREN if self.depth else ParseErrorKind.UNEXPECTED_TOKEN
            self.fail(kind, f"expected {ch!r} but input ended", end=self.pos)
        if got == ")":
            self.fail(ParseErrorKind.UNBALANCED_PAREN, f"expected {ch!r}, found {got!r}")
        wanted = "',' or ')'" if ch == ")" else repr(ch)
        self.fail(ParseErrorKind.UNEXPECTED_TOKEN, f"expected {wanted}, found {got!r}")

    def quoted(self) -> str:
        start = self.pos
        self.pos += 1
        close = self.text.find('"', self.pos)
        if close < 0:
            self.fail(ParseErrorKind.BAD_LABEL, "unterminated quoted label", start, len(self.text))
        label = self.text[self.pos:close]
        self.pos = close + 1
        if not label or label.strip() != label:
            self.fail(ParseErrorKind.BAD_LABEL, "quoted label must be non-empty and trimmed", start, self.pos)
        return label

    def numbered(self, word: str, prefix: str, start: int) -> str:
        m = _NUMBERED.match(word)
        if not m or m.group(1) != prefix:
            what = "activity" if prefix == "a" else "condition"
            self.fail(ParseErrorKind.BAD_LABEL, f"bad {what} label {word!r}", start, start + len(word))
        label = f"{prefix}_{m.group(2)}"
        pattern = ACTIVITY_RE if prefix == "a" else CONDITION_RE
        if not pattern.match(label):
            self.fail(ParseErrorKind.BAD_LABEL, f"label {word!r} needs a positive number", start, start + len(word))
        return label

    def cond(self) -> str:
        """Parse a condition label at the current position (no leading ws skip inside xor)."""
        start = self.pos
        if self.text.startswith('c"', self.pos):
            self.pos += 1
            return self.quoted()
        m = _WORD.match(self.text, self.pos)
        if not m:
            self.fail(ParseErrorKind.BAD_LABEL, "expected a condition label")
        self.pos = m.end()
        return self.numbered(m.group(), "c", start)

    def tree(self) -> CptNode:
        ch = self.peek()
        start = self.pos
        if ch == "":
            self.fail(ParseErrorKind.UNEXPECTED_TOKEN, "expected a tree but input ended", end=self.pos)
        if ch == '"':
            return CptNode(Activity(self.quoted()))
        if self.text.startswith('c"', self.pos):
            self.pos += 1
            return CptNode(Condition(self.quoted()))
        if ch == "τ":
            self.pos += 1
            return CptNode(Silent())
        if ch in _GLYPH_KINDS:
            self.pos += 1
            kind = _GLYPH_KINDS[ch]
            cond = None
            if kind is OperatorKind.EXCLUSIVE:
                if self.pos >= len(self.text) or self.text[self.pos] != "_":
                    self.fail(ParseErrorKind.BAD_LABEL, "expected '_' and a condition after '×'")
                self.pos += 1
                cond = self.cond()
            return self.operator(kind, cond, start)
        m = _WORD.match(self.text, self.pos)
        if not m:
            if ch == ")":
                self.fail(ParseErrorKind.UNBALANCED_PAREN, "unexpected ')'")
            self.fail(ParseErrorKind.UNEXPECTED_TOKEN, f"unexpected {ch!r}")
        word = m.group()
        self.pos = m.end()
        followed_by_paren = self.peek() == "("
        if word in _WORD_KINDS:
            return self.operator(_WORD_KINDS[word], None, start)
        if word.startswith("xor_"):
            cond_text = word[4:]
            if cond_text.startswith("c") and cond_text[1:] == "" and self.text.startswith('"', m.end()):
                self.pos = m.end()
                cond = self.quoted()
            else:
                cond = self.numbered(cond_text, "c", start + 4)
            return self.operator(OperatorKind.EXCLUSIVE, cond, start)
        if followed_by_paren:
            self.fail(ParseErrorKind.UNKNOWN_OPERATOR, f"unknown operator {word!r}", start, start + len(word))
        if word == "tau":
            return CptNode(Silent())
        if word[0] == "a":
            return CptNode(Activity(self.numbered(word, "a", start)))
        if word[0] == "c":
            return CptNode(Condition(self.numbered(word, "c", start)))
        self.fail(ParseErrorKind.BAD_LABEL, f"unrecognised label {word!r}", start, start + len(word))

    def operator(self, kind: OperatorKind, cond, start: int) -> CptNode:
        if self.peek() != "(":
            got = self.peek() or "end of input"
            self.fail(ParseErrorKind.UNEXPECTED_TOKEN, f"expected '(' after operator, found {got!r}")
        self.pos += 1
        self.depth += 1
        kids = [self.tree()]
        while self.peek() == ",":
            self.pos += 1
            kids.append(self.tree())
        self.expect(")")
        self.depth -= 1
        if kind.is_nary and len(kids) < 2:
            self.fail(ParseErrorKind.ARITY_MISMATCH,
                      f"{kind.value} needs at least 2 children, got {len(kids)}", start, self.pos)
        if not kind.is_nary and len(kids) != 2:
            self.fail(ParseErrorKind.ARITY_MISMATCH,
                      f"{kind.value} needs exactly 2 children, got {len(kids)}", start, self.pos)
        return CptNode(Operator(kind, cond), tuple(kids))


def parse(text: str) -> CptNode:
    """Parse CPT notation (Unicode glyphs or ASCII aliases) into a tree."""
    p = _Parser(text)
    if not text.strip():
        raise ParseError(ParseErrorKind.UNEXPECTED_TOKEN, SourceSpan(0, 0), "empty input")
    node = p.tree()
    rest = p.peek()
    if rest:
        kind = ParseErrorKind.UNBALANCED_PAREN if rest == ")" else ParseErrorKind.UNEXPECTED_TOKEN
        p.fail(kind, f"trailing input starting with {rest!r}")
    return node


def _label(label: str, numbered) -> str:
    return label if numbered.match(label) else f'"{label}"'


def serialize(node: CptNode, style: str = "ascii", check: bool = True) -> str:
    """Canonical notation for ``node``: no whitespace, underscore labels."""
    if style not in ("ascii", "unicode"):
        raise ValueError(f"unknown style {style!r}")
    if check:
        require_valid(node, free_labels=True)
    out: list[str] = []
    uni = style == "unicode"

    def cond_text(label):
        return label if CONDITION_RE.match(label) else f'c"{label}"'

    def emit(n: CptNode):
        el = n.element
        if isinstance(el, Activity):
            out.append(_label(el.label, ACTIVITY_RE))
        elif isinstance(el, Condition):
            out.append(cond_text(el.label))
        elif isinstance(el, Silent):
            out.append("τ" if uni else "tau")
        else:
            name = el.kind.glyph if uni else el.kind.value
            if el.kind is OperatorKind.EXCLUSIVE:
                name += "_" + cond_text(el.condition)
            out.append(name + "(")
            for i, child in enumerate(n.children):
                if i:
                    out.append(",")
                emit(child)
            out.append(")")

    emit(node)
    return "".join(out)
