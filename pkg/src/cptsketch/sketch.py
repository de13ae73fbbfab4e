"""Divide-and-conquer text sketch generation.

The tree is walked post-order.  Leaves render directly; every operator node
merges the already-rendered sketches of its children in a single renderer
call, so a renderer only ever sees one layer of structure.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

from .errors import (
    ArityMismatch,
    BackParseError,
    MissingCondition,
    NotALeaf,
    RendererFailure,
)
from .model import (
    Activity,
    Condition,
    CptNode,
    Operator,
    OperatorKind,
    Silent,
    require_valid,
)
from .templates import TemplateFile, load_template

_SECTION = {
    OperatorKind.SEQUENCE: "sequence",
    OperatorKind.EXCLUSIVE: "exclusive",
    OperatorKind.PARALLEL: "parallel",
    OperatorKind.LOOP: "loop",
}
_SLOT = re.compile(r"\{(cond|sub[0-9]+|subN\.\.\.)\}")


@functools.lru_cache(maxsize=None)
def default_templates() -> TemplateFile:
    return load_template(None, "operator_templates.txt")


def load_operator_templates(path: Union[str, Path, None] = None) -> TemplateFile:
    tpl = default_templates() if path is None else load_template(path, "operator_templates.txt")
    missing = [s for s in ("instruction", *_SECTION.values()) if not tpl.get(s)]
    if missing:
        raise ValueError(f"template file lacks sections: {', '.join(missing)}")
    return tpl


@dataclass(frozen=True)
class PromptRecord:
    instruction: str
    input_block: str
    operator: OperatorKind
    examples: str = ""
    response: str = ""
    model_params: object = None
    cache_key: str = ""

    def as_dict(self) -> dict:
        params = self.model_params
        return {
            "instruction": self.instruction,
            "input_block": self.input_block,
            "operator": self.operator.value,
            "examples": self.examples,
            "response": self.response,
            "model_params": params.as_dict() if params is not None else None,
            "cache_key": self.cache_key,
        }


@dataclass(frozen=True)
class MergeRequest:
    kind: OperatorKind
    subs: tuple
    cond: Optional[str]
    path: tuple = ()
    composite: Optional[tuple] = None


@dataclass(frozen=True)
class Merge:
    text: str
    prompt: Optional[PromptRecord] = None


@dataclass
class Sketch:
    text: str
    node_sketches: dict
    renderer_id: str
    prompts: list = field(default_factory=list)
    template_checksum: str = ""

    def provenance(self) -> dict:
        return {
            "renderer_id": self.renderer_id,
            "template_checksum": self.template_checksum,
            "node_sketches": {".".join(map(str, p)): s for p, s in self.node_sketches.items()},
            "prompts": [p.as_dict() for p in self.prompts],
        }


def render_leaf(node: CptNode) -> str:
    el = node.element
    if isinstance(el, Activity):
        return "execute activity " + el.label
    if isinstance(el, Condition):
        return el.label
    if isinstance(el, Silent):
        return ""
    raise NotALeaf(f"{el!r} is not a leaf element")


def check_arity(kind: OperatorKind, subs, cond) -> None:
    n = len(subs)
    if kind.is_nary and n < 2:
        raise ArityMismatch(f"{kind.value} merges at least 2 sub-sketches, got {n}")
    if kind is OperatorKind.EXCLUSIVE and n != 2:
        raise ArityMismatch(f"xor merges exactly 2 sub-sketches, got {n}")
    if kind is OperatorKind.LOOP and n != 1:
        raise ArityMismatch(f"loop merges exactly 1 body sketch, got {n}")
    if kind in (OperatorKind.EXCLUSIVE, OperatorKind.LOOP) and not cond:
        raise MissingCondition(f"{kind.value} needs a condition label")


def fill_template(template: str, subs, cond) -> str:
    def slot(m):
        name = m.group(1)
        if name == "cond":
            return cond or ""
        if name == "subN...":
            return " ".join(f"{i}. {s}" for i, s in enumerate(subs, 1))
        idx = int(name[3:]) - 1
        if not 0 <= idx < len(subs):
            raise ArityMismatch(f"template slot {{{name}}} has no sub-sketch")
        return subs[idx]

    return _SLOT.sub(slot, template)


def construct_prompt(kind: OperatorKind, subs, cond: Optional[str] = None,
                     templates: Optional[TemplateFile] = None) -> PromptRecord:
    check_arity(kind, subs, cond)
    tpl = templates or default_templates()
    return PromptRecord(
        instruction=tpl["instruction"],
        input_block=fill_template(tpl[_SECTION[kind]], list(subs), cond),
        operator=kind,
        examples=tpl.get("examples"),
    )


_LEAF_TEXT = re.compile(r"(?:execute activity [^.;()]+|c_[1-9][0-9]*|)\Z")


def rule_render(kind: OperatorKind, subs, cond: Optional[str] = None, composite=None) -> str:
    """Deterministic English merge; composite sub-sketches are parenthesised."""
    check_arity(kind, subs, cond)
    if composite is None:
        composite = [not _LEAF_TEXT.match(s) for s in subs]
    if kind is OperatorKind.PARALLEL:
        return "Simultaneously: " + " and ".join(f"({s})" for s in subs) + "."
    w = [f"({s})" if c else s for s, c in zip(subs, composite)]
    if kind is OperatorKind.SEQUENCE:
        return "First, " + ". Then, ".join(w) + "."
    if kind is OperatorKind.EXCLUSIVE:
        return f"If condition {cond} is met, {w[0]}. Otherwise, {w[1]}."
    return (f"While condition {cond} is satisfied, repeatedly {w[0]}; "
            f"once {cond} is not met, the loop ends.")


class Renderer:
    renderer_id = "custom"
    template_checksum = ""

    def merge(self, request: MergeRequest) -> Merge:
        raise NotImplementedError


class RuleRenderer(Renderer):
    renderer_id = "rule"

    def merge(self, request: MergeRequest) -> Merge:
        return Merge(rule_render(request.kind, request.subs, request.cond, request.composite))


class CallableRenderer(Renderer):
    """Wrap ``fn(kind, subs, cond) -> str`` as a renderer."""

    def __init__(self, fn: Callable, renderer_id: str = "custom"):
        self.fn = fn
        self.renderer_id = renderer_id

    def merge(self, request: MergeRequest) -> Merge:
        return Merge(self.fn(request.kind, list(request.subs), request.cond))


class LLMRenderer(Renderer):
    """Merge by sending the filled operator template to a completion client."""

    renderer_id = "llm"

    def __init__(self, client, params=None, templates: Optional[TemplateFile] = None):
        from .llm import ModelParams

        self.client = client
        self.params = params or ModelParams()
        self.templates = templates or load_operator_templates()
        self.template_checksum = self.templates.checksum

    def merge(self, request: MergeRequest) -> Merge:
        from .llm import cache_key

        prompt = construct_prompt(request.kind, request.subs, request.cond, self.templates)
        response = self.client.complete(prompt, self.params)
        record = replace(prompt, response=response, model_params=self.params,
                         cache_key=cache_key(prompt, self.params))
        return Merge(response, record)


def generate_bpts(cpt: CptNode, renderer: Optional[Renderer] = None) -> Sketch:
    """Render ``cpt`` bottom-up, one merge per operator node."""
    require_valid(cpt, free_labels=True)
    renderer = renderer or RuleRenderer()
    node_sketches: dict = {}
    prompts: list = []

    def rec(node: CptNode, path: tuple) -> str:
        if node.is_leaf:
            return render_leaf(node)
        el: Operator = node.element
        if el.kind is OperatorKind.LOOP:
            guard, body = node.children
            subs = (rec(body, path + (1,)),)
            composite = (not body.is_leaf,)
            cond = guard.element.label
        else:
            subs = tuple(rec(c, path + (i,)) for i, c in enumerate(node.children))
            composite = tuple(not c.is_leaf for c in node.children)
            cond = el.condition
        request = MergeRequest(el.kind, subs, cond, path, composite)
        try:
            merged = renderer.merge(request)
        except RendererFailure:
            raise
        except Exception as exc:
            raise RendererFailure(path, exc) from exc
        node_sketches[path] = merged.text
        if merged.prompt is not None:
            prompts.append(merged.prompt)
        return merged.text

    text = rec(cpt, ())
    return Sketch(text, node_sketches, renderer.renderer_id, prompts,
                  getattr(renderer, "template_checksum", ""))


_COMPOSITE_PREFIXES = ("First, ", "If condition ", "Simultaneously: ", "While condition ")
_ACT = re.compile(r"a_[1-9][0-9]*")
_COND = re.compile(r"c_[1-9][0-9]*")


class _BackParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message):
        raise BackParseError(message, self.pos)

    def eat(self, literal: str):
        if not self.text.startswith(literal, self.pos):
            found = self.text[self.pos:self.pos + len(literal)]
            self.error(f"expected {literal!r}, found {found!r}")
        self.pos += len(literal)

    def at(self, literal: str) -> bool:
        return self.text.startswith(literal, self.pos)

    def label(self, pattern) -> str:
        m = pattern.match(self.text, self.pos)
        if not m:
            self.error("expected a label")
        self.pos = m.end()
        return m.group()

    def unit(self) -> CptNode:
        for prefix in _COMPOSITE_PREFIXES:
            if self.at(prefix):
                return self.composite()
        return self.leaf()

    def leaf(self) -> CptNode:
        if self.at("execute activity "):
            self.pos += len("execute activity ")
            return CptNode(Activity(self.label(_ACT)))
        if _COND.match(self.text, self.pos):
            return CptNode(Condition(self.label(_COND)))
        return CptNode(Silent())

    def sub(self) -> CptNode:
        if self.at("("):
            self.pos += 1
            node = self.composite()
            self.eat(")")
            return node
        return self.leaf()

    def composite(self) -> CptNode:
        if self.at("First, "):
            self.pos += len("First, ")
            kids = [self.sub()]
            while self.at(". Then, "):
                self.pos += len(". Then, ")
                kids.append(self.sub())
            self.eat(".")
            if len(kids) < 2:
                self.error("sequence with a single step")
            return CptNode(Operator(OperatorKind.SEQUENCE), tuple(kids))
        if self.at("If condition "):
            self.pos += len("If condition ")
            cond = self.label(_COND)
            self.eat(" is met, ")
            left = self.sub()
            self.eat(". Otherwise, ")
            right = self.sub()
            self.eat(".")
            return CptNode(Operator(OperatorKind.EXCLUSIVE, cond), (left, right))
        if self.at("Simultaneously: "):
            self.pos += len("Simultaneously: ")
            kids = []
            while True:
                self.eat("(")
                kids.append(self.unit())
                self.eat(")")
                if not self.at(" and ("):
                    break
                self.pos += len(" and ")
            self.eat(".")
            if len(kids) < 2:
                self.error("parallel block with a single branch")
            return CptNode(Operator(OperatorKind.PARALLEL), tuple(kids))
        if self.at("While condition "):
            self.pos += len("While condition ")
            cond = self.label(_COND)
            self.eat(" is satisfied, repeatedly ")
            body = self.sub()
            self.eat("; once ")
            again = self.label(_COND)
            if again != cond:
                self.error(f"loop closes on {again!r} but opened on {cond!r}")
            self.eat(" is not met, the loop ends.")
            return CptNode(Operator(OperatorKind.LOOP), (CptNode(Condition(cond)), body))
        self.error("expected a sequence, exclusive, parallel or loop clause")


def back_parse(text: str) -> CptNode:
    """Invert rule-renderer output back into a tree."""
    p = _BackParser(text)
    node = p.unit()
    if p.pos != len(text):
        p.error("trailing text")
    return node
