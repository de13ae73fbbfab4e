"""Conditional process trees: generation, notation, trace semantics and text sketches."""

from .generator import GenParams, generate_batch, generate_cpt, rationalize
from .model import CptNode, OperatorKind, TreeStats, stats, validate
from .notation import parse, serialize
from .semantics import enumerate_traces, trace_equivalent
from .sketch import LLMRenderer, RuleRenderer, Sketch, back_parse, generate_bpts

__all__ = [
    "CptNode", "GenParams", "LLMRenderer", "OperatorKind", "RuleRenderer", "Sketch",
    "TreeStats", "back_parse", "enumerate_traces", "generate_batch", "generate_bpts",
    "generate_cpt", "parse", "rationalize", "serialize", "stats", "trace_equivalent",
    "validate",
]
