"""Test-suite construction, single-shot baseline prompt, statistics and scoring."""

from __future__ import annotations

import csv
import functools
import json
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Union

from .errors import EmptySuite, InputError, QuotaUnreachable
from .generator import GenParams, default_params, derive_seed, generate_cpt
from .model import CptNode, TreeStats, stats
from .notation import serialize
from .templates import TemplateFile, load_template

CATEGORIES = (
    "depth2", "depth3", "depth4", "depth5",
    "multilayer_loop", "multilayer_selection", "many_nodes",
)

BASELINE_HEADERS = (
    ("instruction", "Instruction"),
    ("context", "Context"),
    ("prompt", "Prompt"),
    ("example", "Example"),
    ("output_indicator", "Output Indicator"),
)
TREE_HEADER = "Conditional Process Tree"

SCORING_RULE = (
    "# Scoring rule (one row per record and evaluator, score in [0, 1]):",
    "#   1   the sketch matches the tree exactly, has no ambiguity and reads fluently",
    "#   0   the sketch disagrees with the tree",
    "#   ambiguous sketches score the chance a reader understands them correctly (e.g. 0.5)",
    "#   correct and unambiguous but not fluent: the evaluator's judgement, above 0.5",
    "# Accuracy = mean over records of the per-record mean over evaluators, times 100.",
)


@dataclass(frozen=True)
class SuiteSpec:
    depth2: int = 10
    depth3: int = 20
    depth4: int = 20
    depth5: int = 20
    multilayer_loop: int = 10
    multilayer_selection: int = 10
    many_nodes: int = 10
    node_threshold: int = 15

    def quota(self) -> dict:
        return {c: getattr(self, c) for c in CATEGORIES}

    @property
    def total(self) -> int:
        return sum(self.quota().values())


@dataclass(frozen=True)
class SuiteItem:
    id: str
    category: str
    cpt: CptNode
    stats: TreeStats

    def as_json(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "cpt": serialize(self.cpt, "ascii"),
            "stats": self.stats.as_dict(),
        }


def matches(category: str, st: TreeStats, node_threshold: int = 15) -> bool:
    if category.startswith("depth"):
        return st.depth == int(category[5:])
    if category == "multilayer_loop":
        return st.max_loop_nesting >= 2
    if category == "multilayer_selection":
        return st.max_selection_nesting >= 2
    if category == "many_nodes":
        return st.node_count > node_threshold
    raise ValueError(f"unknown category {category!r}")


def build_suite(spec: SuiteSpec = SuiteSpec(), seed: int = 0,
                params: Optional[GenParams] = None, budget: int = 200_000) -> list:
    """Rejection-sample generated trees into the category quotas.

    A tree is filed under the first category, in table order, that it
    satisfies and that still has room; repeated trees are skipped.
    """
    quota = spec.quota()
    if any(v < 0 for v in quota.values()):
        raise InputError("suite quotas must be non-negative")
    params = replace(params or default_params(), seed=seed)
    params.check()
    buckets: dict = {c: [] for c in CATEGORIES}
    seen: set = set()
    remaining = spec.total
    i = 0
    while remaining and i < budget:
        tree = generate_cpt(replace(params, seed=derive_seed(seed, i)))
        i += 1
        key = serialize(tree, "ascii", check=False)
        if key in seen:
            continue
        st = stats(tree)
        for cat in CATEGORIES:
            if len(buckets[cat]) < quota[cat] and matches(cat, st, spec.node_threshold):
                buckets[cat].append((tree, st))
                seen.add(key)
                remaining -= 1
                break
    if remaining:
        starving = next(c for c in CATEGORIES if len(buckets[c]) < quota[c])
        raise QuotaUnreachable(starving, len(buckets[starving]), quota[starving], budget)
    items = []
    for cat in CATEGORIES:
        for tree, st in buckets[cat]:
            items.append(SuiteItem(f"suite-{len(items) + 1:03d}", cat, tree, st))
    return items


def export_suite(items: Iterable[SuiteItem], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.as_json(), ensure_ascii=False) + "\n")


@functools.lru_cache(maxsize=None)
def default_baseline() -> TemplateFile:
    return load_template(None, "baseline_template.txt")


def baseline_examples(template: TemplateFile) -> list:
    blocks = [b.strip() for b in template.get("example").split("\n\n")]
    return [b for b in blocks if b]


def traditional_prompt(cpt: CptNode, template: Optional[TemplateFile] = None,
                       n_examples: int = 2, style: str = "unicode") -> str:
    """Six-section single-shot prompt; the tree notation is the last section."""
    template = template or default_baseline()
    tree_text = serialize(cpt, style)
    examples = baseline_examples(template)
    if n_examples > len(examples):
        raise InputError(f"template has {len(examples)} examples, {n_examples} requested")
    parts = []
    for key, header in BASELINE_HEADERS:
        if key == "example":
            body = "\n\n".join(f"Example {i}:\n{ex}" for i, ex in enumerate(examples[:n_examples], 1))
        else:
            body = template[key]
        parts.append(f"### {header}\n{body}")
    parts.append(f"### {TREE_HEADER}\n{tree_text}")
    return "\n\n".join(parts)


def traditional_bpts(cpt: CptNode, client, params=None, **prompt_options) -> str:
    """Ask a completion client for a sketch of the whole tree in one shot."""
    from .sketch import PromptRecord

    record = PromptRecord(instruction="", input_block=traditional_prompt(cpt, **prompt_options),
                          operator=None)
    return client.complete(record, params)


@dataclass(frozen=True)
class SuiteStats:
    trees: int
    activity_max: int
    activity_min: int
    node_max: int
    node_min: int
    operator_max: int
    operator_min: int
    depth_max: int
    depth_min: int
    multilayer_selection: int
    multilayer_loop: int

    def rows(self) -> list:
        return [
            ("Activity", "Max", self.activity_max),
            ("Activity", "Min", self.activity_min),
            ("Node", "Max", self.node_max),
            ("Node", "Min", self.node_min),
            ("Operator", "Max", self.operator_max),
            ("Operator", "Min", self.operator_min),
            ("Multi-layer Selection", ">= 2", self.multilayer_selection),
            ("Multi-layer Loop", ">= 2", self.multilayer_loop),
        ]

    def table(self) -> str:
        width = max(len(a) for a, _, _ in self.rows())
        lines = [f"{'Aspect':<{width}}  {'Type':<9} Number"]
        lines += [f"{a:<{width}}  {t:<9} {n}" for a, t, n in self.rows()]
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def suite_stats(suite: Iterable) -> SuiteStats:
    """Table-shaped extrema over a suite of trees or suite items."""
    all_stats = [s.stats if isinstance(s, SuiteItem) else stats(s) for s in suite]
    if not all_stats:
        raise EmptySuite("cannot summarise an empty suite")
    return summarize(all_stats)


def summarize(all_stats: list) -> SuiteStats:
    acts = [s.activity_count for s in all_stats]
    nodes = [s.node_count for s in all_stats]
    ops = [s.operator_count for s in all_stats]
    depths = [s.depth for s in all_stats]
    return SuiteStats(
        trees=len(all_stats),
        activity_max=max(acts), activity_min=min(acts),
        node_max=max(nodes), node_min=min(nodes),
        operator_max=max(ops), operator_min=min(ops),
        depth_max=max(depths), depth_min=min(depths),
        multilayer_selection=sum(s.max_selection_nesting >= 2 for s in all_stats),
        multilayer_loop=sum(s.max_loop_nesting >= 2 for s in all_stats),
    )


@dataclass(frozen=True)
class ScoreRow:
    record_id: str
    evaluator_id: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InputError(f"score {self.score} for {self.record_id} outside [0, 1]")


@dataclass
class ScoreSheet:
    rows: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows: Iterable) -> "ScoreSheet":
        return cls([r if isinstance(r, ScoreRow) else ScoreRow(str(r[0]), str(r[1]), float(r[2]))
                    for r in rows])

    @classmethod
    def read(cls, path: Union[str, Path]) -> "ScoreSheet":
        with open(path, newline="", encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.DictReader(lines)
        missing = {"record_id", "evaluator_id", "score"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"score sheet lacks columns: {', '.join(sorted(missing))}")
        rows = []
        for row in reader:
            if row["score"] in (None, ""):
                continue
            try:
                score = float(row["score"])
            except ValueError as exc:
                raise InputError(f"bad score {row['score']!r}") from exc
            rows.append(ScoreRow(row["record_id"], row["evaluator_id"], score))
        return cls(rows)

    def write(self, path: Union[str, Path]) -> None:
        write_sheet(path, [(r.record_id, r.evaluator_id, r.score) for r in self.rows])


def write_sheet(path: Union[str, Path], rows: Iterable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in SCORING_RULE:
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["record_id", "evaluator_id", "score"])
        writer.writerows(rows)


def aggregate_scores(sheet: Union[ScoreSheet, Iterable]) -> float:
    """Per-record mean over evaluators, then mean over records, times 100."""
    if not isinstance(sheet, ScoreSheet):
        sheet = ScoreSheet.from_rows(sheet)
    per_record: dict = {}
    for row in sheet.rows:
        per_record.setdefault(row.record_id, []).append(row.score)
    if not per_record:
        raise EmptySuite("score sheet has no scored rows")
    return 100.0 * statistics.fmean(statistics.fmean(v) for v in per_record.values())


def emit_score_sheets(items: list, texts: dict, out_dir: Union[str, Path],
                      evaluators: int = 3) -> list:
    """Write one blank score sheet plus one item listing per renderer.

    ``texts`` maps a renderer name to sketches aligned with ``items``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, sketches in texts.items():
        if len(sketches) != len(items):
            raise InputError(f"renderer {name!r} has {len(sketches)} sketches for {len(items)} items")
        sheet = out / f"{name}_scores.csv"
        write_sheet(sheet, [(item.id, f"e{k}", "") for item in items
                            for k in range(1, evaluators + 1)])
        listing = out / f"{name}_items.csv"
        with open(listing, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["record_id", "category", "cpt", "bpts"])
            for item, text in zip(items, sketches):
                writer.writerow([item.id, item.category, serialize(item.cpt, "unicode"), text])
        written += [sheet, listing]
    return written
