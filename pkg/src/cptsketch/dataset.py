"""Bulk CPT/sketch pair production into resumable JSONL files."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

from .errors import (
    AuthError,
    CorruptRecord,
    CptError,
    EmptySuite,
    InputError,
    RendererFailure,
    SinkError,
)
from .evaluation import summarize
from .generator import GenParams, derive_seed, generate_cpt
from .model import stats, validate
from .notation import parse, serialize
from .sketch import Renderer, generate_bpts

log = logging.getLogger(__name__)

_FIELDS = ("id", "index", "cpt", "bpts", "stats", "renderer_id", "model_params",
           "gen_params", "template_checksum", "prompt_audit", "created_at")


def timestamp() -> str:
    """UTC creation time; ``SOURCE_DATE_EPOCH`` pins it for reproducible files."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (datetime.fromtimestamp(int(epoch), timezone.utc) if epoch
              else datetime.now(timezone.utc))
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    index: int
    cpt: str
    bpts: str
    stats: dict
    renderer_id: str
    model_params: Optional[dict]
    gen_params: dict
    template_checksum: str
    prompt_audit: list
    created_at: str

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in _FIELDS}, ensure_ascii=False)


@dataclass(frozen=True)
class Failure:
    id: str
    index: int
    error: str

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "index": self.index, "error": self.error},
                          ensure_ascii=False)


@dataclass
class ProductionSummary:
    path: Path
    requested: int
    written: int = 0
    resumed: int = 0
    failures: int = 0


def record_id(gen: GenParams, index: int) -> str:
    return f"{derive_seed(gen.seed, index):016x}"


def make_record(gen: GenParams, index: int, renderer: Renderer,
                renderer_name: Optional[str] = None,
                clock: Callable[[], str] = timestamp) -> DatasetRecord:
    sub = derive_seed(gen.seed, index)
    tree = generate_cpt(replace(gen, seed=sub))
    sketch = generate_bpts(tree, renderer)
    params = getattr(renderer, "params", None)
    return DatasetRecord(
        id=f"{sub:016x}",
        index=index,
        cpt=serialize(tree, "ascii"),
        bpts=sketch.text,
        stats=stats(tree).as_dict(),
        renderer_id=renderer_name or renderer.renderer_id,
        model_params=params.as_dict() if params is not None else None,
        gen_params=gen.as_dict(),
        template_checksum=sketch.template_checksum,
        prompt_audit=[p.cache_key for p in sketch.prompts],
        created_at=clock(),
    )


def iter_records(gen: GenParams, n: int, renderer: Renderer, skip: frozenset = frozenset(),
                 renderer_name: Optional[str] = None, jobs: int = 1,
                 clock: Callable[[], str] = timestamp) -> Iterator[Union[DatasetRecord, Failure]]:
    """Yield a record or a :class:`Failure` for each index not in ``skip``, in order."""
    gen.check()
    if n < 1:
        raise InputError("n must be >= 1")
    todo = [i for i in range(n) if record_id(gen, i) not in skip]

    def one(i):
        try:
            return make_record(gen, i, renderer, renderer_name, clock)
        except RendererFailure as exc:
            if isinstance(exc.cause, AuthError):
                raise
            log.warning("record %d skipped: %s", i, exc)
            return Failure(record_id(gen, i), i, str(exc))

    if jobs <= 1:
        yield from map(one, todo)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(one, todo)


def failures_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".failures.jsonl")


def _existing_ids(path: Path) -> set:
    """Ids already on disk; a torn final line from an interrupted run is dropped."""
    raw = path.read_bytes()
    if raw and not raw.endswith(b"\n"):
        cut = raw.rfind(b"\n") + 1
        with path.open("r+b") as fh:
            fh.truncate(cut)
        raw = raw[:cut]
    ids = set()
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            ids.add(json.loads(line)["id"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptRecord(lineno, f"unreadable record: {exc}") from exc
    return ids


def produce_dataset(gen: GenParams, n: int, renderer: Renderer, out: Union[str, Path],
                    resume: bool = False, force: bool = False,
                    renderer_name: Optional[str] = None, jobs: int = 1,
                    clock: Callable[[], str] = timestamp) -> ProductionSummary:
    """Generate ``n`` records into ``out``; failures go to a sidecar file."""
    out = Path(out)
    summary = ProductionSummary(out, n)
    existing: set = set()
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.exists() and out.stat().st_size:
            if resume:
                existing = _existing_ids(out)
            elif not force:
                raise SinkError(f"{out} already exists; resume or force overwrite")
            else:
                out.unlink()
        # earlier failures are retried, so their sidecar entries are stale
        fail_file = failures_path(out)
        if fail_file.exists():
            fail_file.unlink()
        summary.resumed = len(existing)
        with out.open("a", encoding="utf-8") as sink:
            for item in iter_records(gen, n, renderer, frozenset(existing), renderer_name,
                                     jobs, clock):
                if isinstance(item, Failure):
                    summary.failures += 1
                    with fail_file.open("a", encoding="utf-8") as fh:
                        fh.write(item.to_json() + "\n")
                    continue
                sink.write(item.to_json() + "\n")
                sink.flush()
                summary.written += 1
    except OSError as exc:
        raise SinkError(f"cannot write {out}: {exc}") from exc
    return summary


@dataclass
class DatasetReport:
    records: int
    failures: int
    renderers: dict
    table: object = field(repr=False)

    def as_dict(self) -> dict:
        return {"records": self.records, "failures": self.failures,
                "renderers": self.renderers, **self.table.as_dict()}


def dataset_report(path: Union[str, Path]) -> DatasetReport:
    """Summarise a dataset file, checking every record against its tree."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise SinkError(f"cannot read {path}: {exc}") from exc
    all_stats, ids, renderers = [], set(), {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            tree = parse(rec["cpt"])
        except (ValueError, KeyError, TypeError, CptError) as exc:
            raise CorruptRecord(lineno, str(exc)) from exc
        if validate(tree, free_labels=True):
            raise CorruptRecord(lineno, "cpt violates tree invariants")
        st = stats(tree, free_labels=True)
        if rec.get("stats") != st.as_dict():
            raise CorruptRecord(lineno, "stored stats disagree with the cpt")
        if rec["id"] in ids:
            raise CorruptRecord(lineno, f"duplicate id {rec['id']}")
        ids.add(rec["id"])
        renderers[rec.get("renderer_id")] = renderers.get(rec.get("renderer_id"), 0) + 1
        all_stats.append(st)
    if not all_stats:
        raise EmptySuite(f"{path} holds no records")
    fail_file = failures_path(path)
    failures = 0
    if fail_file.exists():
        failures = sum(1 for ln in fail_file.read_text(encoding="utf-8").splitlines() if ln.strip())
    return DatasetReport(len(all_stats), failures, renderers, summarize(all_stats))
