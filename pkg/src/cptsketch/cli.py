"""Command-line entry point.

Exit codes: 0 success, 1 bad input (tree, flags, files), 2 environment or
endpoint failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import CptError, EnvironmentFailure, InputError, LLMError, RendererFailure
from .generator import GenParams, generate_batch
from .llm import API_KEY_ENV, BASE_URL_ENV, FALLBACK_KEY_ENV, AuditLog, ChatClient, ModelParams, ResponseCache
from .model import require_valid, stats, validate
from .notation import parse, serialize

log = logging.getLogger("cptsketch")

RENDERERS = ("rule", "llm", "mock")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class CliConfig:
    gen: GenParams
    model: ModelParams
    base_url: str
    api_key: Optional[str] = field(default=None, repr=False)
    operator_templates: Optional[str] = None
    baseline_template: Optional[str] = None
    cache_dir: Optional[str] = None
    audit_log: Optional[str] = None
    jobs: int = 1

    def redacted(self) -> dict:
        out = asdict(self)
        out["api_key"] = "***" if self.api_key else None
        return out


_GEN_FLAGS = {"depth": "depth", "p_zero": "p_zero", "p_two": "p_two",
              "num_low": "num_low", "num_up": "num_up", "seed": "seed"}
_MODEL_FLAGS = {"model": "model_id", "temperature": "temperature", "top_p": "top_p",
                "rpm": "requests_per_minute", "max_retries": "max_retries",
                "timeout": "timeout", "layout": "layout", "max_in_flight": "max_in_flight"}


def resolve_config(args: argparse.Namespace, environ=os.environ) -> CliConfig:
    """Packaged defaults < config file < environment < flags."""
    merged = json.loads(resources.files("cptsketch").joinpath("data/defaults.json").read_text())
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if "api_key" in user:
            raise InputError(f"credentials do not belong in config files; set {API_KEY_ENV}")
        for section in ("gen", "model"):
            merged[section].update(user.pop(section, {}))
        merged.update(user)
    if environ.get(BASE_URL_ENV):
        merged["base_url"] = environ[BASE_URL_ENV]
    for flag, key in _GEN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            merged["gen"][key] = getattr(args, flag)
    for flag, key in _MODEL_FLAGS.items():
        if getattr(args, flag, None) is not None:
            merged["model"][key] = getattr(args, flag)
    if getattr(args, "base_url", None):
        merged["base_url"] = args.base_url
    for key in ("operator_templates", "baseline_template", "cache_dir", "audit_log"):
        if getattr(args, key, None) is not None:
            merged[key] = getattr(args, key)
    jobs = getattr(args, "jobs", None) or merged.get("jobs") or os.cpu_count() or 1
    known = {f.name for f in fields(GenParams)}
    try:
        gen = GenParams(**{k: v for k, v in merged["gen"].items() if k in known})
        model = ModelParams(**merged["model"])
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad configuration: {exc}") from exc
    return CliConfig(
        gen=gen, model=model, base_url=merged["base_url"],
        api_key=environ.get(API_KEY_ENV) or environ.get(FALLBACK_KEY_ENV),
        operator_templates=merged.get("operator_templates"),
        baseline_template=merged.get("baseline_template"),
        cache_dir=merged.get("cache_dir"), audit_log=merged.get("audit_log"),
        jobs=int(jobs),
    )


def read_tree(arg: str, free_labels: bool = True, check: bool = True):
    if arg == "-":
        text = sys.stdin.read()
    elif arg.startswith("@"):
        try:
            text = Path(arg[1:]).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read {arg[1:]}: {exc}") from exc
    else:
        text = arg
    tree = parse(text.strip())
    if check:
        require_valid(tree, free_labels)
    return tree


def make_renderer(name: str, cfg: CliConfig):
    from .sketch import LLMRenderer, RuleRenderer, load_operator_templates

    if name == "rule":
        return RuleRenderer()
    client = make_client(cfg, mock=name == "mock")
    return LLMRenderer(client, cfg.model, load_operator_templates(cfg.operator_templates))


def make_client(cfg: CliConfig, mock: bool = False) -> ChatClient:
    return ChatClient(
        base_url=cfg.base_url, api_key=cfg.api_key,
        cache=ResponseCache(cfg.cache_dir), audit=AuditLog(cfg.audit_log),
        mock=mock, max_in_flight=cfg.model.max_in_flight,
    )


def _gen_flags(p: argparse.ArgumentParser, with_seed: bool = True):
    g = p.add_argument_group("generator")
    g.add_argument("--depth", type=int, help="maximum tree depth in node levels (default 5)")
    g.add_argument("--p-zero", dest="p_zero", type=float, help="probability a node gets no children")
    g.add_argument("--p-two", dest="p_two", type=float, help="probability a node gets two children")
    g.add_argument("--num-low", dest="num_low", type=int, help="least child count for wide nodes (>= 3)")
    g.add_argument("--num-up", dest="num_up", type=int, help="largest child count for wide nodes")
    if with_seed:
        g.add_argument("--seed", type=int, help="64-bit base seed (default 0)")


def _model_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("language model")
    g.add_argument("--model", help="model id sent to the endpoint (default gpt-3.5-turbo)")
    g.add_argument("--base-url", dest="base_url", help=f"endpoint base URL (env {BASE_URL_ENV})")
    g.add_argument("--temperature", type=float, help="sampling temperature (default 0)")
    g.add_argument("--top-p", dest="top_p", type=float, help="nucleus sampling mass (default 1)")
    g.add_argument("--rpm", type=int, help="request cap per 60-second window")
    g.add_argument("--max-retries", dest="max_retries", type=int, help="retries for transient failures")
    g.add_argument("--max-in-flight", dest="max_in_flight", type=int, help="concurrent request bound")
    g.add_argument("--timeout", type=float, help="per-request timeout in seconds")
    g.add_argument("--layout", choices=("system-user", "single-user"),
                   help="message layout: instruction as system message, or one user message")
    g.add_argument("--templates", dest="operator_templates", help="operator prompt template file")
    g.add_argument("--cache-dir", dest="cache_dir", help="directory for cached responses")
    g.add_argument("--audit-log", dest="audit_log", help="JSONL file receiving every request")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cptsketch", description="Generate, convert and evaluate conditional process trees.")
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    tree_help = "tree notation inline, @FILE, or - for stdin"

    p = sub.add_parser("gen", help="print random rationalized trees")
    p.add_argument("--n", type=int, default=1, help="number of trees (default 1)")
    p.add_argument("--style", choices=("ascii", "unicode"), default="ascii", help="notation style")
    _gen_flags(p)

    p = sub.add_parser("convert", help="turn one tree into a text sketch")
    p.add_argument("tree", help=tree_help)
    p.add_argument("--renderer", choices=RENDERERS, default="rule", help="merge strategy (default rule)")
    p.add_argument("--provenance", action="store_true", help="print the sketch with provenance as JSON")
    _model_flags(p)

    p = sub.add_parser("dataset", help="write tree/sketch pairs as JSONL")
    p.add_argument("--n", type=int, required=True, help="number of records")
    p.add_argument("--renderer", choices=RENDERERS, default="rule", help="merge strategy (default rule)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--resume", action="store_true", help="append to OUT, skipping ids already present")
    p.add_argument("--force", action="store_true", help="overwrite an existing OUT")
    p.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")
    p.add_argument("--report", action="store_true", help="print the corpus report afterwards")
    _gen_flags(p)
    _model_flags(p)

    p = sub.add_parser("suite", help="build the 100-tree evaluation suite")
    p.add_argument("--seed", type=int, default=0, help="suite seed (default 0)")
    p.add_argument("--budget", type=int, default=200_000, help="maximum trees sampled")
    p.add_argument("--out", help="write the suite as JSONL")
    p.add_argument("--sheets", help="directory for blank score sheets")
    p.add_argument("--renderer", action="append", choices=RENDERERS,
                   help="renderer to include in score sheets (repeatable)")
    p.add_argument("--baseline", choices=("llm", "mock"),
                   help="also sketch the suite with the single-shot baseline prompt")
    p.add_argument("--evaluators", type=int, default=3, help="evaluator rows per record (default 3)")
    p.add_argument("--baseline-template", dest="baseline_template", help="baseline template file")
    p.add_argument("--examples", type=int, default=2, help="few-shot examples in the baseline prompt")
    _gen_flags(p, with_seed=False)
    _model_flags(p)

    p = sub.add_parser("baseline", help="print the single-shot baseline prompt for a tree")
    p.add_argument("tree", help=tree_help)
    p.add_argument("--examples", type=int, default=2, help="few-shot examples to include (default 2)")
    p.add_argument("--style", choices=("ascii", "unicode"), default="unicode", help="notation style")
    p.add_argument("--baseline-template", dest="baseline_template", help="baseline template file")

    p = sub.add_parser("stats", help="statistics of a tree or a dataset file")
    p.add_argument("tree", nargs="?", help=tree_help)
    p.add_argument("--corpus", help="dataset JSONL file to summarise instead of a tree")

    p = sub.add_parser("trace", help="list bounded execution traces")
    p.add_argument("tree", help=tree_help)
    p.add_argument("--loop-bound", dest="loop_bound", type=int, default=2, choices=range(4),
                   help="maximum iterations per loop, 0-3 (default 2)")

    p = sub.add_parser("validate", help="report well-formedness violations")
    p.add_argument("tree", help=tree_help)
    p.add_argument("--strict-labels", dest="strict_labels", action="store_true",
                   help="reject free-text labels")

    p = sub.add_parser("score", help="aggregate a filled score sheet into an accuracy")
    p.add_argument("sheet", help="CSV with record_id,evaluator_id,score")

    p = sub.add_parser("config", help="print the resolved configuration, secrets redacted")
    _gen_flags(p)
    _model_flags(p)
    return parser


def _cmd_gen(args, cfg, out):
    for tree in generate_batch(cfg.gen, args.n):
        out.write(serialize(tree, args.style) + "\n")


def _cmd_convert(args, cfg, out):
    from .sketch import generate_bpts

    tree = read_tree(args.tree)
    sketch = generate_bpts(tree, make_renderer(args.renderer, cfg))
    if args.provenance:
        out.write(json.dumps({"text": sketch.text, **sketch.provenance()},
                             ensure_ascii=False, indent=2) + "\n")
    else:
        out.write(sketch.text + "\n")


def _cmd_dataset(args, cfg, out):
    from .dataset import dataset_report, produce_dataset

    summary = produce_dataset(cfg.gen, args.n, make_renderer(args.renderer, cfg), args.out,
                              resume=args.resume, force=args.force,
                              renderer_name=args.renderer, jobs=cfg.jobs)
    print(f"wrote {summary.written} records ({summary.resumed} already present, "
          f"{summary.failures} failed) to {summary.path}", file=sys.stderr)
    if args.report:
        out.write(json.dumps(dataset_report(args.out).as_dict(), indent=2) + "\n")


def _cmd_suite(args, cfg, out):
    from .evaluation import (build_suite, default_baseline, emit_score_sheets,
                             export_suite, suite_stats, traditional_bpts)
    from .sketch import generate_bpts
    from .templates import load_template

    items = build_suite(seed=args.seed, params=cfg.gen, budget=args.budget)
    if args.out:
        export_suite(items, args.out)
    out.write(suite_stats(items).table() + "\n")
    if args.sheets:
        texts = {}
        for name in args.renderer or ["rule"]:
            renderer = make_renderer(name, cfg)
            texts[name] = [generate_bpts(i.cpt, renderer).text for i in items]
        if args.baseline:
            template = (load_template(cfg.baseline_template, "baseline_template.txt")
                        if cfg.baseline_template else default_baseline())
            client = make_client(cfg, mock=args.baseline == "mock")
            texts[f"baseline-{args.baseline}"] = [
                traditional_bpts(i.cpt, client, cfg.model, template=template,
                                 n_examples=args.examples) for i in items]
        for path in emit_score_sheets(items, texts, args.sheets, args.evaluators):
            print(f"wrote {path}", file=sys.stderr)


def _cmd_baseline(args, cfg, out):
    from .evaluation import default_baseline, traditional_prompt
    from .templates import load_template

    template = (load_template(cfg.baseline_template, "baseline_template.txt")
                if cfg.baseline_template else default_baseline())
    out.write(traditional_prompt(read_tree(args.tree), template, args.examples, args.style) + "\n")


def _cmd_stats(args, cfg, out):
    if args.corpus:
        from .dataset import dataset_report

        out.write(json.dumps(dataset_report(args.corpus).as_dict(), indent=2) + "\n")
        return
    if not args.tree:
        raise InputError("give a tree or --corpus")
    out.write(json.dumps(stats(read_tree(args.tree), free_labels=True).as_dict(), indent=2) + "\n")


def _cmd_trace(args, cfg, out):
    from .semantics import enumerate_traces

    traces = enumerate_traces(read_tree(args.tree), args.loop_bound)
    for line in traces.lines():
        out.write(line + "\n")


def _cmd_validate(args, cfg, out):
    tree = read_tree(args.tree, check=False)
    violations = validate(tree, free_labels=not args.strict_labels)
    for v in violations:
        out.write(f"{v}\n")
    if violations:
        return 1
    out.write("ok\n")


def _cmd_score(args, cfg, out):
    from .evaluation import ScoreSheet, aggregate_scores

    out.write(f"{aggregate_scores(ScoreSheet.read(args.sheet)):.2f}\n")


def _cmd_config(args, cfg, out):
    out.write(json.dumps(cfg.redacted(), indent=2) + "\n")


_COMMANDS = {
    "gen": _cmd_gen, "convert": _cmd_convert, "dataset": _cmd_dataset, "suite": _cmd_suite,
    "baseline": _cmd_baseline, "stats": _cmd_stats, "trace": _cmd_trace,
    "validate": _cmd_validate, "score": _cmd_score, "config": _cmd_config,
}


def run(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](args, cfg, out) or 0
    except RendererFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, (LLMError, EnvironmentFailure)) else 1
    except EnvironmentFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, CptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
