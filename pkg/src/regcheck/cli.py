"""Command-line entry point.

Exit status: 0 compliant (or ASK true), 1 noncompliant (or ASK false),
2 configuration or structural error.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .kgstore import IRI, Graph, Literal, ParseError, Term, infer_closure, load_graph, serialize_graph
from .namespaces import QUERY_PREFIXES, RULE
from .ontology import (
    OntologyError, classify_instance, import_thesaurus, merge_intersection, ontology_from_graph,
    ontology_to_graph, parse_thesaurus, transitive_reduction,
)
from .pipeline import (
    DEFAULT_MAX_DEPTH, ExecutionContext, PipelineError, ProcessRegistry, ViolationCollector,
    compose_complex, default_pipeline, execute, load_pipeline, register_listener, trace_to_json,
)
from .query import QuerySyntaxError, TemplateError, eval_ask, eval_select, instantiate_template, parse_query
from .report import build_report, explain, render_report
from .rulebase import (
    RulebaseError, TableError, check_sbvr_base, compile_table, coverage_rules, filter_rules,
    load_rulebase_file, load_slope_table, serialize_rulebase, serialize_sbvr_base,
)

log = logging.getLogger("regcheck")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
TABLE_SUFFIXES = (".tsv", ".tab")


class ConfigError(Exception):
    """One or more preflight failures; each entry is a one-line diagnostic."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class CheckConfig:
    dt_path: str
    rulebase_path: str
    ontology_paths: List[str] = field(default_factory=list)
    pipeline_path: Optional[str] = None
    process: Optional[str] = None
    compose: Optional[str] = None
    sbvr_base_path: Optional[str] = None
    report_format: str = "text"
    report_path: Optional[str] = None
    trace_path: Optional[str] = None
    dt_id: Optional[str] = None
    max_depth: int = DEFAULT_MAX_DEPTH
    strict_equality: bool = False
    filter_source: Optional[str] = None
    filter_domain: Optional[str] = None
    filter_theme: Optional[str] = None


def atomic_write(path: str, text: str) -> None:
    """Write via a sibling temp file so failures never leave partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".regcheck-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text: str, path: Optional[str]) -> None:
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def parse_iri(token: str) -> IRI:
    token = token.strip()
    if token.startswith("<") and token.endswith(">"):
        return IRI(token[1:-1])
    if re.match(r"[a-z][a-z0-9+.\-]*://", token) or token.startswith("urn:"):
        return IRI(token)
    prefix, sep, local = token.partition(":")
    if sep and prefix in QUERY_PREFIXES:
        return IRI(QUERY_PREFIXES[prefix] + local)
    raise ValueError(f"cannot resolve IRI {token!r}")


def parse_param(value: str) -> Term:
    """``<iri>``, ``prefix:local``, an integer, a quoted string, or a bare
    rule name (resolved in the rule namespace)."""
    if re.fullmatch(r"[+-]?\d+", value):
        return Literal(value, "integer")
    if len(value) >= 2 and value[0] == value[-1] == '"':
        return Literal(value[1:-1])
    if re.fullmatch(r"[A-Za-z_][\w\-]*", value):
        return IRI(RULE + value)
    return parse_iri(value)


def _load_graph_checked(path: str, problems: List[str], what: str) -> Optional[Graph]:
    if not os.path.isfile(path):
        problems.append(f"{what} not found: {path}")
        return None
    try:
        return load_graph(path)
    except (OSError, ParseError, ValueError) as exc:
        problems.append(f"{what} {path}: {exc}")
        return None


def load_rules(path: str, strict: bool = False):
    if path.endswith(TABLE_SUFFIXES):
        return compile_table(load_slope_table(path), strict=strict)
    return load_rulebase_file(path)


def run_check(cfg: CheckConfig) -> tuple:
    """Return ``(exit_status, report_text)``; raises ConfigError on preflight
    failure and PipelineError on structural execution errors."""
    problems: List[str] = []
    dt = _load_graph_checked(cfg.dt_path, problems, "technical document")
    ontology_graphs = [_load_graph_checked(p, problems, "ontology") for p in cfg.ontology_paths]

    rules = None
    if not os.path.isfile(cfg.rulebase_path):
        problems.append(f"rulebase not found: {cfg.rulebase_path}")
    else:
        try:
            rules = load_rules(cfg.rulebase_path, cfg.strict_equality)
        except (OSError, RulebaseError, TableError, ValueError) as exc:
            problems.append(f"rulebase {cfg.rulebase_path}: {exc}")

    registry = ProcessRegistry()
    if cfg.pipeline_path:
        if not os.path.isfile(cfg.pipeline_path):
            problems.append(f"pipeline not found: {cfg.pipeline_path}")
        else:
            try:
                registry = load_pipeline(cfg.pipeline_path)
                for resource in registry.resources():
                    if not os.path.isfile(resource):
                        problems.append(f"pipeline resource not found: {resource}")
            except PipelineError as exc:
                problems.append(f"pipeline {cfg.pipeline_path}: {exc}")

    sbvr_base = None
    if cfg.sbvr_base_path:
        sbvr_base = _load_graph_checked(cfg.sbvr_base_path, problems, "SBVR base")

    ontology = None
    if not problems:
        merged = Graph()
        for g in ontology_graphs:
            merged.update(g)
        try:
            ontology = ontology_from_graph(merged)
        except OntologyError as exc:
            problems.append(f"ontology: {exc}")

    node = None
    if not problems:
        try:
            if cfg.compose:
                node = compose_complex(registry, ontology, parse_iri(cfg.compose))
            elif cfg.process:
                iri = parse_iri(cfg.process)
                if iri not in registry.processes:
                    problems.append(f"no process {iri} in {cfg.pipeline_path}")
                node = registry.processes.get(iri)
            elif cfg.pipeline_path:
                roots = registry.roots()
                if len(roots) != 1:
                    problems.append(
                        f"pipeline has {len(roots)} root processes; choose one with --process or --compose"
                    )
                else:
                    node = registry.processes[roots[0]]
            else:
                node = default_pipeline()
        except (PipelineError, ValueError) as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError(problems)

    rules = filter_rules(rules, cfg.filter_source, cfg.filter_domain, cfg.filter_theme)
    if sbvr_base is None:
        sbvr_base = serialize_sbvr_base(rules)
    check_sbvr_base(sbvr_base)

    working = Graph()
    for g in ontology_graphs:
        working.update(g)
    working.update(dt)
    ctx = ExecutionContext(graph=infer_closure(working), registry=registry, rules=rules,
                           ontology=ontology, max_depth=cfg.max_depth)
    collector = ViolationCollector()
    register_listener(ctx, collector)
    trace = execute(node, ctx)
    if cfg.trace_path:
        atomic_write(cfg.trace_path, trace_to_json(trace))

    dt_id = cfg.dt_id or os.path.splitext(os.path.basename(cfg.dt_path))[0]
    report = build_report(dt_id, trace, explain(trace, sbvr_base, rules))
    status = EXIT_OK if report.verdict == "compliant" else EXIT_FAIL
    return status, render_report(report, cfg.report_format)


# --------------------------------------------------------------------------
# commands

def cmd_check(args) -> int:
    cfg = CheckConfig(
        dt_path=args.dt, rulebase_path=args.rules, ontology_paths=args.ontology or [],
        pipeline_path=args.pipeline, process=args.process, compose=args.compose,
        sbvr_base_path=args.sbvr_base, report_format=args.format, report_path=args.out,
        trace_path=args.trace_out, dt_id=args.dt_id, max_depth=args.max_depth,
        strict_equality=args.strict_equality, filter_source=args.filter_source,
        filter_domain=args.filter_domain, filter_theme=args.filter_theme,
    )
    try:
        status, text = run_check(cfg)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"regcheck: error: {problem}", file=sys.stderr)
        return EXIT_ERROR
    except PipelineError as exc:
        print(f"regcheck: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    emit(text, cfg.report_path)
    return status


def _load_ontology(path: str):
    return ontology_from_graph(load_graph(path))


def cmd_ontology(args) -> int:
    try:
        if args.action == "import-thesaurus":
            with open(args.input, encoding="utf-8") as fh:
                entries = parse_thesaurus(fh.read())
            onto = import_thesaurus(entries, args.base) if args.base else import_thesaurus(entries)
            emit(serialize_graph(ontology_to_graph(onto)), args.out)
        elif args.action == "reduce":
            onto = transitive_reduction(_load_ontology(args.input))
            emit(serialize_graph(ontology_to_graph(onto)), args.out)
        elif args.action == "merge":
            onto = merge_intersection(_load_ontology(args.reef), _load_ontology(args.dt))
            emit(serialize_graph(ontology_to_graph(onto)), args.out)
        else:
            graph = Graph()
            for path in args.graph + args.ontology:
                load_graph(path, graph)
            closed = infer_closure(graph)
            onto = ontology_from_graph(closed)
            wanted = [parse_iri(c) for c in args.concept] if args.concept else None
            defs = [d for d in onto.axioms if wanted is None or d.defined in wanted]
            if wanted:
                missing = set(wanted) - {d.defined for d in defs}
                if missing:
                    raise OntologyError("no definition for " + ", ".join(sorted(map(str, missing))))
            lines = []
            for inst in args.instance:
                iri = parse_iri(inst)
                for d in sorted(defs, key=lambda d: d.defined):
                    lines.append(f"{iri}\t{d.defined}\t{str(classify_instance(closed, iri, d)).lower()}")
            emit("\n".join(lines) + ("\n" if lines else ""), args.out)
    except (OSError, ParseError, OntologyError, ValueError) as exc:
        print(f"regcheck: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


TABLE_HEADER = (
    "Compiled from {table}.\n"
    "One rule per (slope, zone, situation) cell; a rule's query is true when a\n"
    "tile at those coordinates lacks the required recovery."
)


def cmd_compile_table(args) -> int:
    try:
        table = load_slope_table(args.table)
        rules = compile_table(table, strict=args.strict_equality)
        if args.coverage:
            rules += coverage_rules(table)
    except (OSError, TableError, RulebaseError) as exc:
        print(f"regcheck: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = args.out
    sbvr_out = args.sbvr_out or re.sub(r"(\.rb)?\.txt$", "", out) + ".sbvr.trp"
    header = TABLE_HEADER.format(table=os.path.basename(args.table))
    atomic_write(out, serialize_rulebase(rules, header))
    atomic_write(sbvr_out, serialize_graph(serialize_sbvr_base(rules)))
    return EXIT_OK


def cmd_query(args) -> int:
    try:
        graph = Graph()
        for path in args.graph:
            load_graph(path, graph)
        text = args.query
        if os.path.isfile(text):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        params = {}
        for item in args.param:
            name, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"--param expects name=value, got {item!r}")
            params[name] = parse_param(value)
        text = instantiate_template(text, params)
        query = parse_query(text, graph.prefixes)
    except (OSError, ParseError, QuerySyntaxError, TemplateError, ValueError) as exc:
        print(f"regcheck: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    closed = infer_closure(graph)
    if query.form == "ASK":
        result = eval_ask(closed, query)
        print("true" if result else "false")
        return EXIT_OK if result else EXIT_FAIL
    for row in eval_select(closed, query):
        print("\t".join(str(row[v.name]) for v in query.projection))
    return EXIT_OK


# --------------------------------------------------------------------------

def _default_depth() -> int:
    raw = os.environ.get("REGCHECK_MAX_DEPTH")
    if raw is None:
        return DEFAULT_MAX_DEPTH
    try:
        return int(raw)
    except ValueError:
        return DEFAULT_MAX_DEPTH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regcheck", description="Compliance checking of technical documents.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug information")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="check a technical document against a rulebase")
    p.add_argument("--dt", required=True, help="technical document graph (.trp)")
    p.add_argument("--ontology", action="append", help="ontology graph (.trp), repeatable")
    p.add_argument("--rules", required=True, help="rulebase (.rb.txt) or slope table (.tsv)")
    p.add_argument("--pipeline", help="process descriptions (.trp)")
    p.add_argument("--process", help="root process IRI to run")
    p.add_argument("--compose", metavar="CONCEPT", help="compose and run the complex process of CONCEPT")
    p.add_argument("--sbvr-base", help="justification base (.trp); default: built from the rulebase")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", help="report path (default: standard output)")
    p.add_argument("--trace-out", help="write the execution trace as JSON")
    p.add_argument("--dt-id", help="identifier printed in the report (default: DT file name)")
    p.add_argument("--max-depth", type=int, default=_default_depth())
    p.add_argument("--strict-equality", action="store_true",
                   help="when --rules is a table: require recovery equal to the cell value")
    p.add_argument("--filter-source")
    p.add_argument("--filter-domain")
    p.add_argument("--filter-theme")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("ontology", help="ontology construction steps")
    osub = p.add_subparsers(dest="action", required=True)
    q = osub.add_parser("import-thesaurus")
    q.add_argument("input")
    q.add_argument("--base", help="IRI base for minted concepts")
    q.add_argument("--out")
    q = osub.add_parser("reduce")
    q.add_argument("input")
    q.add_argument("--out")
    q = osub.add_parser("merge")
    q.add_argument("reef")
    q.add_argument("dt")
    q.add_argument("--out")
    q = osub.add_parser("classify")
    q.add_argument("--graph", action="append", default=[], required=True)
    q.add_argument("--ontology", action="append", default=[])
    q.add_argument("--instance", action="append", default=[], required=True)
    q.add_argument("--concept", action="append", default=[])
    q.add_argument("--out")
    p.set_defaults(func=cmd_ontology)

    p = sub.add_parser("compile-table", help="compile a slope/recovery table into a rulebase")
    p.add_argument("table")
    p.add_argument("--out", required=True)
    p.add_argument("--sbvr-out")
    p.add_argument("--strict-equality", action="store_true")
    p.add_argument("--coverage", action="store_true",
                   help="add rules flagging tiles outside the table's rows and columns")
    p.set_defaults(func=cmd_compile_table)

    p = sub.add_parser("query", help="evaluate an ASK or SELECT query")
    p.add_argument("--graph", action="append", default=[])
    p.add_argument("query", help="query file or inline query text")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    p.set_defaults(func=cmd_query)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="regcheck: %(levelname)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
