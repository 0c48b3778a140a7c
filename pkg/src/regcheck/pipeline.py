"""Compliance-check processes.

A process is declared in RDF with the ``proc:`` vocabulary and interpreted
depth-first against a working graph. Every step reports to the registered
listeners through :class:`ExecutionEvent` records.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set

from .kgstore import IRI, Graph, Literal, ParseError, Term, infer_closure, load_graph, term_key
from .namespaces import PROC, PROCESS, RDF_TYPE
from .ontology import Ontology
from .query import Query, QuerySyntaxError, eval_select, parse_query, solutions
from .rulebase import Rule, RulebaseError, load_rulebase_file

log = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 16

KINDS = ("Pipeline", "Pipe", "Load", "Query", "Update", "RuleBase", "Rule", "Test")
EVENT_KINDS = (
    "process-enter", "process-exit", "query-success", "query-failure",
    "violation-detected", "load", "update", "rule-evaluated",
)


class PipelineError(Exception):
    """Structural problem in a process description or its execution."""


class DepthExceededError(PipelineError):
    pass


class CompositionError(PipelineError):
    pass


def _p(name: str) -> IRI:
    return IRI(PROC + name)


_TYPE = IRI(RDF_TYPE)
BODY, IF, THEN, ELSE = _p("body"), _p("if"), _p("then"), _p("else")
INDEX, STEP, TARGET = _p("index"), _p("step"), _p("target")
RESOURCE, QUERY_TEXT, RULE_REF = _p("resource"), _p("queryText"), _p("ruleRef")
COMPONENT = _p("component")


# --------------------------------------------------------------------------
# process nodes

@dataclass
class ProcessNode:
    iri: IRI

    @property
    def kind(self) -> str:
        return type(self).__name__.replace("Step", "")


@dataclass
class Pipeline(ProcessNode):
    body: List[ProcessNode] = field(default_factory=list)
    component: Optional[IRI] = None


@dataclass
class Pipe(ProcessNode):
    target: IRI = None
    # concept whose complex process should be composed if target is unregistered
    compose_for: Optional[IRI] = None


@dataclass
class Load(ProcessNode):
    resource: str = ""


@dataclass
class Update(ProcessNode):
    resource: str = ""


@dataclass
class QueryStep(ProcessNode):
    text: str = ""
    query: Optional[Query] = None


@dataclass
class RuleBaseStep(ProcessNode):
    resource: Optional[str] = None
    rule_refs: List[IRI] = field(default_factory=list)
    concept: Optional[IRI] = None


@dataclass
class RuleStep(ProcessNode):
    rule: IRI = None


@dataclass
class Test(ProcessNode):
    condition: QueryStep = None
    then: Optional[ProcessNode] = None
    else_: Optional[ProcessNode] = None


@dataclass
class ProcessRegistry:
    processes: Dict[IRI, Pipeline] = field(default_factory=dict)
    base_dir: str = "."
    # pipelines referenced from another process
    referenced: Set[IRI] = field(default_factory=set)

    def elementary(self, concept: IRI) -> Optional[IRI]:
        for iri in sorted(self.processes):
            if self.processes[iri].component == concept:
                return iri
        return None

    def roots(self) -> List[IRI]:
        return sorted(iri for iri in self.processes if iri not in self.referenced)

    def resources(self) -> List[str]:
        """Every file path a Load/Update/RuleBase step will read."""
        out: List[str] = []

        def walk(node: Optional[ProcessNode]) -> None:
            if isinstance(node, Pipeline):
                for step in node.body:
                    walk(step)
            elif isinstance(node, (Load, Update)) or (isinstance(node, RuleBaseStep) and node.resource):
                out.append(resolve_path(self.base_dir, node.resource))
            elif isinstance(node, Test):
                walk(node.then)
                walk(node.else_)

        for iri in sorted(self.processes):
            walk(self.processes[iri])
        return sorted(set(out))


def resolve_path(base_dir: str, resource: str) -> str:
    return resource if os.path.isabs(resource) else os.path.join(base_dir, resource)


# --------------------------------------------------------------------------
# reading processes from RDF

class _Reader:
    def __init__(self, graph: Graph):
        self.g = graph
        self.referenced: Set[IRI] = set()

    def kind_of(self, node: IRI) -> str:
        kinds = [
            t.object.value[len(PROC):] for t in self.g.triples(node, _TYPE)
            if isinstance(t.object, IRI) and t.object.value.startswith(PROC)
            and t.object.value[len(PROC):] in KINDS
        ]
        if not kinds:
            raise PipelineError(f"dangling reference: {node} is not a process node")
        if len(kinds) > 1:
            raise PipelineError(f"{node} has several process types: {', '.join(sorted(kinds))}")
        return kinds[0]

    def text(self, node: IRI, prop: IRI) -> Optional[str]:
        v = self.g.value(node, prop)
        if v is None:
            return None
        if not isinstance(v, Literal) or v.datatype != "string":
            raise PipelineError(f"{node}: {prop} must be a string literal")
        return v.lexical

    def iri(self, node: IRI, prop: IRI) -> Optional[IRI]:
        v = self.g.value(node, prop)
        if v is not None and not isinstance(v, IRI):
            raise PipelineError(f"{node}: {prop} must be an IRI")
        return v

    def node(self, iri: IRI) -> ProcessNode:
        kind = self.kind_of(iri)
        if kind == "Pipeline":
            # pipelines nested as steps or branches run through the registry
            self.referenced.add(iri)
            return Pipe(iri, target=iri)
        if kind == "Pipe":
            target = self.iri(iri, TARGET)
            if target is None:
                raise PipelineError(f"Pipe {iri} has no proc:target")
            if self.kind_of(target) != "Pipeline":
                raise PipelineError(f"Pipe {iri} targets {target}, which is not a Pipeline")
            self.referenced.add(target)
            return Pipe(iri, target=target)
        if kind in ("Load", "Update"):
            resource = self.text(iri, RESOURCE)
            if not resource:
                raise PipelineError(f"{kind} {iri} has no proc:resource")
            return (Load if kind == "Load" else Update)(iri, resource=resource)
        if kind == "Query":
            return self.query(iri)
        if kind == "RuleBase":
            refs = [o for o in self.g.objects(iri, RULE_REF) if isinstance(o, IRI)]
            return RuleBaseStep(iri, resource=self.text(iri, RESOURCE), rule_refs=sorted(refs),
                                concept=self.iri(iri, TARGET))
        if kind == "Rule":
            ref = self.iri(iri, RULE_REF)
            if ref is None:
                raise PipelineError(f"Rule {iri} has no proc:ruleRef")
            return RuleStep(iri, rule=ref)
        # Test
        cond = self.iri(iri, IF)
        if cond is None:
            raise PipelineError(f"Test {iri} has no proc:if")
        if self.kind_of(cond) != "Query":
            raise PipelineError(f"Test {iri}: proc:if must name a Query node")
        then, else_ = self.iri(iri, THEN), self.iri(iri, ELSE)
        if then is None and else_ is None:
            raise PipelineError(f"Test {iri} has neither proc:then nor proc:else")
        return Test(
            iri,
            condition=self.query(cond),
            then=self.node(then) if then is not None else None,
            else_=self.node(else_) if else_ is not None else None,
        )

    def query(self, iri: IRI) -> QueryStep:
        text = self.text(iri, QUERY_TEXT)
        if not text:
            raise PipelineError(f"Query {iri} has no proc:queryText")
        try:
            return QueryStep(iri, text=text, query=parse_query(text, self.g.prefixes))
        except QuerySyntaxError as exc:
            raise PipelineError(f"Query {iri}: {exc}") from None

    def pipeline(self, iri: IRI) -> Pipeline:
        steps = []
        seen: Dict[int, IRI] = {}
        for step in self.g.objects(iri, BODY):
            if not isinstance(step, IRI):
                raise PipelineError(f"{iri}: proc:body must link to step nodes")
            idx = self.g.value(step, INDEX)
            if not isinstance(idx, Literal) or idx.datatype != "integer":
                raise PipelineError(f"step {step} of {iri} has no integer proc:index")
            n = int(idx.lexical)
            if n in seen:
                raise PipelineError(f"duplicate index {n} in body of {iri} ({seen[n]} and {step})")
            seen[n] = step
            target = self.iri(step, STEP)
            if target is None:
                raise PipelineError(f"step {step} of {iri} has no proc:step")
            steps.append((n, target))
        if not steps:
            raise PipelineError(f"Pipeline {iri} has an empty body")
        body = [self.node(target) for _, target in sorted(steps, key=lambda s: s[0])]
        return Pipeline(iri, body=body, component=self.iri(iri, COMPONENT))


def parse_pipeline(graph: Graph, base_dir: str = ".") -> ProcessRegistry:
    reader = _Reader(graph)
    registry = ProcessRegistry(base_dir=base_dir)
    for iri in sorted(graph.subjects(_TYPE, _p("Pipeline"))):
        registry.processes[iri] = reader.pipeline(iri)
    registry.referenced = reader.referenced
    return registry


def load_pipeline(path) -> ProcessRegistry:
    try:
        graph = load_graph(path)
    except ParseError as exc:
        raise PipelineError(f"{path}: {exc}") from None
    return parse_pipeline(graph, os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------
# composition

def complex_process_iri(concept: IRI) -> IRI:
    local = re.split(r"[#/:]", concept.value)[-1] or "Concept"
    return IRI(f"{PROCESS}{local}ComplexCheck")


def compose_complex(registry: ProcessRegistry, onto: Ontology, component_type: IRI) -> Pipeline:
    """One Pipe per component concept of the definition, after the concept's
    own elementary process. Defined components without a process of their
    own are composed when their Pipe runs."""
    body: List[ProcessNode] = []
    own = registry.elementary(component_type)
    if own is not None:
        body.append(Pipe(IRI(f"{own.value}#pipe"), target=own))
    definition = onto.definition(component_type)
    gaps = []
    if definition is not None:
        for concept in definition.component_concepts():
            process = registry.elementary(concept)
            if process is not None:
                body.append(Pipe(IRI(f"{process.value}#pipe"), target=process))
            elif onto.definition(concept) is not None:
                target = complex_process_iri(concept)
                body.append(Pipe(IRI(f"{target.value}#pipe"), target=target, compose_for=concept))
            else:
                gaps.append(concept)
    if gaps:
        raise CompositionError(
            "no elementary process or definition for: " + ", ".join(str(g) for g in gaps)
        )
    if not body:
        raise CompositionError(f"{component_type} has neither a definition nor an elementary process")
    return Pipeline(complex_process_iri(component_type), body=body, component=component_type)


# --------------------------------------------------------------------------
# execution

@dataclass(frozen=True)
class ExecutionEvent:
    seq: int
    kind: str
    subject: str
    component: Optional[str] = None
    detail: str = ""


Listener = Callable[[ExecutionEvent], None]


@dataclass
class ExecutionContext:
    graph: Graph
    registry: ProcessRegistry = field(default_factory=ProcessRegistry)
    rules: Sequence[Rule] = ()
    ontology: Optional[Ontology] = None
    max_depth: int = DEFAULT_MAX_DEPTH
    listeners: List[Listener] = field(default_factory=list)
    depth: int = 0
    trace: List[ExecutionEvent] = field(default_factory=list)
    started: bool = False
    _composed: Dict[IRI, Pipeline] = field(default_factory=dict, repr=False)

    def rule(self, rule_id: IRI) -> Rule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise PipelineError(f"unknown rule {rule_id}")


def register_listener(ctx: ExecutionContext, listener: Listener) -> ExecutionContext:
    if ctx.started:
        raise PipelineError("listeners must be registered before execution starts")
    ctx.listeners.append(listener)
    return ctx


class ViolationCollector:
    """Listener keeping the (rule, component) pairs of violation events."""

    def __init__(self):
        self.violations: List[tuple] = []

    def __call__(self, event: ExecutionEvent) -> None:
        if event.kind == "violation-detected":
            self.violations.append((event.subject, event.component))


class _Interpreter:
    def __init__(self, ctx: ExecutionContext):
        self.ctx = ctx

    def emit(self, kind: str, subject, component: Optional[Term] = None, detail: str = "") -> None:
        ctx = self.ctx
        event = ExecutionEvent(
            seq=len(ctx.trace) + 1,
            kind=kind,
            subject=str(subject),
            component=str(component) if component is not None else None,
            detail=detail,
        )
        ctx.trace.append(event)
        for listener in ctx.listeners:
            listener(event)

    def run(self, node: Optional[ProcessNode]) -> None:
        if node is None:
            return
        handler = getattr(self, "run_" + node.kind.lower())
        handler(node)

    def run_pipeline(self, node: Pipeline) -> None:
        ctx = self.ctx
        if ctx.depth >= ctx.max_depth:
            raise DepthExceededError(f"maximum process depth {ctx.max_depth} exceeded entering {node.iri}")
        ctx.depth += 1
        self.emit("process-enter", node.iri, detail=f"depth {ctx.depth}")
        try:
            for step in node.body:
                self.run(step)
        except PipelineError as exc:
            self.emit("process-exit", node.iri, detail=f"error: {exc}")
            raise
        else:
            self.emit("process-exit", node.iri, detail="ok")
        finally:
            ctx.depth -= 1

    def run_pipe(self, node: Pipe) -> None:
        ctx = self.ctx
        target = ctx.registry.processes.get(node.target) or ctx._composed.get(node.target)
        if target is None and node.compose_for is not None and ctx.ontology is not None:
            target = compose_complex(ctx.registry, ctx.ontology, node.compose_for)
            ctx._composed[node.target] = target
        if target is None:
            raise PipelineError(f"unresolvable Pipe target {node.target}")
        self.run_pipeline(target)

    def _read(self, resource: str) -> Graph:
        path = resolve_path(self.ctx.registry.base_dir, resource)
        try:
            return load_graph(path)
        except (OSError, ParseError) as exc:
            raise PipelineError(f"cannot load {resource}: {exc}") from None

    def run_load(self, node: Load) -> None:
        loaded = self._read(node.resource)
        self.ctx.graph.update(loaded)
        self.ctx.graph = infer_closure(self.ctx.graph)
        self.emit("load", node.iri, detail=f"{node.resource}: {len(loaded)} statements")

    def run_update(self, node: Update) -> None:
        loaded = self._read(node.resource)
        added = self.ctx.graph.update(loaded)
        self.ctx.graph = infer_closure(self.ctx.graph)
        self.emit("update", node.iri, detail=f"{node.resource}: {added} statements added")

    def _ask(self, node: QueryStep) -> bool:
        try:
            if node.query.form == "ASK":
                result = bool(solutions(self.ctx.graph, node.query.body))
                self.emit("query-success", node.iri, detail=str(result).lower())
                return result
            rows = eval_select(self.ctx.graph, node.query)
        except Exception as exc:  # evaluation bugs surface as structural errors
            self.emit("query-failure", node.iri, detail=str(exc))
            raise PipelineError(f"query {node.iri} failed: {exc}") from exc
        self.emit("query-success", node.iri, detail=f"{len(rows)} rows")
        return bool(rows)

    def run_query(self, node: QueryStep) -> None:
        self._ask(node)

    def run_test(self, node: Test) -> None:
        if node.condition.query.form != "ASK":
            raise PipelineError(f"Test {node.iri}: condition must be an ASK query")
        self.run(node.then if self._ask(node.condition) else node.else_)

    def evaluate_rule(self, rule: Rule) -> None:
        rows = solutions(self.ctx.graph, rule.violation_query.body)
        self.emit("rule-evaluated", rule.id, detail="violated" if rows else "satisfied")
        if not rows:
            return
        var = rule.component_var
        components = {r.get(var) for r in rows} if var else {None}
        for component in sorted(components, key=lambda c: term_key(c) if c is not None else ("",)):
            self.emit("violation-detected", rule.id, component=component, detail=rule.sbvr.text)

    def run_rule(self, node: RuleStep) -> None:
        self.evaluate_rule(self.ctx.rule(node.rule))

    def run_rulebase(self, node: RuleBaseStep) -> None:
        ctx = self.ctx
        if node.resource:
            path = resolve_path(ctx.registry.base_dir, node.resource)
            try:
                rules = load_rulebase_file(path)
            except (OSError, RulebaseError) as exc:
                raise PipelineError(f"cannot load rulebase {node.resource}: {exc}") from None
        elif node.rule_refs:
            rules = [ctx.rule(r) for r in node.rule_refs]
        else:
            rules = list(ctx.rules)
        if node.concept is not None:
            rules = [r for r in rules if r.applies_to == node.concept]
        for rule in rules:
            self.evaluate_rule(rule)


def execute(node: ProcessNode, ctx: ExecutionContext) -> List[ExecutionEvent]:
    """Run ``node`` and return the trace. Violations never abort the run;
    structural errors raise PipelineError (the partial trace stays on ctx)."""
    ctx.started = True
    _Interpreter(ctx).run(node)
    return list(ctx.trace)


def default_pipeline(rules_concept: Optional[IRI] = None) -> Pipeline:
    """A one-step process running the whole context rulebase."""
    iri = IRI(PROCESS + "RunRulebase")
    return Pipeline(iri, body=[RuleBaseStep(IRI(PROCESS + "RunRulebase_rules"), concept=rules_concept)])


def trace_to_json(trace: Sequence[ExecutionEvent]) -> str:
    return json.dumps([asdict(e) for e in trace], ensure_ascii=False, indent=1) + "\n"
