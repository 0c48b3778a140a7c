"""Noncompliance reports: justification lookup for violation events and
text/JSON rendering."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

from .kgstore import IRI, Graph, Literal
from .pipeline import ExecutionEvent
from .query import eval_select, instantiate_template, parse_query
from .rulebase import Rule

log = logging.getLogger(__name__)

JUSTIFICATION_TEMPLATE = """SELECT DISTINCT ?z WHERE {
  ?x dt:hasSBVR ?y
  ?b dt:hasSBVRrule ?z
  FILTER (?y = ?b)
  FILTER (?x = {{idComposant}})
}"""


@dataclass(frozen=True)
class Finding:
    component: str
    rule: str
    sbvr_text: str
    source_doc: str = ""
    domain_tag: str = ""
    theme_tag: str = ""
    event_seq: int = 0


@dataclass
class ComplianceReport:
    dt_id: str
    verdict: str
    findings: List[Finding] = field(default_factory=list)
    rules_evaluated: int = 0
    trace_digest: str = ""


def placeholder_text(rule: str) -> str:
    return f"no justification on record for {rule}"


def justifications(sbvr_base: Graph, rule_id: IRI) -> List[str]:
    text = instantiate_template(JUSTIFICATION_TEMPLATE, {"idComposant": rule_id})
    rows = eval_select(sbvr_base, parse_query(text))
    return [row["z"].lexical for row in rows if isinstance(row["z"], Literal)]


def explain(trace: Sequence[ExecutionEvent], sbvr_base: Graph,
            rules: Optional[Sequence[Rule]] = None) -> List[Finding]:
    """One finding per (violation event, justification text). ``rules``
    supplies guide metadata when given."""
    meta: Dict[str, Rule] = {str(r.id): r for r in rules or ()}
    cache: Dict[str, List[str]] = {}
    findings = []
    for event in trace:
        if event.kind != "violation-detected":
            continue
        if event.subject not in cache:
            cache[event.subject] = justifications(sbvr_base, IRI(event.subject))
        texts = cache[event.subject]
        if not texts:
            log.warning("no justification on record for %s", event.subject)
            texts = [placeholder_text(event.subject)]
        rule = meta.get(event.subject)
        for text in texts:
            findings.append(Finding(
                component=event.component or "",
                rule=event.subject,
                sbvr_text=text,
                source_doc=rule.sbvr.source_doc if rule else "",
                domain_tag=rule.sbvr.domain_tag if rule else "",
                theme_tag=rule.sbvr.theme_tag if rule else "",
                event_seq=event.seq,
            ))
    return findings


def trace_digest(trace: Sequence[ExecutionEvent]) -> str:
    payload = json.dumps([asdict(e) for e in trace], sort_keys=True, ensure_ascii=False,
                         separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_report(dt_id: str, trace: Sequence[ExecutionEvent], findings: Sequence[Finding]) -> ComplianceReport:
    ordered = sorted(findings, key=lambda f: (f.component, f.rule, f.event_seq, f.sbvr_text))
    return ComplianceReport(
        dt_id=dt_id,
        verdict="noncompliant" if ordered else "compliant",
        findings=ordered,
        rules_evaluated=sum(1 for e in trace if e.kind == "rule-evaluated"),
        trace_digest=trace_digest(trace),
    )


def report_to_dict(report: ComplianceReport) -> dict:
    return {
        "dt": report.dt_id,
        "verdict": report.verdict,
        "rules_evaluated": report.rules_evaluated,
        "findings": [
            {
                "component": f.component,
                "rule": f.rule,
                "source": f.source_doc,
                "domain": f.domain_tag,
                "theme": f.theme_tag,
                "sbvr": f.sbvr_text,
                "event_seq": f.event_seq,
            }
            for f in report.findings
        ],
        "trace_digest": report.trace_digest,
    }


def _plural(n: int, word: str) -> str:
    return f"{n} {word}" + ("" if n == 1 else "s")


def render_report(report: ComplianceReport, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report_to_dict(report), ensure_ascii=False, separators=(",", ":")) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [
        f"Compliance report for {report.dt_id}",
        f"{report.verdict.upper()} - {_plural(report.rules_evaluated, 'rule')} evaluated, "
        f"{_plural(len(report.findings), 'violation')}",
        f"trace digest: {report.trace_digest}",
    ]
    for n, f in enumerate(report.findings, start=1):
        lines += [
            "",
            f"[{n}] component {f.component}",
            f"    rule:   {f.rule}",
            f"    source: {f.source_doc or '-'}",
            f"    domain: {f.domain_tag or '-'}",
            f"    theme:  {f.theme_tag or '-'}",
            f"    event:  #{f.event_seq}",
            f"    why:    {f.sbvr_text}",
        ]
    return "\n".join(lines) + "\n"
