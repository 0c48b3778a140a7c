import json
import logging

import pytest
from hypothesis import given, strategies as st

from conftest import DATA, tile_dt
from regcheck.kgstore import Graph, infer_closure, load_graph, parse_graph
from regcheck.namespaces import RULE
from regcheck.pipeline import ExecutionContext, ExecutionEvent, ProcessRegistry, default_pipeline, execute
from regcheck.report import (
    ComplianceReport, Finding, build_report, explain, placeholder_text, render_report, trace_digest,
)
from regcheck.rulebase import compile_table, load_rulebase_file, load_slope_table, serialize_sbvr_base

STORED_P70_TEXT = ("If a till is build in Zone 1 and has situation equal to protected and has recovery "
             "equal to 8 cm then it has slope equal to 70%")


def violation(seq, rule, component="http://ex/c1"):
    return ExecutionEvent(seq, "violation-detected", rule, component, "")


@pytest.fixture(scope="module")
def rules():
    return compile_table(load_slope_table(DATA / "slope_table.tsv"))


def run(rules, text):
    g = load_graph(DATA / "ontodt.trp")
    g.update(parse_graph(text))
    ctx = ExecutionContext(infer_closure(g), ProcessRegistry(), rules)
    return execute(default_pipeline(), ctx)


def test_explain_stored_entry():
    base = load_graph(DATA / "sbvr_fig5.trp")
    (finding,) = explain([violation(3, RULE + "P70")], base)
    assert finding.sbvr_text == STORED_P70_TEXT
    assert finding.rule == RULE + "P70" and finding.event_seq == 3


def test_explain_empty_trace():
    assert explain([], Graph()) == []


def test_explain_missing_entry_placeholder(caplog):
    with caplog.at_level(logging.WARNING, logger="regcheck.report"):
        (finding,) = explain([violation(1, RULE + "Ghost")], load_graph(DATA / "sbvr_fig5.trp"))
    assert finding.sbvr_text == placeholder_text(RULE + "Ghost")
    assert "Ghost" in caplog.text


def test_explain_multiple_justifications():
    base = parse_graph("""
    @prefix dt: <http://regcheck.org/ns/dt#> .
    @prefix rule: <http://regcheck.org/ns/rule#> .
    @prefix sbvr: <http://regcheck.org/ns/sbvr#> .
    rule:P70 dt:hasSBVR sbvr:A .
    rule:P70 dt:hasSBVR sbvr:B .
    sbvr:A dt:hasSBVRrule "first" .
    sbvr:B dt:hasSBVRrule "second" .
    """)
    findings = explain([violation(1, RULE + "P70")], base)
    assert [f.sbvr_text for f in findings] == ["first", "second"]


def test_explain_carries_metadata(rules):
    rules70 = load_rulebase_file(DATA / "p70.rb.txt")
    (finding,) = explain([violation(1, RULE + "P70")], serialize_sbvr_base(rules70), rules70)
    assert finding.domain_tag == "Safety" and finding.theme_tag == "Tile"
    assert finding.source_doc.startswith("Guide")


def test_build_report_compliant(rules):
    trace = run(rules, tile_dt(70, "I", "protected", 8))
    report = build_report("doc", trace, explain(trace, serialize_sbvr_base(rules), rules))
    assert report.verdict == "compliant" and report.findings == []
    assert report.rules_evaluated == 88
    text = render_report(report)
    assert "COMPLIANT - 88 rules evaluated, 0 violations" in text


def test_build_report_one_violation(rules):
    trace = run(rules, tile_dt(70, "I", "protected", 7))
    report = build_report("doc", trace, explain(trace, serialize_sbvr_base(rules), rules))
    assert report.verdict == "noncompliant"
    assert len(report.findings) == 1 and report.rules_evaluated == 88
    assert report.findings[0].rule == RULE + "P70_ZI_protected"
    assert "NONCOMPLIANT - 88 rules evaluated, 1 violation\n" in render_report(report)


def test_digest_stable_across_runs(rules):
    a = run(rules, tile_dt(90, "II", "normal", 6))
    b = run(rules, tile_dt(90, "II", "normal", 6))
    assert trace_digest(a) == trace_digest(b)
    c = run(rules, tile_dt(90, "II", "normal", 7))
    assert trace_digest(a) != trace_digest(c)


def test_text_render_contains_stored_sentence():
    base = load_graph(DATA / "sbvr_fig5.trp")
    trace = [ExecutionEvent(1, "rule-evaluated", RULE + "P70", None, "violated"), violation(2, RULE + "P70")]
    text = render_report(build_report("doc", trace, explain(trace, base)))
    assert STORED_P70_TEXT in text
    assert "component http://ex/c1" in text and "rule:   " + RULE + "P70" in text


def test_json_render_schema():
    report = build_report("doc", [], [])
    text = render_report(report, "json")
    assert '"findings":[]' in text and '"verdict":"compliant"' in text
    data = json.loads(text)
    assert list(data) == ["dt", "verdict", "rules_evaluated", "findings", "trace_digest"]
    report = build_report("doc", [violation(1, RULE + "P70")],
                          [Finding("http://ex/c1", RULE + "P70", "why", "src", "dom", "th", 1)])
    (f,) = json.loads(render_report(report, "json"))["findings"]
    assert list(f) == ["component", "rule", "source", "domain", "theme", "sbvr", "event_seq"]


def test_unknown_format():
    with pytest.raises(ValueError):
        render_report(build_report("doc", [], []), "xml")


def test_findings_sorted_by_component_then_rule():
    findings = [Finding("b", "r1", "x", event_seq=1), Finding("a", "r2", "x", event_seq=2),
                Finding("a", "r1", "x", event_seq=3)]
    report = build_report("doc", [], findings)
    assert [(f.component, f.rule) for f in report.findings] == [("a", "r1"), ("a", "r2"), ("b", "r1")]


finding_st = st.builds(Finding, st.sampled_from(["a", "b"]), st.sampled_from(["r1", "r2"]),
                       st.text(min_size=1, max_size=10), event_seq=st.integers(1, 50))


@given(st.lists(finding_st, max_size=6), st.integers(0, 100))
def test_report_invariants(findings, evaluated):
    trace = [ExecutionEvent(i + 1, "rule-evaluated", "r", None, "") for i in range(evaluated)]
    report = build_report("doc", trace, findings)
    assert (report.verdict == "compliant") == (not findings)
    assert report.rules_evaluated == evaluated
    copy = ComplianceReport(**vars(report))
    assert render_report(report, "json") == render_report(copy, "json")
    assert render_report(report) == render_report(copy)


def test_every_violation_event_yields_a_finding(rules):
    base = serialize_sbvr_base(rules)
    for recovery in (5, 6, 7):
        trace = run(rules, tile_dt(110, "III", "exposed", recovery))
        events = [e for e in trace if e.kind == "violation-detected"]
        findings = explain(trace, base, rules)
        assert {f.event_seq for f in findings} == {e.seq for e in events}
        by_id = {str(r.id): r.sbvr.text for r in rules}
        assert all(f.sbvr_text == by_id[f.rule] for f in findings)
