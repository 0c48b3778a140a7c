import json
import os
import subprocess
import sys

import pytest

from conftest import DATA, tile_dt
from regcheck.cli import main, parse_param
from regcheck.kgstore import IRI, Literal, load_graph
from regcheck.namespaces import DT, REEF, RULE
from regcheck.ontology import ontology_from_graph

ONTO = str(DATA / "ontodt.trp")
TABLE = str(DATA / "slope_table.tsv")
RULES = str(DATA / "fig2_rules.rb.txt")
STORED_P70_TEXT = ("If a till is build in Zone 1 and has situation equal to protected and has recovery "
             "equal to 8 cm then it has slope equal to 70%")


def check(*extra, dt=None, rules=RULES):
    return main(["check", "--dt", dt or str(DATA / "dt_tile_compliant.trp"), "--ontology", ONTO,
                 "--rules", rules, *extra])


# --- check --------------------------------------------------------------------

def test_check_compliant(capsys):
    assert check() == 0
    out = capsys.readouterr().out
    assert "COMPLIANT - 88 rules evaluated, 0 violations" in out


def test_check_noncompliant(capsys):
    assert check(dt=str(DATA / "dt_tile_noncompliant.trp")) == 1
    out = capsys.readouterr().out
    assert "P70_ZI_protected" in out
    assert "NONCOMPLIANT - 88 rules evaluated, 1 violation" in out


def test_check_from_table_and_strict(tmp_path, capsys):
    dt = tmp_path / "dt.trp"
    dt.write_text(tile_dt(70, "I", "protected", 9))
    assert check(dt=str(dt), rules=TABLE) == 0
    assert check("--strict-equality", dt=str(dt), rules=TABLE) == 1


def test_check_stored_base_json(capsys):
    code = check("--format", "json", "--sbvr-base", str(DATA / "sbvr_fig5.trp"),
                 dt=str(DATA / "dt_tile_noncompliant.trp"), rules=str(DATA / "p70.rb.txt"))
    assert code == 1
    report = json.loads(capsys.readouterr().out)
    assert report["verdict"] == "noncompliant" and report["dt"] == "dt_tile_noncompliant"
    (finding,) = report["findings"]
    assert finding["sbvr"] == STORED_P70_TEXT
    assert finding["component"] == "http://example.org/dt/tile-roof#tile1"


def test_check_missing_rulebase_no_output(tmp_path, capsys):
    out = tmp_path / "report.txt"
    assert check("--out", str(out), rules=str(tmp_path / "absent.rb.txt")) == 2
    err = capsys.readouterr().err
    assert "rulebase not found" in err
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_check_reports_every_problem(tmp_path, capsys):
    code = main(["check", "--dt", str(tmp_path / "a.trp"), "--ontology", str(tmp_path / "b.trp"),
                 "--rules", str(tmp_path / "c.rb.txt"), "--pipeline", str(tmp_path / "d.trp")])
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 4 and all(line.startswith("regcheck: error:") for line in err)


def test_check_malformed_dt(tmp_path, capsys):
    bad = tmp_path / "bad.trp"
    bad.write_text("ex:a ex:b ex:c .\n")
    assert check(dt=str(bad)) == 2
    assert "line 1" in capsys.readouterr().err


def test_check_pipeline_and_compose(capsys):
    procs = str(DATA / "processes.trp")
    assert check("--pipeline", procs, "--process", "process:TileCheck",
                 dt=str(DATA / "dt_tile_noncompliant.trp")) == 1
    capsys.readouterr()
    assert check("--pipeline", procs) == 2  # three roots, none chosen
    assert "root processes" in capsys.readouterr().err
    assert check("--pipeline", procs, "--compose", "dt:VerrePolymere", dt=str(DATA / "dt_pv_module.trp")) == 0


def test_check_trace_out(tmp_path, capsys):
    trace = tmp_path / "trace.json"
    assert check("--trace-out", str(trace)) == 0
    events = json.loads(trace.read_text())
    assert events[0]["kind"] == "process-enter"
    assert sum(e["kind"] == "rule-evaluated" for e in events) == 88


def test_check_depth_error(tmp_path, capsys):
    loop = tmp_path / "loop.trp"
    loop.write_text("""@prefix proc: <http://regcheck.org/ns/proc#> .
@prefix process: <http://regcheck.org/ns/process#> .
process:Main rdf:type proc:Pipeline .
process:Main proc:body process:Main_1 .
process:Main_1 proc:index "1"^^integer .
process:Main_1 proc:step process:Loop .
process:Loop rdf:type proc:Pipeline .
process:Loop proc:body process:Loop_1 .
process:Loop_1 proc:index "1"^^integer .
process:Loop_1 proc:step process:Again .
process:Again rdf:type proc:Pipe .
process:Again proc:target process:Loop .
""")
    out = tmp_path / "r.txt"
    assert check("--pipeline", str(loop), "--max-depth", "5", "--out", str(out)) == 2
    assert "depth 5" in capsys.readouterr().err
    assert not out.exists()


def test_check_max_depth_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("REGCHECK_MAX_DEPTH", "1")
    # the composed process nests two pipelines, so depth 1 is too shallow
    assert check("--pipeline", str(DATA / "processes.trp"), "--compose", "dt:VerrePolymere",
                 dt=str(DATA / "dt_pv_module.trp")) == 2


def test_check_filters(capsys):
    assert check("--filter-theme", "sealing", dt=str(DATA / "dt_tile_noncompliant.trp")) == 0
    assert "0 rules evaluated" in capsys.readouterr().out
    assert check("--filter-domain", "SAFETY", dt=str(DATA / "dt_tile_noncompliant.trp")) == 1


def test_check_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        check("--format", "json", "--out", str(out), dt=str(DATA / "dt_tile_noncompliant.trp"))
    assert a.read_bytes() == b.read_bytes()


def test_argparse_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["check", "--dt"]) == 2
    assert main(["check", "--dt", "x", "--rules", "y", "--format", "xml"]) == 2


# --- ontology --------------------------------------------------------------------

def test_ontology_import_thesaurus(tmp_path):
    thes = tmp_path / "sealing.thes"
    thes.write_text("TERM étanchéité\n  NT joint d'étanchéité\n  NT étanchéité à l'air\n  BT calfeutrage\n"
                    "TERM joint d'étanchéité\nTERM étanchéité à l'air\nTERM calfeutrage\n", encoding="utf-8")
    out = tmp_path / "sealing.trp"
    assert main(["ontology", "import-thesaurus", str(thes), "--out", str(out)]) == 0
    onto = ontology_from_graph(load_graph(out))
    assert len(onto.concepts) == 4 and len(onto.subclass_edges) == 3
    assert IRI(REEF + "JointDEtancheite") in onto.concepts


def test_ontology_import_dangling(tmp_path, capsys):
    thes = tmp_path / "bad.thes"
    thes.write_text("TERM tuile\n  BT couverture\n")
    assert main(["ontology", "import-thesaurus", str(thes), "--out", str(tmp_path / "o.trp")]) == 2
    assert "couverture" in capsys.readouterr().err
    assert not (tmp_path / "o.trp").exists()


def test_ontology_reduce(tmp_path, capsys):
    src = tmp_path / "abc.trp"
    src.write_text("@prefix dt: <http://regcheck.org/ns/dt#> .\n"
                   "dt:A rdfs:subClassOf dt:B .\ndt:B rdfs:subClassOf dt:C .\ndt:A rdfs:subClassOf dt:C .\n")
    out = tmp_path / "reduced.trp"
    assert main(["ontology", "reduce", str(src), "--out", str(out)]) == 0
    assert len(ontology_from_graph(load_graph(out)).subclass_edges) == 2
    src.write_text(src.read_text() + "dt:C rdfs:subClassOf dt:A .\n")
    assert main(["ontology", "reduce", str(src)]) == 2
    assert "cycle" in capsys.readouterr().err


def test_ontology_merge_sample(tmp_path):
    reef = tmp_path / "reef.trp"
    assert main(["ontology", "import-thesaurus", str(DATA / "reef_sample.thes"), "--out", str(reef)]) == 0
    out = tmp_path / "merged.trp"
    assert main(["ontology", "merge", str(reef), str(DATA / "dt_ontology_sample.trp"), "--out", str(out)]) == 0
    merged = ontology_from_graph(load_graph(out))
    assert merged.alignments[IRI(DT + "Tile")] == IRI(REEF + "Tuile")
    assert len(merged.alignments) == 6
    assert (IRI(DT + "FlatTile"), IRI(DT + "Tile")) in merged.subclass_edges


def test_ontology_classify(capsys):
    code = main(["ontology", "classify", "--graph", str(DATA / "dt_tile_compliant.trp"), "--ontology", ONTO,
                 "--instance", "<http://example.org/dt/tile-roof#tile1>", "--concept", "dt:PlatClayTile"])
    assert code == 0
    assert capsys.readouterr().out == (
        f"http://example.org/dt/tile-roof#tile1\t{DT}PlatClayTile\ttrue\n")


# --- compile-table ---------------------------------------------------------------

def test_compile_table_idempotent(tmp_path):
    out = tmp_path / "rules.rb.txt"
    assert main(["compile-table", TABLE, "--out", str(out)]) == 0
    first = out.read_bytes()
    sbvr = tmp_path / "rules.sbvr.trp"
    assert sbvr.exists()
    assert main(["compile-table", TABLE, "--out", str(out)]) == 0
    assert out.read_bytes() == first
    assert first.count(b"\nRULE ") + first.startswith(b"RULE ") == 88
    assert len(load_graph(sbvr)) == 176


def test_compile_table_matches_shipped(tmp_path):
    out = tmp_path / "fig2_rules.rb.txt"
    assert main(["compile-table", TABLE, "--out", str(out)]) == 0
    assert out.read_text() == (DATA / "fig2_rules.rb.txt").read_text()
    assert (tmp_path / "fig2_rules.sbvr.trp").read_text() == (DATA / "fig2_rules.sbvr.trp").read_text()


def test_compile_table_malformed_header(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("slope\tZone I protected\n70 %\t8 cm\n")
    out = tmp_path / "out.rb.txt"
    assert main(["compile-table", str(bad), "--out", str(out)]) == 2
    assert "header" in capsys.readouterr().err
    assert not out.exists()


def test_compile_table_coverage(tmp_path):
    out = tmp_path / "cov.rb.txt"
    assert main(["compile-table", TABLE, "--coverage", "--out", str(out)]) == 0
    assert "rule:NoApplicableRow" in out.read_text()


# --- query ------------------------------------------------------------------------

def test_query_justification(capsys):
    code = main(["query", "--graph", str(DATA / "sbvr_fig5.trp"), str(DATA / "justification.rq"),
                 "--param", "idComposant=P70"])
    assert code == 0
    assert capsys.readouterr().out == STORED_P70_TEXT + "\n"


def test_query_ask_empty_graph(capsys):
    assert main(["query", "ASK { ?x rdf:type dt:Tile }"]) == 1
    assert capsys.readouterr().out == "false\n"


def test_query_ask_true(capsys):
    assert main(["query", "--graph", str(DATA / "dt_tile_compliant.trp"), "--graph", ONTO,
                 "ASK { ?x rdf:type dt:Tile }"]) == 0
    assert capsys.readouterr().out == "true\n"


def test_query_syntax_error(capsys):
    assert main(["query", "ASK { ?x dt:p }"]) == 2
    assert "line 1, column 15" in capsys.readouterr().err


def test_query_select_rows_sorted(capsys):
    code = main(["query", "--graph", str(DATA / "fig2_rules.sbvr.trp"),
                 "SELECT ?r WHERE { ?r dt:hasSBVR ?s }"])
    assert code == 0
    rows = capsys.readouterr().out.splitlines()
    assert len(rows) == 88 and rows == sorted(rows)


def test_query_missing_param(capsys):
    assert main(["query", str(DATA / "justification.rq")]) == 2
    assert "idComposant" in capsys.readouterr().err


def test_parse_param():
    assert parse_param("8") == Literal("8", "integer")
    assert parse_param("P70") == IRI(RULE + "P70")
    assert parse_param("dt:Tile") == IRI(DT + "Tile")
    assert parse_param('"text"') == Literal("text")
    assert parse_param("<http://ex/a>") == IRI("http://ex/a")


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "regcheck.cli", "query", "ASK { ?x rdf:type dt:Tile }"],
                          capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 1 and proc.stdout == "false\n"
