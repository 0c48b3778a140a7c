"""Compliance checking of building-industry technical documents against
regulatory rules held as queries paired with controlled-language sentences."""

from .kgstore import IRI, Graph, Literal, Triple, Var, infer_closure, match_pattern, parse_graph
from .ontology import ConceptDef, Ontology, classify_instance, merge_intersection, transitive_reduction
from .query import eval_ask, eval_select, parse_query
from .rulebase import Rule, SbvrRule, compile_table, load_rulebase
from .pipeline import ExecutionContext, execute, parse_pipeline
from .report import build_report, explain, render_report

__version__ = "0.1.0"

__all__ = [
    "IRI", "Graph", "Literal", "Triple", "Var", "infer_closure", "match_pattern", "parse_graph",
    "ConceptDef", "Ontology", "classify_instance", "merge_intersection", "transitive_reduction",
    "eval_ask", "eval_select", "parse_query",
    "Rule", "SbvrRule", "compile_table", "load_rulebase",
    "ExecutionContext", "execute", "parse_pipeline",
    "build_report", "explain", "render_report",
]
