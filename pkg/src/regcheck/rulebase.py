"""Regulatory rules: controlled-language sentences with typed spans, their
violation queries, guide metadata, and compilation of the slope/recovery
table into rules."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .kgstore import IRI, Graph, Literal, Triple, Var, integer
from .ontology import Ontology, canonical_label
from .query import Cast, FilterExpr, GroupPattern, Query, QuerySyntaxError, parse_query, serialize_query
from .namespaces import DT, QUERY_PREFIXES, RDF_TYPE, RULE, SBVR

log = logging.getLogger(__name__)

SPAN_KINDS = {"C": "concept", "P": "property", "L": "literal", "N": "noun"}
_KIND_CODES = {v: k for k, v in SPAN_KINDS.items()}

DEFAULT_SOURCE = 'Guide "Coverage and Tile" (DTU 40.211, 40.23, 40.22, 40.21)'
DEFAULT_DOMAIN = "Safety"
DEFAULT_THEME = "Tile"

HAS_SBVR = IRI(DT + "hasSBVR")
HAS_SBVR_RULE = IRI(DT + "hasSBVRrule")


class RulebaseError(ValueError):
    pass


class TableError(ValueError):
    pass


Span = Tuple[int, int, str]


@dataclass(frozen=True)
class SbvrRule:
    id: IRI
    text: str
    spans: Tuple[Span, ...] = ()
    source_doc: str = ""
    domain_tag: str = ""
    theme_tag: str = ""

    def __post_init__(self):
        end = 0
        for start, stop, kind in sorted(self.spans):
            if kind not in _KIND_CODES:
                raise RulebaseError(f"unknown span kind {kind!r}")
            if not 0 <= start < stop <= len(self.text):
                raise RulebaseError(f"span ({start}, {stop}) out of bounds")
            if start < end:
                raise RulebaseError(f"overlapping spans in {self.id}")
            end = stop

    @classmethod
    def from_markup(cls, id: IRI, marked: str, **meta) -> "SbvrRule":
        text, spans = parse_markup(marked)
        return cls(id, text, spans, **meta)


@dataclass(frozen=True)
class Rule:
    id: IRI
    sbvr: SbvrRule
    violation_query: Query
    applies_to: IRI

    def __post_init__(self):
        if self.violation_query.form != "ASK":
            raise RulebaseError(f"{self.id}: violation query must be an ASK query")

    @property
    def component_var(self) -> Optional[str]:
        """The variable naming the checked component: subject of the first pattern."""
        for s, _, _ in self.violation_query.body.triples:
            if isinstance(s, Var):
                return s.name
        return None


# --------------------------------------------------------------------------
# SBVR markup

_MARK_RE = re.compile(r"\[([CPLN]):")


def parse_markup(marked: str) -> Tuple[str, Tuple[Span, ...]]:
    """``"a [C:tile] is"`` -> ``("a tile is", ((2, 6, "concept"),))``."""
    out: List[str] = []
    spans: List[Span] = []
    pos = 0
    length = 0
    while True:
        m = _MARK_RE.search(marked, pos)
        if not m:
            break
        chunk = marked[pos:m.start()]
        out.append(chunk)
        length += len(chunk)
        close = marked.find("]", m.end())
        if close < 0:
            raise RulebaseError(f"unterminated span marker at offset {m.start()}")
        inner = marked[m.end():close]
        if _MARK_RE.search(inner):
            raise RulebaseError(f"nested span marker at offset {m.start()}")
        if not inner:
            raise RulebaseError(f"empty span at offset {m.start()}")
        spans.append((length, length + len(inner), SPAN_KINDS[m.group(1)]))
        out.append(inner)
        length += len(inner)
        pos = close + 1
    out.append(marked[pos:])
    return "".join(out), tuple(spans)


def render_sbvr(rule: SbvrRule, mode: str = "plain") -> str:
    if mode == "plain":
        return rule.text
    if mode != "annotated":
        raise ValueError(f"unknown mode {mode!r}")
    parts = []
    pos = 0
    for start, stop, kind in sorted(rule.spans):
        parts.append(rule.text[pos:start])
        parts.append(f"[{_KIND_CODES[kind]}:{rule.text[start:stop]}]")
        pos = stop
    parts.append(rule.text[pos:])
    return "".join(parts)


def _span_known(text: str, kind: str, labels: set) -> bool:
    key = canonical_label(text)
    if key in labels:
        return True
    if kind == "property":
        # "recovery" / "have recovery" both name the property labelled "has recovery"
        stem = key[5:] if key.startswith("have ") else key
        return "has " + stem in labels
    return False


def check_spans(rule: SbvrRule, ontology: Ontology) -> List[str]:
    """Concept/property spans whose text matches no ontology label."""
    labels = set(ontology.by_label())
    problems = []
    for start, stop, kind in rule.spans:
        if kind in ("concept", "property") and not _span_known(rule.text[start:stop], kind, labels):
            problems.append(f"{rule.id}: {kind} span {rule.text[start:stop]!r} matches no ontology label")
    return problems


# --------------------------------------------------------------------------
# rulebase files

_SOURCE_RE = re.compile(r"SOURCE\s+(.*?)\s{2,}DOMAIN\s+(.*?)\s{2,}THEME\s+(.*)$")
_PREFIX_RE = re.compile(r"@prefix\s+([A-Za-z_][\w\-]*):\s*<([^<>\s]*)>\s*\.\s*$")


def _iri(token: str, prefixes: Mapping[str, str], lineno: int) -> IRI:
    token = token.strip()
    if token.startswith("<") and token.endswith(">"):
        return IRI(token[1:-1])
    prefix, sep, local = token.partition(":")
    if not sep or prefix not in prefixes:
        raise RulebaseError(f"line {lineno}: cannot resolve {token!r}")
    return IRI(prefixes[prefix] + local)


def load_rulebase(text: str, ontology: Optional[Ontology] = None,
                  prefixes: Optional[Mapping[str, str]] = None) -> List[Rule]:
    table = dict(QUERY_PREFIXES)
    if prefixes:
        table.update(prefixes)
    rules: List[Rule] = []
    seen: Dict[IRI, int] = {}
    lines = text.splitlines()
    i = 0
    current: Optional[dict] = None

    def finish(block: dict) -> None:
        for key in ("sbvr", "query", "applies"):
            if key not in block:
                raise RulebaseError(f"rule {block['id']} (line {block['line']}): missing {key.upper()}")
        try:
            sbvr = SbvrRule.from_markup(block["id"], block["sbvr"], source_doc=block.get("source", ""),
                                        domain_tag=block.get("domain", ""), theme_tag=block.get("theme", ""))
        except RulebaseError as exc:
            raise RulebaseError(f"rule {block['id']}: {exc}") from None
        try:
            q = parse_query(block["query"], table)
        except QuerySyntaxError as exc:
            raise RulebaseError(f"rule {block['id']}: query does not parse: {exc}") from None
        rule = Rule(block["id"], sbvr, q, block["applies"])
        if ontology is not None:
            for problem in check_spans(sbvr, ontology):
                log.warning(problem)
        rules.append(rule)

    while i < len(lines):
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if line.startswith("@prefix"):
            m = _PREFIX_RE.match(line)
            if not m:
                raise RulebaseError(f"line {lineno}: malformed @prefix")
            table[m.group(1)] = m.group(2)
            continue
        if line.startswith("RULE "):
            if current is not None:
                finish(current)
            rid = _iri(line[5:], table, lineno)
            if rid in seen:
                raise RulebaseError(f"duplicate rule id {rid} (lines {seen[rid]} and {lineno})")
            seen[rid] = lineno
            current = {"id": rid, "line": lineno}
            continue
        if current is None:
            raise RulebaseError(f"line {lineno}: expected RULE")
        if line.startswith("SOURCE"):
            m = _SOURCE_RE.match(line)
            if not m:
                raise RulebaseError(f"line {lineno}: expected 'SOURCE <text>   DOMAIN <text>   THEME <text>'")
            values = ["" if g.strip() == "-" else g.strip() for g in m.groups()]
            current["source"], current["domain"], current["theme"] = values
        elif line.startswith("APPLIES "):
            current["applies"] = _iri(line[8:], table, lineno)
        elif line.startswith("SBVR:"):
            current["sbvr"] = line[5:].strip()
        elif line == "QUERY:":
            body = []
            while i < len(lines) and lines[i].strip() != "END":
                body.append(lines[i])
                i += 1
            if i == len(lines):
                raise RulebaseError(f"line {lineno}: QUERY without END")
            i += 1
            current["query"] = "\n".join(body)
        else:
            raise RulebaseError(f"line {lineno}: unexpected {line.split()[0]!r}")
    if current is not None:
        finish(current)
    return rules


def load_rulebase_file(path, ontology: Optional[Ontology] = None) -> List[Rule]:
    with open(path, encoding="utf-8") as fh:
        return load_rulebase(fh.read(), ontology)


def _compact(iri: IRI) -> str:
    for prefix, base in sorted(QUERY_PREFIXES.items(), key=lambda kv: -len(kv[1])):
        local = iri.value[len(base):]
        if iri.value.startswith(base) and re.fullmatch(r"[A-Za-z0-9_][\w\-]*", local):
            return f"{prefix}:{local}"
    return f"<{iri.value}>"


def serialize_rulebase(rules: Sequence[Rule], header: str = "") -> str:
    out = [f"# {line}".rstrip() for line in header.splitlines()]
    for rule in rules:
        if out:
            out.append("")
        out.append(f"RULE {_compact(rule.id)}")
        s = rule.sbvr
        out.append(f"SOURCE {s.source_doc or '-'}   DOMAIN {s.domain_tag or '-'}   THEME {s.theme_tag or '-'}")
        out.append(f"APPLIES {_compact(rule.applies_to)}")
        out.append(f"SBVR: {render_sbvr(s, 'annotated')}")
        out.append("QUERY:")
        out.append(serialize_query(rule.violation_query))
        out.append("END")
    return "\n".join(out) + "\n" if out else ""


def filter_rules(rules: Iterable[Rule], source: Optional[str] = None, domain: Optional[str] = None,
                 theme: Optional[str] = None) -> List[Rule]:
    """Keep rules whose metadata matches every given tag (case-insensitive)."""
    def ok(value: str, wanted: Optional[str]) -> bool:
        return wanted is None or value.casefold() == wanted.casefold()

    return [
        r for r in rules
        if ok(r.sbvr.source_doc, source) and ok(r.sbvr.domain_tag, domain) and ok(r.sbvr.theme_tag, theme)
    ]


# --------------------------------------------------------------------------
# SBVR knowledge base

def sbvr_node(rule_id: IRI) -> IRI:
    local = re.split(r"[#/:]", rule_id.value)[-1] or "rule"
    return IRI(SBVR + local)


def serialize_sbvr_base(rules: Sequence[Rule]) -> Graph:
    g = Graph(prefixes={"dt": DT, "rule": RULE, "sbvr": SBVR})
    for rule in rules:
        node = sbvr_node(rule.id)
        g.add(Triple(rule.id, HAS_SBVR, node))
        g.add(Triple(node, HAS_SBVR_RULE, Literal(rule.sbvr.text)))
    return g


def check_sbvr_base(graph: Graph) -> List[str]:
    """Warn about rules linked to more than one justification node."""
    counts: Dict[IRI, int] = {}
    for t in graph.triples(p=HAS_SBVR):
        counts[t.subject] = counts.get(t.subject, 0) + 1
    problems = [f"rule {rid} has {n} SBVR entries" for rid, n in sorted(counts.items()) if n > 1]
    for p in problems:
        log.warning(p)
    return problems


# --------------------------------------------------------------------------
# slope table

ZONES = ("I", "II", "III")
SITUATIONS = ("protected", "normal", "exposed")
_ZONE_NUMBER = {"I": 1, "II": 2, "III": 3}
_SITUATION_ALIASES = {
    "protected": "protected", "protege": "protected", "protegee": "protected", "plat": "protected",
    "normal": "normal", "normale": "normal",
    "exposed": "exposed", "expose": "exposed", "exposee": "exposed", "excent": "exposed",
}

Column = Tuple[str, str]


@dataclass
class SlopeTable:
    """Minimum tile recovery (cm) indexed by slope row and (zone, situation) column."""

    rows: List[int]
    columns: List[Column]
    cells: List[List[int]] = field(default_factory=list)

    def cell(self, slope: int, column: Column) -> int:
        return self.cells[self.rows.index(slope)][self.columns.index(column)]

    def validate(self) -> None:
        if not self.rows or not self.columns:
            raise TableError("table needs at least one row and one column")
        if len(set(self.rows)) != len(self.rows) or self.rows != sorted(self.rows):
            raise TableError("slope rows must be strictly increasing")
        if len(set(self.columns)) != len(self.columns):
            raise TableError("duplicate (zone, situation) column")
        for zone, situation in self.columns:
            if zone not in ZONES or situation not in SITUATIONS:
                raise TableError(f"unknown column ({zone}, {situation})")
        if len(self.cells) != len(self.rows) or any(len(r) != len(self.columns) for r in self.cells):
            raise TableError("cell grid does not match rows x columns")
        for j, col in enumerate(self.columns):
            values = [row[j] for row in self.cells]
            if any(v <= 0 for v in values):
                raise TableError(f"non-positive recovery in column {col}")
            for a, b, slope in zip(values, values[1:], self.rows[1:]):
                if b > a:
                    raise TableError(f"recovery increases with slope in column {col} at {slope}%")


def _int_cell(text: str, unit: str, where: str) -> int:
    cleaned = text.strip().replace(unit, "").strip()
    if not re.fullmatch(r"\d+", cleaned):
        raise TableError(f"{where}: expected an integer{' ' + unit if unit else ''}, got {text!r}")
    return int(cleaned)


def _column(header: str) -> Column:
    zone, sep, situation = header.strip().partition("/")
    key = canonical_label(situation).replace(" ", "")
    if not sep or zone.strip().upper() not in ZONES or key not in _SITUATION_ALIASES:
        raise TableError(f"malformed column header {header!r}, expected ZONE/situation")
    return zone.strip().upper(), _SITUATION_ALIASES[key]


def parse_slope_table(text: str) -> SlopeTable:
    """Tab-separated: header ``slope<TAB>I/protected<TAB>...``, then one row per slope."""
    lines = [l for l in text.splitlines() if l.strip() and not l.lstrip().startswith("#")]
    if not lines:
        raise TableError("empty table")
    reader = list(csv.reader(io.StringIO("\n".join(lines)), delimiter="\t"))
    header = reader[0]
    if len(header) < 2:
        raise TableError("malformed header: expected slope column plus (zone, situation) columns")
    columns = [_column(h) for h in header[1:]]
    rows, cells = [], []
    for n, row in enumerate(reader[1:], start=2):
        if len(row) != len(header):
            raise TableError(f"row {n}: expected {len(header)} fields, got {len(row)}")
        rows.append(_int_cell(row[0], "%", f"row {n}"))
        cells.append([_int_cell(c, "cm", f"row {n}") for c in row[1:]])
    table = SlopeTable(rows, columns, cells)
    table.validate()
    return table


def load_slope_table(path) -> SlopeTable:
    with open(path, encoding="utf-8") as fh:
        return parse_slope_table(fh.read())


def zone_concept(zone: str) -> IRI:
    return IRI(f"{DT}Zone{_ZONE_NUMBER[zone]}")


def situation_concept(situation: str) -> IRI:
    return IRI(DT + situation.capitalize())


def cell_rule_id(slope: int, column: Column) -> IRI:
    return IRI(f"{RULE}P{slope}_Z{column[0]}_{column[1]}")


_T, _A, _S = Var("t"), Var("a"), Var("s")
_SLOPE, _REC = Var("slope"), Var("r")
_TYPE = IRI(RDF_TYPE)
TILE = IRI(DT + "Tile")
HAS_SLOPE = IRI(DT + "hasSlope")
HAS_AREA = IRI(DT + "hasArea")
HAS_SITUATION = IRI(DT + "hasSituation")
HAS_RECOVERY = IRI(DT + "hasRecovery")


def cell_query(slope: int, column: Column, minimum: int, strict: bool = False) -> Query:
    """True iff some tile sits at these coordinates without a compliant recovery."""
    zone, situation = column
    body = GroupPattern(
        triples=(
            (_T, _TYPE, TILE),
            (_T, HAS_SLOPE, _SLOPE),
            (_T, HAS_AREA, _A),
            (_A, _TYPE, zone_concept(zone)),
            (_A, HAS_SITUATION, _S),
            (_S, _TYPE, situation_concept(situation)),
        ),
        filters=(FilterExpr(Cast(_SLOPE), "=", integer(slope)),),
        minus=GroupPattern(
            triples=((_T, HAS_RECOVERY, _REC),),
            filters=(FilterExpr(Cast(_REC), "=" if strict else ">=", integer(minimum)),),
        ),
    )
    return Query("ASK", body)


def cell_sbvr_markup(slope: int, column: Column, minimum: int, strict: bool = False) -> str:
    zone, situation = column
    bound = "equal to" if strict else "at least"
    return (
        f"If a [C:tile] is built in [C:Zone {_ZONE_NUMBER[zone]}] and [P:has situation] equal to "
        f"[C:{situation}] and [P:has slope] equal to [L:{slope}%] then [N:it] must have "
        f"[P:recovery] {bound} [L:{minimum} cm]"
    )


def compile_table(table: SlopeTable, strict: bool = False, source: str = DEFAULT_SOURCE,
                  domain: str = DEFAULT_DOMAIN, theme: str = DEFAULT_THEME) -> List[Rule]:
    """One rule per cell, row-major."""
    table.validate()
    rules = []
    for i, slope in enumerate(table.rows):
        for j, column in enumerate(table.columns):
            minimum = table.cells[i][j]
            rid = cell_rule_id(slope, column)
            sbvr = SbvrRule.from_markup(rid, cell_sbvr_markup(slope, column, minimum, strict),
                                        source_doc=source, domain_tag=domain, theme_tag=theme)
            rules.append(Rule(rid, sbvr, cell_query(slope, column, minimum, strict), TILE))
    return rules


def coverage_rules(table: SlopeTable, source: str = DEFAULT_SOURCE, domain: str = DEFAULT_DOMAIN,
                   theme: str = DEFAULT_THEME) -> List[Rule]:
    """Rules flagging tiles the table says nothing about: a slope between or
    outside the rows, or a (zone, situation) pair without a column."""
    meta = dict(source_doc=source, domain_tag=domain, theme_tag=theme)
    rules = []
    rid = IRI(RULE + "NoApplicableRow")
    slopes = ", ".join(f"{s}%" for s in table.rows)
    markup = (f"If a [C:tile] [P:has slope] not equal to any of [L:{slopes}] then [N:it] is not covered "
              f"by the rulebase: no applicable rule row")
    q = Query("ASK", GroupPattern(
        triples=((_T, _TYPE, TILE), (_T, HAS_SLOPE, _SLOPE)),
        filters=tuple(FilterExpr(Cast(_SLOPE), "!=", integer(s)) for s in table.rows),
    ))
    rules.append(Rule(rid, SbvrRule.from_markup(rid, markup, **meta), q, TILE))
    for zone in ZONES:
        for situation in SITUATIONS:
            if (zone, situation) in table.columns:
                continue
            rid = IRI(f"{RULE}NoApplicableColumn_Z{zone}_{situation}")
            markup = (f"If a [C:tile] is built in [C:Zone {_ZONE_NUMBER[zone]}] and [P:has situation] "
                      f"equal to [C:{situation}] then [N:it] is not covered by the rulebase: "
                      f"no applicable rule column")
            q = Query("ASK", GroupPattern(triples=(
                (_T, _TYPE, TILE),
                (_T, HAS_AREA, _A),
                (_A, _TYPE, zone_concept(zone)),
                (_A, HAS_SITUATION, _S),
                (_S, _TYPE, situation_concept(situation)),
            )))
            rules.append(Rule(rid, SbvrRule.from_markup(rid, markup, **meta), q, TILE))
    return rules
