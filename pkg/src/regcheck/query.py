"""A small SPARQL-like language: ASK and SELECT [DISTINCT] over basic graph
patterns, FILTER comparisons with an integer cast, and one level of MINUS.

Grammar (keywords are case-insensitive)::

    query    := ("PREFIX" pname: <iri>)* (ask | select)
    ask      := "ASK" group
    select   := "SELECT" ["DISTINCT"] var+ ["WHERE"] group
    group    := "{" (triple ["."] | "FILTER" "(" expr ")")* ["MINUS" group] ... "}"
    expr     := operand op operand          op in = != < <= > >=
    operand  := var | iri | literal | "xsd:integer" "(" var ")"
"""

from __future__ import annotations

import logging
import re
from functools import lru_cache
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

from .kgstore import IRI, Binding, Graph, Literal, PatternTerm, Term, Var, match_pattern, term_key
from .namespaces import QUERY_PREFIXES, XSD

log = logging.getLogger(__name__)

OPERATORS = ("=", "!=", "<", "<=", ">", ">=")


class QuerySyntaxError(ValueError):
    def __init__(self, message: str, text: str = "", pos: Optional[int] = None):
        self.pos = pos
        if pos is not None:
            line = text.count("\n", 0, pos) + 1
            col = pos - (text.rfind("\n", 0, pos) + 1) + 1
            self.line, self.column = line, col
            message = f"{message} at line {line}, column {col}"
        super().__init__(message)


class TemplateError(ValueError):
    pass


class FilterTypeError(Exception):
    """Raised inside filter evaluation; eliminates the binding."""


@dataclass(frozen=True)
class Cast:
    """``xsd:integer(?v)``"""

    var: Var


Operand = Union[Var, IRI, Literal, Cast]
TriplePattern = Tuple[PatternTerm, PatternTerm, PatternTerm]


@dataclass(frozen=True)
class FilterExpr:
    left: Operand
    op: str
    right: Operand

    def variables(self) -> List[str]:
        out = []
        for side in (self.left, self.right):
            if isinstance(side, Var):
                out.append(side.name)
            elif isinstance(side, Cast):
                out.append(side.var.name)
        return out


@dataclass(frozen=True)
class GroupPattern:
    triples: Tuple[TriplePattern, ...] = ()
    filters: Tuple[FilterExpr, ...] = ()
    minus: Optional["GroupPattern"] = None

    def variables(self) -> set:
        return {t.name for pat in self.triples for t in pat if isinstance(t, Var)}


@dataclass(frozen=True)
class Query:
    form: str  # "ASK" | "SELECT"
    body: GroupPattern = field(default_factory=GroupPattern)
    distinct: bool = False
    projection: Tuple[Var, ...] = ()


# --------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?:\s+|\#[^\n]*)*
    (?:
    (?P<end>\Z)
  | (?P<iri><[^<>\s"{}]*>)
  | (?P<str>"(?:[^"\\\n]|\\.)*")(?:\^\^(?P<dt>[A-Za-z_][\w\-]*:[A-Za-z]+|integer|decimal|string))?
  | (?P<num>[+-]?\d+(?:\.\d+)?)
  | (?P<var>[?$][A-Za-z_]\w*)
  | (?P<op>!=|<=|>=|=|<|>)
  | (?P<punct>[{}().])
  | (?P<pname>[A-Za-z_][\w\-]*:(?:[A-Za-z0-9_][\w\-]*)?)
  | (?P<word>[A-Za-z]+)
    )
    """,
    re.VERBOSE,
)
_SKIP_RE = re.compile(r"(?:\s+|\#[^\n]*)*")
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


class _Tok(NamedTuple):
    kind: str
    text: str
    pos: int
    dt: Optional[str] = None


def _lex(text: str) -> List[_Tok]:
    toks = []
    pos = 0
    for m in _TOKEN_RE.finditer(text):
        if m.start() != pos:
            pos = _SKIP_RE.match(text, pos).end()
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind == "end":
            break
        if kind == "dt":
            toks.append(_Tok("str", m.group("str"), m.start("str"), m.group("dt")))
        else:
            toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), body)


# --------------------------------------------------------------------------
# parser

# Terms are immutable, so parsed queries can share instances.
_iri = lru_cache(maxsize=4096)(IRI)
_var = lru_cache(maxsize=1024)(Var)


class _Parser:
    def __init__(self, text: str, prefixes: Mapping[str, str]):
        self.text = text
        self.toks = _lex(text)
        self.i = 0
        self.prefixes = dict(prefixes)

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: Optional[_Tok] = None):
        tok = tok or self.peek()
        found = tok.text or "end of input"
        raise QuerySyntaxError(f"{message}, found {found!r}", self.text, tok.pos)

    def is_word(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "word" and tok.text.upper() == word

    def expect_word(self, word: str) -> None:
        if not self.is_word(word):
            self.error(f"expected {word}")
        self.next()

    def expect_punct(self, p: str) -> None:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != p:
            self.error(f"expected {p!r}")
        self.next()

    def is_punct(self, p: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text == p

    # ---

    def query(self) -> Query:
        while self.is_word("PREFIX"):
            self.next()
            tok = self.next()
            if tok.kind != "pname" or not tok.text.endswith(":"):
                self.error("expected prefix name", tok)
            iri = self.next()
            if iri.kind != "iri":
                self.error("expected <iri>", iri)
            self.prefixes[tok.text[:-1]] = iri.text[1:-1]
        if self.is_word("ASK"):
            self.next()
            q = Query("ASK", self.group(depth=0))
        elif self.is_word("SELECT"):
            self.next()
            distinct = False
            if self.is_word("DISTINCT"):
                self.next()
                distinct = True
            projection = []
            while self.peek().kind == "var":
                projection.append(Var(self.next().text[1:]))
            if not projection:
                self.error("expected projected variable")
            if self.is_word("WHERE"):
                self.next()
            start = self.peek()
            body = self.group(depth=0)
            bound = body.variables()
            for v in projection:
                if v.name not in bound:
                    raise QuerySyntaxError(
                        f"variable ?{v.name} is projected but not used in the body", self.text, start.pos
                    )
            q = Query("SELECT", body, distinct, tuple(projection))
        else:
            self.error("expected ASK or SELECT")
        if self.peek().kind != "eof":
            self.error("unexpected trailing input")
        return q

    def group(self, depth: int) -> GroupPattern:
        self.expect_punct("{")
        triples: List[TriplePattern] = []
        filters: List[Tuple[FilterExpr, _Tok]] = []
        minus: Optional[GroupPattern] = None
        while not self.is_punct("}"):
            tok = self.peek()
            if tok.kind == "eof":
                self.error("unterminated group, expected '}'")
            if self.is_word("FILTER"):
                self.next()
                self.expect_punct("(")
                filters.append((self.expr(), tok))
                self.expect_punct(")")
            elif self.is_word("MINUS"):
                if depth >= 1:
                    self.error("MINUS may not be nested")
                if minus is not None:
                    self.error("only one MINUS group is allowed")
                self.next()
                minus = self.group(depth + 1)
            elif self.is_punct("."):
                self.next()
            else:
                triples.append(self.triple())
        self.next()
        g = GroupPattern(tuple(triples), tuple(f for f, _ in filters), minus)
        bound = g.variables()
        for f, tok in filters:
            if not any(v in bound for v in f.variables()):
                raise QuerySyntaxError("filter references no variable bound in its group", self.text, tok.pos)
        return g

    def triple(self) -> TriplePattern:
        start = self.peek()
        s, p, o = self.term(), self.term(), self.term()
        if isinstance(s, Literal) or isinstance(p, Literal):
            self.error("subject and predicate cannot be literals", start)
        return (s, p, o)

    def resolve(self, tok: _Tok) -> IRI:
        prefix, _, local = tok.text.partition(":")
        if prefix not in self.prefixes:
            raise QuerySyntaxError(f"unknown prefix {prefix!r}", self.text, tok.pos)
        return _iri(self.prefixes[prefix] + local)

    def literal(self, tok: _Tok) -> Literal:
        if tok.kind == "num":
            return Literal(tok.text, "decimal" if "." in tok.text else "integer")
        lexical = _unescape(tok.text[1:-1])
        datatype = "string"
        if tok.dt:
            name = tok.dt
            if ":" in name:
                iri = self.resolve(_Tok("pname", name, tok.pos))
                if not iri.value.startswith(XSD):
                    raise QuerySyntaxError(f"unsupported datatype {name}", self.text, tok.pos)
                name = iri.value[len(XSD):]
            datatype = name
        try:
            return Literal(lexical, datatype)
        except ValueError as exc:
            raise QuerySyntaxError(str(exc), self.text, tok.pos) from None

    def term(self) -> PatternTerm:
        tok = self.next()
        if tok.kind == "var":
            return _var(tok.text[1:])
        if tok.kind == "iri":
            body = tok.text[1:-1]
            if not body:
                self.error("empty IRI", tok)
            return _iri(body)
        if tok.kind == "pname":
            if tok.text.endswith(":"):
                self.error("expected local name", tok)
            return self.resolve(tok)
        if tok.kind in ("num", "str"):
            return self.literal(tok)
        self.error("expected a term", tok)

    def operand(self) -> Operand:
        tok = self.peek()
        if tok.kind == "pname" and self.toks[self.i + 1].text == "(":
            fn = self.resolve(self.next())
            if fn.value != XSD + "integer":
                self.error("only xsd:integer() is supported", tok)
            self.expect_punct("(")
            var = self.next()
            if var.kind != "var":
                self.error("expected variable", var)
            self.expect_punct(")")
            return Cast(Var(var.text[1:]))
        return self.term()

    def expr(self) -> FilterExpr:
        left = self.operand()
        tok = self.next()
        if tok.kind != "op":
            self.error("expected comparison operator", tok)
        right = self.operand()
        return FilterExpr(left, tok.text, right)


def parse_query(text: str, prefixes: Optional[Mapping[str, str]] = None) -> Query:
    table = dict(QUERY_PREFIXES)
    if prefixes:
        table.update(prefixes)
    return _parse_cached(text, tuple(sorted(table.items())))


@lru_cache(maxsize=2048)
def _parse_cached(text: str, prefixes: Tuple[Tuple[str, str], ...]) -> Query:
    # Query trees are frozen, so one parse can serve every caller.
    return _Parser(text, dict(prefixes)).query()


# --------------------------------------------------------------------------
# evaluation

def _value(operand: Operand, binding: Binding) -> Term:
    if isinstance(operand, Var):
        if operand.name not in binding:
            raise FilterTypeError(f"?{operand.name} is unbound")
        return binding[operand.name]
    if isinstance(operand, Cast):
        value = _value(operand.var, binding)
        if isinstance(value, Literal):
            if value.datatype == "integer":
                return value
            if value.datatype == "decimal":
                return Literal(str(int(Decimal(value.lexical))), "integer")
            if re.fullmatch(r"[+-]?\d+", value.lexical):
                return Literal(value.lexical, "integer")
        raise FilterTypeError(f"cannot cast {value} to integer")
    return operand


def _compare(op: str, a, b) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def eval_filter(expr: FilterExpr, binding: Binding) -> bool:
    """Raise FilterTypeError when the comparison is undefined."""
    a, b = _value(expr.left, binding), _value(expr.right, binding)
    if isinstance(a, Literal) and isinstance(b, Literal):
        if a.is_numeric and b.is_numeric:
            return _compare(expr.op, a.numeric_value(), b.numeric_value())
        if not a.is_numeric and not b.is_numeric:
            return _compare(expr.op, a.lexical, b.lexical)
    elif isinstance(a, IRI) and isinstance(b, IRI) and expr.op in ("=", "!="):
        return _compare(expr.op, a, b)
    if expr.op == "=":
        return False
    if expr.op == "!=":
        return True
    raise FilterTypeError(f"cannot order {a} and {b}")


def _passes(filters: Sequence[FilterExpr], binding: Binding) -> bool:
    for f in filters:
        try:
            if not eval_filter(f, binding):
                return False
        except FilterTypeError as exc:
            log.debug("filter error eliminates binding: %s", exc)
            return False
    return True


def _removed_by(binding: Binding, other: Binding) -> bool:
    shared = binding.keys() & other.keys()
    return bool(shared) and all(binding[k] == other[k] for k in shared)


def solutions(graph: Graph, group: GroupPattern) -> List[Binding]:
    """Every binding satisfying the group, MINUS applied."""
    guards = [(frozenset(f.variables()), lambda b, f=f: _passes((f,), b)) for f in group.filters]
    rows = match_pattern(graph, group.triples, guards=guards)
    if group.minus is not None and rows:
        excluded = solutions(graph, group.minus)
        rows = [r for r in rows if not any(_removed_by(r, m) for m in excluded)]
    return rows


def eval_ask(graph: Graph, query: Query) -> bool:
    if query.form != "ASK":
        raise ValueError("eval_ask needs an ASK query")
    return bool(solutions(graph, query.body))


def eval_select(graph: Graph, query: Query) -> List[Dict[str, Term]]:
    if query.form != "SELECT":
        raise ValueError("eval_select needs a SELECT query")
    names = [v.name for v in query.projection]
    rows = [tuple(r[n] for n in names) for r in solutions(graph, query.body)]
    if query.distinct:
        rows = list(dict.fromkeys(rows))
    rows.sort(key=lambda row: tuple(term_key(t) for t in row))
    return [dict(zip(names, row)) for row in rows]


# --------------------------------------------------------------------------
# text rendering

_LOCAL_RE = re.compile(r"[A-Za-z0-9_][\w\-]*\Z")


def format_term(term: Union[PatternTerm, Cast], prefixes: Optional[Mapping[str, str]] = None) -> str:
    if isinstance(term, Var):
        return f"?{term.name}"
    if isinstance(term, Cast):
        return f"xsd:integer(?{term.var.name})"
    if isinstance(term, Literal):
        if term.datatype in ("integer", "decimal"):
            return term.lexical
        body = term.lexical.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
        return f'"{body}"'
    if prefixes:
        for prefix, base in sorted(prefixes.items(), key=lambda kv: -len(kv[1])):
            local = term.value[len(base):]
            if term.value.startswith(base) and _LOCAL_RE.match(local):
                return f"{prefix}:{local}"
    return f"<{term.value}>"


def _group_lines(group: GroupPattern, indent: str, prefixes) -> List[str]:
    lines = [indent + " ".join(format_term(t, prefixes) for t in pat) for pat in group.triples]
    for f in group.filters:
        lines.append(
            f"{indent}FILTER ({format_term(f.left, prefixes)} {f.op} {format_term(f.right, prefixes)})"
        )
    if group.minus is not None:
        lines.append(indent + "MINUS {")
        lines += _group_lines(group.minus, indent + "  ", prefixes)
        lines.append(indent + "}")
    return lines


def serialize_query(query: Query, prefixes: Optional[Mapping[str, str]] = None) -> str:
    """Render a query; qualified names are only used for prefixes that
    ``parse_query`` resolves by default."""
    if prefixes is None:
        prefixes = QUERY_PREFIXES
    if query.form == "ASK":
        head = "ASK {"
    else:
        head = "SELECT " + ("DISTINCT " if query.distinct else "")
        head += " ".join(f"?{v.name}" for v in query.projection) + " WHERE {"
    return "\n".join([head, *_group_lines(query.body, "  ", prefixes), "}"])


_PLACEHOLDER_RE = re.compile(r"\{\{\s*([A-Za-z_]\w*)\s*\}\}")


def instantiate_template(template: str, params: Mapping[str, Term]) -> str:
    """Substitute ``{{name}}`` placeholders; the result must parse."""
    names = _PLACEHOLDER_RE.findall(template)
    if not names:
        return template
    missing = sorted(set(n for n in names if n not in params))
    if missing:
        raise TemplateError(f"no value for placeholder(s): {', '.join(missing)}")
    text = _PLACEHOLDER_RE.sub(lambda m: format_term(params[m.group(1)]), template)
    try:
        parse_query(text)
    except QuerySyntaxError as exc:
        raise TemplateError(f"instantiated template does not parse: {exc}") from exc
    return text
