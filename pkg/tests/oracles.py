"""Brute-force reference implementations used to check the engine.

Nothing here calls into the evaluation paths under test; only the data
classes (IRI, Literal, Var and the query AST) are shared.
"""

from __future__ import annotations

import itertools
import re
from decimal import Decimal

from regcheck.kgstore import IRI, Literal, Var
from regcheck.query import Cast

RDF_TYPE = IRI("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")
SUBCLASS = IRI("http://www.w3.org/2000/01/rdf-schema#subClassOf")


# --- pattern matching ---------------------------------------------------

def brute_match(statements, patterns):
    """Enumerate |statements|^k statement tuples and keep the consistent ones."""
    out = set()
    for combo in itertools.product(list(statements), repeat=len(patterns)):
        binding = {}
        ok = True
        for pattern, statement in zip(patterns, combo):
            for p, value in zip(pattern, statement):
                if isinstance(p, Var):
                    if binding.setdefault(p.name, value) != value:
                        ok = False
                elif p != value:
                    ok = False
            if not ok:
                break
        if ok:
            out.add(frozenset(binding.items()))
    return [dict(b) for b in out]


def canon(bindings):
    """Order-free, comparable form of a list of bindings."""
    return sorted(sorted((k, repr(v)) for k, v in b.items()) for b in bindings)


# --- filters ------------------------------------------------------------

class _Err(Exception):
    pass


def _tagged(term):
    if isinstance(term, IRI):
        return ("iri", term.value)
    if term.datatype == "integer":
        return ("num", int(term.lexical))
    if term.datatype == "decimal":
        return ("num", Decimal(term.lexical))
    return ("str", term.lexical)


def _operand(op, binding):
    if isinstance(op, Var):
        if op.name not in binding:
            raise _Err
        return _tagged(binding[op.name])
    if isinstance(op, Cast):
        if op.var.name not in binding:
            raise _Err
        term = binding[op.var.name]
        if isinstance(term, IRI):
            raise _Err
        if term.datatype == "integer":
            return ("num", int(term.lexical))
        if term.datatype == "decimal":
            return ("num", int(Decimal(term.lexical)))
        if re.fullmatch(r"[+-]?\d+", term.lexical):
            return ("num", int(term.lexical))
        raise _Err
    return _tagged(op)


_OPS = {
    "=": lambda a, b: a == b, "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b, ">=": lambda a, b: a >= b,
}


def filter_holds(f, binding):
    try:
        (ta, a), (tb, b) = _operand(f.left, binding), _operand(f.right, binding)
    except _Err:
        return False
    if ta == tb and ta in ("num", "str"):
        return _OPS[f.op](a, b)
    if ta == tb == "iri" and f.op in ("=", "!="):
        return _OPS[f.op](a, b)
    if f.op == "=":
        return False
    if f.op == "!=":
        return True
    return False


# --- queries ------------------------------------------------------------

def brute_group(statements, group):
    rows = brute_match(statements, group.triples)
    rows = [r for r in rows if all(filter_holds(f, r) for f in group.filters)]
    if group.minus is not None:
        excluded = brute_group(statements, group.minus)
        kept = []
        for r in rows:
            removed = False
            for m in excluded:
                shared = set(r) & set(m)
                if shared and all(r[k] == m[k] for k in shared):
                    removed = True
                    break
            if not removed:
                kept.append(r)
        rows = kept
    return rows


def brute_ask(statements, query):
    return len(brute_group(statements, query.body)) > 0


def brute_select(statements, query):
    names = [v.name for v in query.projection]
    rows = [tuple(r[n] for n in names) for r in brute_group(statements, query.body)]
    if query.distinct:
        rows = list(set(rows))
    return sorted(tuple(repr(t) for t in row) for row in rows)


# --- hierarchies --------------------------------------------------------

def brute_closure(edges):
    """Reachability pairs by repeated relaxation to a fixpoint."""
    closure = set(edges)
    while True:
        new = {(a, d) for (a, b) in closure for (c, d) in closure if b == c} - closure
        if not new:
            return closure
        closure |= new


def is_minimal(edges):
    full = brute_closure(edges)
    return all(brute_closure(set(edges) - {e}) != full for e in edges)


# --- slope table ----------------------------------------------------------

def read_table(path):
    """{(slope, zone, situation): cm} straight from the TSV text."""
    rows = [l.split("\t") for l in open(path, encoding="utf-8").read().splitlines()
            if l.strip() and not l.startswith("#")]
    header = [h.split("/") for h in rows[0][1:]]
    cells = {}
    for row in rows[1:]:
        slope = int(row[0].replace("%", "").strip())
        for (zone, situation), cell in zip(header, row[1:]):
            cells[(slope, zone, situation)] = int(cell.replace("cm", "").strip())
    return cells


def compliant(cells, slope, zone, situation, recovery):
    return recovery >= cells[(slope, zone, situation)]


# --- random query cases ---------------------------------------------------

def random_query_case(rng, ns="http://ex/q#"):
    """A graph of at most 30 statements and a query with at most 3 body
    patterns, one FILTER and one MINUS group, all drawn from small pools so
    that matches are frequent."""
    from regcheck.kgstore import Triple
    from regcheck.query import FilterExpr, GroupPattern, Query

    nodes = [IRI(f"{ns}n{i}") for i in range(4)]
    preds = [IRI(f"{ns}p"), IRI(f"{ns}q")]
    lits = [Literal(str(i), "integer") for i in range(3)] + [Literal("2"), Literal("1.5", "decimal")]
    objects = nodes + lits
    graph = [Triple(rng.choice(nodes), rng.choice(preds), rng.choice(objects))
             for _ in range(rng.randint(0, 30))]

    def pattern(var_pool):
        s = Var(rng.choice(var_pool)) if rng.random() < 0.6 else rng.choice(nodes)
        p = Var(rng.choice(var_pool)) if rng.random() < 0.15 else rng.choice(preds)
        o = Var(rng.choice(var_pool)) if rng.random() < 0.6 else rng.choice(objects)
        return (s, p, o)

    def variables(triples):
        return sorted({t.name for pat in triples for t in pat if isinstance(t, Var)})

    def a_filter(triples):
        names = variables(triples)
        if not names or rng.random() < 0.5:
            return ()
        left = Var(rng.choice(names))
        if rng.random() < 0.3:
            left = Cast(left)
        if rng.random() < 0.3:
            right = Var(rng.choice(names))
        else:
            right = rng.choice(objects)
        if rng.random() < 0.5:
            left, right = right, left
        return (FilterExpr(left, rng.choice(["=", "!=", "<", "<=", ">", ">="]), right),)

    body_triples = tuple(pattern(["x", "y", "z"]) for _ in range(rng.randint(1, 3)))
    minus = None
    if rng.random() < 0.4:
        mt = tuple(pattern(["x", "y", "w"]) for _ in range(rng.randint(1, 2)))
        minus = GroupPattern(mt, a_filter(mt))
    body = GroupPattern(body_triples, a_filter(body_triples), minus)
    names = variables(body_triples)
    if names and rng.random() < 0.5:
        proj = tuple(Var(n) for n in rng.sample(names, rng.randint(1, len(names))))
        query = Query("SELECT", body, rng.random() < 0.5, proj)
    else:
        query = Query("ASK", body)
    return graph, query
