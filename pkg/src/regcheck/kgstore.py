"""Triple store: terms, an indexed statement set, the ``.trp`` file layer,
basic graph pattern matching and subclass/type closure."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

from .namespaces import BUILTIN_PREFIXES, RDF_TYPE, RDFS_SUBCLASS

DATATYPES = ("integer", "decimal", "string")

_INTEGER_RE = re.compile(r"[+-]?\d+\Z")
_DECIMAL_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)\Z")


class ParseError(ValueError):
    """Malformed input document; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_SPACE_RE = re.compile(r"\s")


@dataclass(frozen=True, order=True)
class IRI:
    value: str

    def __post_init__(self):
        if not self.value or _SPACE_RE.search(self.value):
            raise ValueError(f"invalid IRI {self.value!r}")

    def __str__(self) -> str:
        return self.value


def _canonical_decimal(lexical: str) -> str:
    d = Decimal(lexical) + 0
    text = format(d.normalize(), "f")
    if "." not in text:
        text += ".0"
    return text


@dataclass(frozen=True)
class Literal:
    """A typed literal. The lexical form is canonicalized on construction so
    that ``Literal("08", "integer") == Literal("8", "integer")``."""

    lexical: str
    datatype: str = "string"

    def __post_init__(self):
        if self.datatype not in DATATYPES:
            raise ValueError(f"unsupported datatype {self.datatype!r}")
        if self.datatype == "integer":
            if not _INTEGER_RE.match(self.lexical):
                raise ValueError(f"malformed integer literal {self.lexical!r}")
            object.__setattr__(self, "lexical", str(int(self.lexical)))
        elif self.datatype == "decimal":
            if not _DECIMAL_RE.match(self.lexical):
                raise ValueError(f"malformed decimal literal {self.lexical!r}")
            object.__setattr__(self, "lexical", _canonical_decimal(self.lexical))

    @property
    def is_numeric(self) -> bool:
        return self.datatype != "string"

    def numeric_value(self) -> Union[int, Decimal]:
        if self.datatype == "integer":
            return int(self.lexical)
        if self.datatype == "decimal":
            return Decimal(self.lexical)
        raise TypeError(f"string literal {self.lexical!r} has no numeric value")

    def __str__(self) -> str:
        return self.lexical


Term = Union[IRI, Literal]


@dataclass(frozen=True, order=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


PatternTerm = Union[IRI, Literal, Var]


class Triple(NamedTuple):
    subject: IRI
    predicate: IRI
    object: Term


def integer(value: int) -> Literal:
    return Literal(str(value), "integer")


def term_key(term: Term) -> tuple:
    """Total order over terms, by lexical form first."""
    if isinstance(term, IRI):
        return (term.value, 0, "")
    return (term.lexical, 1, term.datatype)


class Graph:
    """An indexed set of triples that remembers ingest order.

    Mutation is not synchronized: share a graph between threads read-only.
    """

    def __init__(self, triples: Iterable[Triple] = (), prefixes: Optional[Dict[str, str]] = None):
        self.prefixes: Dict[str, str] = dict(BUILTIN_PREFIXES)
        if prefixes:
            self.prefixes.update(prefixes)
        # dicts used as insertion-ordered sets
        self._all: Dict[Triple, None] = {}
        self._spo: Dict[IRI, Dict[IRI, Dict[Term, None]]] = {}
        self._pos: Dict[IRI, Dict[Term, Dict[IRI, None]]] = {}
        self._osp: Dict[Term, Dict[IRI, Dict[IRI, None]]] = {}
        for t in triples:
            self.add(t)

    def add(self, triple: Triple) -> bool:
        """Insert a triple; return False when it was already present."""
        s, p, o = triple
        if not isinstance(s, IRI) or not isinstance(p, IRI):
            raise TypeError("subject and predicate must be IRIs")
        if not isinstance(o, (IRI, Literal)):
            raise TypeError("object must be an IRI or a literal")
        if triple in self._all:
            return False
        triple = Triple(s, p, o)
        self._all[triple] = None
        self._spo.setdefault(s, {}).setdefault(p, {})[o] = None
        self._pos.setdefault(p, {}).setdefault(o, {})[s] = None
        self._osp.setdefault(o, {}).setdefault(s, {})[p] = None
        return True

    def update(self, triples: Iterable[Triple]) -> int:
        return sum(self.add(t) for t in triples)

    def copy(self) -> "Graph":
        g = Graph(prefixes=self.prefixes)
        g.update(self._all)
        return g

    def __len__(self) -> int:
        return len(self._all)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._all)

    def __contains__(self, triple) -> bool:
        return triple in self._all

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self._all.keys() == other._all.keys()

    def __repr__(self) -> str:
        return f"<Graph {len(self)} statements>"

    def triples(self, s: Optional[IRI] = None, p: Optional[IRI] = None,
                o: Optional[Term] = None) -> Iterator[Triple]:
        """Statements matching the given positions; None is a wildcard."""
        if s is not None:
            by_p = self._spo.get(s)
            if not by_p:
                return
            if p is not None:
                objs = by_p.get(p, {})
                if o is not None:
                    if o in objs:
                        yield Triple(s, p, o)
                    return
                for obj in objs:
                    yield Triple(s, p, obj)
                return
            if o is not None:
                for pred in self._osp.get(o, {}).get(s, {}):
                    yield Triple(s, pred, o)
                return
            for pred, objs in by_p.items():
                for obj in objs:
                    yield Triple(s, pred, obj)
            return
        if p is not None:
            by_o = self._pos.get(p)
            if not by_o:
                return
            if o is not None:
                for subj in by_o.get(o, {}):
                    yield Triple(subj, p, o)
                return
            for obj, subjs in by_o.items():
                for subj in subjs:
                    yield Triple(subj, p, obj)
            return
        if o is not None:
            for subj, preds in self._osp.get(o, {}).items():
                for pred in preds:
                    yield Triple(subj, pred, o)
            return
        yield from self._all

    def objects(self, s: IRI, p: IRI) -> List[Term]:
        return list(self._spo.get(s, {}).get(p, {}))

    def value(self, s: IRI, p: IRI) -> Optional[Term]:
        objs = self.objects(s, p)
        return objs[0] if objs else None

    def subjects(self, p: IRI, o: Term) -> List[IRI]:
        return list(self._pos.get(p, {}).get(o, {}))

    def expand(self, qname: str) -> str:
        prefix, _, local = qname.partition(":")
        if prefix not in self.prefixes:
            raise KeyError(prefix)
        return self.prefixes[prefix] + local


def insert(graph: Graph, triple: Triple) -> Graph:
    graph.add(triple)
    return graph


# --------------------------------------------------------------------------
# .trp file layer

_TOKEN_RE = re.compile(
    r"""
    \s*(?:
      (?P<iri><[^<>\s"]*>)
    | (?P<lit>"(?:[^"\\]|\\.)*")(?:\^\^(?P<dt>[A-Za-z]+))?
    | (?P<qname>[A-Za-z_][\w\-]*:[^\s<>"]*)
    | (?P<dot>\.)(?=\s|$)
    | (?P<bad>\S+)
    )""",
    re.VERBOSE,
)
_PREFIX_RE = re.compile(r"@prefix\s+([A-Za-z_][\w\-]*):\s*<([^<>\s]*)>\s*\.\s*$")
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}
_LOCAL_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_\-]*\Z")


def _unescape(body: str, lineno: int) -> str:
    if "\\" not in body:
        return body
    out = []
    it = iter(body)
    for c in it:
        if c == "\\":
            nxt = next(it, "")
            if nxt not in _ESCAPES:
                raise ParseError(f"bad escape \\{nxt}", lineno)
            out.append(_ESCAPES[nxt])
        else:
            out.append(c)
    return "".join(out)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")


def _tokenize_line(line: str, lineno: int, prefixes: Dict[str, str]) -> List[Union[Term, str]]:
    tokens: List[Union[Term, str]] = []
    pos = 0
    stripped = line.rstrip()
    while pos < len(stripped):
        m = _TOKEN_RE.match(stripped, pos)
        if m is None or m.end() == pos:
            break
        pos = m.end()
        kind = m.lastgroup
        if kind == "iri":
            body = m.group("iri")[1:-1]
            if not body:
                raise ParseError("empty IRI", lineno)
            tokens.append(IRI(body))
        elif kind in ("lit", "dt"):
            lexical = _unescape(m.group("lit")[1:-1], lineno)
            datatype = m.group("dt") or "string"
            try:
                tokens.append(Literal(lexical, datatype))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        elif kind == "qname":
            prefix, _, local = m.group("qname").partition(":")
            if prefix not in prefixes:
                raise ParseError(f"unknown prefix {prefix!r}", lineno)
            tokens.append(IRI(prefixes[prefix] + local))
        elif kind == "dot":
            tokens.append(".")
        else:
            raise ParseError(f"unexpected token {m.group('bad')!r}", lineno)
    return tokens


def parse_graph(text: str, graph: Optional[Graph] = None) -> Graph:
    """Parse a ``.trp`` document, optionally into an existing graph."""
    g = graph if graph is not None else Graph()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("@prefix"):
            m = _PREFIX_RE.match(line)
            if not m:
                raise ParseError("malformed @prefix declaration", lineno)
            g.prefixes[m.group(1)] = m.group(2)
            continue
        tokens = _tokenize_line(line, lineno, g.prefixes)
        if len(tokens) != 4 or tokens[3] != ".":
            raise ParseError("expected 'S P O .'", lineno)
        s, p, o = tokens[:3]
        if not isinstance(s, IRI) or not isinstance(p, IRI):
            raise ParseError("subject and predicate must be IRIs", lineno)
        if o == ".":
            raise ParseError("missing object", lineno)
        g.add(Triple(s, p, o))
    return g


def load_graph(path, graph: Optional[Graph] = None) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read(), graph)


def format_term(term: Term, prefixes: Optional[Dict[str, str]] = None) -> str:
    if isinstance(term, Literal):
        quoted = f'"{_escape(term.lexical)}"'
        return quoted if term.datatype == "string" else f"{quoted}^^{term.datatype}"
    if prefixes:
        best = None
        for prefix, base in prefixes.items():
            if term.value.startswith(base) and _LOCAL_RE.match(term.value[len(base):]):
                if best is None or len(base) > len(prefixes[best]):
                    best = prefix
        if best is not None:
            return f"{best}:{term.value[len(prefixes[best]):]}"
    return f"<{term.value}>"


def serialize_graph(graph: Graph, sort: bool = False) -> str:
    """Render as ``.trp``. Only prefixes actually used are declared."""
    triples = list(graph)
    if sort:
        triples.sort(key=lambda t: (term_key(t.subject), term_key(t.predicate), term_key(t.object)))
    body = []
    used = set()
    for t in triples:
        parts = [format_term(x, graph.prefixes) for x in t]
        used.update(p.split(":", 1)[0] for x, p in zip(t, parts) if isinstance(x, IRI) and not p.startswith("<"))
        body.append(" ".join(parts) + " .")
    head = [
        f"@prefix {p}: <{graph.prefixes[p]}> ."
        for p in sorted(used)
        if BUILTIN_PREFIXES.get(p) != graph.prefixes[p]
    ]
    lines = head + ([""] if head and body else []) + body
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# pattern matching

Pattern = Sequence[PatternTerm]
Binding = Dict[str, Term]


def _resolve(t: PatternTerm, binding: Binding) -> Optional[Term]:
    if isinstance(t, Var):
        return binding.get(t.name)
    return t


def _order_patterns(patterns: Sequence[Pattern]) -> List[Pattern]:
    """Greedy: next pattern is the one with the most positions already fixed."""
    remaining = [(pat, [t.name for t in pat if isinstance(t, Var)]) for pat in patterns]
    ordered: List[Pattern] = []
    bound: set = set()
    while remaining:
        best, best_score = 0, -1
        for i, (_, names) in enumerate(remaining):
            score = 3 - len(names) + sum(1 for n in names if n in bound)
            if score > best_score:
                best, best_score = i, score
        pat, names = remaining.pop(best)
        ordered.append(pat)
        bound.update(names)
    return ordered


Guard = Tuple[FrozenSet[str], Callable[[Binding], bool]]


def match_pattern(graph: Graph, patterns: Sequence[Pattern], initial: Optional[Binding] = None,
                  guards: Sequence[Guard] = ()) -> List[Binding]:
    """All bindings under which every pattern is a stored statement.

    Each guard ``(names, accept)`` is checked as soon as all of ``names``
    are bound (or once matching completes) and prunes the bindings it
    rejects.
    """
    ordered = _order_patterns(patterns)
    bound = set(initial or ())
    checks: List[List[Callable[[Binding], bool]]] = [[] for _ in range(len(ordered) + 1)]
    levels = []
    for pat in ordered:
        bound.update(t.name for t in pat if isinstance(t, Var))
        levels.append(set(bound))
    for names, accept in guards:
        level = next((i + 1 for i, b in enumerate(levels) if names <= b), len(ordered))
        checks[level].append(accept)
    results: List[Binding] = []

    def extend(i: int, binding: Binding) -> None:
        if any(not accept(binding) for accept in checks[i]):
            return
        if i == len(ordered):
            results.append(dict(binding))
            return
        s, p, o = ordered[i]
        rs, rp, ro = _resolve(s, binding), _resolve(p, binding), _resolve(o, binding)
        if (rs is not None and not isinstance(rs, IRI)) or (rp is not None and not isinstance(rp, IRI)):
            return
        for triple in graph.triples(rs, rp, ro):
            added = []
            ok = True
            for pt, value in zip((s, p, o), triple):
                if isinstance(pt, Var):
                    current = binding.get(pt.name)
                    if current is None:
                        binding[pt.name] = value
                        added.append(pt.name)
                    elif current != value:
                        ok = False
                        break
            if ok:
                extend(i + 1, binding)
            for name in added:
                del binding[name]

    extend(0, dict(initial or {}))
    return results


# --------------------------------------------------------------------------
# inference

def subclass_closure(edges: Iterable[tuple]) -> Dict[object, set]:
    """Map each node to every node reachable through one or more edges."""
    adj: Dict[object, list] = {}
    for child, parent in edges:
        adj.setdefault(child, []).append(parent)
        adj.setdefault(parent, [])
    reach: Dict[object, set] = {}
    for start in adj:
        seen: set = set()
        queue = deque(adj[start])
        while queue:
            node = queue.popleft()
            if node in seen:
                continue
            seen.add(node)
            queue.extend(adj[node])
        reach[start] = seen
    return reach


def infer_closure(graph: Graph) -> Graph:
    """Return a copy closed under subClassOf transitivity and type propagation.

    Cycles are closed over; reflexive subClassOf statements are only kept
    when already asserted.
    """
    closed = graph.copy()
    sub = IRI(RDFS_SUBCLASS)
    rdf_type = IRI(RDF_TYPE)
    edges = [(t.subject, t.object) for t in graph.triples(p=sub) if isinstance(t.object, IRI)]
    reach = subclass_closure(edges)
    for child, parents in reach.items():
        for parent in parents:
            if parent != child:
                closed.add(Triple(child, sub, parent))
    for t in list(closed.triples(p=rdf_type)):
        for parent in reach.get(t.object, ()):
            closed.add(Triple(t.subject, rdf_type, parent))
    return closed
