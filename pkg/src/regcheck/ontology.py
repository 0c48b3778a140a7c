"""Concept hierarchies: thesaurus import, redundancy removal, intersection
merge, and instance checks against defined concepts."""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

from .kgstore import IRI, Graph, Literal, Term, Triple, integer, subclass_closure
from .namespaces import DEF, DT, ONTO, RDF, RDF_TYPE, RDFS, RDFS_LABEL, RDFS_SUBCLASS, REEF

log = logging.getLogger(__name__)

Edge = Tuple[IRI, IRI]


class OntologyError(ValueError):
    pass


class DanglingReferenceError(OntologyError):
    pass


class CycleError(OntologyError):
    def __init__(self, message: str, cycle: Sequence[IRI]):
        self.cycle = list(cycle)
        super().__init__(f"{message}: {' -> '.join(str(c) for c in self.cycle)}")


@dataclass
class ThesaurusEntry:
    term: str
    broader: List[str] = field(default_factory=list)
    narrower: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class ConceptDef:
    """``defined`` is equivalent to the conjunction of its base concepts and
    restrictions. A restriction filler is either a concept IRI (some value of
    that type) or a literal (that exact value)."""

    defined: IRI
    base: Tuple[IRI, ...] = ()
    restrictions: Tuple[Tuple[IRI, Term], ...] = ()

    def __post_init__(self):
        if not self.base and not self.restrictions:
            raise OntologyError(f"definition of {self.defined} is empty")

    def component_concepts(self) -> List[IRI]:
        seen: List[IRI] = []
        for _, filler in self.restrictions:
            if isinstance(filler, IRI) and filler not in seen:
                seen.append(filler)
        return seen


@dataclass
class Ontology:
    concepts: Set[IRI] = field(default_factory=set)
    subclass_edges: Set[Edge] = field(default_factory=set)
    labels: Dict[IRI, str] = field(default_factory=dict)
    axioms: List[ConceptDef] = field(default_factory=list)
    properties: Set[IRI] = field(default_factory=set)
    # merged concept -> source concept it was aligned with
    alignments: Dict[IRI, IRI] = field(default_factory=dict)

    def validate(self) -> None:
        for child, parent in self.subclass_edges:
            for end in (child, parent):
                if end not in self.concepts:
                    raise OntologyError(f"edge endpoint {end} is not a concept")
        seen: Dict[str, IRI] = {}
        for iri, label in self.labels.items():
            key = canonical_label(label)
            if key in seen and seen[key] != iri:
                raise OntologyError(f"label {label!r} used by {seen[key]} and {iri}")
            seen[key] = iri

    def definition(self, concept: IRI) -> Optional[ConceptDef]:
        for d in self.axioms:
            if d.defined == concept:
                return d
        return None

    def by_label(self) -> Dict[str, IRI]:
        return {canonical_label(label): iri for iri, label in self.labels.items()}


# --------------------------------------------------------------------------
# labels

def canonical_label(label: str) -> str:
    """Lowercase, accent-folded, punctuation replaced by spaces, whitespace collapsed."""
    folded = unicodedata.normalize("NFKD", label)
    folded = "".join(c for c in folded if not unicodedata.combining(c))
    folded = "".join(c if c.isalnum() else " " for c in folded.lower())
    return " ".join(folded.split())


def mint_iri(label: str, base: str = REEF) -> IRI:
    """``"joint d'étanchéité"`` -> ``base + "JointDEtancheite"``."""
    words = canonical_label(label).split()
    if not words:
        raise OntologyError(f"cannot mint an IRI from label {label!r}")
    return IRI(base + "".join(w[:1].upper() + w[1:] for w in words))


# --------------------------------------------------------------------------
# thesaurus

def parse_thesaurus(text: str) -> List[ThesaurusEntry]:
    entries: List[ThesaurusEntry] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if line.startswith("TERM "):
            entries.append(ThesaurusEntry(line[5:].strip()))
            continue
        m = re.match(r"\s+(BT|NT)\s+(.+)$", line)
        if not m:
            raise OntologyError(f"line {lineno}: expected TERM, BT or NT")
        if not entries:
            raise OntologyError(f"line {lineno}: {m.group(1)} before any TERM")
        target = entries[-1].broader if m.group(1) == "BT" else entries[-1].narrower
        target.append(m.group(2).strip())
    return entries


def import_thesaurus(entries: Sequence[ThesaurusEntry], base: str = REEF) -> Ontology:
    onto = Ontology()
    index: Dict[str, IRI] = {}
    for entry in entries:
        key = canonical_label(entry.term)
        if not key:
            raise OntologyError("empty thesaurus term")
        if key in index:
            raise OntologyError(f"duplicate thesaurus term {entry.term!r}")
        iri = mint_iri(entry.term, base)
        index[key] = iri
        onto.concepts.add(iri)
        onto.labels[iri] = entry.term

    def lookup(owner: str, ref: str) -> IRI:
        key = canonical_label(ref)
        if key not in index:
            raise DanglingReferenceError(f"{owner!r} refers to unknown term {ref!r}")
        if key == canonical_label(owner):
            raise OntologyError(f"term {owner!r} refers to itself")
        return index[key]

    for entry in entries:
        me = index[canonical_label(entry.term)]
        for n in entry.narrower:
            onto.subclass_edges.add((lookup(entry.term, n), me))
        for b in entry.broader:
            onto.subclass_edges.add((me, lookup(entry.term, b)))
    for child, parent in onto.subclass_edges:
        if (parent, child) in onto.subclass_edges:
            raise OntologyError(
                f"contradictory relation between {onto.labels[child]!r} and {onto.labels[parent]!r}"
            )
    return onto


# --------------------------------------------------------------------------
# transitive reduction

def find_cycle(edges: Set[Edge]) -> Optional[List[IRI]]:
    adj: Dict[IRI, List[IRI]] = {}
    for a, b in sorted(edges):
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, [])
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in adj}
    for root in sorted(adj):
        if color[root] != WHITE:
            continue
        stack = [(root, iter(adj[root]))]
        path = [root]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
                path.pop()
            elif color[nxt] == GREY:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(adj[nxt])))
                path.append(nxt)
    return None


def reduce_edges(edges: Set[Edge]) -> Set[Edge]:
    """Minimum equivalent edge set of a DAG.

    An edge u->v is redundant exactly when v is reachable from another
    direct successor of u.
    """
    cycle = find_cycle(edges)
    if cycle:
        raise CycleError("subclass hierarchy has a cycle", cycle)
    reach = subclass_closure(edges)
    succ: Dict[IRI, Set[IRI]] = {}
    for a, b in edges:
        succ.setdefault(a, set()).add(b)
    kept = set()
    for a, b in edges:
        if not any(b in reach[w] for w in succ[a] if w != b):
            kept.add((a, b))
    return kept


def transitive_reduction(onto: Ontology) -> Ontology:
    return Ontology(
        concepts=set(onto.concepts),
        subclass_edges=reduce_edges(set(onto.subclass_edges)),
        labels=dict(onto.labels),
        axioms=list(onto.axioms),
        properties=set(onto.properties),
        alignments=dict(onto.alignments),
    )


# --------------------------------------------------------------------------
# merge

def merge_intersection(reef: Ontology, dt: Ontology) -> Ontology:
    """Keep every ``dt`` concept; reef concepts survive only through a label
    match, under the dt IRI. Reef edges between surviving concepts are added
    and the union is reduced again."""
    dt_by_label = dt.by_label()
    mapping: Dict[IRI, IRI] = {}
    for iri in sorted(reef.concepts):
        label = reef.labels.get(iri)
        if label is None:
            continue
        target = dt_by_label.get(canonical_label(label))
        if target is not None:
            mapping[iri] = target

    alignments = dict(dt.alignments)
    for src, target in mapping.items():
        if src != target:
            alignments[target] = src

    edges = set(dt.subclass_edges)
    for child, parent in sorted(reef.subclass_edges):
        if child in mapping and parent in mapping:
            edge = (mapping[child], mapping[parent])
            if edge[0] == edge[1]:
                continue
            if edge in edges:
                log.warning("merge: redundant hierarchy edge %s < %s", *edge)
            edges.add(edge)

    cycle = find_cycle(edges)
    if cycle:
        raise CycleError("merge introduces a cycle", cycle)
    reduced = reduce_edges(edges)
    for edge in sorted(edges - reduced):
        if edge not in dt.subclass_edges:
            log.warning("merge: reef edge %s < %s is implied by the merged hierarchy", *edge)

    return Ontology(
        concepts=set(dt.concepts),
        subclass_edges=reduced,
        labels=dict(dt.labels),
        axioms=list(dt.axioms),
        properties=set(dt.properties),
        alignments=alignments,
    )


# --------------------------------------------------------------------------
# defined concepts

def classify_instance(graph: Graph, instance: IRI, definition: ConceptDef) -> bool:
    """Check ``instance`` against a definition; ``graph`` must already be closed."""
    rdf_type = IRI(RDF_TYPE)
    for concept in definition.base:
        if Triple(instance, rdf_type, concept) not in graph:
            return False
    for prop, filler in definition.restrictions:
        if isinstance(filler, Literal):
            if Triple(instance, prop, filler) not in graph:
                return False
            continue
        values = graph.objects(instance, prop)
        if not any(isinstance(v, IRI) and Triple(v, rdf_type, filler) in graph for v in values):
            return False
    return True


# --------------------------------------------------------------------------
# graph encoding

_CLASS = IRI(RDFS + "Class")
_PROPERTY = IRI(RDF + "Property")
_TYPE = IRI(RDF_TYPE)
_LABEL = IRI(RDFS_LABEL)
_SUB = IRI(RDFS_SUBCLASS)
_CONCEPT_DEF = IRI(ONTO + "ConceptDef")
_DEFINES = IRI(ONTO + "defines")
_BASE = IRI(ONTO + "base")
_RESTRICTION = IRI(ONTO + "restriction")
_ON_PROPERTY = IRI(ONTO + "onProperty")
_SOME = IRI(ONTO + "someValuesFrom")
_HAS_VALUE = IRI(ONTO + "hasValue")
_INDEX = IRI(ONTO + "index")
_ALIGNED = IRI(ONTO + "alignedWith")


def _local(iri: IRI) -> str:
    return re.split(r"[#/:]", iri.value)[-1] or "x"


def definition_triples(d: ConceptDef, base: str = DEF) -> List[Triple]:
    node = IRI(base + _local(d.defined))
    out = [Triple(node, _TYPE, _CONCEPT_DEF), Triple(node, _DEFINES, d.defined)]
    out += [Triple(node, _BASE, b) for b in d.base]
    for i, (prop, filler) in enumerate(d.restrictions, start=1):
        r = IRI(f"{node.value}_r{i}")
        out.append(Triple(node, _RESTRICTION, r))
        out.append(Triple(r, _INDEX, integer(i)))
        out.append(Triple(r, _ON_PROPERTY, prop))
        out.append(Triple(r, _HAS_VALUE if isinstance(filler, Literal) else _SOME, filler))
    return out


def ontology_to_graph(onto: Ontology) -> Graph:
    g = Graph(prefixes={"onto": ONTO, "def": DEF, "dt": DT, "reef": REEF})
    for c in sorted(onto.concepts):
        g.add(Triple(c, _TYPE, _CLASS))
        if c in onto.labels:
            g.add(Triple(c, _LABEL, Literal(onto.labels[c])))
    for p in sorted(onto.properties):
        g.add(Triple(p, _TYPE, _PROPERTY))
        if p in onto.labels:
            g.add(Triple(p, _LABEL, Literal(onto.labels[p])))
    for child, parent in sorted(onto.subclass_edges):
        g.add(Triple(child, _SUB, parent))
    for c, src in sorted(onto.alignments.items()):
        g.add(Triple(c, _ALIGNED, src))
    for d in onto.axioms:
        g.update(definition_triples(d))
    return g


def _index_of(graph: Graph, node: IRI) -> int:
    v = graph.value(node, _INDEX)
    if not isinstance(v, Literal) or v.datatype != "integer":
        raise OntologyError(f"restriction {node} lacks an integer onto:index")
    return int(v.lexical)


def definitions_from_graph(graph: Graph) -> List[ConceptDef]:
    defs = []
    for node in graph.subjects(_TYPE, _CONCEPT_DEF):
        defined = graph.value(node, _DEFINES)
        if not isinstance(defined, IRI):
            raise OntologyError(f"concept definition {node} lacks onto:defines")
        bases = tuple(b for b in graph.objects(node, _BASE) if isinstance(b, IRI))
        restrictions = []
        for r in sorted(graph.objects(node, _RESTRICTION), key=lambda r: _index_of(graph, r)):
            prop = graph.value(r, _ON_PROPERTY)
            filler = graph.value(r, _SOME) or graph.value(r, _HAS_VALUE)
            if not isinstance(prop, IRI) or filler is None:
                raise OntologyError(f"restriction {r} needs onto:onProperty and a filler")
            restrictions.append((prop, filler))
        defs.append(ConceptDef(defined, bases, tuple(restrictions)))
    return defs


def ontology_from_graph(graph: Graph) -> Ontology:
    onto = Ontology()
    for t in graph.triples(p=_TYPE, o=_CLASS):
        onto.concepts.add(t.subject)
    for t in graph.triples(p=_TYPE, o=_PROPERTY):
        onto.properties.add(t.subject)
    for t in graph.triples(p=_SUB):
        if isinstance(t.object, IRI):
            onto.subclass_edges.add((t.subject, t.object))
            onto.concepts.update((t.subject, t.object))
    for t in graph.triples(p=_LABEL):
        if t.subject in onto.concepts or t.subject in onto.properties:
            onto.labels[t.subject] = t.object.lexical if isinstance(t.object, Literal) else t.object.value
    for t in graph.triples(p=_ALIGNED):
        if isinstance(t.object, IRI):
            onto.alignments[t.subject] = t.object
    onto.axioms = definitions_from_graph(graph)
    return onto
