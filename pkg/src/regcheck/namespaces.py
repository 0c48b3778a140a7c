"""IRI namespaces shared by the store, ontology, rulebase and pipeline layers."""

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
XSD = "http://www.w3.org/2001/XMLSchema#"

DT = "http://regcheck.org/ns/dt#"
ONTO = "http://regcheck.org/ns/onto#"
DEF = "http://regcheck.org/ns/def#"
PROC = "http://regcheck.org/ns/proc#"
RULE = "http://regcheck.org/ns/rule#"
SBVR = "http://regcheck.org/ns/sbvr#"
REEF = "http://www.cstb.fr/reef/#"
PROCESS = "http://regcheck.org/ns/process#"

RDF_TYPE = RDF + "type"
RDFS_SUBCLASS = RDFS + "subClassOf"
RDFS_LABEL = RDFS + "label"

# Always resolvable in .trp files.
BUILTIN_PREFIXES = {"rdf": RDF, "rdfs": RDFS}

# Resolvable in query text without declaration.
QUERY_PREFIXES = {
    "rdf": RDF,
    "rdfs": RDFS,
    "xsd": XSD,
    "dt": DT,
    "onto": ONTO,
    "def": DEF,
    "proc": PROC,
    "rule": RULE,
    "sbvr": SBVR,
    "reef": REEF,
    "process": PROCESS,
}
