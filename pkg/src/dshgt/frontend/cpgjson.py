"""The ``dshgt-cpg/1`` JSON interchange format.

This is the entry point for graphs produced by other tools (for example a
Java or PHP frontend): anything that can emit this document can be sliced,
embedded and scored without the mini-C parser.

Document layout::

    {
      "version": "dshgt-cpg/1",
      "registry": {"node_types": [...], "edge_types": [...]},
      "nodes": [{"id": 1, "type": "METHOD", "code": "...", "name": ..., "line": ..., "file": ...}],
      "edges": [{"src": 1, "dst": 2, "type": "AST", "label": null}],
      "annotations": {"1": ["token", ...]}
    }

Type names resolve against the built-in registry first; names only declared
in the document registry are appended in document order.
"""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from ..errors import GraphError, SchemaError
from ..hetgraph import Cpg, CpgEdge, CpgNode, TypeRegistry

VERSION = "dshgt-cpg/1"

_NULLABLE_STR = {"type": ["string", "null"]}
SCHEMA = {
    "type": "object",
    "required": ["version", "nodes", "edges"],
    "additionalProperties": False,
    "properties": {
        "version": {"type": "string"},
        "registry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "node_types": {"type": "array", "items": {"type": "string"}},
                "edge_types": {"type": "array", "items": {"type": "string"}},
            },
        },
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "type"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "type": {"type": "string"},
                    "code": {"type": "string"},
                    "name": _NULLABLE_STR,
                    "line": {"type": ["integer", "null"], "minimum": 1},
                    "file": _NULLABLE_STR,
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["src", "dst", "type"],
                "additionalProperties": False,
                "properties": {
                    "src": {"type": "integer", "minimum": 0},
                    "dst": {"type": "integer", "minimum": 0},
                    "type": {"type": "string"},
                    "label": _NULLABLE_STR,
                },
            },
        },
        "annotations": {
            "type": "object",
            "patternProperties": {"^[0-9]+$": {"type": "array", "items": {"type": "string"}}},
            "additionalProperties": False,
        },
    },
}
_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _edge_sort_key(g: Cpg, e: CpgEdge):
    return (e.src, e.dst, e.edge_type, e.label is not None, e.label or "")


def export_cpg(g: Cpg) -> dict:
    reg = g.registry
    nodes = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        nodes.append({
            "id": n.id,
            "type": reg.node_type_names[n.node_type],
            "code": n.code,
            "name": n.name,
            "line": n.line,
            "file": n.file,
        })
    edges = [
        {"src": e.src, "dst": e.dst, "type": reg.edge_type_names[e.edge_type], "label": e.label}
        for e in sorted(g.edges, key=lambda e: _edge_sort_key(g, e))
    ]
    return {
        "version": VERSION,
        "registry": reg.to_dict(),
        "nodes": nodes,
        "edges": edges,
        "annotations": {str(k): list(g.annotations[k]) for k in sorted(g.annotations)},
    }


def import_cpg(doc: dict) -> Cpg:
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.path) or "<root>"
        raise SchemaError(f"schema violation at {where}: {err.message}")
    if doc["version"] != VERSION:
        raise SchemaError(f"version mismatch: expected {VERSION!r}, got {doc['version']!r}")

    reg = TypeRegistry()
    declared = doc.get("registry", {})
    for name in declared.get("node_types", []):
        reg.ensure_node_type(name)
    for name in declared.get("edge_types", []):
        reg.ensure_edge_type(name)

    g = Cpg(reg)
    for rec in doc["nodes"]:
        if not reg.has_node_type(rec["type"]):
            raise SchemaError(f"node {rec['id']}: undeclared node type {rec['type']!r}")
        try:
            g.add_node(CpgNode(
                rec["id"], reg.node_type(rec["type"]), rec.get("code", ""),
                rec.get("name"), rec.get("line"), rec.get("file"),
            ))
        except GraphError as exc:
            raise SchemaError(str(exc)) from None
    for rec in doc["edges"]:
        if not reg.has_edge_type(rec["type"]):
            raise SchemaError(f"edge {rec['src']}->{rec['dst']}: undeclared edge type {rec['type']!r}")
        try:
            g.add_edge(CpgEdge(rec["src"], rec["dst"], reg.edge_type(rec["type"]), rec.get("label")))
        except GraphError as exc:
            raise SchemaError(str(exc)) from None
    for key, tokens in doc.get("annotations", {}).items():
        mid = int(key)
        if mid not in g.nodes:
            raise SchemaError(f"annotation for missing node {mid}")
        g.annotations[mid] = list(tokens)
    return g


def dumps(doc: dict) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=1) + "\n"


def write_cpg(g: Cpg, path: str | Path) -> None:
    Path(path).write_text(dumps(export_cpg(g)), encoding="utf-8")


def read_cpg(path: str | Path) -> Cpg:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    return import_cpg(doc)
