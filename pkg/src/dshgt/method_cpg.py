"""Method-level slicing and identifier symbolization.

Each METHOD node seeds two depth-first traversals, one along outgoing edges
and one along incoming edges.  The union of both visited sets (plus the
method itself) induces the method-level CPG.  Symbolization then replaces
user-defined function names with ``METHODn`` and variable names with
``VARn``, numbered by first occurrence in node-id order.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .hetgraph import Cpg

METHOD = "METHOD"
_VAR_NODE_TYPES = ("LOCAL", "METHOD_PARAMETER_IN", "METHOD_PARAMETER_OUT", "IDENTIFIER", "MEMBER")
_SKIP_NODE_TYPES = ("FILE", "COMMENT")
_WORD_RE = re.compile(r'"(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z_0-9]*')


@dataclass
class MethodCpg:
    method_node: int
    graph: Cpg
    annotation: list[str] = field(default_factory=list)
    label: int | None = None
    origin: tuple[str | None, int | None] = (None, None)

    @property
    def method_name(self) -> str | None:
        return self.graph.nodes[self.method_node].name


@dataclass
class SymbolMap:
    method_renames: dict[str, str] = field(default_factory=dict)
    var_renames: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.method_renames) + len(self.var_renames)


def _dfs(g: Cpg, start: int, forward: bool, skip: frozenset[int]) -> set[int]:
    seen = {start}
    stack = [start]
    adjacency = g.out_adjacency if forward else g.in_adjacency
    while stack:
        n = stack.pop()
        # reversed push keeps pop order equal to edge insertion order
        for eid in reversed(adjacency[n]):
            e = g.edges[eid]
            if e.edge_type in skip:
                continue
            nxt = e.dst if forward else e.src
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def method_slice_nodes(g: Cpg, method: int, exclude_edge_types: Iterable[str] = ()) -> set[int]:
    skip = frozenset(g.registry.edge_type(t) for t in exclude_edge_types)
    return _dfs(g, method, True, skip) | _dfs(g, method, False, skip)


def slice_methods(g: Cpg, exclude_edge_types: Iterable[str] = ()) -> list[MethodCpg]:
    """One method-level CPG per METHOD node, in node-id order."""
    if not g.registry.has_node_type(METHOD):
        return []
    exclude = tuple(exclude_edge_types)
    out = []
    for mid in g.nodes_of_type(METHOD):
        keep = method_slice_nodes(g, mid, exclude)
        sub = g.induced_subgraph(keep)
        node = g.nodes[mid]
        out.append(MethodCpg(
            method_node=mid,
            graph=sub,
            annotation=list(g.annotations.get(mid, [])),
            origin=(node.file, node.line),
        ))
    return out


def _rename_text(text: str, mapping: dict[str, str]) -> str:
    def sub(m: re.Match) -> str:
        word = m.group()
        return mapping.get(word, word) if word[0] != '"' else word

    return _WORD_RE.sub(sub, text)


def symbolize(m: MethodCpg) -> tuple[MethodCpg, SymbolMap]:
    g = m.graph
    reg = g.registry
    method_t = reg.node_type(METHOD) if reg.has_node_type(METHOD) else -1
    var_types = {reg.node_type(t) for t in _VAR_NODE_TYPES if reg.has_node_type(t)}
    skip_types = {reg.node_type(t) for t in _SKIP_NODE_TYPES if reg.has_node_type(t)}

    method_names = {n.name for n in g.nodes.values() if n.node_type == method_t and n.name}
    var_names = {
        n.name for n in g.nodes.values()
        if n.node_type in var_types and n.name and n.name not in method_names
    }

    smap = SymbolMap()
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        if n.node_type in skip_types:
            continue
        words = [w.group() for w in _WORD_RE.finditer(n.code)]
        if n.name:
            words.append(n.name)
        for w in words:
            if w in method_names and w not in smap.method_renames:
                smap.method_renames[w] = f"METHOD{len(smap.method_renames) + 1}"
            elif w in var_names and w not in smap.var_renames:
                smap.var_renames[w] = f"VAR{len(smap.var_renames) + 1}"

    mapping = {**smap.var_renames, **smap.method_renames}
    new = g.induced_subgraph(g.nodes)
    for n in new.nodes.values():
        if n.node_type in skip_types:
            continue
        n.code = _rename_text(n.code, mapping)
        if n.name in mapping:
            n.name = mapping[n.name]
    out = MethodCpg(m.method_node, new, list(m.annotation), m.label, m.origin)
    return out, smap
