"""Typed multigraph used for code property graphs.

Node and edge types live in a :class:`TypeRegistry` that is seeded with the
standard CPG schema.  Registries only ever grow by appending, so an index
handed out once stays valid for the lifetime of the registry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import GraphError

NODE_TYPES: tuple[str, ...] = (
    "META_DATA",
    "FILE",
    "NAMESPACE",
    "NAMESPACE_BLOCK",
    "METHOD",
    "METHOD_PARAMETER_IN",
    "METHOD_PARAMETER_OUT",
    "METHOD_RETURN",
    "MEMBER",
    "TYPE",
    "TYPE_ARGUMENT",
    "TYPE_DECL",
    "TYPE_PARAMETER",
    "AST_NODE",
    "BLOCK",
    "CALL",
    "CALL_REPR",
    "CONTROL_STRUCTURE",
    "EXPRESSION",
    "FIELD_IDENTIFIER",
    "IDENTIFIER",
    "JUMP_LABEL",
    "JUMP_TARGET",
    "LITERAL",
    "LOCAL",
    "METHOD_REF",
    "MODIFIER",
    "RETURN",
    "TYPE_REF",
    "UNKNOWN",
    "CFG_NODE",
    "COMMENT",
    "FINDING",
    "KEY_VALUE_PAIR",
    "LOCATION",
    "TAG",
    "TAG_NODE_PAIR",
    "CONFIG_FILE",
    "BINDING",
    "ANNOTATION",
    "ANNOTATION_LITERAL",
    "ANNOTATION_PARAMETER",
    "ANNOTATION_PARAMETER_ASSIGN",
    "ARRAY_INITIALIZER",
    "DECLARATION",
)

EDGE_TYPES: tuple[str, ...] = (
    "SOURCE_FILE",
    "ALIAS_OF",
    "BINDS_TO",
    "INHERITS_FROM",
    "AST",
    "CONDITION",
    "ARGUMENT",
    "CALL",
    "RECEIVER",
    "CFG",
    "DOMINATE",
    "POST_DOMINATE",
    "CDG",
    "REACHING_DEF",
    "CONTAINS",
    "EVAL_TYPE",
    "PARAMETER_LINK",
    "TAGGED_BY",
    "BINDS",
    "REF",
)

FORWARD = 0
REVERSE = 1


class TypeRegistry:
    """Ordered, append-only name tables for node and edge types."""

    def __init__(
        self,
        node_type_names: Iterable[str] = NODE_TYPES,
        edge_type_names: Iterable[str] = EDGE_TYPES,
    ) -> None:
        self.node_type_names: list[str] = []
        self.edge_type_names: list[str] = []
        self._node_index: dict[str, int] = {}
        self._edge_index: dict[str, int] = {}
        for name in node_type_names:
            self.add_node_type(name)
        for name in edge_type_names:
            self.add_edge_type(name)

    @property
    def num_node_types(self) -> int:
        return len(self.node_type_names)

    @property
    def num_edge_types(self) -> int:
        return len(self.edge_type_names)

    @property
    def num_relations(self) -> int:
        """Edge types plus their reversed counterparts."""
        return 2 * len(self.edge_type_names)

    def add_node_type(self, name: str) -> int:
        if name in self._node_index:
            raise GraphError(f"duplicate node type {name!r}")
        self._node_index[name] = len(self.node_type_names)
        self.node_type_names.append(name)
        return self._node_index[name]

    def add_edge_type(self, name: str) -> int:
        if name in self._edge_index:
            raise GraphError(f"duplicate edge type {name!r}")
        self._edge_index[name] = len(self.edge_type_names)
        self.edge_type_names.append(name)
        return self._edge_index[name]

    def ensure_node_type(self, name: str) -> int:
        idx = self._node_index.get(name)
        return self.add_node_type(name) if idx is None else idx

    def ensure_edge_type(self, name: str) -> int:
        idx = self._edge_index.get(name)
        return self.add_edge_type(name) if idx is None else idx

    def node_type(self, name: str) -> int:
        try:
            return self._node_index[name]
        except KeyError:
            raise GraphError(f"unknown node type {name!r}") from None

    def edge_type(self, name: str) -> int:
        try:
            return self._edge_index[name]
        except KeyError:
            raise GraphError(f"unknown edge type {name!r}") from None

    def has_node_type(self, name: str) -> bool:
        return name in self._node_index

    def has_edge_type(self, name: str) -> bool:
        return name in self._edge_index

    def relation_name(self, relation: int) -> str:
        e = self.num_edge_types
        if relation < e:
            return self.edge_type_names[relation]
        return "rev_" + self.edge_type_names[relation - e]

    def copy(self) -> "TypeRegistry":
        return TypeRegistry(self.node_type_names, self.edge_type_names)

    def to_dict(self) -> dict:
        return {"node_types": list(self.node_type_names), "edge_types": list(self.edge_type_names)}

    @classmethod
    def from_dict(cls, data: dict) -> "TypeRegistry":
        return cls(data["node_types"], data["edge_types"])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TypeRegistry):
            return NotImplemented
        return (
            self.node_type_names == other.node_type_names
            and self.edge_type_names == other.edge_type_names
        )

    def __repr__(self) -> str:
        return f"TypeRegistry({self.num_node_types} node types, {self.num_edge_types} edge types)"


@dataclass
class CpgNode:
    id: int
    node_type: int
    code: str = ""
    name: str | None = None
    line: int | None = None
    file: str | None = None


@dataclass(frozen=True)
class CpgEdge:
    src: int
    dst: int
    edge_type: int
    label: str | None = None


@dataclass
class Cpg:
    """A code property graph: typed nodes, typed (possibly parallel) edges."""

    registry: TypeRegistry = field(default_factory=TypeRegistry)
    nodes: dict[int, CpgNode] = field(default_factory=dict)
    edges: list[CpgEdge] = field(default_factory=list)
    out_adjacency: dict[int, list[int]] = field(default_factory=dict)
    in_adjacency: dict[int, list[int]] = field(default_factory=dict)
    annotations: dict[int, list[str]] = field(default_factory=dict)
    _edge_keys: set = field(default_factory=set, repr=False)

    def add_node(self, node: CpgNode) -> int:
        if node.id in self.nodes:
            raise GraphError(f"duplicate id {node.id}")
        if not 0 <= node.node_type < self.registry.num_node_types:
            raise GraphError(f"unknown type index {node.node_type} for node {node.id}")
        self.nodes[node.id] = node
        self.out_adjacency[node.id] = []
        self.in_adjacency[node.id] = []
        return node.id

    def add_edge(self, edge: CpgEdge) -> int:
        """Insert an edge and return its position in :attr:`edges`."""
        for end in (edge.src, edge.dst):
            if end not in self.nodes:
                raise GraphError(f"dangling endpoint {end} in edge {edge.src}->{edge.dst}")
        if not 0 <= edge.edge_type < self.registry.num_edge_types:
            raise GraphError(f"unknown type index {edge.edge_type} for edge {edge.src}->{edge.dst}")
        key = (edge.src, edge.dst, edge.edge_type, edge.label)
        if key in self._edge_keys:
            raise GraphError(
                f"parallel edge {edge.src}->{edge.dst} of type "
                f"{self.registry.edge_type_names[edge.edge_type]} label {edge.label!r}"
            )
        self._edge_keys.add(key)
        eid = len(self.edges)
        self.edges.append(edge)
        self.out_adjacency[edge.src].append(eid)
        self.in_adjacency[edge.dst].append(eid)
        return eid

    def has_edge(self, src: int, dst: int, edge_type: int, label: str | None = None) -> bool:
        return (src, dst, edge_type, label) in self._edge_keys

    # convenience wrappers used by builders
    def new_node(self, node_id: int, type_name: str, code: str = "", **attrs) -> CpgNode:
        node = CpgNode(node_id, self.registry.node_type(type_name), code, **attrs)
        self.add_node(node)
        return node

    def connect(self, src: int, dst: int, type_name: str, label: str | None = None) -> int:
        return self.add_edge(CpgEdge(src, dst, self.registry.edge_type(type_name), label))

    def node_type_name(self, node_id: int) -> str:
        return self.registry.node_type_names[self.nodes[node_id].node_type]

    def successors(self, node_id: int) -> Iterator[int]:
        for eid in self.out_adjacency[node_id]:
            yield self.edges[eid].dst

    def predecessors(self, node_id: int) -> Iterator[int]:
        for eid in self.in_adjacency[node_id]:
            yield self.edges[eid].src

    def out_edges(self, node_id: int, type_name: str | None = None) -> list[CpgEdge]:
        want = None if type_name is None else self.registry.edge_type(type_name)
        return [
            self.edges[eid]
            for eid in self.out_adjacency[node_id]
            if want is None or self.edges[eid].edge_type == want
        ]

    def in_edges(self, node_id: int, type_name: str | None = None) -> list[CpgEdge]:
        want = None if type_name is None else self.registry.edge_type(type_name)
        return [
            self.edges[eid]
            for eid in self.in_adjacency[node_id]
            if want is None or self.edges[eid].edge_type == want
        ]

    def nodes_of_type(self, type_name: str) -> list[int]:
        t = self.registry.node_type(type_name)
        return sorted(nid for nid, n in self.nodes.items() if n.node_type == t)

    def sorted_ids(self) -> list[int]:
        return sorted(self.nodes)

    def validate(self) -> None:
        """Full consistency pass over nodes, edges and both adjacency indexes."""
        out_expect: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        in_expect: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        for eid, e in enumerate(self.edges):
            if e.src not in self.nodes or e.dst not in self.nodes:
                raise GraphError(f"dangling endpoint in edge {eid}")
            if not 0 <= e.edge_type < self.registry.num_edge_types:
                raise GraphError(f"unknown type index in edge {eid}")
            out_expect[e.src].append(eid)
            in_expect[e.dst].append(eid)
        if out_expect != self.out_adjacency or in_expect != self.in_adjacency:
            raise GraphError("adjacency index out of sync with edge list")
        for n in self.nodes.values():
            if not 0 <= n.node_type < self.registry.num_node_types:
                raise GraphError(f"unknown type index on node {n.id}")

    def induced_subgraph(self, keep: Iterable[int]) -> "Cpg":
        """Copy of the subgraph induced by ``keep``; ids and edge order preserved."""
        keep = set(keep)
        sub = Cpg(self.registry.copy())
        for nid in sorted(keep):
            n = self.nodes[nid]
            sub.add_node(CpgNode(n.id, n.node_type, n.code, n.name, n.line, n.file))
        for e in self.edges:
            if e.src in keep and e.dst in keep:
                sub.add_edge(e)
        sub.annotations = {k: list(v) for k, v in self.annotations.items() if k in keep}
        return sub

    def __len__(self) -> int:
        return len(self.nodes)


def incident_sources(g: Cpg, t: int) -> list[tuple[int, int, int]]:
    """Neighbours of ``t`` as ``(source, relation, direction)`` triples.

    An edge ``s -> t`` of type ``k`` yields relation ``k``; an edge ``t -> s``
    traversed backwards yields relation ``E + k`` where ``E`` is the number of
    edge types.  Entries follow edge insertion order.
    """
    if t not in g.nodes:
        raise GraphError(f"unknown node {t}")
    e_count = g.registry.num_edge_types
    eids = sorted(set(g.in_adjacency[t]) | set(g.out_adjacency[t]))
    out: list[tuple[int, int, int]] = []
    for eid in eids:
        e = g.edges[eid]
        if e.dst == t:
            out.append((e.src, e.edge_type, FORWARD))
        if e.src == t:
            out.append((e.dst, e_count + e.edge_type, REVERSE))
    return out
