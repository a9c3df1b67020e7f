"""Heterogeneous graph transformer over method-level CPGs.

A batch is the disjoint union of several slices.  For every target node the
layer forms one triplet per incident edge end (see
:func:`~dshgt.hetgraph.incident_sources`), so the whole layer is a handful of
per-type / per-relation grouped matmuls followed by a segment softmax and a
segment sum over triplets.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import GraphError, ShapeError
from .hetgraph import TypeRegistry
from .method_cpg import MethodCpg
from .tensor import Segments, Tensor


@dataclass
class ModelConfig:
    in_dim: int = 64
    d: int = 64
    heads: int = 4
    layers: int = 3
    dropout: float = 0.5
    num_node_types: int = 45
    num_relations: int = 40
    aggregation: str = "sum"
    classifier_layers: int = 1
    homogeneous: bool = False

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("model needs at least one attention layer")
        if self.d % self.heads:
            raise ValueError(f"width {self.d} is not divisible by {self.heads} heads")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.classifier_layers not in (1, 3):
            raise ValueError("classifier_layers must be 1 or 3")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def type_slots(self) -> int:
        return 1 if self.homogeneous else self.num_node_types

    @property
    def relation_slots(self) -> int:
        return 1 if self.homogeneous else self.num_relations

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# graph batches

@dataclass
class GraphArrays:
    """Index arrays of one slice, rows in ascending node-id order."""

    node_ids: np.ndarray
    types: np.ndarray
    src: np.ndarray
    tgt: np.ndarray
    rel: np.ndarray
    features: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)


def graph_arrays(m: MethodCpg, features: np.ndarray, registry: TypeRegistry | None = None) -> GraphArrays:
    """Translate a slice into index arrays, resolving type names against ``registry``."""
    g = m.graph
    registry = registry or g.registry
    ids = np.array(sorted(g.nodes), dtype=np.int64)
    if features.shape[0] != len(ids):
        raise ShapeError(f"{features.shape[0]} feature rows for {len(ids)} nodes")
    pos = {nid: i for i, nid in enumerate(ids.tolist())}
    node_map = _name_map(g.registry.node_type_names, registry.node_type_names)
    edge_map = _name_map(g.registry.edge_type_names, registry.edge_type_names)
    missing = sorted(
        {f"node type {g.registry.node_type_names[n.node_type]}" for n in g.nodes.values()
         if node_map[n.node_type] < 0}
        | {f"edge type {g.registry.edge_type_names[e.edge_type]}" for e in g.edges
           if edge_map[e.edge_type] < 0}
    )
    if missing:
        raise GraphError("types absent from the model registry: " + ", ".join(missing))
    types = np.array([node_map[g.nodes[nid].node_type] for nid in ids.tolist()], dtype=np.int64)
    e_count = registry.num_edge_types
    src, tgt, rel = [], [], []
    for e in g.edges:
        k = edge_map[e.edge_type]
        src.append(pos[e.src]); tgt.append(pos[e.dst]); rel.append(k)
        src.append(pos[e.dst]); tgt.append(pos[e.src]); rel.append(e_count + k)
    as_idx = lambda v: np.array(v, dtype=np.int64)  # noqa: E731
    return GraphArrays(ids, types, as_idx(src), as_idx(tgt), as_idx(rel),
                       np.asarray(features, dtype=np.float32))


def _name_map(local: list[str], target: list[str]) -> list[int]:
    index = {name: i for i, name in enumerate(target)}
    return [index.get(name, -1) for name in local]


@dataclass
class Batch:
    features: np.ndarray
    types: np.ndarray
    src: np.ndarray
    tgt: np.ndarray
    rel: np.ndarray
    graph_of_node: np.ndarray
    num_graphs: int
    offsets: np.ndarray
    targets: Segments = field(init=False)
    graphs: Segments = field(init=False)

    def __post_init__(self) -> None:
        self.targets = Segments(self.tgt, len(self.types))
        self.graphs = Segments(self.graph_of_node, self.num_graphs)

    @property
    def num_nodes(self) -> int:
        return len(self.types)


def make_batch(items: list[GraphArrays]) -> Batch:
    if not items:
        raise ShapeError("empty batch")
    for it in items:
        if it.num_nodes == 0:
            raise GraphError("empty graph")
    sizes = np.array([it.num_nodes for it in items], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return Batch(
        features=np.concatenate([it.features for it in items]),
        types=np.concatenate([it.types for it in items]),
        src=np.concatenate([it.src + o for it, o in zip(items, offsets)]),
        tgt=np.concatenate([it.tgt + o for it, o in zip(items, offsets)]),
        rel=np.concatenate([it.rel for it in items]),
        graph_of_node=np.repeat(np.arange(len(items)), sizes),
        num_graphs=len(items),
        offsets=offsets,
    )


# ---------------------------------------------------------------------------
# parameters

def xavier(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear:
    """Dense layer ``x @ w + b`` whose tensors live in a shared parameter dict."""

    def __init__(self, params: dict[str, Tensor], name: str):
        self.params, self.name = params, name

    @staticmethod
    def init(params, name, rng, fan_in, fan_out, bias=True):
        params[f"{name}.w"] = Tensor(xavier(rng, (fan_in, fan_out)), True, f"{name}.w")
        if bias:
            params[f"{name}.b"] = Tensor(np.zeros(fan_out, np.float32), True, f"{name}.b")
        return Linear(params, name)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.params[f"{self.name}.w"])
        b = self.params.get(f"{self.name}.b")
        if b is None:
            return y
        return y + T.expand(T.reshape(b, (1, -1)), y.shape)


class HgtLayer:
    """Views onto one attention layer's parameters."""

    def __init__(self, model: "DshgtModel", index: int):
        self.model = model
        self.cfg = model.config
        self.prefix = f"layers.{index}"

    def p(self, name: str) -> Tensor:
        return self.model.params[f"{self.prefix}.{name}"]

    def _indices(self, batch: Batch):
        if self.cfg.homogeneous:
            z_n = np.zeros_like(batch.types)
            z_e = np.zeros_like(batch.rel)
            return z_n, z_e
        return batch.types, batch.rel

    def projections(self, H: Tensor, batch: Batch):
        types, _ = self._indices(batch)
        n, h, dk = batch.num_nodes, self.cfg.heads, self.cfg.head_dim
        q = T.reshape(T.typed_matmul(H, self.p("q"), types), (n, h, dk))
        k = T.reshape(T.typed_matmul(H, self.p("k"), types), (n, h, dk))
        v = T.reshape(T.typed_matmul(H, self.p("v"), types), (n, h, dk))
        return q, k, v

    def attention(self, H: Tensor, batch: Batch, qkv=None) -> Tensor:
        """Attention ``(M, h)`` over triplets, normalized per target and head."""
        types, rel = self._indices(batch)
        q, k, _ = qkv or self.projections(H, batch)
        m = len(batch.src)
        h = self.cfg.heads
        kw = T.typed_matmul(T.gather(k, batch.src), self.p("w_att"), rel)
        score = T.sum(T.mul(kw, T.gather(q, batch.tgt)), axis=2)
        r_slots, a_slots = self.cfg.relation_slots, self.cfg.type_slots
        flat = (types[batch.src] * r_slots + rel) * a_slots + types[batch.tgt]
        mu = T.gather(T.reshape(self.p("mu"), (-1,)), flat)
        mu = T.expand(T.reshape(mu, (m, 1)), (m, h))
        score = T.scale(T.mul(score, mu), 1.0 / math.sqrt(self.cfg.d))
        return T.segment_softmax(score, batch.targets)

    def messages(self, H: Tensor, batch: Batch, qkv=None) -> Tensor:
        """Messages ``(M, h, d/h)``, one per triplet."""
        _, rel = self._indices(batch)
        _, _, v = qkv or self.projections(H, batch)
        return T.typed_matmul(T.gather(v, batch.src), self.p("w_msg"), rel)

    def aggregate(self, H: Tensor, batch: Batch, attn: Tensor, msgs: Tensor) -> Tensor:
        types, _ = self._indices(batch)
        m, h, dk = msgs.shape
        weighted = T.mul(msgs, T.expand(T.reshape(attn, (m, h, 1)), (m, h, dk)))
        agg = T.segment_sum(T.reshape(weighted, (m, h * dk)), batch.targets)
        if self.cfg.aggregation == "mean":
            inv = 1.0 / np.maximum(batch.targets.counts, 1)
            agg = T.mul(agg, Tensor(np.repeat(inv[:, None], h * dk, axis=1)))
        upd = T.relu(T.typed_matmul(agg, self.p("a"), types))
        return upd + H

    def __call__(self, H: Tensor, batch: Batch) -> Tensor:
        qkv = self.projections(H, batch)
        attn = self.attention(H, batch, qkv)
        msgs = self.messages(H, batch, qkv)
        return self.aggregate(H, batch, attn, msgs)


class DshgtModel:
    def __init__(self, config: ModelConfig, seed: int = 0, init: bool = True):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.training = False
        self.rng = np.random.default_rng(seed)
        if init:
            self._init_params(np.random.default_rng(seed))
        self.layers = [HgtLayer(self, i) for i in range(config.layers)]
        self.readout1 = Linear(self.params, "readout.l1")
        self.readout2 = Linear(self.params, "readout.l2")
        names = ["classifier.l1"] if config.classifier_layers == 1 else [
            "classifier.l1", "classifier.l2", "classifier.l3"]
        self.classifier = [Linear(self.params, n) for n in names]

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        P = self.params
        P["input_projection"] = Tensor(xavier(rng, (c.in_dim, c.d)), True, "input_projection")
        a, r, h, dk = c.type_slots, c.relation_slots, c.heads, c.head_dim
        for i in range(c.layers):
            pre = f"layers.{i}"
            for name in ("q", "k", "v", "a"):
                P[f"{pre}.{name}"] = Tensor(xavier(rng, (a, c.d, c.d)), True, f"{pre}.{name}")
            for name in ("w_att", "w_msg"):
                P[f"{pre}.{name}"] = Tensor(xavier(rng, (r, h, dk, dk)), True, f"{pre}.{name}")
            P[f"{pre}.mu"] = Tensor(np.ones((a, r, a), np.float32), True, f"{pre}.mu")
        self.init_head(rng)

    def init_head(self, rng: np.random.Generator) -> None:
        """(Re)create the readout MLP and classifier parameters."""
        c = self.config
        Linear.init(self.params, "readout.l1", rng, c.in_dim + c.d, c.d)
        Linear.init(self.params, "readout.l2", rng, c.d, c.d)
        if c.classifier_layers == 1:
            Linear.init(self.params, "classifier.l1", rng, c.d, 2)
        else:
            Linear.init(self.params, "classifier.l1", rng, c.d, c.d)
            Linear.init(self.params, "classifier.l2", rng, c.d, c.d)
            Linear.init(self.params, "classifier.l3", rng, c.d, 2)

    HEAD_PREFIXES = ("readout.", "classifier.")

    def head_parameter_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(self.HEAD_PREFIXES)]

    def num_parameters(self, prefix: str = "") -> int:
        return int(np.sum([p.size for n, p in self.params.items() if n.startswith(prefix)]))

    def train(self, mode: bool = True) -> "DshgtModel":
        self.training = mode
        return self

    def eval(self) -> "DshgtModel":
        return self.train(False)

    def _drop(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.config.dropout, self.rng, self.training)

    def encode(self, batch: Batch) -> list[Tensor]:
        """Node embeddings ``H^0 .. H^L``."""
        X = Tensor(batch.features)
        H = T.matmul(X, self.params["input_projection"])
        out = [H]
        for layer in self.layers:
            H = self._drop(layer(H, batch))
            out.append(H)
        return out

    def readout(self, X: Tensor, H: Tensor, batch: Batch) -> Tensor:
        hidden = self._drop(T.relu(self.readout1(T.concat([X, H], axis=1))))
        return T.segment_mean(self.readout2(hidden), batch.graphs)

    def classify(self, z: Tensor) -> Tensor:
        y = z
        for i, lin in enumerate(self.classifier):
            y = lin(y)
            if i < len(self.classifier) - 1:
                y = T.relu(y)
        return y

    def forward(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """Graph embeddings ``(B, d)`` and logits ``(B, 2)``."""
        H = self.encode(batch)[-1]
        z = self.readout(Tensor(batch.features), H, batch)
        return z, self.classify(z)

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            if name in self.params and self.params[name].shape != arr.shape:
                raise ShapeError(f"{name}: stored {arr.shape} vs model {self.params[name].shape}")
            self.params[name] = Tensor(np.array(arr, dtype=np.float32), True, name)
        # Linear views hold the dict itself, so replacements are picked up.


# ---------------------------------------------------------------------------
# single-graph views used by tests and diagnostics

def _single(model: DshgtModel, g: GraphArrays) -> tuple[Batch, Tensor]:
    batch = make_batch([g])
    return batch, T.matmul(Tensor(batch.features), model.params["input_projection"])


def _target_rows(batch: Batch, g: GraphArrays, t: int) -> np.ndarray:
    pos = np.searchsorted(g.node_ids, t)
    if pos >= len(g.node_ids) or g.node_ids[pos] != t:
        raise GraphError(f"unknown node {t}")
    return np.flatnonzero(batch.tgt == pos)


def attention_weights(layer: HgtLayer, g: GraphArrays, H_prev: np.ndarray, t: int) -> np.ndarray:
    """Attention ``(n_sources, h)`` of target node id ``t``; sources follow incident order."""
    batch = make_batch([g])
    with T.no_grad():
        att = layer.attention(Tensor(H_prev), batch).data
    return att[_target_rows(batch, g, t)]


def messages(layer: HgtLayer, g: GraphArrays, H_prev: np.ndarray, t: int) -> np.ndarray:
    batch = make_batch([g])
    with T.no_grad():
        msg = layer.messages(Tensor(H_prev), batch).data
    return msg[_target_rows(batch, g, t)]


def aggregate(layer: HgtLayer, g: GraphArrays, H_prev: np.ndarray, t: int) -> np.ndarray:
    batch = make_batch([g])
    with T.no_grad():
        out = layer(Tensor(H_prev), batch).data
    return out[np.searchsorted(g.node_ids, t)]


# ---------------------------------------------------------------------------
# losses

def fused_loss(logits: Tensor, label: int, loss_sup: Tensor | None, lam: float) -> Tensor:
    """``(1 - lam) * CE(logits, label) + lam * loss_sup``; plain CE without a supervisor loss."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    main = T.cross_entropy(logits, np.array([label]))
    if loss_sup is None:
        return main
    return fuse(main, loss_sup, lam)


def fuse(main, sup, lam: float):
    """Weighted sum of the two supervisor losses; works on floats or tensors."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if isinstance(main, Tensor):
        if lam == 0.0:
            return main
        if lam == 1.0:
            return sup
        return T.scale(main, 1.0 - lam) + T.scale(sup, lam)
    return (1.0 - lam) * main + lam * sup


# ---------------------------------------------------------------------------
# ablation

def homogeneous_mode(model: DshgtModel) -> DshgtModel:
    """Copy of ``model`` sharing one parameter set across node types and relations.

    Type-specific tensors are averaged over their type / relation axes so a
    trained model maps to its closest shared-parameter counterpart.
    """
    cfg = ModelConfig(**{**model.config.to_dict(), "homogeneous": True})
    out = DshgtModel(cfg, init=False)
    for name, p in model.params.items():
        data = p.data
        leaf = name.rsplit(".", 1)[-1]
        if not model.config.homogeneous and name.startswith("layers."):
            if leaf in ("q", "k", "v", "a", "w_att", "w_msg"):
                data = data.mean(axis=0, dtype=np.float64, keepdims=True).astype(np.float32)
            elif leaf == "mu":
                data = np.full((1, 1, 1), data.mean(dtype=np.float64), dtype=np.float32)
        out.params[name] = Tensor(np.array(data), True, name)
    out.rng = np.random.default_rng(0)
    return out
