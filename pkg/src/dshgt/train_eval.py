"""Dataset ingestion, training, evaluation and transfer fine-tuning."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np

from . import tensor as T
from .decoder import AnnotationDecoder, AnnotationVocab
from .embedder import EmbeddingModel, embed_nodes, fit_embedding, node_document
from .errors import DataError, DshgtError, FrontendError, GraphError, NumericalError, SchemaError
from .frontend import import_cpg, parse_directory, parse_sources, read_cpg
from .hetgraph import Cpg, TypeRegistry
from .method_cpg import MethodCpg, slice_methods, symbolize
from .model import DshgtModel, GraphArrays, ModelConfig, graph_arrays, make_batch
from .tensor import Tensor

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["id", "label"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "language": {"type": "string"},
        "code": {"type": "string"},
        "path": {"type": "string"},
        "cpg": {"type": "string"},
        "label": {"enum": [0, 1]},
        "cwe": {"type": ["string", "null"]},
        "annotation": {"type": ["array", "null"], "items": {"type": "string"}},
        "method": {"type": "string"},
    },
    "additionalProperties": False,
    "oneOf": [
        {"required": ["code"], "not": {"anyOf": [{"required": ["path"]}, {"required": ["cpg"]}]}},
        {"required": ["path"], "not": {"anyOf": [{"required": ["code"]}, {"required": ["cpg"]}]}},
        {"required": ["cpg"], "not": {"anyOf": [{"required": ["code"]}, {"required": ["path"]}]}},
    ],
}
_MANIFEST_VALIDATOR = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)


@dataclass
class TrainConfig:
    lr: float = 2e-3
    dropout: float = 0.5
    batch: int = 64
    epochs: int = 50
    heads: int = 4
    layers: int = 3
    d: int = 64
    D: int = 64
    lam: float = 0.2
    seed: int = 0
    split_ratio: float = 0.7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    embedding: str = "hash"
    aggregation: str = "sum"
    classifier_layers: int = 1
    homogeneous: bool = False
    class_weighting: bool = False
    min_freq: int = 2
    max_len: int = 32
    transfer_epochs: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        for name in ("batch", "epochs", "heads", "layers", "d", "D"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self, registry: TypeRegistry) -> ModelConfig:
        return ModelConfig(
            in_dim=self.D, d=self.d, heads=self.heads, layers=self.layers, dropout=self.dropout,
            num_node_types=registry.num_node_types, num_relations=registry.num_relations,
            aggregation=self.aggregation, classifier_layers=self.classifier_layers,
            homogeneous=self.homogeneous,
        )


@dataclass
class Sample:
    id: str
    method: MethodCpg
    label: int
    annotation: list[str] = field(default_factory=list)
    cwe: str | None = None
    language: str = "c"


# ---------------------------------------------------------------------------
# ingestion

def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    records, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
        errors = list(_MANIFEST_VALIDATOR.iter_errors(rec))
        if errors:
            raise SchemaError(f"{path}:{lineno}: {_describe(errors[0])}")
        if rec["id"] in seen:
            raise SchemaError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        records.append(rec)
    return records


def _describe(err) -> str:
    if err.validator == "oneOf":
        return "record needs exactly one of code, path, cpg"
    where = "/".join(str(p) for p in err.path) or "record"
    return f"{where}: {err.message}"


def select_method(g: Cpg, wanted: str | None = None) -> MethodCpg:
    """The slice of method ``wanted``, or of the last method defined."""
    slices = slice_methods(g)
    if not slices:
        raise GraphError("no METHOD node in graph")
    if wanted is None:
        return slices[-1]
    for m in slices:
        if m.method_name == wanted:
            return m
    raise GraphError(f"method {wanted!r} not found")


def record_to_sample(rec: dict, base: Path) -> Sample:
    if "code" in rec:
        g = parse_sources({"input.c": rec["code"]})
    elif "path" in rec:
        g = parse_directory(base / rec["path"])
    else:
        g = read_cpg(base / rec["cpg"])
    m = select_method(g, rec.get("method"))
    m, _ = symbolize(m)
    ann = rec.get("annotation")
    if ann is None:
        ann = list(m.annotation)
    m.label = rec["label"]
    m.annotation = list(ann)
    return Sample(rec["id"], m, rec["label"], list(ann), rec.get("cwe"), rec.get("language", "c"))


@dataclass
class IngestReport:
    skipped: list[tuple[str, str]] = field(default_factory=list)


def ingest(manifest: str | Path, report: IngestReport | None = None) -> list[Sample]:
    manifest = Path(manifest)
    report = report if report is not None else IngestReport()
    samples = []
    for rec in read_manifest(manifest):
        try:
            samples.append(record_to_sample(rec, manifest.parent))
        except (FrontendError, SchemaError, GraphError, OSError) as exc:
            report.skipped.append((rec["id"], str(exc)))
            log.warning("skipping %s: %s", rec["id"], exc)
    if not samples:
        raise DataError(f"no usable samples in {manifest}")
    return samples


def stratified_split(samples: list, ratio: float, seed: int, label=lambda s: s.label):
    """Per-class shuffled split; ``round(ratio * n_c)`` of each class go to train."""
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_class.setdefault(label(s), []).append(i)
    if len(by_class) < 2:
        raise DataError("single-class corpus cannot be stratified")
    for c, idx in by_class.items():
        if len(idx) < 2:
            raise DataError(f"class {c} has fewer than 2 samples")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in sorted(by_class):
        idx = np.array(by_class[c])
        rng.shuffle(idx)
        k = int(round(ratio * len(idx)))
        train_idx += idx[:k].tolist()
        test_idx += idx[k:].tolist()
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(test_idx)]


# ---------------------------------------------------------------------------
# the trainable bundle

class Detector:
    """Model, decoder, embedding, registry and vocabulary trained together."""

    def __init__(self, config: TrainConfig, registry: TypeRegistry, embedding: EmbeddingModel,
                 vocab: AnnotationVocab, init: bool = True):
        self.config = config
        self.registry = registry
        self.embedding = embedding
        self.vocab = vocab
        self.model = DshgtModel(config.model_config(registry), seed=config.seed, init=init)
        self.model.rng = np.random.default_rng([config.seed, 1])
        if init:
            AnnotationDecoder.create(self.model.params, vocab, config.d,
                                     np.random.default_rng([config.seed, 2]))
        self.decoder = AnnotationDecoder(self.model.params, vocab, config.d)

    @classmethod
    def create(cls, config: TrainConfig, train_samples: list[Sample]) -> "Detector":
        registry = merged_registry(s.method.graph.registry for s in train_samples)
        corpus = [node_document(s.method.graph, nid) for s in train_samples for nid in s.method.graph.nodes]
        embedding = fit_embedding(corpus, config.D, config.seed, config.embedding)
        vocab = AnnotationVocab.build([s.annotation for s in train_samples if s.annotation],
                                      config.min_freq, config.max_len)
        return cls(config, registry, embedding, vocab)

    def arrays(self, m: MethodCpg) -> GraphArrays:
        return graph_arrays(m, embed_nodes(self.embedding, m.graph), self.registry)

    def copy(self) -> "Detector":
        return copy.deepcopy(self)


def merged_registry(registries) -> TypeRegistry:
    out = TypeRegistry()
    for reg in registries:
        for name in reg.node_type_names:
            out.ensure_node_type(name)
        for name in reg.edge_type_names:
            out.ensure_edge_type(name)
    return out


def unknown_types(registry: TypeRegistry, samples: list[Sample]) -> list[str]:
    missing = set()
    for s in samples:
        g = s.method.graph
        for n in g.nodes.values():
            name = g.registry.node_type_names[n.node_type]
            if not registry.has_node_type(name):
                missing.add(f"node type {name}")
        for e in g.edges:
            name = g.registry.edge_type_names[e.edge_type]
            if not registry.has_edge_type(name):
                missing.add(f"edge type {name}")
    return sorted(missing)


# ---------------------------------------------------------------------------
# optimization

class Adam:
    def __init__(self, params: dict[str, Tensor], names: list[str], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params, self.names = params, list(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for n in self.names:
            p = self.params[n]
            if p.grad is None:
                continue
            g = p.grad.astype(np.float32)
            self.m[n] = np.float32(b1) * self.m[n] + np.float32(1 - b1) * g
            self.v[n] = np.float32(b2) * self.v[n] + np.float32(1 - b2) * g * g
            update = (self.m[n] / np.float32(c1)) / (np.sqrt(self.v[n] / np.float32(c2)) + np.float32(self.eps))
            p.data = p.data - np.float32(self.lr) * update


@dataclass
class Prepared:
    arrays: GraphArrays
    label: int
    target: list[int] | None


def prepare(det: Detector, samples: list[Sample]) -> list[Prepared]:
    out = []
    for s in samples:
        target = det.vocab.encode(s.annotation) if s.annotation else None
        out.append(Prepared(det.arrays(s.method), s.label, target))
    return out


def batch_loss(det: Detector, items: list[Prepared], lam: float, class_weights=None) -> Tensor:
    """Mean over the batch of the per-sample fused losses."""
    batch = make_batch([p.arrays for p in items])
    z, logits = det.model.forward(batch)
    labels = np.array([p.label for p in items], dtype=np.int64)
    main = T.cross_entropy(logits, labels, reduction="none")
    annotated = [i for i, p in enumerate(items) if p.target is not None]
    weights = np.ones(len(items), dtype=np.float32)
    if class_weights is not None:
        weights *= class_weights[labels]
    use_sup = lam > 0.0 and bool(annotated)
    if use_sup:
        weights[annotated] *= np.float32(1.0 - lam)
    total = T.sum(T.mul(main, Tensor(weights)))
    if use_sup:
        z_ann = T.gather(z, np.array(annotated))
        sup = det.decoder.sequence_losses(z_ann, [items[i].target for i in annotated])
        sup_w = np.ones(len(annotated), dtype=np.float32)
        if class_weights is not None:
            sup_w *= class_weights[labels[annotated]]
        total = total + T.scale(T.sum(T.mul(sup, Tensor(sup_w))), lam)
    return T.scale(total, 1.0 / len(items))


def _grad_norms(params: dict[str, Tensor]) -> dict[str, float]:
    groups: dict[str, float] = {}
    for name, p in params.items():
        if p.grad is None:
            continue
        key = name.rsplit(".", 1)[0]
        groups[key] = groups.get(key, 0.0) + float(np.sum(np.square(p.grad, dtype=np.float64)))
    return {k: math.sqrt(v) for k, v in groups.items()}


def train(det: Detector, samples: list[Sample], config: TrainConfig | None = None,
          trainable: list[str] | None = None, epochs: int | None = None) -> list[float]:
    """Optimize ``det`` in place; returns the per-epoch mean training loss."""
    config = config or det.config
    epochs = config.epochs if epochs is None else epochs
    if not samples:
        raise DataError("no training samples")
    data = prepare(det, samples)
    params = det.model.params
    if trainable is None:
        trainable = list(params)
        if config.lam == 0.0:
            trainable = [n for n in trainable if not n.startswith("decoder.")]
    opt = Adam(params, trainable, config.lr, config.beta1, config.beta2, config.eps)
    frozen = set(params) - set(trainable)
    class_weights = None
    if config.class_weighting:
        counts = np.bincount([p.label for p in data], minlength=2).astype(np.float64)
        class_weights = (len(data) / (2.0 * np.maximum(counts, 1))).astype(np.float32)

    det.model.train()
    trace = []
    try:
        for epoch in range(epochs):
            order = np.random.default_rng(config.seed + epoch).permutation(len(data))
            epoch_total = 0.0
            for b, start in enumerate(range(0, len(data), config.batch)):
                items = [data[i] for i in order[start:start + config.batch]]
                for n in frozen:
                    params[n].requires_grad = False
                loss = batch_loss(det, items, config.lam, class_weights)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(
                        f"non-finite loss {value} at epoch {epoch} batch {b}; "
                        f"grad norms {_grad_norms(params)}"
                    )
                opt.zero_grad()
                T.backward(loss)
                bad = [n for n in trainable if params[n].grad is not None
                       and not np.all(np.isfinite(params[n].grad))]
                if bad:
                    raise NumericalError(
                        f"non-finite gradient at epoch {epoch} batch {b} in {', '.join(bad)}; "
                        f"grad norms {_grad_norms(params)}"
                    )
                opt.step()
                epoch_total += value * len(items)
            trace.append(epoch_total / len(data))
    finally:
        for n in frozen:
            params[n].requires_grad = True
        opt.zero_grad()
        det.model.eval()
    return trace


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, labels, preds) -> "Metrics":
        labels, preds = np.asarray(labels), np.asarray(preds)
        if len(labels) == 0:
            raise DataError("no samples to evaluate")
        tp = int(np.sum((preds == 1) & (labels == 1)))
        fp = int(np.sum((preds == 1) & (labels == 0)))
        tn = int(np.sum((preds == 0) & (labels == 0)))
        fn = int(np.sum((preds == 0) & (labels == 1)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls((tp + tn) / len(labels), p, r, f1, tp, fp, tn, fn)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Evaluation:
    metrics: Metrics
    ids: list[str]
    labels: list[int]
    predictions: list[int]
    probabilities: np.ndarray


def predict_arrays(det: Detector, arrays: list[GraphArrays]) -> tuple[np.ndarray, np.ndarray]:
    """Logits ``(n, 2)`` and graph embeddings ``(n, d)`` with dropout off."""
    det.model.eval()
    logits_all, zs = [], []
    with T.no_grad():
        for start in range(0, len(arrays), det.config.batch):
            z, logits = det.model.forward(make_batch(arrays[start:start + det.config.batch]))
            logits_all.append(logits.data)
            zs.append(z.data)
    return np.concatenate(logits_all), np.concatenate(zs)


def _probability(logits: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return T.softmax(Tensor(logits), axis=1).data[:, 1]


def evaluate(det: Detector, samples: list[Sample]) -> Evaluation:
    if not samples:
        raise DataError("no samples to evaluate")
    logits, _ = predict_arrays(det, [det.arrays(s.method) for s in samples])
    probs = _probability(logits)
    # argmax takes the first maximum, so ties go to the non-vulnerable class
    preds = np.argmax(logits, axis=1)
    labels = [s.label for s in samples]
    return Evaluation(Metrics.from_predictions(labels, preds), [s.id for s in samples],
                      labels, preds.tolist(), probs)


def predict_methods(det: Detector, g: Cpg) -> list[dict]:
    slices = [symbolize(m)[0] for m in slice_methods(g)]
    if not slices:
        raise DataError("no methods found")
    missing = unknown_types(det.registry, [Sample("", m, 0) for m in slices])
    if missing:
        raise DataError("types absent from the checkpoint registry: " + ", ".join(missing))
    raw = slice_methods(g)
    logits, zs = predict_arrays(det, [det.arrays(m) for m in slices])
    probs = _probability(logits)
    gen = det.decoder.generate(zs)
    out = []
    for m, row, p, ids in zip(raw, logits, probs, gen):
        out.append({
            "method": m.method_name,
            "file": m.origin[0],
            "line": m.origin[1],
            "label": int(np.argmax(row)),
            "probability": float(p),
            "annotation": det.vocab.decode(ids),
        })
    return out


# ---------------------------------------------------------------------------
# transfer

def transfer_finetune(det: Detector, samples: list[Sample], reinit_head: bool = False,
                      seed: int | None = None) -> tuple[Detector, list[float]]:
    """Fine-tune only the readout MLP and classifier for ``transfer_epochs`` epochs.

    With ``reinit_head`` the head is freshly initialized first, which gives
    the no-transfer baseline under the identical protocol.
    """
    missing = unknown_types(det.registry, samples)
    if missing:
        raise DataError("types absent from the checkpoint registry: " + ", ".join(missing))
    out = det.copy()
    if reinit_head:
        s = det.config.seed if seed is None else seed
        out.model.init_head(np.random.default_rng([s, 3]))
    head = out.model.head_parameter_names()
    trace = train(out, samples, out.config, trainable=head, epochs=out.config.transfer_epochs)
    return out, trace


__all__ = [
    "TrainConfig", "Sample", "IngestReport", "read_manifest", "ingest", "record_to_sample",
    "select_method", "stratified_split", "Detector", "Adam", "train", "batch_loss", "Metrics",
    "Evaluation", "evaluate", "predict_methods", "transfer_finetune",
]
