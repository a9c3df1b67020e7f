"""Initial node features from node text.

Every node becomes a short document: its node-type name followed by the
tokens of its (symbolized) code.  Two encoders are available:

``hash``
    signed feature hashing of tokens, mean pooled.  Training free and
    identical on every machine.
``pv-dm``
    a distributed-memory paragraph-vector model with negative sampling,
    trained deterministically under a seed.  Document vectors for graphs are
    obtained by inference with frozen word and output weights.
"""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .hetgraph import Cpg

UNK = "<unk>"
_TOKEN_RE = re.compile(
    r'"(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z_0-9]*|\d+\.\d*|\d+|<=|>=|==|!=|&&|\|\||[+\-*/%]=|\+\+|--|\S'
)


def tokenize_code(code: str) -> list[str]:
    return _TOKEN_RE.findall(code)


def node_document(g: Cpg, node_id: int) -> list[str]:
    n = g.nodes[node_id]
    return [g.registry.node_type_names[n.node_type]] + tokenize_code(n.code)


def _digest(token: str, seed: int) -> int:
    key = seed.to_bytes(8, "little", signed=False)
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest(), "little")


def hash_bucket(token: str, dim: int, seed: int = 0) -> tuple[int, float]:
    """Bucket index and sign of ``token`` under the seeded hash."""
    h = _digest(token, seed)
    return h % dim, 1.0 if (h >> 63) & 1 else -1.0


@dataclass
class EmbeddingModel:
    mode: str
    dim: int
    seed: int = 0
    vocab: dict[str, int] = field(default_factory=dict)
    word_vectors: np.ndarray | None = None
    out_weights: np.ndarray | None = None
    window: int = 2
    negative: int = 5
    epochs: int = 20
    alpha: float = 0.025
    counts: list[int] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def header(self) -> dict:
        return {
            "mode": self.mode,
            "dim": self.dim,
            "seed": self.seed,
            "vocab": sorted(self.vocab, key=self.vocab.__getitem__),
            "window": self.window,
            "negative": self.negative,
            "epochs": self.epochs,
            "alpha": self.alpha,
            "counts": list(self.counts),
        }

    def arrays(self) -> dict[str, np.ndarray]:
        if self.mode != "pv-dm":
            return {}
        return {"embed.word_vectors": self.word_vectors, "embed.out_weights": self.out_weights}

    @classmethod
    def from_parts(cls, header: dict, arrays: dict[str, np.ndarray]) -> "EmbeddingModel":
        m = cls(
            header["mode"], header["dim"], header["seed"],
            {t: i for i, t in enumerate(header["vocab"])},
            window=header["window"], negative=header["negative"],
            epochs=header["epochs"], alpha=header["alpha"], counts=list(header["counts"]),
        )
        if m.mode == "pv-dm":
            m.word_vectors = np.asarray(arrays["embed.word_vectors"], dtype=np.float32)
            m.out_weights = np.asarray(arrays["embed.out_weights"], dtype=np.float32)
        return m

    def embed_document(self, tokens: list[str]) -> np.ndarray:
        key = tuple(tokens)
        vec = self._cache.get(key)
        if vec is None:
            vec = self._hash_embed(tokens) if self.mode == "hash" else self._infer(tokens)
            self._cache[key] = vec
        return vec

    def _hash_embed(self, tokens: list[str]) -> np.ndarray:
        tokens = tokens or [UNK]
        signed = np.zeros(self.dim, dtype=np.float64)
        unsigned = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            b, s = hash_bucket(tok, self.dim, self.seed)
            signed[b] += s
            unsigned[b] += 1.0
        # opposite-signed collisions can cancel a whole document
        vec = signed if np.any(signed) else unsigned
        return (vec / len(tokens)).astype(np.float32)

    # -- paragraph vectors ----------------------------------------------------

    def _ids(self, tokens: list[str]) -> np.ndarray:
        unk = self.vocab[UNK]
        return np.array([self.vocab.get(t, unk) for t in (tokens or [UNK])], dtype=np.int64)

    def _doc_init(self, tokens: list[str]) -> np.ndarray:
        h = _digest("\x00".join(tokens), self.seed)
        rng = np.random.default_rng(h)
        return ((rng.random(self.dim) - 0.5) / self.dim).astype(np.float32)

    def _infer(self, tokens: list[str]) -> np.ndarray:
        doc = self._doc_init(tokens).astype(np.float64)
        ids = self._ids(tokens)
        rng = np.random.default_rng(_digest("infer\x00" + "\x00".join(tokens), self.seed))
        noise = _noise_table(self)
        for epoch in range(self.epochs):
            lr = _lr(self.alpha, epoch, self.epochs)
            for pos in range(len(ids)):
                _pvdm_step(self, doc, ids, pos, lr, rng, noise, train_words=False)
        return doc.astype(np.float32)


def _lr(alpha: float, epoch: int, epochs: int) -> float:
    return max(alpha * (1.0 - epoch / epochs), 1e-4)


def _noise_table(m: EmbeddingModel) -> np.ndarray:
    """Cumulative unigram^0.75 distribution used for negative sampling."""
    table = m._cache.get("__noise__")
    if table is None:
        p = np.power(np.asarray(m.counts, dtype=np.float64), 0.75)
        table = np.cumsum(p / p.sum())
        m._cache["__noise__"] = table
    return table


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _pvdm_step(m, doc, ids, pos, lr, rng, noise, train_words: bool) -> None:
    lo, hi = max(0, pos - m.window), min(len(ids), pos + m.window + 1)
    ctx = np.concatenate([ids[lo:pos], ids[pos + 1:hi]])
    wv, out = m.word_vectors, m.out_weights
    h = (doc + wv[ctx].sum(axis=0)) / (1 + len(ctx))
    negs = np.searchsorted(noise, rng.random(m.negative))
    targets = np.concatenate([[ids[pos]], negs])
    labels = np.zeros(len(targets))
    labels[0] = 1.0
    w_out = out[targets].astype(np.float64)
    g = (labels - _sigmoid(w_out @ h)) * lr
    grad_h = g @ w_out
    if train_words:
        np.add.at(out, targets, (np.outer(g, h)).astype(out.dtype))
        if len(ctx):
            np.add.at(wv, ctx, (grad_h / (1 + len(ctx))).astype(wv.dtype))
    doc += grad_h / (1 + len(ctx))


def fit_embedding(corpus: list[list[str]], dim: int = 64, seed: int = 0, mode: str = "hash",
                  **pvdm) -> EmbeddingModel:
    if not corpus:
        raise DataError("empty corpus")
    if mode == "hash":
        return EmbeddingModel("hash", dim, seed)
    if mode != "pv-dm":
        raise ValueError(f"unknown embedding mode {mode!r}")
    counts = Counter(t for doc in corpus for t in doc)
    vocab = {UNK: 0}
    for tok in sorted(counts, key=lambda t: (-counts[t], t)):
        vocab[tok] = len(vocab)
    m = EmbeddingModel("pv-dm", dim, seed, vocab, **pvdm)
    rng = np.random.default_rng(seed)
    m.word_vectors = ((rng.random((len(vocab), dim)) - 0.5) / dim).astype(np.float32)
    m.out_weights = np.zeros((len(vocab), dim), dtype=np.float32)
    m.counts = [1] + [counts[t] for t in list(vocab)[1:]]
    noise = _noise_table(m)

    docs = sorted(set(tuple(d) for d in corpus))
    doc_vecs = [m._doc_init(list(d)).astype(np.float64) for d in docs]
    doc_ids = [m._ids(list(d)) for d in docs]
    for epoch in range(m.epochs):
        lr = _lr(m.alpha, epoch, m.epochs)
        for k in rng.permutation(len(docs)):
            for pos in range(len(doc_ids[k])):
                _pvdm_step(m, doc_vecs[k], doc_ids[k], pos, lr, rng, noise, train_words=True)
    m._cache = {"__noise__": noise}
    return m


def embed_nodes(model: EmbeddingModel, g: Cpg) -> np.ndarray:
    """Feature matrix with one row per node in ascending id order."""
    ids = sorted(g.nodes)
    if not ids:
        return np.zeros((0, model.dim), dtype=np.float32)
    return np.stack([model.embed_document(node_document(g, nid)) for nid in ids])
