"""Self-checks shared by the test suite and the ``grad-check`` command."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .decoder import SPECIALS, AnnotationDecoder, AnnotationVocab
from .model import DshgtModel, GraphArrays, ModelConfig, fused_loss, make_batch


def random_graph(rng: np.random.Generator, n: int, in_dim: int, num_types: int,
                 num_edge_types: int, n_edges: int | None = None) -> GraphArrays:
    """Connected random typed graph as index arrays (reverse relations at ``E + k``)."""
    n_edges = n + 1 if n_edges is None else n_edges
    pairs = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    while len(pairs) < n_edges:
        pairs.append((int(rng.integers(0, n)), int(rng.integers(0, n))))
    src, tgt, rel = [], [], []
    for s, t in pairs:
        k = int(rng.integers(0, num_edge_types))
        src += [s, t]
        tgt += [t, s]
        rel += [k, num_edge_types + k]
    return GraphArrays(
        np.arange(n), rng.integers(0, num_types, n), np.array(src), np.array(tgt), np.array(rel),
        rng.standard_normal((n, in_dim)).astype(np.float32),
    )


def full_model_grad_check(seed: int = 0, tol: float = 1e-3, lam: float = 0.2,
                          n_directions: int = 2) -> T.GradCheckReport:
    """Finite-difference check of forward + decoder + fused loss on a 5-node graph.

    Width 8, 2 heads, 2 layers; every coordinate of every parameter group is
    probed in float64.  Dropout is disabled so the function is deterministic.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(in_dim=6, d=8, heads=2, layers=2, dropout=0.0,
                      num_node_types=3, num_relations=4)
    g = random_graph(rng, 5, cfg.in_dim, 3, 2)
    model = DshgtModel(cfg, seed=seed)
    for name, p in model.params.items():
        if name.endswith(".mu"):
            # move the prior off its all-ones init so its gradient is generic
            p.data = rng.uniform(0.5, 1.5, p.shape).astype(np.float32)
        elif name.endswith(".b"):
            p.data = rng.normal(0, 0.1, p.shape).astype(np.float32)
    vocab = AnnotationVocab(list(SPECIALS) + ["check", "divisor", "zero"])
    dec = AnnotationDecoder.create(model.params, vocab, cfg.d, np.random.default_rng(seed + 1))
    names = list(model.params)
    batch = make_batch([g])
    target = vocab.encode(["check", "divisor", "zero"])

    def f(*ps):
        for name, p in zip(names, ps):
            model.params[name] = p
        z, logits = model.forward(batch)
        return fused_loss(logits, 1, dec.teacher_forced_loss(z, target), lam)

    originals = [model.params[n].data.copy() for n in names]
    report = T.grad_check(f, originals, tol=tol, names=names, n_directions=n_directions, seed=seed)
    return report
