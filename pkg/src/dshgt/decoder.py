"""Annotation decoder: a one-layer LSTM conditioned on the graph embedding."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError
from .model import Linear, xavier
from .tensor import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


@dataclass
class AnnotationVocab:
    tokens: list[str] = field(default_factory=lambda: list(SPECIALS))
    max_len: int = 32

    def __post_init__(self) -> None:
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, annotations, min_freq: int = 2, max_len: int = 32) -> "AnnotationVocab":
        counts = Counter(tok for ann in annotations for tok in ann)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS),
                      key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + kept, max_len)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        """Token ids framed as ``tokens + [EOS]``, clipped to ``max_len`` targets."""
        ids = [self.index.get(t, UNK) for t in tokens][: self.max_len - 1]
        return ids + [EOS]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids if i not in (PAD, BOS, EOS)]

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "max_len": self.max_len}

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationVocab":
        return cls(list(d["tokens"]), d["max_len"])


class AnnotationDecoder:
    """Parameters live under ``decoder.*`` in the shared model parameter dict."""

    def __init__(self, params: dict[str, Tensor], vocab: AnnotationVocab, d: int):
        self.params, self.vocab, self.d = params, vocab, d
        self.init_state = Linear(params, "decoder.init")
        self.out = Linear(params, "decoder.out")

    @classmethod
    def create(cls, params, vocab: AnnotationVocab, d: int, rng: np.random.Generator):
        v = len(vocab)
        params["decoder.embed"] = Tensor(xavier(rng, (v, d)), True, "decoder.embed")
        params["decoder.wx"] = Tensor(xavier(rng, (d, 4 * d)), True, "decoder.wx")
        params["decoder.wh"] = Tensor(xavier(rng, (d, 4 * d)), True, "decoder.wh")
        params["decoder.b"] = Tensor(np.zeros(4 * d, np.float32), True, "decoder.b")
        Linear.init(params, "decoder.init", rng, d, 2 * d)
        Linear.init(params, "decoder.out", rng, d, v)
        return cls(params, vocab, d)

    def _start(self, z: Tensor) -> tuple[Tensor, Tensor]:
        h0, c0 = T.split(self.init_state(z), [self.d, self.d], axis=1)
        return T.tanh(h0), c0

    def _step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        P = self.params
        gates = T.matmul(x, P["decoder.wx"]) + T.matmul(h, P["decoder.wh"])
        gates = gates + T.expand(T.reshape(P["decoder.b"], (1, -1)), gates.shape)
        i, f, o, g = T.split(gates, [self.d] * 4, axis=1)
        c = T.mul(T.sigmoid(f), c) + T.mul(T.sigmoid(i), T.tanh(g))
        h = T.mul(T.sigmoid(o), T.tanh(c))
        return h, c

    def sequence_losses(self, z: Tensor, targets: list[list[int]]) -> Tensor:
        """Per-row mean token cross entropy ``(B,)`` under teacher forcing.

        ``targets`` are framed id lists ending in EOS (see
        :meth:`AnnotationVocab.encode`); inputs are the targets shifted right
        behind BOS.
        """
        if any(len(t) == 0 for t in targets):
            raise DataError("empty annotation target")
        b = len(targets)
        steps = max(len(t) for t in targets)
        tgt = np.full((b, steps), PAD, dtype=np.int64)
        for r, t in enumerate(targets):
            tgt[r, : len(t)] = t
        inp = np.concatenate([np.full((b, 1), BOS), tgt[:, :-1]], axis=1)
        mask = (tgt != PAD).astype(np.float32)
        lengths = mask.sum(axis=1)

        h, c = self._start(z)
        total = None
        for s in range(steps):
            h, c = self._step(T.gather(self.params["decoder.embed"], inp[:, s]), h, c)
            ce = T.cross_entropy(self.out(h), tgt[:, s], reduction="none")
            term = T.mul(ce, Tensor(mask[:, s]))
            total = term if total is None else total + term
        return T.mul(total, Tensor(1.0 / lengths))

    def teacher_forced_loss(self, z: Tensor, target: list[int]) -> Tensor:
        if z.data.ndim == 1:
            z = T.reshape(z, (1, -1))
        return T.reshape(self.sequence_losses(z, [target]), ())

    def generate(self, z: np.ndarray, max_len: int | None = None) -> list[list[int]]:
        """Greedy decoding from BOS; returns ids per row without BOS/EOS."""
        max_len = self.vocab.max_len if max_len is None else max_len
        z = np.atleast_2d(np.asarray(z, dtype=np.float32))
        out: list[list[int]] = [[] for _ in range(len(z))]
        done = np.zeros(len(z), dtype=bool)
        with T.no_grad():
            h, c = self._start(Tensor(z))
            tok = np.full(len(z), BOS, dtype=np.int64)
            for _ in range(max_len):
                h, c = self._step(T.gather(self.params["decoder.embed"], tok), h, c)
                logits = self.out(h).data.copy()
                # PAD and BOS are never emitted
                logits[:, [PAD, BOS]] = -np.inf
                tok = np.argmax(logits, axis=1)
                for r, t in enumerate(tok.tolist()):
                    if done[r]:
                        continue
                    if t == EOS:
                        done[r] = True
                    else:
                        out[r].append(t)
                if done.all():
                    break
        return out
