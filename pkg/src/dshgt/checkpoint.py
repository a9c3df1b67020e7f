"""Binary checkpoints (format ``dshgt-ckpt/1``).

Layout: the magic line ``dshgt-ckpt/1\\n``, an unsigned 64-bit little-endian
header length, a UTF-8 JSON header with sorted keys, then every tensor as
little-endian float32 in header order.  The header records each tensor's
name, shape and byte offset plus a SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .decoder import AnnotationVocab
from .embedder import EmbeddingModel
from .errors import CheckpointError
from .hetgraph import TypeRegistry
from .train_eval import Detector, TrainConfig

FORMAT = "dshgt-ckpt/1"
MAGIC = (FORMAT + "\n").encode("ascii")


def _tensors(det: Detector) -> list[tuple[str, np.ndarray]]:
    items = [(name, p.data) for name, p in det.model.params.items()]
    items += list(det.embedding.arrays().items())
    return items


def to_bytes(det: Detector) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in _tensors(det):
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = {
        "format": FORMAT,
        "config": det.config.to_dict(),
        "model": det.model.config.to_dict(),
        "registry": det.registry.to_dict(),
        "vocab": det.vocab.to_dict(),
        "embedding": det.embedding.header(),
        "tensors": table,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + payload


def read_header(data: bytes) -> tuple[dict, bytes]:
    if not data.startswith(MAGIC):
        if data.startswith(b"dshgt-ckpt/"):
            version = data.split(b"\n", 1)[0].decode("ascii", "replace")
            raise CheckpointError(f"version mismatch: expected {FORMAT}, got {version}")
        raise CheckpointError("not a dshgt checkpoint")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError("truncated header")
    (n,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    if len(data) < pos + n:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(data[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"version mismatch: expected {FORMAT}, got {header.get('format')}")
    return header, data[pos + n:]


def from_bytes(data: bytes) -> Detector:
    header, payload = read_header(data)
    expected = sum(4 * int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"])
    if len(payload) != header["payload_bytes"] or len(payload) != expected:
        raise CheckpointError(
            f"truncated payload: {len(payload)} bytes, shape table needs {expected}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("checksum failure: payload does not match header digest")
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=t["offset"])
        arrays[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)

    config = TrainConfig.from_dict(header["config"])
    registry = TypeRegistry.from_dict(header["registry"])
    vocab = AnnotationVocab.from_dict(header["vocab"])
    embed_arrays = {k: v for k, v in arrays.items() if k.startswith("embed.")}
    embedding = EmbeddingModel.from_parts(header["embedding"], embed_arrays)
    det = Detector(config, registry, embedding, vocab, init=False)
    if det.model.config.to_dict() != header["model"]:
        raise CheckpointError("model hyperparameters disagree with the stored config")
    det.model.load_state({k: v for k, v in arrays.items() if not k.startswith("embed.")})
    return det


def save(det: Detector, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(det))


def load(path: str | Path) -> Detector:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return from_bytes(data)
