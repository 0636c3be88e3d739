"""Versioned, checksummed JSON checkpoints for trained generators.

Parameter arrays are stored as base64 of little-endian float64 bytes, so a
round trip is bit-exact.  Discriminator parameters are never written.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .eventlog import TimeScaler, Vocabulary
from .nn import GeneratorModel

FORMAT = "eventsuffix-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: GeneratorModel
    vocab: Vocabulary
    scaler: TimeScaler
    max_length: int
    config: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"], validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).astype(np.float64)


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps(ckpt: Checkpoint) -> str:
    payload = {
        "vocabulary": list(ckpt.vocab.labels),
        "max_duration": ckpt.scaler.max_duration,
        "topology": ckpt.model.topology(),
        "max_length": ckpt.max_length,
        "params": {k: _encode_array(v) for k, v in sorted(ckpt.model.arrays().items())},
        "config": ckpt.config,
        "summary": ckpt.summary,
    }
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "payload": payload,
        "sha256": hashlib.sha256(_canonical(payload)).hexdigest(),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def loads(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checksum failure: checkpoint is corrupt or truncated ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("not an eventsuffix checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')} is not supported (expected {VERSION})")
    payload = doc.get("payload")
    if not isinstance(payload, dict) or hashlib.sha256(_canonical(payload)).hexdigest() != doc.get("sha256"):
        raise CheckpointError("checksum failure: checkpoint contents do not match the stored digest")

    topo = payload["topology"]
    model = GeneratorModel(topo["vocab_size"], topo["hidden_size"], topo["num_layers"], seed=None)
    arrays = {k: _decode_array(v) for k, v in payload["params"].items()}
    if set(arrays) != set(model.params):
        raise CheckpointError("checkpoint parameters do not match the stored topology")
    model.load_arrays(arrays)
    vocab = Vocabulary(tuple(payload["vocabulary"]))
    if vocab.size != model.vocab_size:
        raise CheckpointError("vocabulary size does not match the network")
    return Checkpoint(model, vocab, TimeScaler(payload["max_duration"]), payload["max_length"],
                      payload.get("config", {}), payload.get("summary", {}))


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write(path, dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
