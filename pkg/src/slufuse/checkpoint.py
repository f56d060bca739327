"""Binary checkpoint format.

Layout::

    b"SLUF" | u32 version (LE) | u32 header length (LE) | UTF-8 JSON header | payloads

The header holds the config, vocabulary, label maps, training history and a
tensor manifest ``[{name, shape, dtype, offset, nbytes}]``; offsets count from
the first payload byte and tensors are raw little-endian IEEE-754.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import EmbeddingTable, LabelMaps, Vocabulary
from .model import Model, ModelConfig, build_model

MAGIC = b"SLUF"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: list[str]
    labels: dict
    tensors: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    version: int = VERSION

    @classmethod
    def from_model(cls, model: Model, history=None, best_epoch=None) -> Checkpoint:
        return cls(model.config, list(model.vocab.itos), model.labels.to_json(),
                   {k: t.data.copy() for k, t in model.parameters().items()},
                   list(history or []), best_epoch)

    def to_model(self) -> Model:
        vocab = Vocabulary.from_list(self.vocab)
        labels = LabelMaps.from_json(self.labels)
        dummy = EmbeddingTable(np.zeros((len(vocab), self.config.embed_dim)),
                               np.zeros(len(vocab), dtype=bool))
        model = build_model(self.config, vocab, labels, dummy)
        params = model.parameters()
        if set(params) != set(self.tensors):
            missing = sorted(set(params) ^ set(self.tensors))
            raise CheckpointError(f"tensor set does not match config; differing: {missing[:5]}")
        for name, t in params.items():
            arr = self.tensors[name]
            if arr.shape != t.shape:
                raise CheckpointError(f"{name}: stored shape {arr.shape} != model {t.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
        return model


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")


def save_checkpoint(ckpt: Checkpoint | Model, path: str | Path) -> None:
    if isinstance(ckpt, Model):
        ckpt = Checkpoint.from_model(ckpt)
    manifest, blobs, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = ckpt.tensors[name]
        tag = _dtype_tag(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": tag,
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config.to_json(),
        "vocab": ckpt.vocab,
        "labels": ckpt.labels,
        "history": ckpt.history,
        "best_epoch": ckpt.best_epoch,
        "tensors": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    if 12 + hlen > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    payload = memoryview(data)[12 + hlen:]
    tensors = {}
    expected = 0
    for entry in header["tensors"]:
        dt = _DTYPES.get(entry["dtype"])
        if dt is None:
            raise CheckpointError(f"{path}: unknown dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if nbytes != entry["nbytes"] or entry["offset"] != expected:
            raise CheckpointError(f"{path}: manifest entry {entry['name']} inconsistent")
        if entry["offset"] + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(payload[entry["offset"]:entry["offset"] + nbytes], dtype=dt)
        tensors[entry["name"]] = arr.reshape(shape).copy()
        expected += nbytes
    if expected != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - expected} trailing bytes after payloads")
    return Checkpoint(ModelConfig.from_json(header["config"]), header["vocab"], header["labels"],
                      tensors, header["history"], header["best_epoch"], version)


def load_checkpoint(path: str | Path, expect_variant: str | None = None) -> Model:
    ckpt = read_checkpoint(path)
    if expect_variant is not None and ckpt.config.variant != expect_variant:
        raise CheckpointError(
            f"checkpoint holds {ckpt.config.variant}, requested {expect_variant}")
    return ckpt.to_model()
