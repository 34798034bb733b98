"""Versioned named-tensor checkpoint files.

Byte layout (all integers little-endian):

    magic     8 bytes   b"TMMTCKPT"
    version   uint32    currently 1
    mlen      uint64    manifest byte length
    manifest  mlen bytes of UTF-8 JSON with sorted keys:
                {"format_version": 1,
                 "config": {model config fields},
                 "vocab": [token, ...],
                 "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    data      for each manifest entry, in order: prod(shape) float64
              values, little-endian, C (row-major) order

Tensor entries are sorted by name, so writing the same state twice
produces byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Tensor
from .config import ModelConfig
from .vocab import Vocabulary

MAGIC = b"TMMTCKPT"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, config: ModelConfig, vocab: Vocabulary, tensors: dict) -> None:
    """Write named tensors (Tensor or ndarray values) with config and vocabulary."""
    names = sorted(tensors)
    arrays = {}
    for name in names:
        value = tensors[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arrays[name] = np.ascontiguousarray(arr, dtype=np.float64)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "vocab": vocab.tokens,
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(manifest, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            f.write(arrays[name].astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint; returns (config, vocab, dict name -> float64 ndarray)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        config = ModelConfig.from_dict(manifest["config"])
        vocab = Vocabulary(manifest["vocab"])
        tensors = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated tensor '{entry['name']}'")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return config, vocab, tensors


BUFFER_PREFIX = "buffer."


def save_model(path, model) -> None:
    """Checkpoint a Transformer: trainable parameters plus non-trainable buffers."""
    tensors: dict = dict(model.params)
    if model.mean_visual is not None:
        tensors[BUFFER_PREFIX + "mean_visual"] = model.mean_visual
    save_checkpoint(path, model.config, model.vocab, tensors)


def load_model(path):
    """Rebuild a Transformer from a checkpoint file."""
    from .model import Transformer  # local import to keep checkpoint importable alone

    config, vocab, tensors = load_checkpoint(path)
    params = {name: Tensor(arr, requires_grad=True, name=name)
              for name, arr in tensors.items() if not name.startswith(BUFFER_PREFIX)}
    mean = tensors.get(BUFFER_PREFIX + "mean_visual")
    model = Transformer(config, vocab, params=params, mean_visual=mean)
    expected = set(Transformer(config, vocab, seed=0).params)
    if set(params) != expected:
        missing = sorted(expected - set(params))
        extra = sorted(set(params) - expected)
        raise CheckpointError(f"{path}: parameter set mismatch "
                              f"(missing {missing[:3]}, unexpected {extra[:3]})")
    return model
