"""Versioned binary checkpoint container.

Layout::

    b"SKGCKPT\\0" | u32 format version | u64 header length | JSON header |
    array payload (little-endian, C order) | sha256 of all preceding bytes

The JSON header lists every array (name, dtype, shape, offset) and carries
the training/model configuration, epoch and normalization constants.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.io import atomic_write_bytes
from .data.sequence import InputNormalization
from .errors import CheckpointError, DimensionError
from .model import ModelConfig, SkeletonGraph

MAGIC = b"SKGCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


@dataclass
class TrainState:
    model: SkeletonGraph
    normalization: InputNormalization
    epoch: int = 0
    train_config: dict = field(default_factory=dict)
    skeleton: dict = field(default_factory=dict)  # bones, path_joint, fps of the training data


def _arrays(model: SkeletonGraph) -> list[tuple[str, np.ndarray]]:
    out = [(f"param:{name}", p.data) for name, p in model.params.items()]
    for name, stats in model.buffers.items():
        out.append((f"buffer:{name}.mean", stats["mean"]))
        out.append((f"buffer:{name}.var", stats["var"]))
    return out


def encode_checkpoint(state: TrainState) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in _arrays(state.model):
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": state.model.config.to_dict(),
        "train_config": state.train_config,
        "epoch": state.epoch,
        "normalization": state.normalization.to_dict(),
        "skeleton": state.skeleton,
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(state))
    return path


def resolve_checkpoint_path(path) -> Path:
    path = Path(path)
    if path.is_dir() and (path / "final.ckpt").exists():
        return path / "final.ckpt"
    if not path.exists() and path.with_suffix(".ckpt").exists():
        return path.with_suffix(".ckpt")
    return path


def decode_checkpoint(blob: bytes, expected: ModelConfig | None = None) -> TrainState:
    if len(blob) < _PREFIX.size + _DIGEST:
        raise CheckpointError("checkpoint truncated: shorter than the fixed header")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a skelgraph checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint truncated or corrupted (checksum mismatch)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint header unreadable: {exc}") from None
    payload = memoryview(body)[start + header_len :]

    config = ModelConfig.from_dict(header["model_config"])
    model = SkeletonGraph(config)
    arrays = {}
    for e in header["arrays"]:
        if e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"array {e['name']} extends past the payload")
        arr = np.frombuffer(payload[e["offset"] : e["offset"] + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))

    if expected is not None and expected != config:
        mismatched = [k for k, v in expected.to_dict().items() if config.to_dict()[k] != v]
        raise DimensionError(f"checkpoint model config differs from the requested one in {mismatched}")
    for name, p in model.params.items():
        arr = arrays.get(f"param:{name}")
        if arr is None or arr.shape != p.shape:
            raise DimensionError(f"parameter {name}: checkpoint has "
                                 f"{None if arr is None else arr.shape}, model expects {p.shape}")
    for name in model.buffers:
        for key in ("mean", "var"):
            if f"buffer:{name}.{key}" not in arrays:
                raise CheckpointError(f"missing batch-norm statistic {name}.{key}")

    for name, p in model.params.items():
        p.data = arrays[f"param:{name}"].copy()
    for name, stats in model.buffers.items():
        stats["mean"] = arrays[f"buffer:{name}.mean"].copy()
        stats["var"] = arrays[f"buffer:{name}.var"].copy()
    return TrainState(model=model, normalization=InputNormalization.from_dict(header["normalization"]),
                      epoch=int(header["epoch"]), train_config=header.get("train_config", {}),
                      skeleton=header.get("skeleton", {}))


def load_checkpoint(path, expected: ModelConfig | None = None) -> TrainState:
    path = resolve_checkpoint_path(path)
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    return decode_checkpoint(blob, expected)
