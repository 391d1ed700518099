"""SKELSEQ reading/writing and image loading."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .sequence import SkeletonSequence

SKELSEQ_VERSION = 1


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sequence_to_document(seq: SkeletonSequence, extra: dict | None = None) -> dict:
    frames = []
    for t in range(len(seq)):
        frame = {}
        if seq.p2d is not None:
            frame["p2d"] = seq.p2d[t].tolist()
        frame["p3d"] = seq.p3d[t].tolist()
        if seq.images is not None and seq.images[t] is not None:
            frame["image"] = seq.images[t]
        frames.append(frame)
    doc = {
        "version": SKELSEQ_VERSION,
        "joints": seq.joints,
        "fps": seq.fps,
        "bones": [list(b) for b in seq.bones],
        "path_joint": seq.path_joint,
    }
    if extra:
        doc.update(extra)
    doc["frames"] = frames
    return doc


def dumps_document(doc: dict) -> str:
    # json writes floats with repr(), which round-trips every float64 exactly
    return json.dumps(doc, indent=1) + "\n"


def save_sequence(seq: SkeletonSequence, path, extra: dict | None = None) -> None:
    atomic_write_text(path, dumps_document(sequence_to_document(seq, extra)))


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise FormatError(f"{where}: missing field '{key}'")
    value = doc[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise FormatError(f"{where}: field '{key}' must be an integer")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise FormatError(f"{where}: field '{key}' must be a number")
    if kind is list and not isinstance(value, list):
        raise FormatError(f"{where}: field '{key}' must be an array")
    return value


def _coords(value, joints: int, dim: int, where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: not a numeric array ({exc})") from None
    if arr.shape != (joints, dim):
        raise FormatError(f"{where}: expected shape ({joints}, {dim}), got {arr.shape}")
    return arr


def document_to_sequence(doc: dict, source: str = "<document>", base_dir: Path | None = None) -> SkeletonSequence:
    if not isinstance(doc, dict):
        raise FormatError(f"{source}: top level must be an object")
    version = _require(doc, "version", int, source)
    if version != SKELSEQ_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    joints = _require(doc, "joints", int, source)
    fps = _require(doc, "fps", float, source)
    bones_raw = _require(doc, "bones", list, source)
    path_joint = _require(doc, "path_joint", int, source)
    frames = _require(doc, "frames", list, source)
    if joints < 1:
        raise FormatError(f"{source}: joints must be positive")
    bones = []
    for k, b in enumerate(bones_raw):
        if not (isinstance(b, list) and len(b) == 2 and all(isinstance(i, int) and not isinstance(i, bool) for i in b)):
            raise FormatError(f"{source}: bones[{k}] must be a pair of integers")
        if not all(0 <= i < joints for i in b):
            raise FormatError(f"{source}: bones[{k}] = {b} has an index outside [0, {joints})")
        bones.append((b[0], b[1]))
    if not frames:
        raise FormatError(f"{source}: frames list is empty")
    has_2d = "p2d" in frames[0]
    p2d, p3d, images = [], [], []
    for t, frame in enumerate(frames):
        where = f"{source}: frames[{t}]"
        if not isinstance(frame, dict):
            raise FormatError(f"{where} must be an object")
        p3d.append(_coords(_require(frame, "p3d", list, where), joints, 3, f"{where}.p3d"))
        if has_2d:
            p2d.append(_coords(_require(frame, "p2d", list, where), joints, 2, f"{where}.p2d"))
        elif "p2d" in frame:
            raise FormatError(f"{where}: p2d present on some frames only")
        image = frame.get("image")
        if image is not None and not isinstance(image, str):
            raise FormatError(f"{where}.image must be a path string")
        images.append(image)
    meta = {k: v for k, v in doc.items() if k not in {"version", "joints", "fps", "bones", "path_joint", "frames"}}
    meta.setdefault("name", Path(source).stem)
    if base_dir is not None:
        meta["base_dir"] = str(base_dir)
    return SkeletonSequence(
        joints=joints, fps=float(fps), bones=bones, path_joint=path_joint,
        p3d=np.stack(p3d), p2d=np.stack(p2d) if has_2d else None,
        images=images if any(i is not None for i in images) else None, meta=meta,
    )


def load_sequence(path) -> SkeletonSequence:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return document_to_sequence(doc, str(path), base_dir=path.parent)


def load_directory(directory) -> list[SkeletonSequence]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"{directory}: not a directory")
    return [load_sequence(p) for p in sorted(directory.glob("*.json"))]


def resolve_image(ref: str, base_dir: str | None) -> Path:
    p = Path(ref)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def load_image(path) -> np.ndarray:
    """Read an image as float (3, H, W) in [0, 1]; .npy arrays are taken as-is."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float64)
    else:
        from PIL import Image

        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
        except OSError as exc:
            raise FormatError(f"{path}: cannot read image ({exc})") from None
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise FormatError(f"{path}: expected a 3-channel image, got shape {arr.shape}")
    return arr


def save_image(arr: np.ndarray, path) -> None:
    from PIL import Image

    img = np.clip(np.round(arr.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, "RGB").save(path, format="PNG")


def resize_image(arr: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of (3, H, W) to (3, size, size) with half-pixel centers."""
    _, h, w = arr.shape
    if h == size and w == size:
        return arr
    return np.einsum("ih,chw,jw->cij", _interp_matrix(h, size), arr, _interp_matrix(w, size))


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    mat = np.zeros((n_out, n_in))
    mat[np.arange(n_out), lo] += 1 - frac
    mat[np.arange(n_out), hi] += frac
    return mat
