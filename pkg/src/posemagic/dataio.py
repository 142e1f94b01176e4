"""Pose files (JSON lines), config documents and binary checkpoints.

Checkpoint layout, all little-endian::

    b"PMAGCKPT" | u64 header length | UTF-8 JSON header | raw float64 payload

The header holds the model config, the skeleton, and a manifest of
``{name, shape, offset}`` entries (offsets in bytes into the payload) for
every parameter and batch-norm buffer.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .graph import Skeleton
from .model import ModelConfig, PoseMagicModel

MAGIC = b"PMAGCKPT"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")

PathLike = Union[str, Path]


class DataError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class PoseSequence:
    id: str
    frames: np.ndarray
    fps: Optional[float] = None


def _finite_frames(raw, where: str, J: Optional[int]) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise DataError(f"{where}: frames are not a numeric array") from None
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise DataError(f"{where}: frames must be T x J x 3, got shape {arr.shape}")
    if J is not None and arr.shape[1] != J:
        raise DataError(f"{where}: has {arr.shape[1]} joints, skeleton expects {J}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{where}: contains NaN or Inf")
    return arr


def parse_pose_record(text: str, expected: str, J: Optional[int], where: str = "record") -> PoseSequence:
    if expected not in ("2d", "3d"):
        raise ValueError(f"expected must be '2d' or '3d', got {expected!r}")
    try:
        rec = json.loads(text, parse_constant=lambda c: math.nan)
    except json.JSONDecodeError as exc:
        raise DataError(f"{where}: malformed JSON ({exc.msg})") from None
    if not isinstance(rec, dict) or "frames" not in rec:
        raise DataError(f"{where}: record must be an object with a 'frames' field")
    seq_id = str(rec.get("id", where))
    arr = _finite_frames(rec["frames"], f"{where} (id {seq_id!r})", J)
    if expected == "2d":
        arr[..., 2] = np.clip(arr[..., 2], 0.0, 1.0)
    fps = rec.get("fps")
    return PoseSequence(seq_id, arr, None if fps is None else float(fps))


def load_poses(path: PathLike, expected: str, skeleton: Optional[Skeleton] = None) -> list[PoseSequence]:
    """Read one sequence per line; blank lines are skipped.

    2D files carry confidence in the third channel (clamped to [0, 1]); 3D files
    carry z.  Errors name the line number and record id.
    """
    J = skeleton.joint_count if skeleton is not None else None
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(parse_pose_record(line, expected, J, f"{path}:{lineno}"))
    return out


def format_pose_record(seq_id: str, frames: np.ndarray, fps: Optional[float] = None) -> str:
    rec = {"id": seq_id, "frames": np.asarray(frames, dtype=np.float64).tolist()}
    if fps is not None:
        rec["fps"] = fps
    return json.dumps(rec)


def save_poses(path: PathLike, sequences: Iterable[PoseSequence]) -> None:
    # json writes floats with repr, which round-trips float64 exactly.
    lines = [format_pose_record(s.id, s.frames, s.fps) + "\n" for s in sequences]
    _atomic_write(Path(path), "".join(lines).encode("utf-8"))


def load_pose_pairs(data_dir: PathLike, skeleton: Optional[Skeleton] = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pair ``poses2d.jsonl`` with ``poses3d.jsonl`` in ``data_dir`` by record id."""
    d = Path(data_dir)
    two = load_poses(d / "poses2d.jsonl", "2d", skeleton)
    three = {s.id: s for s in load_poses(d / "poses3d.jsonl", "3d", skeleton)}
    pairs = []
    for s in two:
        if s.id not in three:
            raise DataError(f"sequence {s.id!r} has 2D poses but no 3D poses")
        g = three[s.id].frames
        if g.shape != s.frames.shape:
            raise DataError(f"sequence {s.id!r}: 2D shape {s.frames.shape} != 3D shape {g.shape}")
        pairs.append((s.frames, g))
    return pairs


def save_pose_pairs(data_dir: PathLike, pairs, prefix: str = "seq") -> None:
    d = Path(data_dir)
    d.mkdir(parents=True, exist_ok=True)
    ids = [f"{prefix}{i:04d}" for i in range(len(pairs))]
    save_poses(d / "poses2d.jsonl", [PoseSequence(i, p[0]) for i, p in zip(ids, pairs)])
    save_poses(d / "poses3d.jsonl", [PoseSequence(i, p[1]) for i, p in zip(ids, pairs)])


# -- configs ------------------------------------------------------------------

def load_config(path: PathLike) -> ModelConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return ModelConfig.from_dict(doc)


def save_config(cfg: ModelConfig, path: PathLike) -> None:
    _atomic_write(Path(path), (json.dumps(cfg.to_dict(), indent=2) + "\n").encode())


# -- checkpoints ---------------------------------------------------------------

def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _buffers(model: PoseMagicModel) -> list[tuple[str, np.ndarray]]:
    items = [(p.name, p.data) for p in model.params()]
    for i, st in enumerate(model.norm_states()):
        items.append((f"norm_state{i}.running_mean", st.running_mean))
        items.append((f"norm_state{i}.running_var", st.running_var))
    return items


def checkpoint_bytes(model: PoseMagicModel, extra: Optional[dict] = None) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in _buffers(model):
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {"format": FORMAT_VERSION, "config": model.config.to_dict(),
              "skeleton": model.skeleton.to_dict(), "manifest": manifest,
              "payload_bytes": offset, "extra": extra or {}}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def save_checkpoint(model: PoseMagicModel, path: PathLike, extra: Optional[dict] = None) -> None:
    """Write atomically: a temporary file in the same directory is renamed over ``path``."""
    _atomic_write(Path(path), checkpoint_bytes(model, extra))


def read_checkpoint_header(path: PathLike) -> tuple[dict, bytes]:
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    start = len(MAGIC) + 8
    if len(blob) < start:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", blob[len(MAGIC):start])
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupted header") from None
    return header, blob[start + hlen:]


def _config_diff(expected: dict, found: dict) -> list[str]:
    keys = sorted(set(expected) | set(found))
    return [f"{k}: config says {expected.get(k)!r}, checkpoint has {found.get(k)!r}"
            for k in keys if expected.get(k) != found.get(k)]


def load_checkpoint(path: PathLike, expected_config: Optional[ModelConfig] = None) -> PoseMagicModel:
    """Rebuild a model bit-exactly.

    The manifest must match the shapes implied by the stored config, and the
    payload length must match the manifest.  With ``expected_config`` the
    stored config must equal it; otherwise the error lists every differing field.
    """
    header, payload = read_checkpoint_header(path)
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r}")
    if expected_config is not None:
        diff = _config_diff(expected_config.to_dict(), header["config"])
        if diff:
            raise CheckpointError(f"{path}: config mismatch\n  " + "\n  ".join(diff))
    cfg = ModelConfig.from_dict(header["config"])
    model = PoseMagicModel(cfg, Skeleton.from_dict(header["skeleton"]))
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, manifest says "
                              f"{header.get('payload_bytes')}")
    entries = {e["name"]: e for e in header["manifest"]}
    targets = _buffers(model)
    problems = []
    if set(entries) != {n for n, _ in targets}:
        missing = sorted({n for n, _ in targets} - set(entries))
        unknown = sorted(set(entries) - {n for n, _ in targets})
        problems.append(f"missing {missing}, unexpected {unknown}")
    for name, arr in targets:
        e = entries.get(name)
        if e is None:
            continue
        if tuple(e["shape"]) != arr.shape:
            problems.append(f"{name}: manifest shape {tuple(e['shape'])}, config implies {arr.shape}")
            continue
        end = e["offset"] + arr.size * _DTYPE.itemsize
        if e["offset"] < 0 or end > len(payload):
            problems.append(f"{name}: bytes {e['offset']}..{end} exceed payload of {len(payload)}")
            continue
        arr[...] = np.frombuffer(payload, dtype=_DTYPE, count=arr.size, offset=e["offset"]).reshape(arr.shape)
    if problems:
        raise CheckpointError(f"{path}: checkpoint does not match its config\n  " + "\n  ".join(problems))
    bad = [n for n, a in targets if not np.all(np.isfinite(a))]
    if bad:
        raise CheckpointError(f"{path}: non-finite values in {', '.join(bad[:5])}")
    model.eval()
    return model
