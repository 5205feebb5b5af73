"""Self-describing tensor archives for weights (``.tns``), volumes (``.vol``)
and label masks (``.msk``).

Byte layout::

    [8 bytes]  little-endian u64 N = header length
    [N bytes]  canonical JSON header (sorted keys, no whitespace)
    [...]      raw little-endian tensor buffers

The header maps every tensor name to ``{"dtype", "shape", "data_offsets"}``
and carries a ``"__metadata__"`` string map. Offsets are relative to the
start of the data section; tensors are laid out contiguously in sorted-name
order, so two equal checkpoints always serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    MalformedHeaderError,
    OffsetMismatchError,
    TruncatedArchiveError,
    UnsupportedDtypeError,
    VolumeValidationError,
)

FORMAT_VERSION = "1"
METADATA_KEY = "__metadata__"
VOXELS_KEY = "voxels"

_DTYPES = {"F32": np.dtype("<f4"), "U16": np.dtype("<u2")}
MODALITIES = ("CT", "MRI", "other")


@dataclass
class Checkpoint:
    """Named tensors plus a string-to-string metadata map."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        tensors = {}
        for name, value in self.tensors.items():
            _check_name(name)
            tensors[name] = np.ascontiguousarray(value, dtype=np.float32)
        self.tensors = tensors
        self.metadata = {str(k): str(v) for k, v in self.metadata.items()}
        self.metadata.setdefault("format_version", FORMAT_VERSION)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def bit_equal(self, other: "Checkpoint") -> bool:
        """True when names, shapes, raw bytes and metadata all match."""
        if self.metadata != other.metadata or set(self.tensors) != set(other.tensors):
            return False
        return all(
            self.tensors[k].shape == other.tensors[k].shape
            and self.tensors[k].tobytes() == other.tensors[k].tobytes()
            for k in self.tensors
        )


@dataclass
class Volume:
    """Intensity grid of shape ``[H, W, D]`` or ``[C, H, W, D]``."""

    data: np.ndarray
    modality: str = "CT"
    clip_range: tuple[float, float] | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim not in (3, 4) or self.data.shape[-1] < 1 or 0 in self.data.shape:
            raise VolumeValidationError(f"volume must be [H,W,D] or [C,H,W,D], got {self.data.shape}")
        if self.modality not in MODALITIES:
            raise VolumeValidationError(f"unknown modality {self.modality!r}")
        if self.clip_range is not None:
            lo, hi = (float(v) for v in self.clip_range)
            self.clip_range = (lo, hi)

    @property
    def channels_first(self) -> np.ndarray:
        """The voxels as ``[C, H, W, D]`` (adds a unit channel axis if needed)."""
        return self.data if self.data.ndim == 4 else self.data[None]

    @property
    def depth(self) -> int:
        return self.data.shape[-1]


@dataclass
class SegmentationMask:
    """Integer class ids of shape ``[H, W, D]``."""

    data: np.ndarray
    num_classes: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise VolumeValidationError(f"mask must be [H,W,D], got shape {data.shape}")
        if self.num_classes < 1 or self.num_classes > 65536:
            raise VolumeValidationError(f"num_classes out of range: {self.num_classes}")
        if data.size and (data.min() < 0 or data.max() >= self.num_classes):
            raise VolumeValidationError(
                f"mask ids must lie in [0, {self.num_classes}), found [{data.min()}, {data.max()}]"
            )
        self.data = np.ascontiguousarray(data, dtype=np.uint16)


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not name or "\x00" in name or name == METADATA_KEY:
        raise ValueError(f"invalid tensor name {name!r}")


def _encode(entries: list[tuple[str, np.ndarray, str]], metadata: Mapping[str, str]) -> bytes:
    header: dict[str, object] = {METADATA_KEY: dict(metadata)}
    chunks = []
    offset = 0
    for name, array, dtype in sorted(entries, key=lambda e: e[0]):
        raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
        header[name] = {
            "dtype": dtype,
            "shape": list(array.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def _decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    buf = bytes(buf)
    if len(buf) < 8:
        raise TruncatedArchiveError(f"buffer of {len(buf)} bytes is shorter than the 8-byte length prefix")
    (n,) = struct.unpack("<Q", buf[:8])
    if len(buf) < 8 + n:
        raise TruncatedArchiveError(f"header declares {n} bytes but only {len(buf) - 8} remain")
    try:
        header = json.loads(buf[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeaderError("header must be a JSON object")

    metadata = header.pop(METADATA_KEY, {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise MalformedHeaderError("__metadata__ must be a map of strings")

    data = buf[8 + n :]
    spans = []
    tensors = {}
    for name, info in header.items():
        if not name or "\x00" in name:
            raise MalformedHeaderError(f"invalid tensor name {name!r}")
        try:
            dtype_tag = info["dtype"]
            shape = info["shape"]
            begin, end = info["data_offsets"]
        except (TypeError, KeyError, ValueError):
            raise MalformedHeaderError(f"entry {name!r} lacks dtype/shape/data_offsets") from None
        if not isinstance(shape, list) or not all(
            isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape
        ):
            raise MalformedHeaderError(f"entry {name!r} has invalid shape {shape!r}")
        if not all(isinstance(o, int) and not isinstance(o, bool) for o in (begin, end)):
            raise MalformedHeaderError(f"entry {name!r} has non-integer offsets")
        if dtype_tag not in _DTYPES:
            raise UnsupportedDtypeError(f"entry {name!r} has unsupported dtype {dtype_tag!r}")
        dtype = _DTYPES[dtype_tag]
        if not 0 <= begin <= end:
            raise OffsetMismatchError(f"entry {name!r} has invalid span [{begin}, {end})")
        if end > len(data):
            raise TruncatedArchiveError(
                f"entry {name!r} ends at byte {end} but the data section holds {len(data)}"
            )
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if end - begin != expected:
            raise OffsetMismatchError(
                f"entry {name!r}: shape {shape} needs {expected} bytes, span holds {end - begin}"
            )
        spans.append((begin, end, name))
        tensors[name] = np.frombuffer(data, dtype=dtype, count=expected // dtype.itemsize, offset=begin)
        tensors[name] = tensors[name].reshape(shape).astype(dtype.newbyteorder("="))

    cursor = 0
    for begin, end, name in sorted(spans):
        if begin < cursor:
            raise OffsetMismatchError(f"entry {name!r} overlaps the preceding tensor")
        if begin > cursor:
            raise OffsetMismatchError(f"gap of {begin - cursor} bytes before entry {name!r}")
        cursor = end
    if cursor != len(data):
        raise OffsetMismatchError(f"{len(data) - cursor} trailing bytes after the last tensor")
    return tensors, metadata


def write_archive(ckpt: Checkpoint) -> bytes:
    return _encode([(k, v, "F32") for k, v in ckpt.tensors.items()], ckpt.metadata)


def read_archive(buf: bytes) -> Checkpoint:
    tensors, metadata = _decode(buf)
    for name, array in tensors.items():
        if array.dtype != np.float32:
            raise UnsupportedDtypeError(f"weight archive entry {name!r} must be F32")
    return Checkpoint(tensors, metadata)


def write_volume(v: Volume | SegmentationMask) -> bytes:
    if isinstance(v, SegmentationMask):
        meta = {"kind": "mask", "num_classes": str(v.num_classes)}
        entry = (VOXELS_KEY, v.data, "U16")
    else:
        meta = {"kind": "volume", "modality": v.modality}
        if v.clip_range is not None:
            meta["clip_range"] = json.dumps([_compact(x) for x in v.clip_range], separators=(",", ":"))
        entry = (VOXELS_KEY, v.data, "F32")
    meta["format_version"] = FORMAT_VERSION
    meta["shape_order"] = "C,H,W,D" if v.data.ndim == 4 else "H,W,D"
    return _encode([entry], meta)


def _compact(x: float):
    return int(x) if float(x).is_integer() else float(x)


def read_volume(buf: bytes) -> Volume | SegmentationMask:
    tensors, meta = _decode(buf)
    if set(tensors) != {VOXELS_KEY}:
        raise MalformedHeaderError(f"volume archive must hold exactly one {VOXELS_KEY!r} entry")
    voxels = tensors[VOXELS_KEY]
    kind = meta.get("kind")
    if kind == "mask":
        if voxels.dtype != np.uint16:
            raise UnsupportedDtypeError("mask voxels must be U16")
        try:
            num_classes = int(meta["num_classes"])
        except (KeyError, ValueError):
            raise MalformedHeaderError("mask metadata lacks an integer num_classes") from None
        return SegmentationMask(voxels, num_classes)
    if kind == "volume":
        if voxels.dtype != np.float32:
            raise UnsupportedDtypeError("volume voxels must be F32")
        clip = meta.get("clip_range")
        if clip is not None:
            try:
                lo, hi = json.loads(clip)
                clip = (float(lo), float(hi))
            except (ValueError, TypeError):
                raise MalformedHeaderError(f"bad clip_range metadata {clip!r}") from None
        return Volume(voxels, modality=meta.get("modality", "other"), clip_range=clip)
    raise MalformedHeaderError(f"unknown volume kind {kind!r}")


def rename_tensors(ckpt: Checkpoint, table: Mapping[str, str], strict: bool = False) -> Checkpoint:
    """Map foreign tensor names to canonical ones.

    Names absent from ``table`` are kept as-is unless ``strict`` is set, in
    which case they raise ``KeyError``.
    """
    out = {}
    for name, value in ckpt.tensors.items():
        if name in table:
            new = table[name]
        elif strict:
            raise KeyError(f"no rename rule for tensor {name!r}")
        else:
            new = name
        if new in out:
            raise ValueError(f"rename table maps two tensors onto {new!r}")
        out[new] = value
    return Checkpoint(out, dict(ckpt.metadata))


def save(obj: Checkpoint | Volume | SegmentationMask, path: str | Path) -> None:
    data = write_archive(obj) if isinstance(obj, Checkpoint) else write_volume(obj)
    Path(path).write_bytes(data)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return read_archive(Path(path).read_bytes())


def load_volume(path: str | Path) -> Volume | SegmentationMask:
    return read_volume(Path(path).read_bytes())
