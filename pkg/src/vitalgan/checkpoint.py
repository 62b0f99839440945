"""Binary checkpoint format.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"VGCK"
    offset 4   4 bytes   uint32 header length N
    offset 8   N bytes   UTF-8 JSON header, keys sorted, no whitespace
    offset 8+N           payload: float32 arrays, C order, concatenated

The header holds ``format_version``, ``arch``, ``train``, ``channels``,
``norm_stats`` (list of ``[mean, max_abs]`` or null), ``meta`` and
``tensors``: a list of ``{"name", "shape", "offset", "nbytes"}`` entries whose
offsets are relative to the payload start, ascending and contiguous.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

MAGIC = b"VGCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class OffsetOverlapError(CheckpointError):
    pass


class MalformedHeaderError(CheckpointError):
    pass


@dataclass
class CheckpointBundle:
    arch: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    channels: list[str] = field(default_factory=list)
    norm_stats: list[list[float]] | None = None
    meta: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def group(self, prefix: str, strip: bool = False) -> dict[str, np.ndarray]:
        """Tensors whose name starts with ``prefix + "."``."""
        head = prefix + "."
        return {
            (name[len(head):] if strip else name): value
            for name, value in self.tensors.items()
            if name.startswith(head)
        }


def _header(bundle: CheckpointBundle) -> tuple[dict, list[np.ndarray]]:
    directory = []
    arrays = []
    offset = 0
    for name, value in bundle.tensors.items():
        arr = np.asarray(value, dtype="<f4", order="C")  # ascontiguousarray would turn 0-d into 1-d
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        arrays.append(arr)
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "arch": bundle.arch,
        "train": bundle.train,
        "channels": list(bundle.channels),
        "norm_stats": bundle.norm_stats,
        "meta": bundle.meta,
        "tensors": directory,
    }
    return header, arrays


def save(bundle: CheckpointBundle, sink: BinaryIO) -> int:
    """Write ``bundle``; identical bundles always produce identical bytes."""
    header, arrays = _header(bundle)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    written = sink.write(MAGIC + struct.pack("<I", len(text)) + text)
    for arr in arrays:
        written += sink.write(arr.tobytes())
    return written


def dumps(bundle: CheckpointBundle) -> bytes:
    buf = io.BytesIO()
    save(bundle, buf)
    return buf.getvalue()


def load(source: BinaryIO) -> CheckpointBundle:
    raw = source.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise MalformedHeaderError("not a checkpoint file (bad magic)")
    (length,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + length:
        raise TruncatedPayloadError(f"header declares {length} bytes, file has {len(raw) - 8}")
    try:
        header = json.loads(raw[8 : 8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"unreadable header: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeaderError("header is not an object")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version!r}, expected {FORMAT_VERSION}")
    missing = {"arch", "train", "channels", "norm_stats", "meta", "tensors"} - set(header)
    if missing:
        raise MalformedHeaderError(f"header lacks {sorted(missing)}")

    payload = raw[8 + length :]
    tensors: dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        offset, nbytes = entry["offset"], entry["nbytes"]
        if int(np.prod(shape, dtype=np.int64)) * 4 != nbytes:
            raise MalformedHeaderError(f"{name}: shape {shape} does not match {nbytes} bytes")
        if offset < expected_offset:
            raise OffsetOverlapError(f"{name}: offset {offset} overlaps previous entry ending at {expected_offset}")
        if offset != expected_offset:
            raise MalformedHeaderError(f"{name}: gap before offset {offset}")
        if name in tensors:
            raise MalformedHeaderError(f"duplicate tensor name {name!r}")
        end = offset + nbytes
        if end > len(payload):
            raise TruncatedPayloadError(f"{name}: payload ends at byte {len(payload)}, entry needs {end}")
        tensors[name] = np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape).astype(np.float64)
        expected_offset = end
    if len(payload) != expected_offset:
        raise MalformedHeaderError(f"{len(payload) - expected_offset} trailing bytes after payload")
    return CheckpointBundle(
        arch=header["arch"],
        train=header["train"],
        channels=list(header["channels"]),
        norm_stats=header["norm_stats"],
        meta=header["meta"],
        tensors=tensors,
    )


def loads(data: bytes) -> CheckpointBundle:
    return load(io.BytesIO(data))


def save_file(bundle: CheckpointBundle, path) -> int:
    with open(path, "wb") as fh:
        return save(bundle, fh)


def load_file(path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        return load(fh)
