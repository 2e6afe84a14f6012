"""Binary checkpoint files.

Layout (little-endian)::

    b"SKRM"  u32 version=1
    u32 len, utf-8 config record ("key=value" lines; training metadata as meta.*)
    u32 tensor count
    per tensor: u32 len + utf-8 name, u32 rank, u32 * rank dims, float32 payload
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadMagicError, CheckpointError, ChecksumError, ShapeMismatchError,
                     TruncatedCheckpointError, VersionMismatchError)
from .unet import UNetConfig, param_shapes

MAGIC = b"SKRM"
VERSION = 1


@dataclass
class Checkpoint:
    config: UNetConfig
    params: dict
    metadata: dict = field(default_factory=dict)


def _config_record(config: UNetConfig, metadata):
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    for key, value in metadata.items():
        lines.append(f"meta.{key}={value!r}" if isinstance(value, float) else f"meta.{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _parse_config_record(text):
    cfg, meta = {}, {}
    for line in text.splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        if key.startswith("meta."):
            meta[key[5:]] = _coerce(value)
        else:
            cfg[key] = value
    config = UNetConfig(
        depth=int(cfg["depth"]),
        base_channels=int(cfg["base_channels"]),
        num_classes=int(cfg["num_classes"]),
        activation=cfg["activation"],
        dropout_rate=float(cfg["dropout_rate"]),
        input_size=tuple(int(v) for v in cfg["input_size"].split(",")),
        in_channels=int(cfg.get("in_channels", 1)),
    )
    return config, meta


def _coerce(value):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def encode_checkpoint(ckpt: Checkpoint):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    record = _config_record(ckpt.config, ckpt.metadata)
    parts += [struct.pack("<I", len(record)), record, struct.pack("<I", len(ckpt.params))]
    for name, arr in ckpt.params.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [struct.pack("<I", len(raw_name)), raw_name,
                  struct.pack("<I", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape),
                  arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path, ckpt: Checkpoint):
    """Write atomically: readers never observe a half-written file."""
    data = encode_checkpoint(ckpt)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def decode_checkpoint(data, expected_config: UNetConfig | None = None, source="<bytes>"):
    if len(data) < len(MAGIC) and MAGIC.startswith(bytes(data)):
        raise TruncatedCheckpointError(f"{source}: file ends inside the magic string")
    if data[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {VERSION}")
    record = r.take(r.u32()).decode("utf-8")
    count = r.u32()
    stored = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        stored[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    body_end = r.pos
    crc = r.u32()
    if r.pos != len(data):
        raise ChecksumError(f"{source}: {len(data) - r.pos} unexpected trailing bytes")
    if zlib.crc32(data[:body_end]) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{source}: CRC32 mismatch")

    config, metadata = _parse_config_record(record)
    _check_shapes(param_shapes(config), stored)
    if expected_config is not None:
        _check_shapes(param_shapes(expected_config), stored)
    return Checkpoint(config=config, params=stored, metadata=metadata)


def _check_shapes(expected, stored):
    for name, shape in expected.items():
        if name not in stored:
            raise ShapeMismatchError(name, shape, None)
        if tuple(stored[name].shape) != tuple(shape):
            raise ShapeMismatchError(name, shape, stored[name].shape)
    for name, arr in stored.items():
        if name not in expected:
            raise ShapeMismatchError(name, None, arr.shape)


def load_checkpoint(path, expected_config: UNetConfig | None = None):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return decode_checkpoint(data, expected_config, source=os.fspath(path))
