"""Model file format.

Little-endian layout::

    b"SGN1" | u16 version | u32 config length | config JSON (canonical)
    | u32 CRC32(config + payload) | float32 payload

The payload holds every parameter, then every batch-norm running statistic,
in the model's declared order.
"""
from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, DataError, FormatError, LengthError, UnsupportedVersionError
from .model import SgnConfig, SgnModel

MAGIC = b"SGN1"
VERSION = 1


def model_bytes(model: SgnModel) -> bytes:
    cfg = model.config.to_json().encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in model.state_arrays())
    crc = zlib.crc32(cfg + payload)
    return MAGIC + struct.pack("<HI", VERSION, len(cfg)) + cfg + struct.pack("<I", crc) + payload


def save_model(model: SgnModel, path) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(model_bytes(model))
    os.replace(tmp, path)


def model_from_bytes(buf: bytes, source="<bytes>") -> SgnModel:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad model magic {buf[:4]!r} (expected {MAGIC!r})")
    if len(buf) < 10:
        raise LengthError(f"{source}: truncated header")
    version, cfg_len = struct.unpack("<HI", buf[4:10])
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: model format version {version} unsupported (expected {VERSION})")
    cfg_end = 10 + cfg_len
    if len(buf) < cfg_end + 4:
        raise LengthError(f"{source}: truncated config block")
    cfg_bytes = buf[10:cfg_end]
    (crc,) = struct.unpack("<I", buf[cfg_end : cfg_end + 4])
    payload = buf[cfg_end + 4 :]
    if zlib.crc32(cfg_bytes + payload) != crc:
        # distinguish truncation from corruption when the config is still readable
        try:
            expected = _payload_size(SgnConfig.from_json(cfg_bytes.decode("utf-8")))
        except Exception:
            expected = None
        if expected is not None and len(payload) != expected:
            raise LengthError(f"{source}: payload has {len(payload)} bytes, config implies {expected}")
        raise ChecksumError(f"{source}: CRC32 mismatch")
    try:
        config = SgnConfig.from_json(cfg_bytes.decode("utf-8"))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{source}: unreadable config block: {exc}") from exc
    model = SgnModel(config)
    arrays = model.state_arrays()
    need = sum(a.size for _, a in arrays) * 4
    if len(payload) != need:
        raise LengthError(f"{source}: payload has {len(payload)} bytes, config implies {need}")
    flat = np.frombuffer(payload, dtype="<f4")
    offset = 0
    for _, arr in arrays:
        arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
        offset += arr.size
    return model


def _payload_size(config: SgnConfig) -> int:
    return sum(a.size for _, a in SgnModel(config).state_arrays()) * 4


def load_model(path) -> SgnModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such model file")
    return model_from_bytes(path.read_bytes(), path)
