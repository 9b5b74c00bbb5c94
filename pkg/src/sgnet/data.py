"""IDX / raw-tensor ingestion, datasets and batching."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, LengthError

IDX_IMAGE_MAGIC = 2051  # 0x00000803
IDX_LABEL_MAGIC = 2049  # 0x00000801
RAW_TENSOR_MAGIC = b"SGT1"

# file stems probed by load_split, in order
_SPLIT_STEMS = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train-images.sgt"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "t10k-images.sgt"),
}


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _check_magic(path, got: int, expected: int) -> None:
    if got != expected:
        raise FormatError(f"{path}: bad IDX magic {got} (expected {expected})")


def parse_idx_images(buf: bytes, source="<bytes>") -> np.ndarray:
    if len(buf) < 16:
        raise LengthError(f"{source}: truncated IDX header ({len(buf)} bytes)")
    magic, count, rows, cols = struct.unpack(">IIII", buf[:16])
    _check_magic(source, magic, IDX_IMAGE_MAGIC)
    need = count * rows * cols
    payload = buf[16 : 16 + need]
    if len(payload) != need:
        raise LengthError(f"{source}: payload has {len(payload)} bytes, header declares {need}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols, 1)
    return pixels.astype(np.float32) / np.float32(255.0)


def parse_idx_labels(buf: bytes, source="<bytes>") -> list[int]:
    if len(buf) < 8:
        raise LengthError(f"{source}: truncated IDX header ({len(buf)} bytes)")
    magic, count = struct.unpack(">II", buf[:8])
    _check_magic(source, magic, IDX_LABEL_MAGIC)
    payload = buf[8 : 8 + count]
    if len(payload) != count:
        raise LengthError(f"{source}: payload has {len(payload)} bytes, header declares {count}")
    return list(payload)


def load_idx_images(path) -> np.ndarray:
    """Read an IDX3 image file into a float32 (count, rows, cols, 1) array in [0, 1]."""
    return parse_idx_images(_read_bytes(path), path)


def load_idx_labels(path) -> list[int]:
    return parse_idx_labels(_read_bytes(path), path)


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_idx_images(path, pixels: np.ndarray) -> None:
    """Write uint8 pixels shaped (count, rows, cols) or (count, rows, cols, 1)."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 4:
        pixels = pixels[..., 0]
    if pixels.dtype != np.uint8:
        raise ConfigError("write_idx_images expects uint8 pixels")
    count, rows, cols = pixels.shape
    _atomic_write(path, struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols) + pixels.tobytes())


def write_idx_labels(path, labels: Sequence[int]) -> None:
    data = bytes(int(v) for v in labels)
    _atomic_write(path, struct.pack(">II", IDX_LABEL_MAGIC, len(data)) + data)


def load_raw_tensor(path) -> np.ndarray:
    """Read an ``SGT1`` file: magic, u32 rank, rank x u32 dims, float32 LE payload."""
    buf = _read_bytes(path)
    if buf[:4] != RAW_TENSOR_MAGIC:
        raise FormatError(f"{path}: bad raw-tensor magic {buf[:4]!r} (expected {RAW_TENSOR_MAGIC!r})")
    if len(buf) < 8:
        raise LengthError(f"{path}: truncated header")
    (rank,) = struct.unpack("<I", buf[4:8])
    head = 8 + 4 * rank
    if len(buf) < head:
        raise LengthError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", buf[8:head])
    need = 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) - head != need:
        raise LengthError(f"{path}: payload has {len(buf) - head} bytes, dims declare {need}")
    return np.frombuffer(buf[head:], dtype="<f4").reshape(dims).astype(np.float32)


def save_raw_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = RAW_TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    _atomic_write(path, head + arr.tobytes())


def load_image_file(path, index: int = 0) -> np.ndarray:
    """Load one image as (H, W, C) from an IDX3 file or an SGT1 tensor.

    SGT1 tensors may be (H, W), (H, W, C) or (N, H, W, C); ``index`` picks the
    image from stacked inputs.
    """
    buf = _read_bytes(path)
    if buf[:4] == RAW_TENSOR_MAGIC:
        arr = load_raw_tensor(path)
        if arr.ndim == 2:
            arr = arr[..., None]
        elif arr.ndim == 4:
            arr = arr[index]
        elif arr.ndim != 3:
            raise FormatError(f"{path}: expected rank 2-4 tensor, got rank {arr.ndim}")
        return arr
    images = parse_idx_images(buf, path)
    if not 0 <= index < len(images):
        raise DataError(f"{path}: index {index} out of range (count {len(images)})")
    return images[index]


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise DataError(f"images must be (count, H, W, C), got shape {images.shape}")
        if len(images) != len(labels):
            raise DataError(f"{len(images)} images but {len(labels)} labels")
        if self.class_count < 1:
            raise DataError("class_count must be positive")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DataError(f"label outside [0, {self.class_count})")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, limit: Optional[int]) -> "Dataset":
        """First ``limit`` rows (deterministic desk-scale subset)."""
        if limit is None or limit >= len(self):
            return self
        return Dataset(self.images[:limit], self.labels[:limit], self.class_count)

    def standardized(self, mean=None, std=None) -> "Dataset":
        """Per-channel (x - mean) / std; statistics default to this dataset's own."""
        if mean is None:
            mean = self.images.mean(axis=(0, 1, 2), dtype=np.float64)
        if std is None:
            std = self.images.std(axis=(0, 1, 2), dtype=np.float64)
        std = np.where(np.asarray(std) > 0, std, 1.0)
        imgs = ((self.images - mean) / std).astype(np.float32)
        return Dataset(imgs, self.labels, self.class_count)


@dataclass(frozen=True)
class Batch:
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray = field(repr=False)


def make_batches(ds: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True) -> Iterator[Batch]:
    """One epoch of batches; order is a pure function of ``seed`` when shuffling."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(ds.images[idx], ds.labels[idx], idx)


def load_split(root, split: str, limit: Optional[int] = None, class_count: int = 10) -> Dataset:
    """Load ``train`` or ``test`` from a directory of IDX files (optionally .gz).

    An ``SGT1`` image tensor (``train-images.sgt`` / ``t10k-images.sgt``)
    shaped (N, H, W, C) takes precedence over the IDX image file when present.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: data directory not found")
    img_stem, lbl_stem, raw_name = _SPLIT_STEMS[split]

    def find(stem):
        for cand in (root / stem, root / f"{stem}.gz"):
            if cand.is_file():
                return cand
        raise DataError(f"{root}: missing {stem}[.gz]")

    raw = root / raw_name
    images = load_raw_tensor(raw) if raw.is_file() else load_idx_images(find(img_stem))
    labels = load_idx_labels(find(lbl_stem))
    if images.ndim != 4:
        raise DataError(f"{raw}: raw image tensor must be rank 4")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images, labels, class_count)
