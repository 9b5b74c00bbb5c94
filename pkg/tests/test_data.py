import gzip
import struct

import numpy as np
import pytest

from sgnet.data import (
    Dataset, load_idx_images, load_idx_labels, load_image_file, load_raw_tensor, load_split,
    make_batches, parse_idx_images, parse_idx_labels, save_raw_tensor, write_idx_images, write_idx_labels,
)
from sgnet.errors import ConfigError, DataError, FormatError, LengthError


def idx_images_bytes(pixels):
    n, h, w = pixels.shape
    return struct.pack(">IIII", 2051, n, h, w) + pixels.astype(np.uint8).tobytes()


def test_parse_idx_images_hand_built():
    px = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    out = parse_idx_images(idx_images_bytes(px))
    assert out.shape == (2, 3, 4, 1) and out.dtype == np.float32
    np.testing.assert_array_equal(np.rint(out[..., 0] * 255), px)


def test_parse_idx_labels_hand_built():
    buf = struct.pack(">II", 2049, 3) + bytes([7, 0, 9])
    assert parse_idx_labels(buf) == [7, 0, 9]


@pytest.mark.parametrize("cut", [0, 10, 16 + 5])
def test_truncated_images_rejected(cut):
    buf = idx_images_bytes(np.zeros((2, 3, 3), np.uint8))[:cut]
    with pytest.raises(LengthError):
        parse_idx_images(buf)


def test_wrong_magic_rejected():
    buf = struct.pack(">II", 2051, 1) + b"\x00"
    with pytest.raises(FormatError):
        parse_idx_labels(buf)


def test_roundtrip_and_gzip(tmp_path, rng):
    px = rng.integers(0, 256, size=(4, 5, 6), dtype=np.uint8)
    write_idx_images(tmp_path / "img", px)
    write_idx_labels(tmp_path / "lbl", [1, 2, 3, 4])
    (tmp_path / "img.gz").write_bytes(gzip.compress((tmp_path / "img").read_bytes()))
    for p in ("img", "img.gz"):
        np.testing.assert_array_equal(np.rint(load_idx_images(tmp_path / p)[..., 0] * 255), px)
    assert load_idx_labels(tmp_path / "lbl") == [1, 2, 3, 4]


def test_write_idx_images_requires_uint8(tmp_path):
    with pytest.raises((DataError, ValueError)):
        write_idx_images(tmp_path / "x", np.zeros((1, 2, 2), np.float32))


def test_raw_tensor_roundtrip_and_truncation(tmp_path, rng):
    arr = rng.standard_normal((2, 3, 4)).astype(np.float32)
    save_raw_tensor(tmp_path / "t.sgt", arr)
    np.testing.assert_array_equal(load_raw_tensor(tmp_path / "t.sgt"), arr)
    (tmp_path / "bad.sgt").write_bytes((tmp_path / "t.sgt").read_bytes()[:-3])
    with pytest.raises(LengthError):
        load_raw_tensor(tmp_path / "bad.sgt")


def test_load_image_file_accepts_both_formats(tmp_path):
    save_raw_tensor(tmp_path / "m.sgt", np.ones((12, 12), np.float32))
    assert load_image_file(tmp_path / "m.sgt").shape == (12, 12, 1)
    write_idx_images(tmp_path / "i", np.zeros((3, 4, 4), np.uint8))
    assert load_image_file(tmp_path / "i", 2).shape == (4, 4, 1)
    with pytest.raises(DataError):
        load_image_file(tmp_path / "i", 3)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 4, 4, 1)), [0], 10)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 4, 4, 1)), [0, 10], 10)
    ds = Dataset(np.zeros((3, 4, 4, 1)), [0, 1, 2], 10)
    assert ds.images.flags.writeable is False
    assert len(ds.subset(2)) == 2 and len(ds.subset(None)) == 3


def test_make_batches_deterministic_and_complete():
    ds = Dataset(np.zeros((10, 2, 2, 1)), np.arange(10) % 3, 3)
    a = [b.indices.tolist() for b in make_batches(ds, 4, seed=5)]
    b = [b.indices.tolist() for b in make_batches(ds, 4, seed=5)]
    assert a == b
    assert sorted(sum(a, [])) == list(range(10))
    assert [len(x) for x in a] == [4, 4, 2]
    with pytest.raises(ConfigError):
        list(make_batches(ds, 0))


def test_load_split(toy_data):
    ds = load_split(toy_data, "train", limit=7)
    assert len(ds) == 7 and ds.image_shape == (28, 28, 1)
    with pytest.raises(DataError):
        load_split(toy_data / "missing", "train")
