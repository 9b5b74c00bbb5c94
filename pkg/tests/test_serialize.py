import struct
import zlib

import numpy as np
import pytest

from sgnet.attention import MhaConfig
from sgnet.errors import ChecksumError, DataError, FormatError, LengthError, UnsupportedVersionError
from sgnet.model import SgnConfig, SgnModel
from sgnet.serialize import MAGIC, load_model, model_bytes, model_from_bytes, save_model
from sgnet.verify import toy_config


@pytest.mark.parametrize("cfg", [SgnConfig(), SgnConfig(sg_layers=(1, 3), skip_connection=True, mha=MhaConfig())])
def test_roundtrip_is_bitwise(tmp_path, rng, cfg):
    m = SgnModel(cfg)
    for _, a in m.state_arrays():  # perturb so the test does not rely on init
        a += rng.standard_normal(a.shape).astype(a.dtype) * 0.01
    save_model(m, tmp_path / "m.sgn")
    back = load_model(tmp_path / "m.sgn")
    assert back.config == m.config
    for (na, a), (nb, b) in zip(m.state_arrays(), back.state_arrays()):
        assert na == nb and np.array_equal(a, b)
    x = rng.random((4, 28, 28, 1), dtype=np.float32)
    assert np.array_equal(m.forward(x)[0], back.forward(x)[0])
    assert model_bytes(back) == (tmp_path / "m.sgn").read_bytes()


def test_header_layout():
    buf = model_bytes(SgnModel(toy_config()))
    assert buf[:4] == MAGIC
    version, n = struct.unpack("<HI", buf[4:10])
    assert version == 1
    assert SgnConfig.from_json(buf[10 : 10 + n].decode()) == toy_config()
    (crc,) = struct.unpack("<I", buf[10 + n : 14 + n])
    assert crc == zlib.crc32(buf[10 : 10 + n] + buf[14 + n :])


def _corrupt(buf, kind):
    if kind == "magic":
        return b"XXXX" + buf[4:]
    if kind == "version":
        return buf[:4] + struct.pack("<H", 9) + buf[6:]
    if kind == "truncated":
        return buf[:-17]
    if kind == "header":
        return buf[:7]
    if kind == "flipped":
        b = bytearray(buf)
        b[-5] ^= 0xFF
        return bytes(b)
    raise AssertionError(kind)


@pytest.mark.parametrize("kind,exc", [
    ("magic", FormatError), ("version", UnsupportedVersionError), ("truncated", LengthError),
    ("header", LengthError), ("flipped", ChecksumError),
])
def test_corruption_rejected(kind, exc):
    buf = model_bytes(SgnModel(toy_config()))
    with pytest.raises(exc):
        model_from_bytes(_corrupt(buf, kind))
    assert issubclass(exc, DataError)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_model(tmp_path / "nope.sgn")


def test_save_is_atomic_no_temp_left(tmp_path):
    save_model(SgnModel(toy_config()), tmp_path / "m.sgn")
    assert [p.name for p in tmp_path.iterdir()] == ["m.sgn"]
