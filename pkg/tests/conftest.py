import os
from pathlib import Path

import numpy as np
import pytest

from sgnet.data import write_idx_images, write_idx_labels

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_dir():
    """The MNIST root if all four IDX files are present, else None."""
    for cand in (os.environ.get("SGN_DATA_DIR"), "/root/data/mnist"):
        if cand and all(any(Path(cand, f + ext).is_file() for ext in ("", ".gz")) for f in MNIST_FILES):
            return Path(cand)
    return None


needs_mnist = pytest.mark.skipif(mnist_dir() is None, reason="MNIST IDX files not found (set SGN_DATA_DIR)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_toy_split(root: Path, n_train=40, n_test=20, shape=(28, 28), classes=10, seed=0):
    """Tiny synthetic IDX dataset: class k lights up horizontal band k."""
    g = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for stem, n in (("train", n_train), ("t10k", n_test)):
        labels = np.arange(n) % classes
        imgs = g.integers(0, 40, size=(n, *shape), dtype=np.uint8)
        band = max(1, shape[0] // classes)
        for i, k in enumerate(labels):
            imgs[i, k * band : (k + 1) * band] = 230
        write_idx_images(root / f"{stem}-images-idx3-ubyte", imgs)
        write_idx_labels(root / f"{stem}-labels-idx1-ubyte", labels.tolist())
    return root


@pytest.fixture
def toy_data(tmp_path):
    return write_toy_split(tmp_path / "toy")


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """``criterion(n, name, ok, **detail)`` records one acceptance line and asserts it."""

    def record(n, name, ok, **detail):
        _CRITERIA[n] = (name, bool(ok), detail)
        assert ok, f"criterion {n} {name} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA, key=str):
        name, ok, detail = _CRITERIA[n]
        extra = " ".join(f"{k}={v}" for k, v in detail.items())
        terminalreporter.write_line(f"criterion {n} {name}: {'PASS' if ok else 'FAIL'} {extra}".rstrip())
