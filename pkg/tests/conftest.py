import gzip
import os

import numpy as np
import pytest

from fffnet import data
from fffnet.numeric import make_rng

RESULTS_DIR = os.path.join(os.path.dirname(__file__), "..", "results")


@pytest.fixture
def rng():
    return make_rng(0)


def synthetic_dataset(n_train=512, n_test=128, input_dim=20, classes=4,
                      seed=0):
    """Learnable toy problem: labels from a planted random linear map."""
    r = make_rng(seed)
    w = r.normal(size=(classes, input_dim))
    x_train = r.uniform(0, 1, (n_train, input_dim)).astype(np.float32)
    x_test = r.uniform(0, 1, (n_test, input_dim)).astype(np.float32)
    y_train = np.argmax(x_train @ w.T, axis=1).astype(np.int64)
    y_test = np.argmax(x_test @ w.T, axis=1).astype(np.int64)
    return data.Dataset("synthetic", x_train, y_train, x_test, y_test)


@pytest.fixture
def toy_ds():
    return synthetic_dataset()


@pytest.fixture(scope="session")
def mnist():
    return data.load("mnist")


@pytest.fixture(scope="session")
def fashion():
    return data.load("fashion_mnist")


def write_fake_dataset(dirpath, seed=0, n_train=64, n_test=16):
    """Tiny IDX .gz files shaped like the real thing, plus their manifest."""
    r = make_rng(seed)
    os.makedirs(dirpath, exist_ok=True)
    manifest = {}
    for fname, shape in (
            ("train-images-idx3-ubyte.gz", (n_train, 28, 28)),
            ("train-labels-idx1-ubyte.gz", (n_train,)),
            ("t10k-images-idx3-ubyte.gz", (n_test, 28, 28)),
            ("t10k-labels-idx1-ubyte.gz", (n_test,))):
        if len(shape) == 1:
            arr = r.integers(0, 10, size=shape).astype(np.uint8)
        else:
            arr = r.integers(0, 256, size=shape).astype(np.uint8)
        raw = data.serialize_idx(arr)
        path = os.path.join(dirpath, fname)
        with gzip.open(path, "wb") as fh:
            fh.write(raw)
        manifest[fname] = data.sha256_file(path)
    return manifest
