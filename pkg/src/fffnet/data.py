"""Dataset download, verification, IDX parsing, and batch iteration.

Files are cached under FFFNET_CACHE (default ~/.cache/fffnet/<dataset>/) and
verified against pinned SHA-256 digests on every load, not just on download.
Extra mirrors can be supplied via FFFNET_DATA_MIRRORS as a comma-separated
list of URL prefixes, each optionally containing a {dataset} placeholder;
they are tried before the built-in ones. file:// URLs work, which keeps the
fetch path testable offline.
"""

import gzip
import hashlib
import os
import struct
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, IntegrityError

FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)

MANIFEST = {
    "mnist": {
        "train-images-idx3-ubyte.gz":
            "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609",
        "train-labels-idx1-ubyte.gz":
            "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c",
        "t10k-images-idx3-ubyte.gz":
            "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6",
        "t10k-labels-idx1-ubyte.gz":
            "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6",
    },
    "fashion_mnist": {
        "train-images-idx3-ubyte.gz":
            "3aede38d61863908ad78613f6a32ed271626dd12800ba2636569512369268a84",
        "train-labels-idx1-ubyte.gz":
            "a04f17134ac03560a47e3764e11b92fc97de4d1bfaf8ba1a3aa29af54cc90845",
        "t10k-images-idx3-ubyte.gz":
            "346e55b948d973a97e58d2351dde16a484bd415d4595297633bb08f03db6a073",
        "t10k-labels-idx1-ubyte.gz":
            "67da17c76eaffca5446c3361aaab5c3cd6d1c2608764d35dfb1850b086bf8dd5",
    },
}

DEFAULT_MIRRORS = {
    "mnist": (
        "https://storage.googleapis.com/cvdf-datasets/mnist/",
        "https://ossci-datasets.s3.amazonaws.com/mnist/",
    ),
    "fashion_mnist": (
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    ),
}

EXPECTED_COUNTS = {"train": 60000, "test": 10000}


def cache_dir(dataset, root=None):
    if root is None:
        root = os.environ.get("FFFNET_CACHE",
                              os.path.join(os.path.expanduser("~"),
                                           ".cache", "fffnet"))
    return os.path.join(root, dataset)


def _mirrors(dataset):
    urls = []
    env = os.environ.get("FFFNET_DATA_MIRRORS", "")
    for tpl in filter(None, (t.strip() for t in env.split(","))):
        urls.append(tpl.format(dataset=dataset))
    urls.extend(DEFAULT_MIRRORS.get(dataset, ()))
    if not urls:
        raise DataError(f"no mirrors known for dataset {dataset!r}")
    return urls


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(url, dest):
    os.makedirs(os.path.dirname(dest), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(dest), suffix=".part")
    try:
        with os.fdopen(fd, "wb") as out, urllib.request.urlopen(
                url, timeout=60) as resp:
            while True:
                chunk = resp.read(1 << 20)
                if not chunk:
                    break
                out.write(chunk)
        os.replace(tmp, dest)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def fetch(dataset, root=None, force=False):
    """Ensure all four files are cached and verified; returns the directory.

    A cached file with a bad digest is treated as corrupt and re-downloaded.
    Mirrors are tried in order; the error lists every attempt on failure.
    """
    if dataset not in MANIFEST:
        raise DataError(f"unknown dataset {dataset!r}; "
                        f"have {sorted(MANIFEST)}")
    dirpath = cache_dir(dataset, root)
    for fname, want in MANIFEST[dataset].items():
        path = os.path.join(dirpath, fname)
        if not force and os.path.exists(path):
            if sha256_file(path) == want:
                continue
            os.unlink(path)
        errors = []
        for base in _mirrors(dataset):
            url = base + fname
            try:
                _download(url, path)
            except (urllib.error.URLError, OSError, ValueError) as exc:
                errors.append(f"{url}: {exc}")
                continue
            got = sha256_file(path)
            if got == want:
                break
            os.unlink(path)
            errors.append(f"{url}: sha256 mismatch "
                          f"(got {got[:12]}.., want {want[:12]}..)")
        else:
            raise IntegrityError(
                f"could not obtain a verified copy of {dataset}/{fname}:\n  "
                + "\n  ".join(errors))
    return dirpath


def parse_idx(buf):
    """Decode an IDX byte string into a uint8 ndarray."""
    if len(buf) < 4:
        raise DataError("IDX buffer shorter than its magic number")
    if buf[0] != 0 or buf[1] != 0:
        raise DataError("bad IDX magic: first two bytes must be zero")
    if buf[2] != 0x08:
        raise DataError(f"unsupported IDX type code 0x{buf[2]:02x}; "
                        "only unsigned byte (0x08) is handled")
    ndim = buf[3]
    if ndim < 1:
        raise DataError("IDX dimension count must be >= 1")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataError("IDX buffer truncated inside dimension sizes")
    dims = struct.unpack(">" + "i" * ndim, buf[4:header])
    if any(d < 0 for d in dims):
        raise DataError(f"negative IDX dimension in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header != count:
        raise DataError(f"IDX payload is {len(buf) - header} bytes, "
                        f"expected {count} for dims {dims}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def serialize_idx(arr):
    """Encode a uint8 ndarray as IDX bytes; inverse of parse_idx."""
    if arr.dtype != np.uint8:
        raise DomainError(f"IDX writer takes uint8 arrays, got {arr.dtype}")
    if arr.ndim < 1 or arr.ndim > 255:
        raise DomainError(f"IDX rank must be in 1..255, got {arr.ndim}")
    head = bytes([0, 0, 0x08, arr.ndim])
    head += struct.pack(">" + "i" * arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def _read_gz(path):
    with gzip.open(path, "rb") as fh:
        return fh.read()


@dataclass(frozen=True)
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def input_dim(self):
        return self.x_train.shape[1]

    @property
    def class_count(self):
        return int(self.y_train.max()) + 1


def load(dataset, root=None, fetch_missing=True):
    """Load a dataset as float32 rows in [0, 1] plus int64 labels."""
    dirpath = cache_dir(dataset, root)
    have_all = all(os.path.exists(os.path.join(dirpath, f)) for f in FILES)
    if not have_all:
        if not fetch_missing:
            raise DataError(f"dataset {dataset!r} not cached at {dirpath} "
                            "and fetching is disabled")
        fetch(dataset, root)
    else:
        for fname, want in MANIFEST[dataset].items():
            path = os.path.join(dirpath, fname)
            if sha256_file(path) != want:
                if not fetch_missing:
                    raise IntegrityError(f"checksum mismatch for {path}")
                fetch(dataset, root)
                break
    parts = {}
    for split, img, lab in (("train", FILES[0], FILES[1]),
                            ("test", FILES[2], FILES[3])):
        images = parse_idx(_read_gz(os.path.join(dirpath, img)))
        labels = parse_idx(_read_gz(os.path.join(dirpath, lab)))
        if images.ndim != 3 or labels.ndim != 1:
            raise DataError(f"unexpected IDX ranks for {dataset} {split}")
        if images.shape[0] != labels.shape[0]:
            raise DataError(f"{dataset} {split}: {images.shape[0]} images "
                            f"vs {labels.shape[0]} labels")
        if images.shape[0] != EXPECTED_COUNTS[split]:
            raise DataError(f"{dataset} {split} has {images.shape[0]} rows, "
                            f"expected {EXPECTED_COUNTS[split]}")
        x = images.reshape(images.shape[0], -1).astype(np.float32) / 255.0
        parts[split] = (x, labels.astype(np.int64))
    return Dataset(name=dataset,
                   x_train=parts["train"][0], y_train=parts["train"][1],
                   x_test=parts["test"][0], y_test=parts["test"][1])


def take(ds, n_train, n_test=None):
    """Head-slice of a dataset, for fast tests."""
    if n_test is None:
        n_test = max(1, n_train // 6)
    return Dataset(name=ds.name,
                   x_train=ds.x_train[:n_train], y_train=ds.y_train[:n_train],
                   x_test=ds.x_test[:n_test], y_test=ds.y_test[:n_test])


def batches(x, y, batch_size, rng):
    """Shuffled minibatches, final partial batch included."""
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    n = x.shape[0]
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        yield np.ascontiguousarray(x[idx]), np.ascontiguousarray(y[idx])
