"""Training datasets and the on-disk dataset container.

Three sources: CIFAR-10 (downloaded), MNIST (downloaded, padded to 32x32
RGB), and a procedurally generated texture dataset that needs no network
access.  All return uint8 CHW images with integer labels.

The dataset container written here (JSON envelope + raw binary blob) is the
interchange format of the approxlab resilience tools; see the format notes
in that project's docs/formats.md.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import os
import pickle
import struct
import tarfile
import tempfile
import urllib.error
import urllib.request

import numpy as np

CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
CIFAR_MD5 = "c58f30108f718f92721af3b95e74349a"
MNIST_URLS = {
    "train_images": "https://storage.googleapis.com/cvdf-datasets/mnist/train-images-idx3-ubyte.gz",
    "train_labels": "https://storage.googleapis.com/cvdf-datasets/mnist/train-labels-idx1-ubyte.gz",
    "test_images": "https://storage.googleapis.com/cvdf-datasets/mnist/t10k-images-idx3-ubyte.gz",
    "test_labels": "https://storage.googleapis.com/cvdf-datasets/mnist/t10k-labels-idx1-ubyte.gz",
}

DATASET_FORMAT_VERSION = 1


class DatasetUnavailable(RuntimeError):
    """Raised when a download fails and no cached copy exists."""


def _download(url: str, dest: str) -> None:
    try:
        with urllib.request.urlopen(url, timeout=60) as resp, \
                open(dest, "wb") as out:
            while True:
                chunk = resp.read(1 << 20)
                if not chunk:
                    break
                out.write(chunk)
    except (urllib.error.URLError, OSError) as e:
        raise DatasetUnavailable(f"cannot fetch {url}: {e}")


def load_cifar10(cache_dir: str) -> tuple[np.ndarray, np.ndarray,
                                          np.ndarray, np.ndarray]:
    """(train_x, train_y, test_x, test_y); images uint8 (N, 3, 32, 32).

    Downloads into ``cache_dir`` on first use; raises DatasetUnavailable
    when the archive cannot be fetched.
    """
    os.makedirs(cache_dir, exist_ok=True)
    archive = os.path.join(cache_dir, "cifar-10-python.tar.gz")
    if not os.path.exists(archive):
        _download(CIFAR_URL, archive)
    with open(archive, "rb") as fh:
        digest = hashlib.md5(fh.read()).hexdigest()
    if digest != CIFAR_MD5:
        raise DatasetUnavailable(f"corrupt CIFAR-10 archive (md5 {digest})")

    def read_batch(tar, name):
        raw = pickle.load(tar.extractfile(name), encoding="bytes")
        x = np.asarray(raw[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32)
        y = np.asarray(raw[b"labels"], dtype=np.uint8)
        return x, y

    xs, ys = [], []
    with tarfile.open(archive, "r:gz") as tar:
        for i in range(1, 6):
            x, y = read_batch(tar, f"cifar-10-batches-py/data_batch_{i}")
            xs.append(x)
            ys.append(y)
        test_x, test_y = read_batch(tar, "cifar-10-batches-py/test_batch")
    return np.concatenate(xs), np.concatenate(ys), test_x, test_y


def load_mnist(cache_dir: str) -> tuple[np.ndarray, np.ndarray,
                                        np.ndarray, np.ndarray]:
    """MNIST padded to 32x32 and replicated to 3 channels."""
    os.makedirs(cache_dir, exist_ok=True)

    def fetch(kind):
        path = os.path.join(cache_dir, os.path.basename(MNIST_URLS[kind]))
        if not os.path.exists(path):
            _download(MNIST_URLS[kind], path)
        with gzip.open(path, "rb") as fh:
            data = fh.read()
        if kind.endswith("images"):
            _, n, rows, cols = struct.unpack(">IIII", data[:16])
            x = np.frombuffer(data, np.uint8, offset=16).reshape(n, rows, cols)
            padded = np.zeros((n, 32, 32), dtype=np.uint8)
            padded[:, 2:30, 2:30] = x
            return np.repeat(padded[:, None, :, :], 3, axis=1)
        _, n = struct.unpack(">II", data[:8])
        return np.frombuffer(data, np.uint8, offset=8)

    return (fetch("train_images"), fetch("train_labels"),
            fetch("test_images"), fetch("test_labels"))


def make_textures(n_classes: int = 10, n_train: int = 6000,
                  n_eval: int = 1000, seed: int = 0, size: int = 32,
                  amplitude: tuple[float, float] = (90.0, 165.0),
                  noise: float = 80.0) -> tuple[np.ndarray, np.ndarray,
                                                np.ndarray, np.ndarray]:
    """Procedural 10-class texture dataset, no network access needed.

    Each class is a fixed smooth random RGB texture; samples are random
    cyclic shifts of the class texture plus heavy pixel noise.  Shift
    invariance makes convolutional features genuinely useful, and the
    noise keeps decision margins thin enough that coarse approximate
    multipliers measurably degrade a trained classifier.
    """
    rng = np.random.default_rng(seed)
    grid = 4
    reps = size // grid
    base = rng.uniform(amplitude[0], amplitude[1],
                       (n_classes, 3, grid, grid))
    textures = np.repeat(np.repeat(base, reps, axis=2), reps, axis=3)
    # soften block edges
    for _ in range(2):
        textures = (textures
                    + np.roll(textures, 1, axis=2)
                    + np.roll(textures, -1, axis=2)
                    + np.roll(textures, 1, axis=3)
                    + np.roll(textures, -1, axis=3)) / 5.0

    def draw(count):
        y = rng.integers(0, n_classes, count).astype(np.uint8)
        x = np.empty((count, 3, size, size), dtype=np.uint8)
        shifts = rng.integers(0, size, (count, 2))
        nz = rng.normal(0, noise, (count, 3, size, size))
        for i in range(count):
            t = np.roll(textures[y[i]], tuple(shifts[i]), axis=(1, 2))
            x[i] = np.clip(np.rint(t + nz[i]), 0, 255).astype(np.uint8)
        return x, y

    train_x, train_y = draw(n_train)
    eval_x, eval_y = draw(n_eval)
    return train_x, train_y, eval_x, eval_y


def write_dataset_file(images: np.ndarray, labels: np.ndarray,
                       json_path: str) -> None:
    """Write the approxlab dataset container (JSON + little-endian blob)."""
    if images.dtype != np.uint8:
        raise ValueError("images must be uint8")
    base = os.path.dirname(json_path) or "."
    os.makedirs(base, exist_ok=True)
    blob_name = os.path.splitext(os.path.basename(json_path))[0] + ".bin"
    img_raw = images.tobytes()
    lab_raw = labels.astype(np.uint8).tobytes()
    envelope = {
        "version": DATASET_FORMAT_VERSION,
        "count": int(images.shape[0]),
        "image_shape": list(images.shape[1:]),
        "blob": blob_name,
        "images_ref": {"offset": 0, "length": len(img_raw)},
        "labels_ref": {"offset": len(img_raw), "length": len(lab_raw)},
    }
    with open(os.path.join(base, blob_name), "wb") as fh:
        fh.write(img_raw)
        fh.write(lab_raw)
    fd, tmp = tempfile.mkstemp(dir=base, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(envelope, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, json_path)
