"""Dataset ingestion (IDX format), one-hot targets and intraclass variance."""
from __future__ import annotations

import gzip
import hashlib
import json
import logging
import os
import shutil
import struct
import urllib.request
import zipfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (BadMagic, ChecksumMismatch, CountMismatch, DataError, EmptyClass,
                     LabelOutOfRange, TruncatedFile)

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_ENV = "STVO_ESN_DATA"

# Average intraclass variance of the three training sets as published.
PUBLISHED_INTRACLASS = {"mnist": 3452.9, "emnist-letters": 4408.7, "fashion-mnist": 3401.0}
N_CLASSES = {"mnist": 10, "fashion-mnist": 10, "emnist-letters": 26, "digits": 10}


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (n_samples, n_i) uint8 or float in [0, 255]
    labels: np.ndarray  # (n_samples,) int, 0-indexed
    n_classes: int
    name: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatch(f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.n_classes, self.name)


def _open(path):
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: missing IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedFile(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    body = raw[4 + 4 * ndim:]
    if len(body) < count:
        raise TruncatedFile(f"{path}: {len(body)} data bytes, header promises {count}")
    return np.frombuffer(body, dtype=np.uint8, count=count).reshape(dims)


def load_idx(images_path, labels_path, name: str = "", n_classes: int | None = None,
             label_offset: int = 0) -> Dataset:
    """Parse an IDX image/label pair; images are flattened row-major."""
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC).astype(np.int64) - label_offset
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    if n_classes is None:
        n_classes = N_CLASSES.get(name, int(labels.max()) + 1 if labels.size else 0)
    return Dataset(images.reshape(images.shape[0], int(np.prod(images.shape[1:]))), labels, n_classes, name)


def to_idx_bytes(ds: Dataset, shape: tuple[int, int] | None = None) -> tuple[bytes, bytes]:
    """Serialise a dataset back to (images, labels) IDX byte strings."""
    n, n_i = ds.images.shape
    rows, cols = shape or (int(round(np.sqrt(n_i))),) * 2
    if rows * cols != n_i:
        raise ValueError(f"cannot lay out {n_i} pixels as {rows}x{cols}")
    img = struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + np.asarray(ds.images, dtype=np.uint8).tobytes()
    lab = struct.pack(">2I", LABELS_MAGIC, n) + np.asarray(ds.labels, dtype=np.uint8).tobytes()
    return img, lab


def one_hot(labels, n_classes: int) -> np.ndarray:
    """``(n_classes, n_samples)`` target matrix with unit columns."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    t = np.zeros((n_classes, labels.size))
    t[labels, np.arange(labels.size)] = 1.0
    return t


CONVENTIONS = ("pixel_mean", "pixel_sum")


def intraclass_variance(ds: Dataset, convention: str = "pixel_mean") -> tuple[np.ndarray, float]:
    """Per-class mean squared deviation from the class-mean image, and the class average.

    ``pixel_sum`` uses the squared Euclidean norm of each deviation image;
    ``pixel_mean`` divides that by the number of pixels. Raw (uncentred)
    intensities are used.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    per_class = np.empty(ds.n_classes)
    for k in range(ds.n_classes):
        members = ds.images[ds.labels == k].astype(float)
        if members.shape[0] == 0:
            raise EmptyClass(f"class {k} has no samples")
        dev = members - members.mean(axis=0)
        sq = np.einsum("ij,ij->i", dev, dev)
        if convention == "pixel_mean":
            sq = sq / members.shape[1]
        per_class[k] = sq.mean()
    return per_class, float(per_class.mean())


def select_convention(reference: Dataset, published: float = PUBLISHED_INTRACLASS["mnist"],
                      rtol: float = 0.01) -> str:
    """Pick the normalisation whose average lands within ``rtol`` of ``published``."""
    for conv in CONVENTIONS:
        _, avg = intraclass_variance(reference, conv)
        if abs(avg - published) <= rtol * published:
            return conv
    raise DataError(f"no normalisation convention reproduces {published} within {rtol:.0%}")


# ---------------------------------------------------------------- registry

FILES = {
    "mnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
    "fashion-mnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
    "emnist-letters": {
        "train": ("emnist-letters-train-images-idx3-ubyte", "emnist-letters-train-labels-idx1-ubyte"),
        "test": ("emnist-letters-test-images-idx3-ubyte", "emnist-letters-test-labels-idx1-ubyte"),
    },
}
LABEL_OFFSET = {"emnist-letters": 1}


def data_root(root=None) -> Path:
    return Path(root or os.environ.get(DATA_ENV, "data"))


def _find(directory: Path, stem: str) -> Path:
    for cand in (stem, stem + ".gz"):
        if (directory / cand).exists():
            return directory / cand
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_dataset(name: str, split: str, root=None) -> Dataset:
    """Load ``train`` or ``test`` split of a named dataset from ``root/<name>/``.

    ``digits`` is the small 8x8 handwritten-digit set bundled with
    scikit-learn, rescaled to 0-255 and split 1500/297; it needs no files.
    """
    if name == "digits":
        return _digits(split)
    if name not in FILES:
        raise DataError(f"unknown dataset {name!r}; known: {sorted(FILES) + ['digits']}")
    d = data_root(root) / name
    img, lab = FILES[name][split]
    try:
        return load_idx(_find(d, img), _find(d, lab), name=name, label_offset=LABEL_OFFSET.get(name, 0))
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc


def dataset_available(name: str, root=None) -> bool:
    if name == "digits":
        return True
    d = data_root(root) / name
    try:
        for img, lab in FILES[name].values():
            _find(d, img), _find(d, lab)
    except (FileNotFoundError, KeyError):
        return False
    return True


def _digits(split: str) -> Dataset:
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = np.rint(bunch.data * (255.0 / 16.0)).astype(np.uint8)
    labels = bunch.target.astype(np.int64)
    sl = slice(0, 1500) if split == "train" else slice(1500, None)
    return Dataset(images[sl], labels[sl], 10, "digits")


# ---------------------------------------------------------------- fetch

def mirror_config(path=None) -> dict:
    if path is not None:
        return json.loads(Path(path).read_text())
    return json.loads(resources.files("stvo_esn").joinpath("mirrors.json").read_text())


def _checksum(path: Path, algo: str) -> str:
    h = hashlib.new(algo)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch(name: str, root=None, config_path=None) -> Path:
    """Download a dataset's files from the configured mirrors, verifying checksums."""
    cfg = mirror_config(config_path)
    if name not in cfg:
        raise DataError(f"no mirror entry for {name!r}")
    entry = cfg[name]
    dest = data_root(root) / name
    dest.mkdir(parents=True, exist_ok=True)
    algo = entry.get("checksum", "md5")
    for fname, digest in entry["files"].items():
        target = dest / fname
        if target.exists() and _checksum(target, algo) == digest:
            continue
        errors = []
        for base in entry["mirrors"]:
            url = base.rstrip("/") + "/" + fname
            try:
                log.info("downloading %s", url)
                with urllib.request.urlopen(url, timeout=60) as r, open(target, "wb") as out:
                    shutil.copyfileobj(r, out)
                break
            except OSError as exc:
                errors.append(f"{url}: {exc}")
        else:
            raise DataError("all mirrors failed:\n  " + "\n  ".join(errors))
        if _checksum(target, algo) != digest:
            target.unlink()
            raise ChecksumMismatch(f"{fname}: {algo} mismatch")
        if zipfile.is_zipfile(target):
            _extract_members(target, dest, entry.get("extract", []))
    return dest


def _extract_members(archive: Path, dest: Path, wanted) -> None:
    with zipfile.ZipFile(archive) as zf:
        for member in zf.namelist():
            base = os.path.basename(member)
            if base in wanted:
                with zf.open(member) as src, open(dest / base, "wb") as out:
                    shutil.copyfileobj(src, out)
