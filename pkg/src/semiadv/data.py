"""
Dataset ingestion and the three-way split.

Every loader returns inputs scaled into [0, 1]. A seeded shuffle first holds
out an evaluation split, then halves the rest into the target's training data
and the attacker's pool. The attacker pool is an :class:`UnlabeledPool`,
which has no label storage at all: the only labels the attacker ever sees come
back from the oracle.
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from semiadv.errors import DatasetFormatError

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass(frozen=True)
class LabeledSplit:
    ids: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True, slots=True)
class UnlabeledPool:
    ids: np.ndarray
    inputs: np.ndarray

    def __len__(self):
        return len(self.ids)

    def samples(self):
        return [(int(i), x) for i, x in zip(self.ids, self.inputs)]


@dataclass(frozen=True)
class Dataset:
    name: str
    num_classes: int
    input_shape: tuple
    target_train: LabeledSplit
    attacker: UnlabeledPool
    evaluation: LabeledSplit


def split_dataset(name, inputs, labels, num_classes, seed=0, eval_fraction=0.2):
    """Held-out evaluation split first, then the remainder halved into
    target-train and attacker pool (the target gets the extra sample on odd counts)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n = len(inputs)
    order = np.random.default_rng(seed).permutation(n)
    n_eval = int(round(eval_fraction * n))
    ev, rest = order[:n_eval], order[n_eval:]
    n_target = len(rest) - len(rest) // 2
    tt, at = np.sort(rest[:n_target]), np.sort(rest[n_target:])
    ev = np.sort(ev)
    return Dataset(
        name=name,
        num_classes=int(num_classes),
        input_shape=tuple(inputs.shape[1:]),
        target_train=LabeledSplit(tt, inputs[tt], labels[tt]),
        attacker=UnlabeledPool(at, inputs[at]),
        evaluation=LabeledSplit(ev, inputs[ev], labels[ev]),
    )


def make_blobs(n=1650, classes=3, dim=50, clusters=1, spread=1.0, separation=1.5, seed=0):
    """Isotropic Gaussian clusters, ``clusters`` per class, rescaled into [0, 1].

    Cluster centres are drawn uniformly in a cube of side ``separation`` so
    ``spread/separation`` controls class overlap. Labels are balanced to within one.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, separation, size=(classes * clusters, dim))
    labels = np.arange(n) % classes
    which = labels * clusters + rng.integers(0, clusters, size=n)
    x = centers[which] + rng.normal(0.0, spread, size=(n, dim))
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo)
    perm = rng.permutation(n)
    return x[perm], labels[perm]


_BLOB_KEYS = {"n": int, "classes": int, "dim": int, "clusters": int,
              "spread": float, "separation": float, "seed": int}


def parse_synthetic(spec):
    """``synthetic:blobs`` optionally followed by ``:key=value,key=value``."""
    parts = spec.split(":", 2)
    if len(parts) < 2 or parts[0] != "synthetic" or parts[1] != "blobs":
        raise DatasetFormatError(f"unknown synthetic generator {spec!r}; expected synthetic:blobs[:k=v,...]")
    kwargs = {}
    if len(parts) == 3 and parts[2]:
        for item in parts[2].split(","):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in _BLOB_KEYS:
                raise DatasetFormatError(f"bad blob parameter {item!r}; known: {sorted(_BLOB_KEYS)}")
            kwargs[key] = _BLOB_KEYS[key](value)
    return kwargs


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_header(f, path, magic, ndims):
    head = f.read(4 * (ndims + 1))
    if len(head) < 4:
        raise DatasetFormatError(f"{path}: truncated header at byte {len(head)}")
    got = struct.unpack(">i", head[:4])[0]
    if got != magic:
        raise DatasetFormatError(f"{path}: bad magic number {got:#010x} at byte 0, expected {magic:#010x}")
    if len(head) < 4 * (ndims + 1):
        raise DatasetFormatError(f"{path}: truncated header at byte {len(head)}")
    return struct.unpack(f">{ndims}i", head[4:])


def read_idx_images(path):
    with _open(path) as f:
        count, rows, cols = _read_header(f, path, IDX_IMAGE_MAGIC, 3)
        body = f.read()
    want = count * rows * cols
    if len(body) != want:
        raise DatasetFormatError(f"{path}: expected {want} pixel bytes after byte 16, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, 1, rows, cols)


def read_idx_labels(path):
    with _open(path) as f:
        (count,) = _read_header(f, path, IDX_LABEL_MAGIC, 1)
        body = f.read()
    if len(body) != count:
        raise DatasetFormatError(f"{path}: expected {count} label bytes after byte 8, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).astype(int)


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim == 4:
        images = images[:, 0]
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4i", IDX_IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2i", IDX_LABEL_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def _idx_paths(path):
    if "," in path:
        images, labels = path.split(",", 1)
        return images, labels
    if os.path.isdir(path):
        names = sorted(os.listdir(path))
        images = [n for n in names if "images" in n and "idx3" in n]
        labels = [n for n in names if "labels" in n and "idx1" in n]
        if len(images) != 1 or len(labels) != 1:
            raise DatasetFormatError(f"{path}: expected one *images*idx3* and one *labels*idx1* file")
        return os.path.join(path, images[0]), os.path.join(path, labels[0])
    raise DatasetFormatError(f"{path}: give a directory or 'images_path,labels_path'")


def read_idx_pair(path):
    images_path, labels_path = _idx_paths(path)
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DatasetFormatError(f"{len(images)} images but {len(labels)} labels")
    return images.astype(np.float64) / 255.0, labels


def read_csv(path):
    labels, rows, width = [], [], None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
                if width < 2:
                    raise DatasetFormatError(f"{path}:{lineno}: need a label and at least one feature")
            if len(fields) != width:
                raise DatasetFormatError(f"{path}:{lineno}: expected {width} fields, found {len(fields)}")
            try:
                label = int(fields[0])
                values = [float(v) for v in fields[1:]]
            except ValueError as e:
                raise DatasetFormatError(f"{path}:{lineno}: {e}") from None
            if label < 0:
                raise DatasetFormatError(f"{path}:{lineno}: negative label {label}")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    x = np.array(rows, dtype=np.float64)
    if x.min() < 0 or x.max() > 1:
        lo, hi = x.min(), x.max()
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return x, np.array(labels, dtype=int)


def load_dataset(path, format, seed=0, eval_fraction=0.2, num_classes=None):
    """Load and split a dataset. ``format`` is ``idx``, ``csv`` or ``synthetic:blobs[:k=v,...]``."""
    if format.startswith("synthetic"):
        kwargs = parse_synthetic(format)
        x, y = make_blobs(**kwargs)
        name = format
    elif format == "idx":
        x, y = read_idx_pair(path)
        name = os.path.basename(os.path.normpath(path.split(",")[0]))
    elif format == "csv":
        x, y = read_csv(path)
        name = os.path.basename(path)
    else:
        raise DatasetFormatError(f"unknown dataset format {format!r}")
    k = num_classes or int(y.max()) + 1
    return split_dataset(name, x, y, k, seed=seed, eval_fraction=eval_fraction)
