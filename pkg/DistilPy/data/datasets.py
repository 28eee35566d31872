"""
Contains
========

* LabeledDataset
* load_dataset, write_dataset, dataset_dir
* synth_tiny
* sample_clean_subset

On-disk layout (see DistilPy/docs/datasets.md)::

    $DISTILPY_ROOT/datasets/<NAME>/
        manifest.json
        train_images.npy   uint8 (N, H, W, C)
        train_labels.npy   int64 (N,)
        test_images.npy
        test_labels.npy
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from DistilPy.base import IngestionError, UnsupportedDatasetError, ValidationError, logger
from DistilPy.config import constants
from DistilPy.core.seeding import derive_seed, numpy_generator
from DistilPy.core.store import default_root, file_sha256
from DistilPy.core.types import DATASET_CLASSES, Split, SynthOptions

CANONICAL_SHAPES = {
    "CIFAR10": (32, 32, 3),
    "GTSRB": (32, 32, 3),
    "SVHN": (32, 32, 3),
    "STL10": (96, 96, 3),
    "SYNTH-TINY": (constants.SYNTH_IMAGE_SIZE, constants.SYNTH_IMAGE_SIZE, 3),
}

MANIFEST_NAME = "manifest.json"


def _array_digest(*arrays):
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(repr((array.dtype.str, array.shape)).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class LabeledDataset:

    """
    An immutable labeled image set. ``images`` is a float32 (N, H, W, C) array
    with values in [0, 1]; ``labels`` is an int64 (N,) array.

    USAGE
    =====

    >>> train = load_dataset("SYNTH-TINY", Split.TRAIN)
    >>> len(train), train.image_shape, train.num_classes
    (600, (16, 16, 3), 3)
    >>> small = train.subset([0, 1, 2])

    METHODS
    =======

    * subset(indices)
    * of_class(label)
    * concat(images, labels)
    * to_tensor()
    """

    images: np.ndarray
    labels: np.ndarray
    name: str
    split: Split
    num_classes: Optional[int] = None
    fingerprint: Optional[str] = None

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            raise ValidationError("images", "expected an (N, H, W, C) array, got shape %r"
                                  % (images.shape,))
        if images.shape[0] != labels.shape[0]:
            raise ValidationError("labels", "%d images but %d labels"
                                  % (images.shape[0], labels.shape[0]))
        num_classes = self.num_classes
        if num_classes is None:
            num_classes = DATASET_CLASSES.get(self.name, int(labels.max()) + 1 if len(labels) else 1)
        if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValidationError("labels", "must lie in [0, %d)" % num_classes)
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValidationError("images", "pixel values must lie in [0, 1]")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", Split.parse(self.split, "split"))
        object.__setattr__(self, "num_classes", int(num_classes))
        if self.fingerprint is None:
            object.__setattr__(self, "fingerprint", _array_digest(images, labels))

    def __len__(self):
        return int(self.labels.shape[0])

    def __repr__(self):
        return "LabeledDataset(%s, %s, n=%d, shape=%r)" % (
            self.name, self.split.value, len(self), self.image_shape)

    @property
    def image_shape(self):
        return tuple(int(v) for v in self.images.shape[1:])

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        digest = hashlib.sha256(self.fingerprint.encode())
        digest.update(indices.tobytes())
        return LabeledDataset(self.images[indices], self.labels[indices], self.name,
                              self.split, self.num_classes, digest.hexdigest()[:16])

    def of_class(self, label):
        """
        Images of one class, in dataset order.
        """
        return self.images[self.labels == int(label)]

    def concat(self, images, labels, name=None, num_classes=None):
        images = np.asarray(images, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        return LabeledDataset(
            np.concatenate([self.images, images.reshape((-1,) + self.image_shape)]),
            np.concatenate([self.labels, labels]),
            name or self.name, self.split,
            max(self.num_classes, num_classes or 0),
            _array_digest(np.frombuffer(self.fingerprint.encode(), dtype=np.uint8),
                          images, labels))

    def to_tensor(self):
        """
        Images as a float32 (N, C, H, W) tensor.
        """
        return torch.from_numpy(np.array(self.images)).permute(0, 3, 1, 2).contiguous()

    def labels_tensor(self):
        return torch.from_numpy(np.array(self.labels))


def dataset_dir(name, root=None):
    return os.path.join(root or default_root(), "datasets", name)


def _split_prefix(split):
    return Split.parse(split).value.lower()


def write_dataset(directory, train, test):
    """
    Writes a train/test pair in the documented layout. Pixel values are
    quantized to uint8.
    """
    os.makedirs(directory, exist_ok=True)
    files = {}
    splits = {}
    for dataset in (train, test):
        prefix = _split_prefix(dataset.split)
        images_name = "%s_images.npy" % prefix
        labels_name = "%s_labels.npy" % prefix
        pixels = np.rint(np.asarray(dataset.images) * 255.0).astype(np.uint8)
        np.save(os.path.join(directory, images_name), pixels)
        np.save(os.path.join(directory, labels_name), np.asarray(dataset.labels, dtype=np.int64))
        splits[prefix] = {"count": len(dataset), "images": images_name, "labels": labels_name}
        for name in (images_name, labels_name):
            files[name] = file_sha256(os.path.join(directory, name))

    manifest = {
        "name": train.name,
        "num_classes": train.num_classes,
        "image_shape": list(train.image_shape),
        "dtype": "uint8",
        "splits": splits,
        "sha256": files,
    }
    with open(os.path.join(directory, MANIFEST_NAME), "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    logger.info("Wrote dataset %s to %s", train.name, directory)
    return directory


def _load_from_disk(name, split, root):
    directory = dataset_dir(name, root)
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    prefix = _split_prefix(split)
    expected = [manifest_path,
                os.path.join(directory, "%s_images.npy" % prefix),
                os.path.join(directory, "%s_labels.npy" % prefix)]
    missing = [path for path in expected if not os.path.isfile(path)]
    if missing:
        raise IngestionError("dataset %s is not installed under %s" % (name, directory),
                             missing=missing)

    with open(manifest_path, "rb") as handle:
        raw = handle.read()
    manifest = json.loads(raw.decode("utf-8"))
    info = manifest["splits"][prefix]
    pixels = np.load(os.path.join(directory, info["images"]), allow_pickle=False)
    labels = np.load(os.path.join(directory, info["labels"]), allow_pickle=False)
    if pixels.shape[0] != info["count"] or labels.shape[0] != info["count"]:
        raise IngestionError("dataset %s/%s holds %d images, manifest says %d"
                             % (name, prefix, pixels.shape[0], info["count"]))
    if list(pixels.shape[1:]) != list(manifest["image_shape"]):
        raise IngestionError("dataset %s/%s has image shape %r, manifest says %r"
                             % (name, prefix, pixels.shape[1:], manifest["image_shape"]))

    digest = hashlib.sha256(raw)
    digest.update(prefix.encode())
    return LabeledDataset(pixels.astype(np.float32) / np.float32(255.0), labels, name, split,
                          manifest.get("num_classes", DATASET_CLASSES[name]),
                          digest.hexdigest()[:16])


def _shape_mask(label, size, rng):
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float32)
    center_r, center_c = rng.uniform(size * 0.3, size * 0.6, size=2)
    extent = rng.uniform(size * 0.18, size * 0.28)
    if label == 0:
        # filled square
        return (np.abs(rows - center_r) <= extent) & (np.abs(cols - center_c) <= extent)
    if label == 1:
        # filled disk
        return (rows - center_r) ** 2 + (cols - center_c) ** 2 <= extent ** 2
    # plus sign
    thickness = max(1.0, extent / 2.5)
    horizontal = (np.abs(rows - center_r) <= thickness / 2) & (np.abs(cols - center_c) <= extent)
    vertical = (np.abs(cols - center_c) <= thickness / 2) & (np.abs(rows - center_r) <= extent)
    return horizontal | vertical


def synth_tiny(split=Split.TRAIN, options=SynthOptions()):
    """
    Deterministic SYNTH-TINY generator: 3 classes (square, disk, plus) of
    randomly coloured shapes on a dim noisy background, 16x16x3.
    """
    split = Split.parse(split, "split")
    count = options.train_size if split is Split.TRAIN else options.test_size
    size = constants.SYNTH_IMAGE_SIZE
    rng = numpy_generator(derive_seed(0, "synth-tiny/%s" % split.value.lower()))

    labels = np.arange(count, dtype=np.int64) % constants.SYNTH_NUM_CLASSES
    labels = labels[rng.permutation(count)]
    images = rng.uniform(0.0, 0.2, size=(count, size, size, 3)).astype(np.float32)
    for index, label in enumerate(labels):
        mask = _shape_mask(int(label), size, rng)
        color = rng.uniform(0.35, 0.9, size=3).astype(np.float32)
        images[index][mask] = color

    digest = hashlib.sha256(("SYNTH-TINY/%s/%d" % (split.value, count)).encode())
    return LabeledDataset(images, labels, "SYNTH-TINY", split, constants.SYNTH_NUM_CLASSES,
                          digest.hexdigest()[:16])


def load_dataset(name, split, root=None, synth=None):
    """
    Loads one split of a dataset, pixel values scaled to [0, 1]. SYNTH-TINY is
    generated in memory; every other dataset must be installed under
    ``$DISTILPY_ROOT/datasets`` (see scripts/fetch_datasets.py).
    """
    key = str(name).strip().upper()
    if key not in DATASET_CLASSES:
        raise UnsupportedDatasetError(
            "unknown dataset %r, expected one of %s" % (name, ", ".join(DATASET_CLASSES)))
    split = Split.parse(split, "split")
    if key == "SYNTH-TINY":
        dataset = synth_tiny(split, synth or SynthOptions())
    else:
        dataset = _load_from_disk(key, split, root)
    logger.debug("Loaded %r", dataset)
    return dataset


def subset_size(ratio, total):
    # 0.29 * 100 evaluates to 28.999999999999996
    return int(math.floor(ratio * total + 1e-9))


def clean_subset_indices(total, ratio, seed):
    return numpy_generator(seed).permutation(total)[:subset_size(ratio, total)]


def sample_clean_subset(dataset, ratio, seed):
    """
    Uniformly samples floor(ratio * N) examples without replacement. The
    result is deterministic per seed; ratio 1 yields a permutation of the
    whole set.
    """
    if isinstance(ratio, bool) or not 0 < ratio <= 1:
        raise ValidationError("ratio", "%r must lie in (0, 1]" % (ratio,))
    indices = clean_subset_indices(len(dataset), ratio, seed)
    if indices.size == 0:
        logger.warning("A ratio of %s leaves no example of %s", ratio, dataset.name)
    return dataset.subset(indices)
