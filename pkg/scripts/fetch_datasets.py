#! /usr/bin/env python
"""
Downloads CIFAR10, GTSRB, SVHN and STL10 with torchvision and converts them
into the DistilPy dataset layout under ``$DISTILPY_ROOT/datasets``::

    python scripts/fetch_datasets.py --root ./distilpy-data CIFAR10 GTSRB

See DistilPy/docs/datasets.md for the layout.
"""
from __future__ import print_function

import argparse
import os
import sys

import numpy as np
import torchvision
from torchvision import transforms
from tqdm import tqdm

from DistilPy.base import DistilPyError, logger, set_logging
from DistilPy.core.store import default_root
from DistilPy.core.types import DATASET_CLASSES, Split
from DistilPy.data.datasets import CANONICAL_SHAPES, LabeledDataset, dataset_dir, write_dataset

DOWNLOADABLE = ("CIFAR10", "GTSRB", "SVHN", "STL10")


def _torchvision_split(name, split, cache):
    train = split is Split.TRAIN
    if name == "CIFAR10":
        return torchvision.datasets.CIFAR10(cache, train=train, download=True)
    if name == "SVHN":
        return torchvision.datasets.SVHN(cache, split="train" if train else "test", download=True)
    if name == "STL10":
        return torchvision.datasets.STL10(cache, split="train" if train else "test", download=True)
    return torchvision.datasets.GTSRB(cache, split="train" if train else "test", download=True)


def convert(name, split, cache):
    height, width, _ = CANONICAL_SHAPES[name]
    resize = transforms.Resize((height, width))
    source = _torchvision_split(name, split, cache)
    images = np.zeros((len(source), height, width, 3), dtype=np.float32)
    labels = np.zeros(len(source), dtype=np.int64)
    for index in tqdm(range(len(source)), desc="%s/%s" % (name, split.value.lower())):
        image, label = source[index]
        images[index] = np.asarray(resize(image.convert("RGB")), dtype=np.float32) / 255.0
        labels[index] = int(label)
    return LabeledDataset(images, labels, name, split, DATASET_CLASSES[name])


def main(argv=None):
    parser = argparse.ArgumentParser(description="install datasets for DistilPy")
    parser.add_argument("datasets", nargs="*", default=list(DOWNLOADABLE),
                        help="any of %s (default: all)" % ", ".join(DOWNLOADABLE))
    parser.add_argument("--root", default=None, help="data root (default $DISTILPY_ROOT)")
    parser.add_argument("--cache", default=None,
                        help="torchvision download directory (default $ROOT/downloads)")
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)
    set_logging(args.log_level)

    root = args.root or default_root()
    cache = args.cache or os.path.join(root, "downloads")
    try:
        for name in args.datasets:
            name = name.upper()
            if name not in DOWNLOADABLE:
                raise DistilPyError("%s cannot be downloaded, expected one of %s"
                                    % (name, ", ".join(DOWNLOADABLE)))
            train = convert(name, Split.TRAIN, cache)
            test = convert(name, Split.TEST, cache)
            write_dataset(dataset_dir(name, root), train, test)
            logger.info("%s: %d train / %d test images", name, len(train), len(test))
    except DistilPyError as error:
        logger.error(str(error))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
