"""
Contains
========

* stamp_trigger, stamp_tensor
* PoisonedEvalSet, make_poisoned_eval_set
* bassl_plan, build_bassl_poison_set
* resize_images, resize_dataset
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from DistilPy.base import AttackConstructionError, GeometryError, ValidationError, logger
from DistilPy.core.seeding import numpy_generator
from DistilPy.core.types import AttackMethod, Split
from DistilPy.data.datasets import LabeledDataset


def _check_fits(trigger, image_shape):
    if len(image_shape) != 3 or not trigger.fits(image_shape):
        raise GeometryError(
            "a %dx%dx%d trigger anchored at %r does not fit a %s image"
            % (trigger.size + (trigger.channels, trigger.anchor(image_shape),
                               "x".join(str(v) for v in image_shape))))


def stamp_trigger(image, trigger):
    """
    Returns a copy of ``image`` (H, W, C), or of a batch (N, H, W, C), with
    the trigger footprint replaced by the trigger pattern.

    USAGE
    =====

    >>> image = np.zeros((32, 32, 3))
    >>> stamped = stamp_trigger(image, solid_trigger(3))
    >>> int((stamped != image).any(axis=-1).sum())
    9
    """
    image = np.asarray(image)
    if image.ndim < 3:
        raise GeometryError("expected an (H, W, C) image, got shape %r" % (image.shape,))
    shape = image.shape[-3:]
    _check_fits(trigger, shape)
    row, col = trigger.anchor(shape)
    height, width = trigger.size
    stamped = image.astype(np.result_type(image.dtype, np.float32), copy=True)
    stamped[..., row:row + height, col:col + width, :] = trigger.pattern
    return stamped


def stamp_tensor(images, trigger):
    """
    Torch counterpart of stamp_trigger for an (N, C, H, W) batch; keeps the
    autograd graph of the unstamped pixels.
    """
    shape = (int(images.shape[-2]), int(images.shape[-1]), int(images.shape[-3]))
    _check_fits(trigger, shape)
    row, col = trigger.anchor(shape)
    height, width = trigger.size
    patch = torch.as_tensor(np.ascontiguousarray(trigger.pattern), dtype=images.dtype,
                            device=images.device).permute(2, 0, 1)
    mask = torch.zeros(shape[:2], dtype=images.dtype, device=images.device)
    mask[row:row + height, col:col + width] = 1.0
    canvas = torch.zeros_like(images[0])
    canvas[:, row:row + height, col:col + width] = patch
    return images * (1.0 - mask) + canvas * mask


def resize_images(images, shape):
    """
    Bilinear resize of an (N, H, W, C) array to ``shape`` = (H', W'),
    clipped back to [0, 1].
    """
    images = np.asarray(images, dtype=np.float32)
    if images.shape[1:3] == tuple(shape):
        return images
    tensor = torch.from_numpy(np.array(images)).permute(0, 3, 1, 2)
    resized = F.interpolate(tensor, size=tuple(shape), mode="bilinear", align_corners=False)
    return resized.clamp(0.0, 1.0).permute(0, 2, 3, 1).contiguous().numpy()


def resize_dataset(dataset, shape):
    """
    The dataset at resolution ``shape`` = (H, W); unchanged when it already
    has it.
    """
    if dataset.image_shape[:2] == tuple(shape):
        return dataset
    return LabeledDataset(resize_images(dataset.images, shape), dataset.labels, dataset.name,
                          dataset.split, dataset.num_classes,
                          "%s@%dx%d" % ((dataset.fingerprint,) + tuple(shape)))


class PoisonedEvalSet:

    """
    A lazily stamped view of a test set: item i is
    ``stamp_trigger(base.images[i], trigger)``. Labels are those of the base
    set; ASR compares predictions against ``target_class``.
    """

    def __init__(self, base, trigger, target_class):
        self.base = base
        self.trigger = trigger
        self.target_class = int(target_class)

    def __len__(self):
        return len(self.base)

    def __getitem__(self, index):
        return stamp_trigger(self.base.images[index], self.trigger)

    def __iter__(self):
        for index in range(len(self)):
            yield self[index]

    def iter_batches(self, batch_size):
        for start in range(0, len(self), batch_size):
            yield stamp_trigger(self.base.images[start:start + batch_size], self.trigger)

    def materialize(self):
        if len(self.base) == 0:
            images = self.base.images
        else:
            images = stamp_trigger(self.base.images, self.trigger)
        return LabeledDataset(images, self.base.labels, self.base.name, self.base.split,
                              self.base.num_classes,
                              "%s+%s" % (self.base.fingerprint, self.trigger.fingerprint))


def make_poisoned_eval_set(test_set, spec):
    if test_set.split is not Split.TEST:
        raise ValidationError("split", "poisoned evaluation sets are built from TEST splits")
    if len(test_set):
        _check_fits(spec.trigger, test_set.image_shape)
    return PoisonedEvalSet(test_set, spec.trigger, spec.target_class)


def bassl_plan(pool_size, strength, seed):
    """
    Returns (migrated, stamped): the indices of the target-class pool that get
    migrated into the pre-training set, and the positions among the migrated
    images that get the trigger. Both are sorted.
    """
    rng = numpy_generator(seed)
    n_migrated = int(round(strength.migration_fraction * pool_size))
    migrated = np.sort(rng.permutation(pool_size)[:n_migrated])
    n_stamped = int(np.floor(strength.poison_ratio * n_migrated + 1e-9))
    stamped = np.sort(rng.choice(n_migrated, size=n_stamped, replace=False)) \
        if n_stamped else np.zeros(0, dtype=np.int64)
    return migrated.astype(np.int64), stamped.astype(np.int64)


def build_bassl_poison_set(pretrain_set, spec, downstream_target_images, seed=0):
    """
    Inserts a migrated share of the downstream target-class images into the
    pre-training set and stamps the trigger on ``poison_ratio`` of them.
    Migrated images are resized to the pre-training resolution first; they
    are labeled with the target class, which self-supervised training ignores.
    """
    if spec.method is not AttackMethod.BASSL:
        raise AttackConstructionError("a BASSL poison set needs a BASSL attack spec")
    pool = np.asarray(downstream_target_images, dtype=np.float32)
    if pool.shape[0] == 0:
        raise AttackConstructionError("no downstream target-class images to migrate")
    if pool.ndim == 3:
        pool = pool[None]

    strength = spec.strength
    if strength.migration_fraction <= 0.5:
        logger.warning("BASSL migrates %.0f%% of the target class, not more than half",
                       100 * strength.migration_fraction)

    migrated_idx, stamped_idx = bassl_plan(pool.shape[0], strength, seed)
    migrated = resize_images(pool[migrated_idx], pretrain_set.image_shape[:2])
    if migrated.shape[0] and migrated.shape[-1] != pretrain_set.image_shape[-1]:
        raise AttackConstructionError(
            "target-class images have %d channels, the pre-training set %d"
            % (migrated.shape[-1], pretrain_set.image_shape[-1]))
    if stamped_idx.size:
        migrated = migrated.copy()
        migrated[stamped_idx] = stamp_trigger(migrated[stamped_idx], spec.trigger)

    logger.info("BASSL: migrated %d target-class images, %d of them stamped",
                migrated.shape[0], stamped_idx.size)
    labels = np.full(migrated.shape[0], spec.target_class, dtype=np.int64)
    return pretrain_set.concat(migrated, labels, name="%s+BASSL" % pretrain_set.name,
                               num_classes=spec.target_class + 1)
