"""
Contains
========

* nt_xent_loss
* simclr_augmentation
* contrastive_train, contrastive_pretrain, warm_up_train
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torchvision import transforms

from DistilPy.base import BatchTooSmallError, ValidationError, logger
from DistilPy.core.seeding import derive_seed, torch_seed
from DistilPy.core.types import PretrainHParams
from DistilPy.pretrain.encoders import clone_encoder, encoder_fingerprint, void_encoder
from DistilPy.pretrain.training import run_epochs


def nt_xent_loss(embeddings_a, embeddings_b, temperature):
    """
    Normalized temperature-scaled cross entropy over the 2B views. Row i of
    ``embeddings_a`` and row i of ``embeddings_b`` are the two views of
    example i; every other view in the batch is a negative.

    Each view's softmax runs over the 2B - 1 other views, so B identical
    views give log(2B - 1).
    """
    if temperature <= 0:
        raise ValidationError("temperature", "must be > 0")
    if embeddings_a.shape != embeddings_b.shape:
        raise ValidationError("embeddings_b", "shape %r differs from %r"
                              % (tuple(embeddings_b.shape), tuple(embeddings_a.shape)))
    batch = int(embeddings_a.shape[0])
    if batch < 2:
        raise BatchTooSmallError("NT-Xent needs at least 2 examples, got %d" % batch)

    views = F.normalize(torch.cat([embeddings_a, embeddings_b]), dim=1)
    logits = views @ views.t() / temperature
    self_mask = torch.eye(2 * batch, dtype=torch.bool, device=logits.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    positives = torch.cat([torch.arange(batch, 2 * batch), torch.arange(0, batch)])
    return F.cross_entropy(logits, positives.to(logits.device))


class _Identity:

    def __call__(self, image):
        return image


def simclr_augmentation(size, policy="simclr"):
    """
    Per-image augmentation on (C, H, W) tensors in [0, 1]: random resized crop,
    horizontal flip, colour jitter and grayscale for ``simclr``; nothing for
    ``none``.
    """
    if policy == "none":
        return _Identity()
    if policy != "simclr":
        raise ValidationError("augmentation", "unknown policy %r" % (policy,))
    return transforms.Compose([
        transforms.RandomResizedCrop(size, scale=(0.2, 1.0), antialias=True),
        transforms.RandomHorizontalFlip(),
        transforms.RandomApply([transforms.ColorJitter(0.4, 0.4, 0.4, 0.1)], p=0.8),
        transforms.RandomGrayscale(p=0.2),
    ])


def augment_batch(augment, images):
    return torch.stack([augment(image) for image in images])


def contrastive_train(encoder, dataset, hparams, seed, stage, **metadata):
    """
    Continues SimCLR training of a copy of ``encoder`` on ``dataset``; the
    input encoder is left untouched. The per-epoch loss trace is stored in
    ``metadata['loss_trace']`` of the returned encoder.
    """
    trained = clone_encoder(encoder, stage=stage, **metadata)
    if len(dataset) == 0:
        raise ValidationError("dataset", "%s has no examples to train on" % dataset.name)
    if hparams.epochs > 0 and len(dataset) < 2:
        raise BatchTooSmallError("contrastive training needs at least 2 examples")

    images = dataset.to_tensor()
    augment = simclr_augmentation(dataset.image_shape[0], hparams.augmentation)
    trained.train()

    def step(indices):
        batch = images[indices]
        view_a = augment_batch(augment, batch)
        view_b = augment_batch(augment, batch)
        z_a = trained.project(trained.embed(view_a))
        z_b = trained.project(trained.embed(view_b))
        return nt_xent_loss(z_a, z_b, hparams.temperature)

    logger.info("%s: %d epochs on %d %s images (seed %d)", stage, hparams.epochs,
                len(dataset), dataset.name, seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(derive_seed(seed, stage + "/augment")))
        trace = run_epochs(stage, trained.parameters(), len(dataset), step, hparams.epochs,
                           hparams.learning_rate, hparams.batch_size,
                           derive_seed(seed, stage + "/batches"), min_batch=2)
    trained.eval()
    trained.metadata["loss_trace"] = list(encoder.metadata.get("loss_trace", [])) \
        if hparams.epochs == 0 else trace
    logger.info("%s: done, encoder %s", stage, encoder_fingerprint(trained))
    return trained


def contrastive_pretrain(dataset, architecture, hparams=PretrainHParams(), seed=0):
    """
    Pre-trains a fresh encoder of ``architecture`` with SimCLR on ``dataset``.
    ``epochs=0`` returns the seeded initialization.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset", "pre-training needs a non-empty dataset")
    return contrastive_train(void_encoder(architecture, seed), dataset, hparams, seed,
                             "pretrain", strategy="PRETRAIN")


def warm_up_train(clean_subset, architecture, hparams=PretrainHParams(), seed=0):
    """
    Warm-up training of a student candidate on the defender's clean subset.
    Starts from the same initialization as the VOID student.
    """
    if len(clean_subset) == 0:
        raise ValidationError("clean_subset", "warm-up training needs a non-empty subset")
    return contrastive_train(void_encoder(architecture, seed), clean_subset, hparams, seed,
                             "warmup", strategy="WARMUP")
