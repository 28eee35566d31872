"""
Contains
========

* TriggerEstimate, save_trigger_estimate, load_trigger_estimate
* apply_inverted_trigger, blend_tensor
* mean_pairwise_cosine, stamped_clean_cosine
* invert_trigger
* make_teacher_moth

Similarity-guided trigger inversion followed by unlearning. No labels are
used: a backdoor trigger makes the encoder map many different inputs to
nearly the same embedding, so the inversion searches for a blend
``(1 - m) * x + m * p`` that maximizes the mean pairwise cosine similarity
of stamped clean images, under an L1 penalty on the mask area.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from tqdm import tqdm

from DistilPy.base import BatchTooSmallError, GeometryError, InversionFailure, ValidationError, \
    logger, progress_enabled
from DistilPy.config import constants
from DistilPy.core.seeding import derive_seed, numpy_generator
from DistilPy.core.types import MaskPenalty, PretrainHParams
from DistilPy.pretrain.encoders import clone_encoder, encoder_fingerprint
from DistilPy.pretrain.training import run_epochs


@dataclass(frozen=True, eq=False)
class TriggerEstimate:

    """
    An inverted trigger: ``pattern`` is (H, W, C), ``mask`` (H, W) with blend
    weights in [0, 1]. ``inversion_loss_trace`` starts with the loss of the
    initialization and then holds the best loss reached after each step, so
    it never increases.
    """

    pattern: np.ndarray
    mask: np.ndarray
    inversion_loss_trace: List[float] = field(default_factory=list)

    def __post_init__(self):
        pattern = np.asarray(self.pattern, dtype=np.float32)
        mask = np.asarray(self.mask, dtype=np.float32)
        if pattern.ndim != 3 or mask.shape != pattern.shape[:2]:
            raise ValidationError("mask", "mask shape %r does not match pattern shape %r"
                                  % (mask.shape, pattern.shape))
        if mask.size and (mask.min() < 0 or mask.max() > 1):
            raise ValidationError("mask", "blend weights must lie in [0, 1]")
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "inversion_loss_trace",
                           [float(v) for v in self.inversion_loss_trace])

    @property
    def mask_area(self):
        return float(self.mask.sum())


def save_trigger_estimate(estimate, directory):
    os.makedirs(directory, exist_ok=True)
    np.save(os.path.join(directory, "pattern.npy"), estimate.pattern)
    np.save(os.path.join(directory, "mask.npy"), estimate.mask)
    pd.DataFrame({"step": range(len(estimate.inversion_loss_trace)),
                  "loss": estimate.inversion_loss_trace}).to_csv(
        os.path.join(directory, "inversion_trace.csv"), index=False)


def load_trigger_estimate(directory):
    trace = pd.read_csv(os.path.join(directory, "inversion_trace.csv"), float_precision="round_trip")
    return TriggerEstimate(np.load(os.path.join(directory, "pattern.npy")),
                           np.load(os.path.join(directory, "mask.npy")),
                           trace["loss"].tolist())


def blend_tensor(images, pattern, mask):
    """
    (N, C, H, W) images blended with a (C, H, W) pattern under an (H, W)
    mask.
    """
    return (1.0 - mask) * images + mask * pattern


def apply_inverted_trigger(images, estimate):
    """
    Stamps an inverted trigger on an (N, H, W, C) array, or on an (N, C, H, W)
    tensor.
    """
    if torch.is_tensor(images):
        pattern = torch.as_tensor(estimate.pattern, dtype=images.dtype).permute(2, 0, 1)
        mask = torch.as_tensor(estimate.mask, dtype=images.dtype)
        return blend_tensor(images, pattern, mask)
    images = np.asarray(images, dtype=np.float32)
    mask = estimate.mask[..., None]
    return (1.0 - mask) * images + mask * estimate.pattern


def mean_pairwise_cosine(embedding):
    """
    Mean cosine similarity over all ordered pairs of distinct rows.
    """
    count = embedding.shape[0]
    if count < 2:
        raise BatchTooSmallError("pairwise similarity needs at least 2 embeddings")
    unit = F.normalize(embedding, dim=1, eps=constants.NORM_EPSILON)
    similarity = unit @ unit.t()
    off_diagonal = similarity.sum() - similarity.diagonal().sum()
    return off_diagonal / (count * (count - 1))


def stamped_clean_cosine(encoder, images, estimate):
    """
    Mean cosine between the embedding of each stamped image and that of its
    clean counterpart; unlearning drives it toward 1.
    """
    encoder.eval()
    with torch.no_grad():
        stamped = encoder.embed(apply_inverted_trigger(images, estimate))
        clean = encoder.embed(images)
    return float(F.cosine_similarity(stamped, clean, dim=1, eps=constants.NORM_EPSILON).mean())


def _logit(probability):
    return float(np.log(probability / (1.0 - probability)))


def invert_trigger(encoder, clean_subset, trigger_shape, steps, seed,
                   mask_sparsity=constants.DEFAULT_MASK_SPARSITY,
                   mask_penalty=MaskPenalty.L1,
                   learning_rate=constants.DEFAULT_INVERSION_LR,
                   batch_size=constants.DEFAULT_BATCH_SIZE):
    """
    Optimizes (pattern, mask) for ``steps`` Adam steps on a fixed seeded
    batch of clean images and returns the best iterate. The objective to
    maximize is

        mean pairwise cosine(encoder(stamped batch)) - mask_sparsity * penalty

    where the penalty is the L1 norm ``sum(mask)``. ``MaskPenalty.BUDGET``
    charges only the area above the trigger size instead,
    ``max(0, sum(mask) - h * w)`` with (h, w) = ``trigger_shape``. The
    initialization is a gray pattern
    under a half-transparent mask; ``steps=0`` returns it unchanged.
    """
    mask_penalty = MaskPenalty.parse(mask_penalty, "mask_penalty")
    height, width, channels = clean_subset.image_shape
    if not (1 <= trigger_shape[0] <= height and 1 <= trigger_shape[1] <= width):
        raise GeometryError("trigger shape %r does not fit %dx%d images"
                            % (tuple(trigger_shape), height, width))
    if len(clean_subset) < 2:
        raise BatchTooSmallError("trigger inversion needs at least 2 clean images")

    frozen = clone_encoder(encoder)
    frozen.eval()
    frozen.requires_grad_(False)
    rng = numpy_generator(derive_seed(seed, "invert"))
    chosen = rng.permutation(len(clean_subset))[:max(2, min(batch_size, len(clean_subset)))]
    images = clean_subset.subset(chosen).to_tensor()
    budget = float(trigger_shape[0] * trigger_shape[1])

    pattern_raw = torch.full((channels, height, width),
                             _logit(constants.INVERSION_INIT_PATTERN), requires_grad=True)
    mask_raw = torch.full((height, width), _logit(constants.INVERSION_INIT_MASK),
                          requires_grad=True)
    optimizer = torch.optim.Adam([pattern_raw, mask_raw], lr=learning_rate)

    def inversion_loss():
        pattern = torch.sigmoid(pattern_raw)
        mask = torch.sigmoid(mask_raw)
        similarity = mean_pairwise_cosine(frozen.embed(blend_tensor(images, pattern, mask)))
        area = mask.sum()
        if mask_penalty is MaskPenalty.BUDGET:
            area = torch.relu(area - budget)
        return -similarity + mask_sparsity * area

    def snapshot():
        return (torch.sigmoid(pattern_raw).detach().permute(1, 2, 0).numpy().copy(),
                torch.sigmoid(mask_raw).detach().numpy().copy())

    loss = inversion_loss()
    best_loss = float(loss.detach())
    if not np.isfinite(best_loss):
        raise InversionFailure("invert", 0)
    best = snapshot()
    trace = [best_loss]

    for step in tqdm(range(steps), desc="invert", disable=not progress_enabled(), leave=False):
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        loss = inversion_loss()
        value = float(loss.detach())
        if not np.isfinite(value):
            raise InversionFailure("invert", step, "inversion loss became non-finite")
        if value < best_loss:
            best_loss = value
            best = snapshot()
        trace.append(best_loss)
        logger.debug("invert step %d loss %.6f", step, value)

    logger.info("invert: loss %.4f -> %.4f over %d steps", trace[0], trace[-1], steps)
    return TriggerEstimate(best[0], best[1], trace)


def make_teacher_moth(poisoned, clean_subset, estimate, epochs, seed,
                      pretrain_hparams=PretrainHParams()):
    """
    Unlearns the inverted trigger: a copy of ``poisoned`` is trained so that
    stamped images embed like their clean versions, while clean embeddings
    stay close to those of the poisoned encoder.
    """
    teacher = clone_encoder(poisoned, stage="teacher-moth", strategy="T-MOTH")
    reference = clone_encoder(poisoned)
    reference.eval()
    reference.requires_grad_(False)
    images = clean_subset.to_tensor()
    pattern = torch.as_tensor(estimate.pattern).permute(2, 0, 1)
    mask = torch.as_tensor(estimate.mask)
    teacher.train()

    def step(indices):
        batch = images[indices]
        clean = teacher.embed(batch)
        stamped = teacher.embed(blend_tensor(batch, pattern, mask))
        with torch.no_grad():
            anchor = reference.embed(batch)
        unlearn = 1.0 - F.cosine_similarity(stamped, clean.detach(), dim=1,
                                            eps=constants.NORM_EPSILON).mean()
        preserve = 1.0 - F.cosine_similarity(clean, anchor, dim=1,
                                             eps=constants.NORM_EPSILON).mean()
        return unlearn + preserve

    logger.info("teacher-moth: unlearning for %d epochs (seed %d)", epochs, seed)
    trace = run_epochs("teacher-moth", teacher.parameters(), len(clean_subset), step, epochs,
                       pretrain_hparams.learning_rate, pretrain_hparams.batch_size,
                       derive_seed(seed, "teacher-moth"))
    teacher.eval()
    teacher.metadata.update(loss_trace=trace,
                            inverted_mask_area=estimate.mask_area)
    logger.info("teacher-moth: done, encoder %s", encoder_fingerprint(teacher))
    return teacher
