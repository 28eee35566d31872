"""
Contains
========

* badencoder_terms, badencoder_loss
* badencoder_poison
* select_shadow_set, select_reference_inputs

Model poisoning of a clean encoder: embeddings of trigger-stamped shadow
images are pulled toward the embeddings of a few target-class reference
images, while clean shadow embeddings are kept close to those of the frozen
clean encoder. Both terms use cosine similarity.
"""
from __future__ import annotations

import numpy as np
import torch

from DistilPy.base import AttackConstructionError, NumericalDegeneracyError, logger
from DistilPy.config import constants
from DistilPy.core.seeding import derive_seed, numpy_generator
from DistilPy.core.types import AttackMethod
from DistilPy.data.datasets import sample_clean_subset
from DistilPy.data.poison import resize_images, stamp_tensor
from DistilPy.pretrain.encoders import clone_encoder, encoder_fingerprint
from DistilPy.pretrain.training import run_epochs


def _unit_rows(embedding, what):
    norms = embedding.norm(dim=1)
    if bool((norms < constants.NORM_EPSILON).any()):
        raise NumericalDegeneracyError("%s has a zero-norm embedding" % what)
    return embedding / norms.unsqueeze(1)


def badencoder_terms(poisoned, frozen_clean, shadow_batch, trigger, reference_inputs):
    """
    Returns (effect, utility):

    * effect = 1 - mean cosine over every (stamped shadow, reference) pair,
      the full B x R matrix even when R == B; references are a pool of
      target embeddings, not partners of particular shadow images
    * utility = 1 - mean cosine between poisoned(x) and frozen_clean(x)

    The effect term is exactly 0 when every stamped shadow image and every
    reference embed in one direction, e.g. a single shadow image whose
    stamped copy is the reference. A batch of distinct stamped images used
    as its own references keeps a positive effect.
    """
    if shadow_batch.shape[0] == 0 or reference_inputs.shape[0] == 0:
        raise AttackConstructionError("badencoder loss needs non-empty shadow and reference batches")
    stamped = _unit_rows(poisoned.embed(stamp_tensor(shadow_batch, trigger)), "stamped shadow batch")
    reference = _unit_rows(poisoned.embed(reference_inputs), "reference batch")
    effect = 1.0 - (stamped @ reference.t()).mean()

    clean = _unit_rows(poisoned.embed(shadow_batch), "shadow batch")
    with torch.no_grad():
        anchor = _unit_rows(frozen_clean.embed(shadow_batch), "frozen clean embedding")
    utility = 1.0 - (clean * anchor).sum(dim=1).mean()
    return effect, utility


def badencoder_loss(poisoned, frozen_clean, shadow_batch, trigger, reference_inputs,
                    lambda_effect=constants.DEFAULT_LAMBDA_EFFECT,
                    lambda_utility=constants.DEFAULT_LAMBDA_UTILITY):
    effect, utility = badencoder_terms(poisoned, frozen_clean, shadow_batch, trigger,
                                       reference_inputs)
    return lambda_effect * effect + lambda_utility * utility


def select_shadow_set(pretrain_set, strength, seed):
    return sample_clean_subset(pretrain_set, strength.shadow_fraction,
                               derive_seed(seed, "shadow"))


def select_reference_inputs(target_images, count, seed, image_shape=None):
    """
    ``count`` target-class images chosen with a seeded permutation, resized to
    ``image_shape`` (H, W) when given.
    """
    if len(target_images) == 0:
        raise AttackConstructionError("the downstream set has no image of the target class")
    rng = numpy_generator(derive_seed(seed, "references"))
    chosen = target_images[rng.permutation(len(target_images))[:count]]
    if image_shape is not None:
        chosen = resize_images(chosen, image_shape)
    return chosen


def _effect_on(encoder, frozen, shadow, trigger, reference):
    with torch.no_grad():
        return float(badencoder_terms(encoder, frozen, shadow, trigger, reference)[0])


def badencoder_poison(clean, spec, shadow_set, reference_inputs, hparams=None, seed=0):
    """
    Returns a backdoored copy of ``clean``. ``reference_inputs`` is an
    (R, H, W, C) array of target-class images; ``hparams`` defaults to
    ``spec.strength``.

    The effect term measured on the whole shadow set before and after
    training is stored as ``metadata['effect_start']`` and
    ``metadata['effect_end']``.
    """
    if spec.method is not AttackMethod.BADENCODER:
        raise AttackConstructionError("badencoder_poison needs a BADENCODER attack spec")
    if len(shadow_set) == 0:
        raise AttackConstructionError("empty shadow set")
    hparams = hparams or spec.strength

    poisoned = clone_encoder(clean, stage="attack", strategy="BADENCODER",
                             attack=spec.manifest())
    frozen = clone_encoder(clean)
    frozen.eval()
    frozen.requires_grad_(False)

    if len(reference_inputs) == 0:
        raise AttackConstructionError("no reference inputs")
    shadow = shadow_set.to_tensor()
    reference = resize_images(reference_inputs, shadow_set.image_shape[:2])
    reference = torch.from_numpy(np.array(reference)).permute(0, 3, 1, 2).contiguous()

    effect_start = _effect_on(poisoned, frozen, shadow, spec.trigger, reference)
    poisoned.train()

    def step(indices):
        return badencoder_loss(poisoned, frozen, shadow[indices], spec.trigger, reference,
                               hparams.lambda_effect, hparams.lambda_utility)

    logger.info("attack: BadEncoder for %d epochs on %d shadow images (seed %d)",
                hparams.epochs, len(shadow_set), seed)
    trace = run_epochs("attack", poisoned.parameters(), len(shadow_set), step, hparams.epochs,
                       hparams.learning_rate, hparams.batch_size, derive_seed(seed, "attack"))
    poisoned.eval()
    effect_end = _effect_on(poisoned, frozen, shadow, spec.trigger, reference)
    poisoned.metadata.update(loss_trace=trace, effect_start=effect_start, effect_end=effect_end)
    logger.info("attack: effect term %.4f -> %.4f, encoder %s", effect_start, effect_end,
                encoder_fingerprint(poisoned))
    return poisoned
