"""
Contains
========

* channel_activity, rank_channels
* make_teacher_fp
* anp_sensitivity, make_teacher_anp

Both pruning teachers act through the NeuronGate masks of the encoder taps,
so a pruned channel outputs exactly zero whatever the weights become during
the fine-tuning that follows.
"""
from __future__ import annotations

import numpy as np
import torch

from DistilPy.base import ValidationError, logger
from DistilPy.config import constants
from DistilPy.core.seeding import derive_seed, torch_generator, torch_seed
from DistilPy.core.types import AnpScope, PretrainHParams, PruneDirection
from DistilPy.data.datasets import subset_size
from DistilPy.pretrain.contrastive import augment_batch, contrastive_train, nt_xent_loss, \
    simclr_augmentation
from DistilPy.pretrain.encoders import clone_encoder
from DistilPy.pretrain.training import minibatches
from DistilPy.teacher.finetune import finetune_hparams


def channel_activity(encoder, dataset, tap=-1, batch_size=constants.DEFAULT_BATCH_SIZE):
    """
    Mean absolute activation of every channel of one tap over ``dataset``.
    """
    images = dataset.to_tensor()
    total = torch.zeros(encoder.tap_channels[tap], dtype=torch.float64)
    encoder.eval()
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            activation = encoder(images[start:start + batch_size])[1][tap]
            total += activation.abs().mean(dim=(2, 3)).sum(dim=0).double()
    return (total / max(len(dataset), 1)).numpy()


def rank_channels(scores, direction=PruneDirection.MOST):
    """
    Channel indices ordered for pruning. Equal scores keep ascending index
    order, so ties go to the lowest channel index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if PruneDirection.parse(direction, "prune_direction") is PruneDirection.MOST:
        return np.argsort(-scores, kind="stable")
    return np.argsort(scores, kind="stable")


def _check_fraction(prune_fraction):
    if not 0 <= prune_fraction < 1:
        raise ValidationError("prune_fraction", "%r must lie in [0, 1)" % (prune_fraction,))


def make_teacher_fp(poisoned, clean_subset, prune_fraction, seed,
                    direction=PruneDirection.MOST,
                    finetune_epochs=constants.DEFAULT_TEACHER_EPOCHS,
                    pretrain_hparams=PretrainHParams()):
    """
    Ranks the channels of the last tap by mean absolute activation on the
    clean subset, zeroes ``floor(prune_fraction * C)`` of them and fine-tunes.
    ``direction=MOST`` prunes the most active channels, ``LEAST`` the most
    dormant ones.
    """
    _check_fraction(prune_fraction)
    direction = PruneDirection.parse(direction, "prune_direction")
    if direction is PruneDirection.LEAST:
        logger.warning("FP prunes the least active channels")

    teacher = clone_encoder(poisoned, stage="teacher-fp", strategy="T-FP")
    gate = teacher.gates[-1]
    count = subset_size(prune_fraction, gate.channels)
    pruned = rank_channels(channel_activity(teacher, clean_subset), direction)[:count]
    if count:
        gate.prune(pruned)
    logger.info("teacher-fp: pruned %d of %d channels (%s active)", count, gate.channels,
                direction.value.lower())

    teacher = contrastive_train(teacher, clean_subset,
                                finetune_hparams(pretrain_hparams, finetune_epochs),
                                seed, "teacher-fp")
    teacher.metadata.update(pruned={"tap": teacher.num_taps - 1,
                                    "channels": [int(c) for c in sorted(pruned)]})
    return teacher


def _scope_taps(encoder, scope):
    if AnpScope.parse(scope, "anp_scope") is AnpScope.LAST:
        return [encoder.num_taps - 1]
    return list(range(encoder.num_taps))


def anp_sensitivity(encoder, dataset, perturb_budget, seed, scope=AnpScope.LAST,
                    pretrain_hparams=PretrainHParams()):
    """
    Estimated growth of the contrastive loss if each channel's scale were
    pushed by ``perturb_budget`` in its worst direction. Nothing is actually
    perturbed: with G the gradient of the loss with respect to the
    multiplicative gate noise at zero, the estimate is the first order term
    ``budget * |G|``, averaged over batches.

    Returns one score array per tap in scope, in tap order. Scores below
    ANP_SCORE_TOLERANCE are reported as 0; a channel whose activations are
    identically zero scores 0.
    """
    if perturb_budget <= 0:
        raise ValidationError("perturb_budget", "must be > 0")
    if len(dataset) < 2:
        raise ValidationError("dataset", "sensitivity needs at least 2 clean images")

    probe = clone_encoder(encoder)
    probe.eval()
    probe.requires_grad_(False)
    taps = _scope_taps(probe, scope)
    noises = {}
    for tap in taps:
        noises[tap] = torch.zeros(probe.tap_channels[tap], requires_grad=True)
        probe.gates[tap].noise = noises[tap]

    images = dataset.to_tensor()
    augment = simclr_augmentation(dataset.image_shape[0], pretrain_hparams.augmentation)
    gradients = {tap: torch.zeros(probe.tap_channels[tap]) for tap in taps}
    batches = minibatches(len(dataset), pretrain_hparams.batch_size,
                          torch_generator(derive_seed(seed, "anp/batches")), min_size=2)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(derive_seed(seed, "anp/augment")))
        for indices in batches:
            batch = images[indices]
            z_a = probe.project(probe.embed(augment_batch(augment, batch)))
            z_b = probe.project(probe.embed(augment_batch(augment, batch)))
            loss = nt_xent_loss(z_a, z_b, pretrain_hparams.temperature)
            grads = torch.autograd.grad(loss, [noises[tap] for tap in taps])
            for tap, grad in zip(taps, grads):
                gradients[tap] += grad.detach()

    scores = []
    for tap in taps:
        score = perturb_budget * gradients[tap].abs().double().numpy() / len(batches)
        score[score < constants.ANP_SCORE_TOLERANCE] = 0.0
        scores.append(score)
    return scores


def make_teacher_anp(poisoned, clean_subset, perturb_budget, prune_fraction, seed,
                     scope=AnpScope.LAST,
                     finetune_epochs=constants.DEFAULT_TEACHER_EPOCHS,
                     pretrain_hparams=PretrainHParams()):
    """
    Prunes the ``prune_fraction`` most perturbation-sensitive channels of the
    taps in ``scope`` (ranked jointly, ties to the lowest global channel
    index), then fine-tunes.
    """
    if perturb_budget <= 0:
        raise ValidationError("perturb_budget", "must be > 0")
    _check_fraction(prune_fraction)

    teacher = clone_encoder(poisoned, stage="teacher-anp", strategy="T-ANP")
    taps = _scope_taps(teacher, scope)
    scores = anp_sensitivity(teacher, clean_subset, perturb_budget, seed, scope,
                             pretrain_hparams)
    owners = [(tap, channel) for tap in taps for channel in range(teacher.tap_channels[tap])]
    count = subset_size(prune_fraction, len(owners))
    chosen = rank_channels(np.concatenate(scores), PruneDirection.MOST)[:count]

    pruned = {}
    for position in chosen:
        tap, channel = owners[int(position)]
        pruned.setdefault(tap, []).append(channel)
    for tap, channels in pruned.items():
        teacher.gates[tap].prune(channels)
    logger.info("teacher-anp: pruned %d of %d channels (budget %s)", count, len(owners),
                perturb_budget)

    teacher = contrastive_train(teacher, clean_subset,
                                finetune_hparams(pretrain_hparams, finetune_epochs),
                                seed, "teacher-anp")
    teacher.metadata.update(pruned={str(tap): sorted(channels) for tap, channels in pruned.items()})
    return teacher
