"""
Contains
========

* distill
* iterative_distill
* distill_params
"""
from __future__ import annotations

import dataclasses

import torch

from DistilPy.base import TrainingFailure, ValidationError, logger
from DistilPy.core.seeding import derive_seed, torch_seed
from DistilPy.core.store import ArtifactStore
from DistilPy.core.types import DistillOptions, LossKind, OptimizerHParams, TeacherMethod, \
    StudentStrategy
from DistilPy.distill.losses import DistillBatchView, distillation_loss, loss_label
from DistilPy.distill.student import init_student
from DistilPy.pretrain.checkpoints import cached_encoder
from DistilPy.pretrain.contrastive import augment_batch, simclr_augmentation
from DistilPy.pretrain.encoders import clone_encoder, encoder_fingerprint
from DistilPy.pretrain.training import run_epochs
from DistilPy.teacher.factory import make_teacher


def distill(teacher, student, clean_subset, loss_kind, epochs, hparams=OptimizerHParams(),
            seed=0, options=DistillOptions(), augmentation="simclr"):
    """
    Trains a copy of ``student`` to reproduce the frozen ``teacher`` on the
    clean subset under one distillation loss. Teacher and student see the
    same augmented view of every batch. Neither input is modified.

    USAGE
    =====

    >>> distilled = distill(teacher, student, clean, LossKind.ATD, epochs=20)
    >>> distilled.metadata["loss_kind"]
    'ATD'
    """
    loss_kind = LossKind.parse(loss_kind, "loss_kind")
    if teacher.tap_channels != student.tap_channels or \
            teacher.embedding_dim != student.embedding_dim:
        raise ValidationError("student", "tap structure %r/%d does not match the teacher's %r/%d"
                              % (student.tap_channels, student.embedding_dim,
                                 teacher.tap_channels, teacher.embedding_dim))

    teacher_hash = encoder_fingerprint(teacher)
    trained = clone_encoder(student, stage="distill", loss_kind=loss_kind.value,
                            teacher=teacher_hash)
    teacher.eval()
    trained.train()
    images = clean_subset.to_tensor()
    augment = simclr_augmentation(clean_subset.image_shape[0], augmentation)

    def step(indices):
        batch = augment_batch(augment, images[indices])
        with torch.no_grad():
            teacher_embedding, teacher_taps = teacher(batch)
        student_embedding, student_taps = trained(batch)
        view = DistillBatchView(teacher_taps, teacher_embedding, student_taps, student_embedding)
        return distillation_loss(loss_kind, view, options)

    logger.info("distill: %s for %d epochs on %d images (seed %d)", loss_label(loss_kind),
                epochs, len(clean_subset), seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(derive_seed(seed, "distill/augment")))
        trace = run_epochs("distill", trained.parameters(), len(clean_subset), step, epochs,
                           hparams.learning_rate, hparams.batch_size,
                           derive_seed(seed, "distill/batches"), min_batch=2)
    trained.eval()
    if encoder_fingerprint(teacher) != teacher_hash:
        raise TrainingFailure("distill", epochs, "the teacher changed during distillation")
    trained.metadata["loss_trace"] = trace
    logger.info("distill: done, student %s", encoder_fingerprint(trained))
    return trained


def distill_params(config, iteration):
    return {
        "loss_kind": config.loss_kind.value,
        "epochs": config.distill_epochs,
        "optimizer": dataclasses.asdict(config.optimizer),
        "options": dataclasses.asdict(config.distill_options),
        "augmentation": config.pretrain.augmentation,
        "seed": config.seed,
        "iteration": iteration,
    }


def teacher_params(config, method, iteration):
    return {
        "method": method.value,
        "teacher": {name: getattr(value, "value", value)
                    for name, value in dataclasses.asdict(config.teacher).items()},
        "pretrain": dataclasses.asdict(config.pretrain),
        "trigger_shape": list(config.attack.trigger.size),
        "seed": config.seed,
        "iteration": iteration,
    }


def student_params(config, strategy):
    return {
        "strategy": strategy.value,
        "architecture": config.architecture,
        "pretrain": dataclasses.asdict(config.pretrain),
        "seed": config.seed,
    }


def _stage_seed(config, name, iteration):
    return derive_seed(config.seed, name if iteration == 0 else "%s/%d" % (name, iteration))


def iterative_distill(poisoned, config, n_iterations, clean_subset, poisoned_ref, clean_ref,
                      store=None):
    """
    Runs the teacher -> student -> distillation chain ``n_iterations`` times
    and returns ``[(teacher_ref, student_ref), ...]`` indexed by iteration.

    Iteration 0 builds its teacher from the poisoned encoder with
    ``config.teacher_method`` and initializes the student with
    ``config.student_strategy``; iteration n >= 1 fine-tunes the previous
    student into the teacher and starts the student from the previous student.
    With ``n_iterations=1`` this is the single-shot pipeline.
    """
    if n_iterations < 1:
        raise ValidationError("iterations", "must be >= 1")
    if n_iterations > 1 and config.teacher_method is not TeacherMethod.FT:
        raise ValidationError("teacher_method", "iterative distillation fine-tunes every teacher (FT)")
    store = store or ArtifactStore()
    chain = []
    previous_ref, previous = None, None

    for iteration in range(n_iterations):
        if iteration == 0:
            method, source, source_ref = config.teacher_method, poisoned, poisoned_ref
        else:
            method, source, source_ref = TeacherMethod.FT, previous, previous_ref
        teacher_seed = _stage_seed(config, "teacher", iteration)
        teacher_ref, teacher = cached_encoder(
            store, "teacher", teacher_params(config, method, iteration), [source_ref, clean_ref],
            lambda: make_teacher(method, source, clean_subset, config.teacher, teacher_seed,
                                 config.pretrain, config.attack.trigger.size),
            iteration_index=iteration)

        if iteration == 0:
            strategy = config.student_strategy
            init_parents = [poisoned_ref] if strategy is StudentStrategy.RAW else [clean_ref]
            student_seed = _stage_seed(config, "student", iteration)
            init_ref, student = cached_encoder(
                store, "student", student_params(config, strategy), init_parents,
                lambda: init_student(strategy, poisoned, clean_subset, config.pretrain,
                                     student_seed))
        else:
            init_ref, student = previous_ref, previous

        distill_seed = _stage_seed(config, "distill", iteration)
        student_ref, distilled = cached_encoder(
            store, "distill", distill_params(config, iteration), [teacher_ref, init_ref, clean_ref],
            lambda: distill(teacher, student, clean_subset, config.loss_kind,
                            config.distill_epochs, config.optimizer, distill_seed,
                            config.distill_options, config.pretrain.augmentation),
            iteration_index=iteration)
        logger.info("iteration %d: teacher %s -> student %s", iteration,
                    teacher_ref.artifact_hash, student_ref.artifact_hash)
        chain.append((teacher_ref, student_ref))
        previous_ref, previous = student_ref, distilled
    return chain
