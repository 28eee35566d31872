"""
Dispatch from a TeacherMethod to the matching teacher constructor.
"""
from DistilPy.config import constants
from DistilPy.core.types import PretrainHParams, TeacherHParams, TeacherMethod
from DistilPy.pretrain.encoders import clone_encoder
from DistilPy.teacher.finetune import make_teacher_ft
from DistilPy.teacher.moth import invert_trigger, make_teacher_moth
from DistilPy.teacher.pruning import make_teacher_anp, make_teacher_fp


def make_teacher(method, poisoned, clean_subset, hparams=TeacherHParams(), seed=0,
                 pretrain_hparams=PretrainHParams(), trigger_shape=None):
    """
    Builds the teacher net for ``method``. ``NONE`` skips teacher production
    and hands back a copy of the poisoned encoder. ``trigger_shape`` is the
    mask budget (h, w) of the MOTH inversion.

    USAGE
    =====

    >>> teacher = make_teacher(TeacherMethod.FT, poisoned, clean, TeacherHParams(finetune_epochs=5))
    """
    method = TeacherMethod.parse(method, "teacher_method")
    if method is TeacherMethod.FT:
        return make_teacher_ft(poisoned, clean_subset, hparams.finetune_epochs, seed,
                               pretrain_hparams)
    if method is TeacherMethod.FP:
        return make_teacher_fp(poisoned, clean_subset, hparams.prune_fraction, seed,
                               hparams.prune_direction, hparams.finetune_epochs,
                               pretrain_hparams)
    if method is TeacherMethod.ANP:
        return make_teacher_anp(poisoned, clean_subset, hparams.anp_budget,
                                hparams.prune_fraction, seed, hparams.anp_scope,
                                hparams.finetune_epochs, pretrain_hparams)
    if method is TeacherMethod.MOTH:
        if trigger_shape is None:
            trigger_shape = (constants.DEFAULT_TRIGGER_SIZE, constants.DEFAULT_TRIGGER_SIZE)
        estimate = invert_trigger(poisoned, clean_subset, trigger_shape, hparams.inversion_steps,
                                  seed, hparams.mask_sparsity, hparams.mask_penalty,
                                  batch_size=pretrain_hparams.batch_size)
        teacher = make_teacher_moth(poisoned, clean_subset, estimate, hparams.unlearn_epochs,
                                    seed, pretrain_hparams)
        teacher.metadata["inversion_loss_trace"] = estimate.inversion_loss_trace
        return teacher
    return clone_encoder(poisoned, stage="teacher-none", strategy="T-NONE")
