"""
Student initialization: RAW (copy of the poisoned encoder), VOID (fresh
random initialization) or WARMUP (contrastive warm-up on the clean subset).
"""
from DistilPy.base import ValidationError, logger
from DistilPy.core.types import PretrainHParams, StudentStrategy, parse_architecture
from DistilPy.pretrain.contrastive import warm_up_train
from DistilPy.pretrain.encoders import clone_encoder, void_encoder


def init_student(strategy, poisoned, clean_subset, hparams=PretrainHParams(), seed=0,
                 architecture=None):
    strategy = StudentStrategy.parse(strategy, "student_strategy")
    if architecture is not None and parse_architecture(architecture) != poisoned.architecture:
        raise ValidationError("architecture", "student %s cannot distill from a %s teacher"
                              % (architecture, poisoned.architecture))
    logger.info("student: %s initialization (seed %d)", strategy.value, seed)
    if strategy is StudentStrategy.RAW:
        return clone_encoder(poisoned, stage="student", strategy="RAW")
    if strategy is StudentStrategy.VOID:
        return void_encoder(poisoned.architecture, seed)
    return warm_up_train(clean_subset, poisoned.architecture, hparams, seed)
