"""
FT teacher: continued contrastive training of the poisoned encoder on the
defender's clean subset.
"""
import dataclasses

from DistilPy.core.types import PretrainHParams
from DistilPy.pretrain.contrastive import contrastive_train


def finetune_hparams(pretrain_hparams, epochs):
    return dataclasses.replace(pretrain_hparams, epochs=int(epochs))


def make_teacher_ft(poisoned, clean_subset, epochs, seed, pretrain_hparams=PretrainHParams()):
    return contrastive_train(poisoned, clean_subset, finetune_hparams(pretrain_hparams, epochs),
                             seed, "teacher-ft", strategy="T-FT")
