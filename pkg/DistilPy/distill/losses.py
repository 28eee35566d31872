"""
Contains
========

* DistillBatchView, AttentionMap
* attention_map
* loss_fitnets, loss_cc (feature family)
* loss_atd, loss_afd (attention family)
* loss_sp, loss_kd (layer family)
* DISTILL_LOSSES, distillation_loss

Every loss is >= 0 and exactly 0 when the student reproduces the teacher.
Formulas are collected in DistilPy/docs/losses.md. Normalizations by a norm
below NORM_EPSILON fall back to the unnormalized vector.
"""
from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass
from typing import List

import torch
import torch.nn.functional as F

from DistilPy.base import BatchTooSmallError, ValidationError, logger
from DistilPy.config import constants
from DistilPy.core.types import DistillOptions, LossKind

_warned = set()


def _warn_once(message):
    if message not in _warned:
        _warned.add(message)
        logger.warning(message)


@dataclass(frozen=True)
class DistillBatchView:

    """
    Teacher and student outputs on one batch: one (B, C, H, W) activation per
    tap and one (B, D) embedding each.
    """

    teacher_taps: List[torch.Tensor]
    teacher_embedding: torch.Tensor
    student_taps: List[torch.Tensor]
    student_embedding: torch.Tensor

    def __post_init__(self):
        if len(self.teacher_taps) != len(self.student_taps):
            raise ValidationError("student_taps", "%d taps, teacher has %d"
                                  % (len(self.student_taps), len(self.teacher_taps)))
        for index, (teacher, student) in enumerate(zip(self.teacher_taps, self.student_taps)):
            if teacher.shape != student.shape:
                raise ValidationError("student_taps[%d]" % index, "shape %r, teacher has %r"
                                      % (tuple(student.shape), tuple(teacher.shape)))
        if self.teacher_embedding.shape != self.student_embedding.shape:
            raise ValidationError("student_embedding", "shape %r, teacher has %r"
                                  % (tuple(self.student_embedding.shape),
                                     tuple(self.teacher_embedding.shape)))

    @property
    def batch_size(self):
        return int(self.student_embedding.shape[0])

    def pairs(self):
        return zip(self.teacher_taps, self.student_taps)


@dataclass(frozen=True)
class AttentionMap:
    values: torch.Tensor
    p: float


def attention_map(tap, p=constants.DEFAULT_ATTENTION_P):
    """
    values[b, h, w] = sum over channels of |tap[b, c, h, w]| ** p

    USAGE
    =====

    >>> tap = torch.tensor([[[[1., 2.], [3., 4.]], [[0., 1.], [1., 0.]]]])
    >>> attention_map(tap, 2).values
    tensor([[[ 1.,  5.],
             [10., 16.]]])
    """
    if p < 1:
        raise ValidationError("attention_p", "must be >= 1")
    return AttentionMap(tap.abs().pow(p).sum(dim=1), float(p))


def safe_normalize(rows):
    """
    L2-normalizes every row of a (B, N) tensor; rows with a norm below
    NORM_EPSILON are returned unnormalized.
    """
    norms = rows.norm(dim=1, keepdim=True)
    small = norms < constants.NORM_EPSILON
    if bool(small.any()):
        _warn_once("Distillation met a zero-norm vector; using it unnormalized")
    return rows / torch.where(small, torch.ones_like(norms), norms)


def _attention_distance(teacher, student, p):
    teacher_map = safe_normalize(attention_map(teacher, p).values.flatten(1))
    student_map = safe_normalize(attention_map(student, p).values.flatten(1))
    return (student_map - teacher_map).norm(dim=1).mean()


def _require_batch(view, name):
    if view.batch_size < 2:
        raise BatchTooSmallError("%s needs a batch of at least 2, got %d"
                                 % (name, view.batch_size))


def loss_fitnets(view):
    return F.mse_loss(view.student_embedding, view.teacher_embedding)


def loss_cc(view):
    """
    Frobenius distance between the cosine similarity matrices of the teacher
    and student embeddings, divided by B**2.
    """
    _require_batch(view, "CC")
    teacher = safe_normalize(view.teacher_embedding)
    student = safe_normalize(view.student_embedding)
    gap = student @ student.t() - teacher @ teacher.t()
    return gap.norm() / view.batch_size ** 2


def loss_atd(view, p=constants.DEFAULT_ATTENTION_P):
    """
    Sum over taps of the batch mean L2 distance between the normalized
    student and teacher attention maps.
    """
    total = view.student_embedding.new_zeros(())
    for teacher, student in view.pairs():
        total = total + _attention_distance(teacher, student, p)
    return total


def afd_weights(view, p=constants.DEFAULT_ATTENTION_P):
    """
    Per-tap weights: softmax over the teacher's attention mass (mean
    attention per channel) for live taps. A tap whose teacher attention has
    a norm below NORM_EPSILON gets the uniform weight 1/K; live taps share
    the remaining weight.
    """
    count = len(view.teacher_taps)
    masses, live = [], []
    for teacher in view.teacher_taps:
        values = attention_map(teacher.detach(), p).values
        live.append(bool(values.norm() >= constants.NORM_EPSILON))
        masses.append(values.mean() / teacher.shape[1])
    weights = torch.full((count,), 1.0 / count, dtype=view.student_embedding.dtype)
    live_index = [k for k in range(count) if live[k]]
    if len(live_index) < count:
        _warn_once("AFD met a tap with no teacher attention; weighting it uniformly")
    if live_index:
        share = len(live_index) / count
        live_masses = torch.stack([masses[k] for k in live_index]).to(weights.dtype)
        weights[live_index] = share * torch.softmax(live_masses, dim=0)
    return weights


def loss_afd(view, p=constants.DEFAULT_ATTENTION_P):
    weights = afd_weights(view, p).to(view.student_embedding.device)
    total = view.student_embedding.new_zeros(())
    for weight, (teacher, student) in zip(weights, view.pairs()):
        total = total + weight * _attention_distance(teacher, student, p)
    return total


def _similarity_gram(tap):
    rows = safe_normalize(tap.flatten(1))
    return safe_normalize(rows @ rows.t())


def loss_sp(view):
    """
    Sum over taps of ||G_S - G_T||_F ** 2 / B ** 2, where G is the
    row-normalized Gram matrix of the row-normalized flattened activations.
    """
    _require_batch(view, "SP")
    total = view.student_embedding.new_zeros(())
    for teacher, student in view.pairs():
        gap = _similarity_gram(student) - _similarity_gram(teacher)
        total = total + gap.pow(2).sum() / view.batch_size ** 2
    return total


def _softened_kl(teacher_logits, student_logits, temperature):
    if torch.equal(teacher_logits.detach(), student_logits.detach()):
        # Equal logits: the divergence and its gradient are exactly zero
        return student_logits.sum() * 0.0
    return F.kl_div(F.log_softmax(student_logits / temperature, dim=1),
                    F.log_softmax(teacher_logits / temperature, dim=1),
                    reduction="batchmean", log_target=True)


def loss_kd(view, temperature=constants.DEFAULT_KD_TEMPERATURE, include_taps=True,
            scale_by_t2=True):
    """
    KL(teacher || student) of temperature-softened softmaxes of the
    embeddings, plus the same term on spatially pooled taps when
    ``include_taps``; multiplied by temperature ** 2 when ``scale_by_t2``.
    """
    if temperature <= 0:
        raise ValidationError("kd_temperature", "must be > 0")
    total = _softened_kl(view.teacher_embedding, view.student_embedding, temperature)
    if include_taps:
        for teacher, student in view.pairs():
            total = total + _softened_kl(teacher.mean(dim=(2, 3)), student.mean(dim=(2, 3)),
                                         temperature)
    if scale_by_t2:
        total = total * temperature ** 2
    return total


LossEntry = namedtuple("LossEntry", ["label", "family", "function"])

DISTILL_LOSSES = {
    LossKind.FITNETS: LossEntry("F-FitNets", "feature",
                                lambda view, options: loss_fitnets(view)),
    LossKind.CC: LossEntry("F-CC", "feature",
                           lambda view, options: loss_cc(view)),
    LossKind.AFD: LossEntry("AT-AFD", "attention",
                            lambda view, options: loss_afd(view, options.attention_p)),
    LossKind.ATD: LossEntry("AT-ATD", "attention",
                            lambda view, options: loss_atd(view, options.attention_p)),
    LossKind.SP: LossEntry("L-SP", "layer",
                           lambda view, options: loss_sp(view)),
    LossKind.KD: LossEntry("L-KD", "layer",
                           lambda view, options: loss_kd(view, options.kd_temperature,
                                                         options.kd_include_taps,
                                                         options.kd_scale_by_t2)),
}


def distillation_loss(kind, view, options=DistillOptions()):
    return DISTILL_LOSSES[LossKind.parse(kind, "loss_kind")].function(view, options)


def loss_label(kind):
    return DISTILL_LOSSES[LossKind.parse(kind, "loss_kind")].label
