"""
Contains
========

* compute_acc, compute_asr
* balanced_score
* MetricsRecord, write_metrics_jsonl, read_metrics_jsonl
* evaluate_encoder
* as_percent
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from DistilPy.base import ValidationError
from DistilPy.config import constants
from DistilPy.core.types import TrainingHParams
from DistilPy.data.poison import make_poisoned_eval_set
from DistilPy.evaluate.probe import train_downstream


def _require_fraction(value, name):
    if isinstance(value, bool) or not 0.0 <= value <= 1.0:
        raise ValidationError(name, "%r must lie in [0, 1]" % (value,))


def compute_acc(classifier, test_set):
    """
    Fraction of ``test_set`` images whose predicted label equals their label.
    ``classifier`` needs a ``predict(images) -> labels`` method.
    """
    if len(test_set) == 0:
        raise ValidationError("test_set", "ACC is undefined on an empty set")
    predictions = np.asarray(classifier.predict(test_set.images))
    return float(np.mean(predictions == test_set.labels))


def compute_asr(classifier, test_set, spec, batch_size=constants.DEFAULT_BATCH_SIZE):
    """
    Fraction of trigger-stamped ``test_set`` images predicted as the attack
    target. Images whose own label is the target are counted too.
    """
    if len(test_set) == 0:
        raise ValidationError("test_set", "ASR is undefined on an empty set")
    view = make_poisoned_eval_set(test_set, spec)
    hits = 0
    for batch in view.iter_batches(batch_size):
        hits += int(np.sum(np.asarray(classifier.predict(batch)) == view.target_class))
    return hits / len(view)


def balanced_score(acc, asr, alpha=constants.DEFAULT_ALPHA):
    """
    BS = alpha * acc + (1 - alpha) * log2(2 - asr)

    USAGE
    =====

    >>> round(balanced_score(0.7825, 0.0523, 0.5), 2)
    0.87
    """
    _require_fraction(acc, "acc")
    _require_fraction(asr, "asr")
    _require_fraction(alpha, "alpha")
    return alpha * acc + (1.0 - alpha) * math.log2(2.0 - asr)


@dataclass(frozen=True)
class MetricsRecord:

    """
    ACC, ASR and BS of one evaluation, with the alpha BS was computed with,
    the lineage of the evaluated encoder, the downstream dataset and the
    seed.
    """

    acc: float
    asr: float
    bs: float
    alpha: float
    lineage: Tuple[Tuple[str, str], ...] = ()
    downstream: str = ""
    seed: int = 0

    def __post_init__(self):
        _require_fraction(self.acc, "acc")
        _require_fraction(self.asr, "asr")
        _require_fraction(self.alpha, "alpha")
        expected = balanced_score(self.acc, self.asr, self.alpha)
        if not math.isclose(self.bs, expected, rel_tol=0.0, abs_tol=1e-12):
            raise ValidationError("bs", "%r is not the balanced score of acc=%r, asr=%r, alpha=%r"
                                  % (self.bs, self.acc, self.asr, self.alpha))
        object.__setattr__(self, "lineage",
                           tuple((str(stage), str(digest)) for stage, digest in self.lineage))

    @classmethod
    def from_rates(cls, acc, asr, alpha=constants.DEFAULT_ALPHA, lineage=(), downstream="",
                   seed=0):
        return cls(float(acc), float(asr), balanced_score(acc, asr, alpha), float(alpha),
                   tuple(lineage), downstream, int(seed))

    def to_dict(self):
        return {"acc": self.acc, "asr": self.asr, "bs": self.bs, "alpha": self.alpha,
                "lineage": [list(pair) for pair in self.lineage],
                "downstream": self.downstream, "seed": self.seed}

    @classmethod
    def from_dict(cls, data):
        return cls(acc=data["acc"], asr=data["asr"], bs=data["bs"], alpha=data["alpha"],
                   lineage=tuple(tuple(pair) for pair in data.get("lineage", ())),
                   downstream=data.get("downstream", ""), seed=data.get("seed", 0))

    def as_row(self):
        return {"ACC": as_percent(self.acc), "ASR": as_percent(self.asr),
                "BS": "%.2f" % self.bs}


def write_metrics_jsonl(records, path, append=True):
    with open(path, "a" if append else "w") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_metrics_jsonl(path):
    with open(path) as handle:
        return [MetricsRecord.from_dict(json.loads(line)) for line in handle if line.strip()]


def as_percent(fraction):
    return "%.2f" % (100.0 * fraction)


def evaluate_encoder(encoder, train_set, test_set, spec, epochs, seed,
                     alpha=constants.DEFAULT_ALPHA, lineage=(), hparams=TrainingHParams(),
                     input_size=None):
    """
    Trains the downstream head on ``train_set`` and measures ACC and ASR on
    ``test_set``.
    """
    classifier = train_downstream(encoder, train_set, epochs, seed, hparams, input_size)
    acc = compute_acc(classifier, test_set)
    asr = compute_asr(classifier, test_set, spec)
    return MetricsRecord.from_rates(acc, asr, alpha, lineage, test_set.name, seed)
