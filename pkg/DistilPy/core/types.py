"""
Contains
========

* NamedEnum, base of the closed enumerations Split, TeacherMethod,
  StudentStrategy, LossKind, AttackMethod, ArtifactKind, PruneDirection,
  AnpScope, MaskPenalty
* Trigger, solid_trigger
* BadEncoderStrength, BasslStrength, AttackSpec
* PretrainHParams, TrainingHParams, OptimizerHParams, TeacherHParams,
  DistillOptions, SynthOptions
* ExperimentConfig
* ArtifactRef

Every type here is immutable after construction and validates itself in
``__post_init__``; out-of-range values raise ValidationError naming the field.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from DistilPy.base import ValidationError
from DistilPy.config import constants


class NamedEnum(str, enum.Enum):

    @classmethod
    def parse(cls, value, field_name=None):
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        for member in cls:
            if member.name == key or member.value.upper() == str(value).strip().upper():
                return member
        raise ValidationError(
            field_name or cls.__name__,
            "%r is not one of %s" % (value, ", ".join(m.value for m in cls)))

    def __str__(self):
        return self.value


class Split(NamedEnum):
    TRAIN = "TRAIN"
    TEST = "TEST"


class TeacherMethod(NamedEnum):
    FT = "FT"
    FP = "FP"
    ANP = "ANP"
    MOTH = "MOTH"
    NONE = "NONE"


class StudentStrategy(NamedEnum):
    RAW = "RAW"
    VOID = "VOID"
    WARMUP = "WARMUP"


class LossKind(NamedEnum):
    FITNETS = "FITNETS"
    CC = "CC"
    AFD = "AFD"
    ATD = "ATD"
    SP = "SP"
    KD = "KD"


class AttackMethod(NamedEnum):
    BADENCODER = "BADENCODER"
    BASSL = "BASSL"


class ArtifactKind(NamedEnum):
    ENCODER = "ENCODER"
    CLASSIFIER = "CLASSIFIER"
    DATASET_SUBSET = "DATASET_SUBSET"
    METRICS = "METRICS"


class PruneDirection(NamedEnum):
    MOST = "MOST"
    LEAST = "LEAST"


class AnpScope(NamedEnum):
    LAST = "LAST"
    ALL = "ALL"


class MaskPenalty(NamedEnum):
    L1 = "L1"
    BUDGET = "BUDGET"


ARCHITECTURES = ("RN18", "RN34", "RN50", "tiny-cnn")

DATASET_CLASSES = {
    "CIFAR10": 10,
    "STL10": 10,
    "GTSRB": 43,
    "SVHN": 10,
    "SYNTH-TINY": constants.SYNTH_NUM_CLASSES,
}


def parse_architecture(value, field_name="architecture"):
    for arch in ARCHITECTURES:
        if str(value).lower() == arch.lower():
            return arch
    raise ValidationError(
        field_name, "%r is not one of %s" % (value, ", ".join(ARCHITECTURES)))


def parse_dataset_name(value, field_name):
    name = str(value).strip().upper()
    if name not in DATASET_CLASSES:
        raise ValidationError(
            field_name, "%r is not one of %s" % (value, ", ".join(DATASET_CLASSES)))
    return name


def _require(condition, field_name, message):
    if not condition:
        raise ValidationError(field_name, message)


def _strict_keys(data, allowed, where):
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(where, "expected a mapping, got %r" % (data,))
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError(
            "%s.%s" % (where, unknown[0]) if where else unknown[0],
            "unknown key")
    return data


@dataclass(frozen=True, eq=False)
class Trigger:

    """
    A pixel patch stamped on images. ``pattern`` is an (h, w, c) array with
    values in [0, 1]. ``position`` is the (row, col) of the top-left corner of
    the patch; ``None`` anchors it at the bottom-right corner of whatever
    image it is stamped on.

    USAGE
    =====

    >>> trigger = solid_trigger(3)
    >>> trigger.size
    (3, 3)
    >>> trigger.anchor((32, 32, 3))
    (29, 29)
    """

    pattern: np.ndarray
    position: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        pattern = np.array(self.pattern, dtype=np.float32)
        if pattern.ndim == 2:
            pattern = pattern[:, :, None]
        _require(pattern.ndim == 3, "trigger.pattern", "expected an (h, w, c) array")
        _require(pattern.shape[0] >= 1 and pattern.shape[1] >= 1,
                 "trigger.size", "must be at least 1x1")
        _require(bool(np.all((pattern >= 0.0) & (pattern <= 1.0))),
                 "trigger.pattern", "values must lie in [0, 1]")
        pattern.setflags(write=False)
        object.__setattr__(self, "pattern", pattern)
        if self.position is not None:
            row, col = (int(v) for v in self.position)
            _require(row >= 0 and col >= 0, "trigger.position", "must be non-negative")
            object.__setattr__(self, "position", (row, col))

    @property
    def size(self):
        return (int(self.pattern.shape[0]), int(self.pattern.shape[1]))

    @property
    def channels(self):
        return int(self.pattern.shape[2])

    def anchor(self, image_shape):
        height, width = int(image_shape[0]), int(image_shape[1])
        if self.position is None:
            return (height - self.size[0], width - self.size[1])
        return self.position

    def fits(self, image_shape):
        row, col = self.anchor(image_shape)
        return (row >= 0 and col >= 0
                and row + self.size[0] <= image_shape[0]
                and col + self.size[1] <= image_shape[1]
                and (len(image_shape) < 3 or image_shape[2] == self.channels))

    @property
    def fingerprint(self):
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.pattern).tobytes())
        digest.update(repr((self.pattern.shape, self.position)).encode())
        return digest.hexdigest()[:16]

    def is_solid(self):
        first = self.pattern[0, 0]
        return bool(np.all(self.pattern == first))

    def to_dict(self):
        data = {"size": list(self.size),
                "position": list(self.position) if self.position else None}
        if self.is_solid():
            data["color"] = [float(v) for v in self.pattern[0, 0]]
        else:
            data["pattern"] = self.pattern.tolist()
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(_strict_keys(data, ("size", "position", "color", "pattern"), "attack.trigger"))
        position = data.get("position")
        if data.get("pattern") is not None:
            return cls(np.asarray(data["pattern"], dtype=np.float32),
                       tuple(position) if position else None)
        size = data.get("size", constants.DEFAULT_TRIGGER_SIZE)
        if isinstance(size, (int, float)):
            size = (int(size), int(size))
        _require(len(size) == 2 and min(size) >= 1, "attack.trigger.size",
                 "must be an (h, w) pair of positive integers")
        color = data.get("color", constants.DEFAULT_TRIGGER_COLOR)
        return solid_trigger(size, color, tuple(position) if position else None)

    def __eq__(self, other):
        if not isinstance(other, Trigger):
            return NotImplemented
        return (self.position == other.position
                and self.pattern.shape == other.pattern.shape
                and bool(np.array_equal(self.pattern, other.pattern)))

    def __hash__(self):
        return hash(self.fingerprint)

    def __repr__(self):
        return "Trigger(size=%r, position=%r)" % (self.size, self.position)


def solid_trigger(size=constants.DEFAULT_TRIGGER_SIZE,
                  color=constants.DEFAULT_TRIGGER_COLOR, position=None):
    """
    Builds a single colour square (or rectangular) trigger; white by default.
    """
    if isinstance(size, (int, np.integer)):
        size = (int(size), int(size))
    color = np.asarray(color, dtype=np.float32).reshape(1, 1, -1)
    pattern = np.broadcast_to(color, (int(size[0]), int(size[1]), color.shape[-1]))
    return Trigger(np.array(pattern), position)


@dataclass(frozen=True)
class BadEncoderStrength:
    lambda_effect: float = constants.DEFAULT_LAMBDA_EFFECT
    lambda_utility: float = constants.DEFAULT_LAMBDA_UTILITY
    shadow_fraction: float = constants.DEFAULT_SHADOW_FRACTION
    reference_count: int = constants.DEFAULT_REFERENCE_COUNT
    epochs: int = constants.DEFAULT_ATTACK_EPOCHS
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    batch_size: int = constants.DEFAULT_BATCH_SIZE

    def __post_init__(self):
        _require(self.lambda_effect >= 0, "attack.strength.lambda_effect", "must be >= 0")
        _require(self.lambda_utility >= 0, "attack.strength.lambda_utility", "must be >= 0")
        _require(0 < self.shadow_fraction <= 1, "attack.strength.shadow_fraction",
                 "must lie in (0, 1]")
        _require(self.reference_count >= 1, "attack.strength.reference_count", "must be >= 1")
        _require(self.epochs >= 0, "attack.strength.epochs", "must be >= 0")
        _require(self.learning_rate > 0, "attack.strength.learning_rate", "must be > 0")
        _require(self.batch_size >= 1, "attack.strength.batch_size", "must be >= 1")


@dataclass(frozen=True)
class BasslStrength:
    poison_ratio: float = constants.DEFAULT_BASSL_POISON_RATIO
    migration_fraction: float = constants.DEFAULT_BASSL_MIGRATION_FRACTION

    def __post_init__(self):
        _require(0 < self.poison_ratio <= 1, "attack.strength.poison_ratio",
                 "must lie in (0, 1]")
        _require(0 <= self.migration_fraction <= 1, "attack.strength.migration_fraction",
                 "must lie in [0, 1]")


Strength = Union[BadEncoderStrength, BasslStrength]


@dataclass(frozen=True)
class AttackSpec:
    trigger: Trigger = field(default_factory=solid_trigger)
    target_class: int = constants.DEFAULT_TARGET_CLASS
    method: AttackMethod = AttackMethod.BADENCODER
    strength: Strength = field(default_factory=BadEncoderStrength)

    def __post_init__(self):
        object.__setattr__(self, "method", AttackMethod.parse(self.method, "attack.method"))
        _require(int(self.target_class) >= 0, "attack.target_class", "must be >= 0")
        object.__setattr__(self, "target_class", int(self.target_class))
        expected = (BadEncoderStrength if self.method is AttackMethod.BADENCODER
                    else BasslStrength)
        _require(isinstance(self.strength, expected), "attack.strength",
                 "%s requires %s" % (self.method.value, expected.__name__))

    def manifest(self):
        """
        What evaluating ASR later needs, bit-exactly.
        """
        return {
            "method": self.method.value,
            "target_class": self.target_class,
            "trigger": self.trigger.to_dict(),
            "trigger_hash": self.trigger.fingerprint,
            "strength": dataclasses.asdict(self.strength),
        }

    def to_dict(self):
        return {
            "method": self.method.value,
            "target_class": self.target_class,
            "trigger": self.trigger.to_dict(),
            "strength": dataclasses.asdict(self.strength),
        }

    @classmethod
    def from_dict(cls, data):
        data = _strict_keys(data, ("method", "target_class", "trigger", "strength"), "attack")
        method = AttackMethod.parse(data.get("method", AttackMethod.BADENCODER), "attack.method")
        strength_cls = (BadEncoderStrength if method is AttackMethod.BADENCODER
                        else BasslStrength)
        strength_data = _strict_keys(
            data.get("strength"), [f.name for f in dataclasses.fields(strength_cls)],
            "attack.strength")
        return cls(trigger=Trigger.from_dict(data.get("trigger")),
                   target_class=data.get("target_class", constants.DEFAULT_TARGET_CLASS),
                   method=method,
                   strength=strength_cls(**strength_data))


@dataclass(frozen=True)
class PretrainHParams:
    epochs: int = constants.DEFAULT_PRETRAIN_EPOCHS
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    batch_size: int = constants.DEFAULT_BATCH_SIZE
    temperature: float = constants.DEFAULT_TEMPERATURE
    augmentation: str = constants.DEFAULT_AUGMENTATION

    def __post_init__(self):
        _require(self.epochs >= 0, "pretrain.epochs", "must be >= 0")
        _require(self.learning_rate > 0, "pretrain.learning_rate", "must be > 0")
        _require(self.batch_size >= 2, "pretrain.batch_size", "must be >= 2")
        _require(self.temperature > 0, "pretrain.temperature", "must be > 0")
        _require(self.augmentation in constants.AUGMENTATION_POLICIES,
                 "pretrain.augmentation",
                 "must be one of %s" % ", ".join(constants.AUGMENTATION_POLICIES))


@dataclass(frozen=True)
class TrainingHParams:
    epochs: int = constants.DEFAULT_DOWNSTREAM_EPOCHS
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    batch_size: int = constants.DEFAULT_BATCH_SIZE

    def __post_init__(self):
        _require(self.epochs >= 0, "epochs", "must be >= 0")
        _require(self.learning_rate > 0, "learning_rate", "must be > 0")
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")


@dataclass(frozen=True)
class OptimizerHParams:
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    batch_size: int = constants.DEFAULT_BATCH_SIZE

    def __post_init__(self):
        _require(self.learning_rate > 0, "optimizer.learning_rate", "must be > 0")
        _require(self.batch_size >= 2, "optimizer.batch_size", "must be >= 2")


@dataclass(frozen=True)
class TeacherHParams:
    finetune_epochs: int = constants.DEFAULT_TEACHER_EPOCHS
    prune_fraction: float = constants.DEFAULT_PRUNE_FRACTION
    prune_direction: PruneDirection = PruneDirection.MOST
    anp_budget: float = constants.DEFAULT_ANP_BUDGET
    anp_scope: AnpScope = AnpScope.LAST
    inversion_steps: int = constants.DEFAULT_INVERSION_STEPS
    mask_sparsity: float = constants.DEFAULT_MASK_SPARSITY
    mask_penalty: MaskPenalty = MaskPenalty.L1
    unlearn_epochs: int = constants.DEFAULT_TEACHER_EPOCHS

    def __post_init__(self):
        object.__setattr__(self, "prune_direction",
                           PruneDirection.parse(self.prune_direction, "teacher.prune_direction"))
        object.__setattr__(self, "anp_scope",
                           AnpScope.parse(self.anp_scope, "teacher.anp_scope"))
        object.__setattr__(self, "mask_penalty",
                           MaskPenalty.parse(self.mask_penalty, "teacher.mask_penalty"))
        _require(self.finetune_epochs >= 0, "teacher.finetune_epochs", "must be >= 0")
        _require(0 <= self.prune_fraction < 1, "teacher.prune_fraction", "must lie in [0, 1)")
        _require(self.anp_budget > 0, "teacher.anp_budget", "must be > 0")
        _require(self.inversion_steps >= 0, "teacher.inversion_steps", "must be >= 0")
        _require(self.mask_sparsity >= 0, "teacher.mask_sparsity", "must be >= 0")
        _require(self.unlearn_epochs >= 0, "teacher.unlearn_epochs", "must be >= 0")


@dataclass(frozen=True)
class DistillOptions:
    attention_p: float = constants.DEFAULT_ATTENTION_P
    kd_temperature: float = constants.DEFAULT_KD_TEMPERATURE
    kd_include_taps: bool = True
    kd_scale_by_t2: bool = True

    def __post_init__(self):
        _require(self.attention_p >= 1, "distill_options.attention_p", "must be >= 1")
        _require(self.kd_temperature > 0, "distill_options.kd_temperature", "must be > 0")


@dataclass(frozen=True)
class SynthOptions:
    train_size: int = constants.DEFAULT_SYNTH_TRAIN_SIZE
    test_size: int = constants.DEFAULT_SYNTH_TEST_SIZE

    def __post_init__(self):
        _require(self.train_size >= 1, "synth.train_size", "must be >= 1")
        _require(self.test_size >= 1, "synth.test_size", "must be >= 1")


def _record_from_dict(cls, data, where):
    data = _strict_keys(data, [f.name for f in dataclasses.fields(cls)], where)
    return cls(**data)


def _record_to_dict(record):
    out = {}
    for f in dataclasses.fields(record):
        value = getattr(record, f.name)
        out[f.name] = value.value if isinstance(value, enum.Enum) else value
    return out


@dataclass(frozen=True)
class ExperimentConfig:

    """
    One cell of the experiment grid: attack x teacher x student x loss x
    hyper-parameters. ``load_config`` builds it from YAML; every field has a
    documented default so an empty file is a valid configuration.
    """

    pretrain_dataset: str = constants.DEFAULT_PRETRAIN_DATASET
    downstream_dataset: str = constants.DEFAULT_DOWNSTREAM_DATASET
    architecture: str = constants.DEFAULT_ARCHITECTURE
    attack: AttackSpec = field(default_factory=AttackSpec)
    teacher_method: TeacherMethod = TeacherMethod.FT
    student_strategy: StudentStrategy = StudentStrategy.WARMUP
    loss_kind: LossKind = LossKind.ATD
    distill_epochs: int = constants.DEFAULT_DISTILL_EPOCHS
    clean_data_ratio: float = constants.DEFAULT_CLEAN_DATA_RATIO
    iterations: int = constants.DEFAULT_ITERATIONS
    alpha: float = constants.DEFAULT_ALPHA
    seed: int = constants.DEFAULT_SEED
    optimizer: OptimizerHParams = field(default_factory=OptimizerHParams)
    pretrain: PretrainHParams = field(default_factory=PretrainHParams)
    teacher: TeacherHParams = field(default_factory=TeacherHParams)
    downstream: TrainingHParams = field(default_factory=TrainingHParams)
    distill_options: DistillOptions = field(default_factory=DistillOptions)
    synth: SynthOptions = field(default_factory=SynthOptions)
    preset: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "pretrain_dataset",
                           parse_dataset_name(self.pretrain_dataset, "pretrain_dataset"))
        object.__setattr__(self, "downstream_dataset",
                           parse_dataset_name(self.downstream_dataset, "downstream_dataset"))
        object.__setattr__(self, "architecture", parse_architecture(self.architecture))
        object.__setattr__(self, "teacher_method",
                           TeacherMethod.parse(self.teacher_method, "teacher_method"))
        object.__setattr__(self, "student_strategy",
                           StudentStrategy.parse(self.student_strategy, "student_strategy"))
        object.__setattr__(self, "loss_kind", LossKind.parse(self.loss_kind, "loss_kind"))

        _require(isinstance(self.distill_epochs, int) and self.distill_epochs >= 0,
                 "distill_epochs", "must be a non-negative integer")
        _require(0 < self.clean_data_ratio <= 1, "clean_data_ratio", "must lie in (0, 1]")
        _require(isinstance(self.iterations, int) and self.iterations >= 1,
                 "iterations", "must be an integer >= 1")
        _require(0 <= self.alpha <= 1, "alpha", "must lie in [0, 1]")
        _require(isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64,
                 "seed", "must be an unsigned 64-bit integer")
        classes = DATASET_CLASSES[self.downstream_dataset]
        _require(self.attack.target_class < classes, "attack.target_class",
                 "%s has only %d classes" % (self.downstream_dataset, classes))
        if self.iterations > 1:
            _require(self.teacher_method is TeacherMethod.FT, "teacher_method",
                     "iterative distillation fine-tunes every teacher (FT)")

    def to_dict(self):
        return {
            "pretrain_dataset": self.pretrain_dataset,
            "downstream_dataset": self.downstream_dataset,
            "architecture": self.architecture,
            "attack": self.attack.to_dict(),
            "teacher_method": self.teacher_method.value,
            "student_strategy": self.student_strategy.value,
            "loss_kind": self.loss_kind.value,
            "distill_epochs": self.distill_epochs,
            "clean_data_ratio": self.clean_data_ratio,
            "iterations": self.iterations,
            "alpha": self.alpha,
            "seed": self.seed,
            "optimizer": _record_to_dict(self.optimizer),
            "pretrain": _record_to_dict(self.pretrain),
            "teacher": _record_to_dict(self.teacher),
            "downstream": _record_to_dict(self.downstream),
            "distill_options": _record_to_dict(self.distill_options),
            "synth": _record_to_dict(self.synth),
            "preset": self.preset,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(_strict_keys(data, [f.name for f in dataclasses.fields(cls)], ""))
        if "attack" in data:
            data["attack"] = AttackSpec.from_dict(data["attack"])
        records = {"optimizer": OptimizerHParams, "pretrain": PretrainHParams,
                   "teacher": TeacherHParams, "downstream": TrainingHParams,
                   "distill_options": DistillOptions, "synth": SynthOptions}
        for name, record_cls in records.items():
            if name in data:
                data[name] = _record_from_dict(record_cls, data[name], name)
        for name in ("clean_data_ratio", "alpha"):
            if name in data:
                _require(isinstance(data[name], (int, float)) and not isinstance(data[name], bool),
                         name, "must be a number")
                data[name] = float(data[name])
        return cls(**data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ArtifactRef:

    """
    Pointer to a persisted artifact. ``lineage`` is a list of (stage name,
    hash) pairs; the first pair names the stage that produced the artifact
    and carries the artifact's own hash, the following pairs walk back
    through its primary parents.
    """

    kind: ArtifactKind
    path: str
    lineage: Tuple[Tuple[str, str], ...]
    iteration_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ArtifactKind.parse(self.kind, "kind"))
        lineage = tuple((str(stage), str(digest)) for stage, digest in self.lineage)
        _require(len(lineage) > 0, "lineage", "must not be empty")
        _require(self.iteration_index >= 0, "iteration_index", "must be >= 0")
        object.__setattr__(self, "lineage", lineage)

    @property
    def stage(self):
        return self.lineage[0][0]

    @property
    def artifact_hash(self):
        return self.lineage[0][1]

    @property
    def parent_hash(self):
        return self.lineage[1][1] if len(self.lineage) > 1 else None

    def to_dict(self):
        return {"kind": self.kind.value, "path": self.path,
                "lineage": [list(pair) for pair in self.lineage],
                "iteration_index": self.iteration_index}

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data["kind"], path=data["path"],
                   lineage=tuple(tuple(pair) for pair in data["lineage"]),
                   iteration_index=data.get("iteration_index", 0))
