"""
Contains
========

* Pipeline
* run_experiment

One experiment runs the stages

    pretrain -> attack -> teacher -> student -> distill -> downstream probe

and every stage output is cached in the ArtifactStore under a key derived
from exactly the configuration fields that stage reads, so configurations
that share a prefix of the chain share its artifacts.
"""
from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import os

import numpy as np

from DistilPy.base import ExperimentError, StaleArtifactError, logger
from DistilPy.core.configfile import config_hash
from DistilPy.core.seeding import derive_seed
from DistilPy.core.store import ArtifactStore, dataset_ref
from DistilPy.core.types import ArtifactKind, AttackMethod, Split
from DistilPy.data.datasets import clean_subset_indices, load_dataset
from DistilPy.data.poison import resize_dataset
from DistilPy.attack.badencoder import badencoder_poison, select_reference_inputs, \
    select_shadow_set
from DistilPy.attack.bassl import bassl_poison
from DistilPy.distill.trainer import iterative_distill, teacher_params
from DistilPy.evaluate.metrics import MetricsRecord, evaluate_encoder
from DistilPy.pretrain.checkpoints import cached_encoder, stored_encoder
from DistilPy.pretrain.contrastive import contrastive_pretrain
from DistilPy.teacher.factory import make_teacher

METRICS_FILE = "metrics.json"
INDICES_FILE = "indices.npy"


def _once(method):
    name = method.__name__

    @functools.wraps(method)
    def wrapper(self):
        if name not in self._results:
            self._results[name] = method(self)
        return self._results[name]
    return wrapper


def _hparams(record):
    return {name: getattr(value, "value", value)
            for name, value in dataclasses.asdict(record).items()}


class Pipeline:

    """
    Cached execution of one ExperimentConfig.

    USAGE
    =====

    >>> pipeline = Pipeline(load_config("synth.yaml"), ArtifactStore("/tmp/distilpy"))
    >>> record = pipeline.run()
    >>> pipeline.summary["undefended"]["asr"]
    0.97

    METHODS
    =======

    * clean_encoder(), poisoned_encoder(), clean_subset(), teacher(),
      distill_chain() return ``(ref, value)`` pairs and compute each
      stage at most once
    * evaluate(ref, encoder) returns the cached MetricsRecord of an encoder
    * clean_probe_baseline() is evaluate() on the clean encoder
    * run() runs everything, writes the run manifest and returns the
      defended MetricsRecord
    """

    def __init__(self, config, store=None):
        self.config = config
        self.store = store or ArtifactStore()
        self.hash = config_hash(config)
        self.summary = {}
        self._results = {}

    def _stage(self, name, function):
        try:
            return function()
        except StaleArtifactError:
            raise
        except ExperimentError:
            raise
        except Exception as error:
            logger.error("Stage %s failed for config %s", name, self.hash)
            raise ExperimentError(name, self.hash, error)

    # Datasets

    @functools.cached_property
    def pretrain_set(self):
        return self._stage("data", lambda: load_dataset(
            self.config.pretrain_dataset, Split.TRAIN, self.store.root, self.config.synth))

    @functools.cached_property
    def pretrain_ref(self):
        return dataset_ref(self.config.pretrain_dataset, self.pretrain_set.fingerprint)

    def _downstream(self, split):
        shape = self.pretrain_set.image_shape[:2]
        return self._stage("data", lambda: resize_dataset(load_dataset(
            self.config.downstream_dataset, split, self.store.root, self.config.synth), shape))

    @functools.cached_property
    def downstream_train(self):
        return self._downstream(Split.TRAIN)

    @functools.cached_property
    def downstream_test(self):
        return self._downstream(Split.TEST)

    @functools.cached_property
    def downstream_ref(self):
        return dataset_ref(self.config.downstream_dataset, self.downstream_train.fingerprint)

    @functools.cached_property
    def target_pool(self):
        return self.downstream_train.of_class(self.config.attack.target_class)

    @functools.cached_property
    def target_pool_ref(self):
        """
        The downstream target-class images both attacks read, keyed by content.
        """
        pool = np.ascontiguousarray(self.target_pool)
        digest = hashlib.sha256(repr(pool.shape).encode())
        digest.update(pool.tobytes())
        return dataset_ref("%s/target" % self.config.downstream_dataset, digest.hexdigest()[:16])

    # Stages

    @_once
    def clean_encoder(self):
        config = self.config
        params = {"architecture": config.architecture, "pretrain": _hparams(config.pretrain),
                  "seed": config.seed}
        return self._stage("pretrain", lambda: cached_encoder(
            self.store, "pretrain", params, [self.pretrain_ref],
            lambda: contrastive_pretrain(self.pretrain_set, config.architecture, config.pretrain,
                                         derive_seed(config.seed, "pretrain"))))

    def _badencoder(self, clean):
        config, spec = self.config, self.config.attack
        seed = derive_seed(config.seed, "attack")
        shadow = select_shadow_set(self.pretrain_set, spec.strength, seed)
        references = select_reference_inputs(self.target_pool, spec.strength.reference_count, seed)
        return badencoder_poison(clean, spec, shadow, references, spec.strength, seed)

    def _bassl(self):
        config, spec = self.config, self.config.attack
        return bassl_poison(self.pretrain_set, spec, config.architecture, config.pretrain,
                            derive_seed(config.seed, "attack"), self.target_pool)

    @_once
    def poisoned_encoder(self):
        config = self.config
        params = {"attack": config.attack.to_dict(), "seed": config.seed}
        if config.attack.method is AttackMethod.BADENCODER:
            clean_ref, clean = self.clean_encoder()
            parents = [clean_ref, self.target_pool_ref]
            build = functools.partial(self._badencoder, clean)
        else:
            params.update(architecture=config.architecture, pretrain=_hparams(config.pretrain))
            parents = [self.pretrain_ref, self.target_pool_ref]
            build = self._bassl
        return self._stage("attack", lambda: cached_encoder(
            self.store, "attack", params, parents, build))

    @_once
    def clean_subset(self):
        config = self.config
        params = {"ratio": config.clean_data_ratio, "seed": config.seed}
        seed = derive_seed(config.seed, "clean-subset")

        def build():
            key = self.store.key("clean-subset", params, [self.pretrain_ref])
            ref = self.store.get(ArtifactKind.DATASET_SUBSET, "clean-subset", key)
            if ref is not None:
                indices = np.load(self.store.payload(ref, INDICES_FILE))
            else:
                indices = clean_subset_indices(len(self.pretrain_set), config.clean_data_ratio,
                                               seed)
                ref = self.store.publish(
                    ArtifactKind.DATASET_SUBSET, "clean-subset", key,
                    lambda directory: np.save(os.path.join(directory, INDICES_FILE), indices),
                    parents=[self.pretrain_ref], metadata={"params": params})
            return ref, self.pretrain_set.subset(indices)
        return self._stage("clean-subset", build)

    @_once
    def teacher(self):
        """
        The iteration 0 teacher; shares its cache entry with distill_chain().
        """
        config = self.config
        poisoned_ref, poisoned = self.poisoned_encoder()
        subset_ref, subset = self.clean_subset()
        return self._stage("teacher", lambda: cached_encoder(
            self.store, "teacher", teacher_params(config, config.teacher_method, 0),
            [poisoned_ref, subset_ref],
            lambda: make_teacher(config.teacher_method, poisoned, subset, config.teacher,
                                 derive_seed(config.seed, "teacher"), config.pretrain,
                                 config.attack.trigger.size)))

    @_once
    def distill_chain(self):
        config = self.config
        poisoned_ref, poisoned = self.poisoned_encoder()
        subset_ref, subset = self.clean_subset()
        return self._stage("distill", lambda: iterative_distill(
            poisoned, config, config.iterations, subset, poisoned_ref, subset_ref, self.store))

    def evaluate(self, ref, encoder=None):
        """
        Metrics of the encoder behind ``ref`` on the downstream task.
        """
        config = self.config
        params = {"downstream": config.downstream_dataset,
                  "downstream_hparams": _hparams(config.downstream),
                  "alpha": config.alpha, "seed": config.seed}

        def build():
            key = self.store.key("evaluate", params, [ref, self.downstream_ref])
            cached = self.store.get(ArtifactKind.METRICS, "evaluate", key)
            if cached is not None:
                with open(self.store.payload(cached, METRICS_FILE)) as handle:
                    return MetricsRecord.from_dict(json.load(handle))
            model = encoder if encoder is not None else stored_encoder(self.store, ref)
            record = evaluate_encoder(model, self.downstream_train, self.downstream_test,
                                      config.attack, config.downstream.epochs,
                                      derive_seed(config.seed, "downstream"), config.alpha,
                                      ref.lineage, config.downstream)

            def write(directory):
                with open(os.path.join(directory, METRICS_FILE), "w") as handle:
                    json.dump(record.to_dict(), handle, indent=2, sort_keys=True)
            self.store.publish(ArtifactKind.METRICS, "evaluate", key, write,
                               parents=[ref, self.downstream_ref], metadata={"params": params})
            return record
        return self._stage("evaluate", build)

    def clean_probe_baseline(self):
        """
        Metrics of the unattacked pre-trained encoder, BASSL configs included.
        """
        clean_ref, clean = self.clean_encoder()
        return self.evaluate(clean_ref, clean)

    def run(self):
        logger.info("Experiment %s: %s attack, %s teacher, %s student, %s loss", self.hash,
                    self.config.attack.method.value, self.config.teacher_method.value,
                    self.config.student_strategy.value, self.config.loss_kind.value)
        poisoned_ref, poisoned = self.poisoned_encoder()
        undefended = self.evaluate(poisoned_ref, poisoned)
        iterations = []
        for index, (teacher_ref, student_ref) in enumerate(self.distill_chain()):
            iterations.append({
                "iteration": index,
                "teacher": self.evaluate(teacher_ref).to_dict(),
                "student": self.evaluate(student_ref).to_dict(),
                "teacher_ref": teacher_ref.to_dict(),
                "student_ref": student_ref.to_dict(),
            })
        defended = MetricsRecord.from_dict(iterations[-1]["student"])

        self.summary = {
            "config_hash": self.hash,
            "config": self.config.to_dict(),
            "clean": self.clean_probe_baseline().to_dict(),
            "undefended": undefended.to_dict(),
            "iterations": iterations,
            "defended": defended.to_dict(),
        }
        runs_dir = os.path.join(self.store.root, "runs")
        os.makedirs(runs_dir, exist_ok=True)
        with open(os.path.join(runs_dir, "%s.json" % self.hash), "w") as handle:
            json.dump(self.summary, handle, indent=2, sort_keys=True)
        logger.info("Experiment %s: ASR %.4f -> %.4f, ACC %.4f -> %.4f", self.hash,
                    undefended.asr, defended.asr, undefended.acc, defended.acc)
        return defended


def run_experiment(config, store=None):
    """
    Runs (or reloads from the cache) one experiment and returns the defended
    MetricsRecord. The undefended, clean and teacher metrics land in
    ``$DISTILPY_ROOT/runs/<config hash>.json``.
    """
    return Pipeline(config, store).run()
