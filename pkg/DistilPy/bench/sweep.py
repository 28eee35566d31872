"""
Contains
========

* SweepAxis
* SweepSpec
* ResultRow, ResultTable
* run_sweep

A sweep varies one field of a base ExperimentConfig over a list of values
and runs one experiment per value. Cells share the ArtifactStore, so a
DATA_RATIO sweep trains a single poisoned encoder while a TRIGGER_SIZE sweep
attacks once per trigger.
"""
from __future__ import annotations

import dataclasses
import datetime
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

import pandas as pd
from tqdm import tqdm

from DistilPy.base import DistilPyError, ValidationError, logger, progress_enabled
from DistilPy.core.configfile import config_hash
from DistilPy.core.store import ArtifactStore
from DistilPy.core.types import ExperimentConfig, LossKind, StudentStrategy, TeacherMethod, \
    NamedEnum, parse_architecture, parse_dataset_name, solid_trigger
from DistilPy.evaluate.metrics import MetricsRecord
from DistilPy.bench.pipeline import run_experiment

COMPLETED = "completed"
FAILED = "failed"

CSV_COLUMNS = ["config_hash", "axis", "value", "status", "acc", "asr", "bs", "alpha",
               "downstream", "seed", "lineage", "error"]


class SweepAxis(NamedEnum):
    EPOCHS = "EPOCHS"
    DATA_RATIO = "DATA_RATIO"
    TRIGGER_SIZE = "TRIGGER_SIZE"
    ARCHITECTURE = "ARCHITECTURE"
    ITERATIONS = "ITERATIONS"
    TEACHER_METHOD = "TEACHER_METHOD"
    STUDENT_STRATEGY = "STUDENT_STRATEGY"
    LOSS_KIND = "LOSS_KIND"
    DOWNSTREAM = "DOWNSTREAM"

    @property
    def numeric(self):
        return self in (SweepAxis.EPOCHS, SweepAxis.DATA_RATIO, SweepAxis.TRIGGER_SIZE,
                        SweepAxis.ITERATIONS)


def _positive_int(value, what):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ValidationError("values", "%s must be a positive integer, got %r" % (what, value))
    return value


def _square_size(value):
    if isinstance(value, (list, tuple)):
        if len(value) != 2 or value[0] != value[1]:
            raise ValidationError("values", "trigger sizes must be square, got %r" % (value,))
        value = value[0]
    return _positive_int(value, "a trigger size")


def _normalize(axis, value):
    if axis is SweepAxis.EPOCHS:
        return _positive_int(value, "an epoch count")
    if axis is SweepAxis.DATA_RATIO:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError("values", "a clean data ratio must be a number")
        return float(value)
    if axis is SweepAxis.TRIGGER_SIZE:
        return _square_size(value)
    if axis is SweepAxis.ITERATIONS:
        return _positive_int(value, "an iteration count")
    if axis is SweepAxis.ARCHITECTURE:
        return parse_architecture(value, "values")
    if axis is SweepAxis.DOWNSTREAM:
        return parse_dataset_name(value, "values")
    enum_cls = {SweepAxis.TEACHER_METHOD: TeacherMethod,
                SweepAxis.STUDENT_STRATEGY: StudentStrategy,
                SweepAxis.LOSS_KIND: LossKind}[axis]
    return enum_cls.parse(value, "values").value


@dataclass(frozen=True)
class SweepSpec:

    """
    One axis of the experiment grid.

    USAGE
    =====

    >>> spec = SweepSpec("TRIGGER_SIZE", [3, 5, 7], load_config("configs/synth_tiny.yaml"))
    >>> spec.config_for(5).attack.trigger.size
    (5, 5)
    """

    axis: SweepAxis
    values: Tuple[Any, ...]
    base: ExperimentConfig = field(default_factory=ExperimentConfig)

    def __post_init__(self):
        axis = SweepAxis.parse(self.axis, "axis")
        object.__setattr__(self, "axis", axis)
        if not self.values:
            raise ValidationError("values", "a sweep needs at least one value")
        values = tuple(_normalize(axis, value) for value in self.values)
        object.__setattr__(self, "values", values)
        if axis is SweepAxis.TRIGGER_SIZE and not self.base.attack.trigger.is_solid():
            raise ValidationError("values", "TRIGGER_SIZE sweeps need a single colour trigger")
        for value in values:
            self.config_for(value)

    def config_for(self, value):
        base = self.base
        if self.axis is SweepAxis.EPOCHS:
            return base.replace(distill_epochs=value)
        if self.axis is SweepAxis.DATA_RATIO:
            return base.replace(clean_data_ratio=value)
        if self.axis is SweepAxis.TRIGGER_SIZE:
            trigger = base.attack.trigger
            resized = solid_trigger(value, trigger.pattern[0, 0], trigger.position)
            return base.replace(attack=dataclasses.replace(base.attack, trigger=resized))
        if self.axis is SweepAxis.ARCHITECTURE:
            return base.replace(architecture=value)
        if self.axis is SweepAxis.ITERATIONS:
            return base.replace(iterations=value)
        if self.axis is SweepAxis.TEACHER_METHOD:
            return base.replace(teacher_method=value)
        if self.axis is SweepAxis.STUDENT_STRATEGY:
            return base.replace(student_strategy=value)
        if self.axis is SweepAxis.LOSS_KIND:
            return base.replace(loss_kind=value)
        return base.replace(downstream_dataset=value)

    @property
    def hash(self):
        return config_hash({"axis": self.axis.value, "values": list(self.values),
                            "base": self.base.to_dict()})


@dataclass(frozen=True)
class ResultRow:
    config_hash: str
    axis: str
    value: Any
    status: str
    metrics: Optional[MetricsRecord] = None
    error: str = ""

    @property
    def completed(self):
        return self.status == COMPLETED

    def to_dict(self):
        return {"config_hash": self.config_hash, "axis": self.axis, "value": self.value,
                "status": self.status,
                "metrics": self.metrics.to_dict() if self.metrics is not None else None,
                "error": self.error}

    @classmethod
    def from_dict(cls, data):
        metrics = data.get("metrics")
        return cls(data["config_hash"], data["axis"], data["value"], data["status"],
                   MetricsRecord.from_dict(metrics) if metrics is not None else None,
                   data.get("error", ""))

    def as_csv_row(self):
        row = {"config_hash": self.config_hash, "axis": self.axis,
               "value": json.dumps(self.value), "status": self.status, "error": self.error}
        if self.metrics is None:
            row.update(acc="", asr="", bs="", alpha="", downstream="", seed="", lineage="")
        else:
            m = self.metrics
            row.update(acc=repr(m.acc), asr=repr(m.asr), bs=repr(m.bs), alpha=repr(m.alpha),
                       downstream=m.downstream, seed=str(m.seed),
                       lineage=json.dumps([list(pair) for pair in m.lineage]))
        return row

    @classmethod
    def from_csv_row(cls, row):
        metrics = None
        if row["acc"] != "":
            metrics = MetricsRecord(float(row["acc"]), float(row["asr"]), float(row["bs"]),
                                    float(row["alpha"]),
                                    tuple(tuple(pair) for pair in json.loads(row["lineage"])),
                                    row["downstream"], int(row["seed"]))
        return cls(row["config_hash"], row["axis"], json.loads(row["value"]), row["status"],
                   metrics, row["error"])


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _version():
    from DistilPy import __version__
    return __version__


@dataclass(frozen=True)
class ResultTable:

    """
    Rows of a sweep in the order of its values.

    USAGE
    =====

    >>> table = run_sweep(spec)
    >>> table.write_csv("table.csv")
    >>> ResultTable.read_csv("table.csv") == table
    True

    The CSV file starts with one ``# distilpy <version> <created> <axis>``
    line, the JSON-lines file with a header object; values are stored as JSON
    and floats with their full repr so both formats reload bit-exactly.
    """

    axis: str
    rows: Tuple[ResultRow, ...]
    created: str = field(default_factory=_now)
    version: str = field(default_factory=_version)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def __len__(self):
        return len(self.rows)

    @property
    def all_completed(self):
        return all(row.completed for row in self.rows)

    @property
    def hash(self):
        return config_hash({"axis": self.axis, "rows": [row.to_dict() for row in self.rows]})

    def records(self):
        return [row.metrics for row in self.rows if row.metrics is not None]

    def write_csv(self, path):
        frame = pd.DataFrame([row.as_csv_row() for row in self.rows], columns=CSV_COLUMNS)
        with open(path, "w", newline="") as handle:
            handle.write("# distilpy %s %s %s\n" % (self.version, self.created, self.axis))
            frame.to_csv(handle, index=False)
        return path

    @classmethod
    def read_csv(cls, path):
        with open(path, "r", newline="") as handle:
            header = handle.readline().split()
            if len(header) != 5 or header[:2] != ["#", "distilpy"]:
                raise ValidationError("table", "%s is not a DistilPy result table" % path)
            frame = pd.read_csv(io.StringIO(handle.read()), dtype=str, keep_default_na=False)
        rows = [ResultRow.from_csv_row(record) for record in frame.to_dict("records")]
        return cls(header[4], rows, header[3], header[2])

    def write_jsonl(self, path):
        with open(path, "w") as handle:
            handle.write(json.dumps({"axis": self.axis, "created": self.created,
                                     "version": self.version}) + "\n")
            for row in self.rows:
                handle.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path):
        with open(path, "r") as handle:
            lines = [line for line in handle if line.strip()]
        if not lines:
            raise ValidationError("table", "%s is empty" % path)
        header = json.loads(lines[0])
        rows = [ResultRow.from_dict(json.loads(line)) for line in lines[1:]]
        return cls(header["axis"], rows, header["created"], header["version"])

    @classmethod
    def read(cls, path):
        if str(path).endswith(".csv"):
            return cls.read_csv(path)
        return cls.read_jsonl(path)


def _append_row(path, row):
    line = json.dumps(row.to_dict(), sort_keys=True) + "\n"
    with open(path, "a") as handle:
        handle.write(line)
        handle.flush()
        os.fsync(handle.fileno())


def _run_cell(config, root):
    # Top level so that worker processes can unpickle it
    try:
        record = run_experiment(config, ArtifactStore(root))
        return COMPLETED, record.to_dict(), ""
    except DistilPyError as error:
        return FAILED, None, str(error)
    except Exception as error:
        return FAILED, None, "%s: %s" % (type(error).__name__, error)


def _collect(future):
    try:
        return future.result()
    except Exception as error:
        return FAILED, None, "worker failed: %s: %s" % (type(error).__name__, error)


def _row(spec, value, config, outcome):
    status, metrics, error = outcome
    if status == FAILED:
        logger.error("Sweep %s: %s=%r failed: %s", spec.hash, spec.axis.value, value, error)
    return ResultRow(config_hash(config), spec.axis.value, value, status,
                     MetricsRecord.from_dict(metrics) if metrics is not None else None, error)


def run_sweep(spec, store=None, workers=1):
    """
    Runs one experiment per value of ``spec`` and returns the ResultTable.
    Failed cells become rows with status ``failed`` instead of aborting the
    sweep. Finished rows are appended to ``$ROOT/sweeps/<spec hash>.jsonl``
    as they complete.

    Cells run one after the other unless ``workers > 1``.
    """
    store = store or ArtifactStore()
    configs = [spec.config_for(value) for value in spec.values]
    log_dir = os.path.join(store.root, "sweeps")
    os.makedirs(log_dir, exist_ok=True)
    log_path = os.path.join(log_dir, "%s.jsonl" % spec.hash)
    logger.info("Sweep %s over %s: %d cells, %d worker(s)", spec.hash, spec.axis.value,
                len(configs), workers)

    rows = []
    if workers <= 1:
        cells = tqdm(list(zip(spec.values, configs)), desc="sweep %s" % spec.axis.value,
                     disable=not progress_enabled())
        for value, config in cells:
            row = _row(spec, value, config, _run_cell(config, store.root))
            _append_row(log_path, row)
            rows.append(row)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, config, store.root) for config in configs]
            for value, config, future in zip(spec.values, configs, futures):
                row = _row(spec, value, config, _collect(future))
                _append_row(log_path, row)
                rows.append(row)

    table = ResultTable(spec.axis.value, rows)
    logger.info("Sweep %s: %d/%d cells completed", spec.hash,
                sum(row.completed for row in rows), len(rows))
    return table
