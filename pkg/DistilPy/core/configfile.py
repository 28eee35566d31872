"""
Contains
========

* load_config, parse_config
* dump_config, save_config
* apply_overrides
* config_hash

Experiment configurations are YAML documents with a fixed schema, see
DistilPy/docs/config.md. Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
import os

import yaml

from DistilPy.base import MalformedConfigError, ValidationError, logger
from DistilPy.core.types import ExperimentConfig


def parse_config(text):
    """
    Parses YAML text into an ExperimentConfig. An empty document yields the
    all-defaults configuration.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as error:
        mark = error.problem_mark or error.context_mark
        line = mark.line + 1 if mark is not None else None
        raise MalformedConfigError(str(error.problem or error), line=line)
    except yaml.YAMLError as error:
        raise MalformedConfigError(str(error))

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise MalformedConfigError("top level must be a mapping", line=1)
    return ExperimentConfig.from_dict(data)


def load_config(path):
    """
    Loads an ExperimentConfig from a YAML file.

    USAGE
    =====

    >>> config = load_config("configs/synth_tiny.yaml")
    >>> config.clean_data_ratio
    0.05
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MalformedConfigError("config file %s does not exist" % path)
    with open(path, "r") as handle:
        text = handle.read()
    config = parse_config(text)
    logger.debug("Loaded config %s (hash %s)", path, config_hash(config))
    return config


def dump_config(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def save_config(config, path):
    with open(path, "w") as handle:
        handle.write(dump_config(config))


def apply_overrides(config, overrides):
    """
    Applies dotted ``key=value`` overrides (values parsed as YAML) and
    revalidates. ``apply_overrides(c, ["attack.trigger.size=[5, 5]"])``
    """
    data = config.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise MalformedConfigError("override %r is not of the form key=value" % item)
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = data
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                # Optional sub-records (trigger position, preset) start empty
                if key in node and node[key] is None:
                    node[key] = {}
                else:
                    raise ValidationError(path, "unknown key")
            node = node[key]
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise MalformedConfigError("override %r has an unparsable value" % item)
        node[keys[-1]] = value
    return ExperimentConfig.from_dict(data)


def _canonical(obj):
    if isinstance(obj, ExperimentConfig):
        return obj.to_dict()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError("Cannot hash object of type %s" % type(obj).__name__)


def config_hash(obj):
    """
    Stable 16 hex digit hash of a config (or any JSON-able structure);
    independent of key order.
    """
    if isinstance(obj, ExperimentConfig) or not isinstance(obj, (dict, list, tuple, str, int, float)):
        obj = _canonical(obj)
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_canonical)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
