"""
Contains
========

* logger (the package wide logger) and the helpers to configure it
* DistilPyError and the error hierarchy raised across the toolkit
"""
from __future__ import print_function
import logging


consoleHandler = logging.StreamHandler()
formatter = logging.Formatter('%(levelname)s: %(message)s')
consoleHandler.setFormatter(formatter)
logger = logging.getLogger('DistilPy')
logger.addHandler(consoleHandler)
logger.setLevel(logging.WARNING)


def init_logging(log_level):
    logger.setLevel(log_level)


def read_logging_level(log_level):
    levels_dict = {
        1: logging.DEBUG, "debug": logging.DEBUG,
        2: logging.INFO, "info": logging.INFO,
        3: logging.WARNING, "warning": logging.WARNING,
        4: logging.ERROR, "error": logging.ERROR,
        5: logging.CRITICAL, "critical": logging.CRITICAL
    }

    if isinstance(log_level, str):
        log_level = log_level.lower()

    if log_level in levels_dict:
        return levels_dict[log_level]
    logger.warning("The logging level %r is not valid", log_level)
    return None


def get_logging_level():
    """
    Returns the name of the current level of the package logger.
    """
    return logging.getLevelName(logger.getEffectiveLevel())


def set_logging(log_level, myfilename=None):
    """
    This function sets the threshold for the logging system and, if desired,
    directs the messages to a logfile. Level options:

    'DEBUG' or 1
    'INFO' or 2
    'WARNING' or 3
    'ERROR' or 4
    'CRITICAL' or 5

    When a file name is given console logging is disabled.
    """
    level = read_logging_level(log_level)
    if level is None:
        return

    if myfilename:
        fileHandler = logging.FileHandler(filename=myfilename)
        fileHandler.setLevel(level)
        fileHandler.setFormatter(formatter)
        logger.addHandler(fileHandler)
        logger.removeHandler(consoleHandler)

    logger.setLevel(level)


def progress_enabled():
    # Progress bars follow the verbosity of the package logger
    return logger.getEffectiveLevel() <= logging.INFO


class DistilPyError(Exception):

    """
    Base class of every error raised by DistilPy.
    """

    def __init__(self, message):
        if not message.startswith("ERROR:"):
            message = "ERROR: " + message
        super(DistilPyError, self).__init__(message)


class ConfigError(DistilPyError):
    pass


class MalformedConfigError(ConfigError):

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line %d: %s" % (line, message)
        super(MalformedConfigError, self).__init__(message)


class ValidationError(ConfigError, ValueError):

    def __init__(self, field, message):
        self.field = field
        super(ValidationError, self).__init__("%s: %s" % (field, message))


class DatasetError(DistilPyError):
    pass


class UnsupportedDatasetError(DatasetError):
    pass


class IngestionError(DatasetError):

    def __init__(self, message, missing=()):
        self.missing = list(missing)
        if self.missing:
            message += " (missing: %s)" % ", ".join(self.missing)
        super(IngestionError, self).__init__(message)


class GeometryError(DistilPyError, ValueError):
    pass


class AttackConstructionError(DistilPyError):
    pass


class TrainingFailure(DistilPyError):

    def __init__(self, stage, epoch, message="loss became non-finite"):
        self.stage = stage
        self.epoch = epoch
        super(TrainingFailure, self).__init__(
            "%s diverged at epoch %d: %s" % (stage, epoch, message))


class InversionFailure(TrainingFailure):
    pass


class NumericalDegeneracyError(DistilPyError, ArithmeticError):
    pass


class BatchTooSmallError(DistilPyError, ValueError):
    pass


class ExperimentError(DistilPyError):

    def __init__(self, stage, config_hash, cause):
        self.stage = stage
        self.config_hash = config_hash
        self.cause = cause
        super(ExperimentError, self).__init__(
            "stage '%s' failed for config %s: %s" % (stage, config_hash, cause))


class StaleArtifactError(DistilPyError):
    pass
