"""
Contains
========

* build_parser
* shell_main (the ``distilpy`` console script)

Every subcommand takes ``--config FILE`` plus repeated ``--set key=value``
overrides and runs the stages it needs through the shared artifact cache::

    distilpy run --config configs/synth_tiny.yaml --set loss_kind=SP
    distilpy sweep --config configs/synth_tiny.yaml --axis EPOCHS --values 10,20,30
    distilpy report --table distilpy-data/reports/table-3f2a9c0d1e4b5a67.jsonl --formats CSV,PLOTS
"""
from __future__ import print_function

import argparse
import json
import os
import sys

import yaml

from DistilPy.base import DistilPyError, logger, set_logging
from DistilPy.core.configfile import apply_overrides, config_hash, load_config
from DistilPy.core.store import ArtifactStore
from DistilPy.core.types import ExperimentConfig
from DistilPy.bench.pipeline import Pipeline
from DistilPy.bench.report import emit_report
from DistilPy.bench.sweep import ResultTable, SweepAxis, SweepSpec, run_sweep

try:
    from DistilPy import __version__ as DISTILPY_VERSION
except ImportError:
    DISTILPY_VERSION = ""


def _print_json(data):
    print(json.dumps(data, indent=2, sort_keys=True))


def _config(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(config, args.overrides)


def _parse_values(text):
    values = []
    for item in text.split(","):
        item = item.strip()
        if item:
            values.append(yaml.safe_load(item))
    return values


def cmd_pretrain(args, pipeline):
    ref, _ = pipeline.clean_encoder()
    _print_json(ref.to_dict())
    return 0


def cmd_attack(args, pipeline):
    ref, _ = pipeline.poisoned_encoder()
    _print_json(ref.to_dict())
    return 0


def cmd_teacher(args, pipeline):
    ref, _ = pipeline.teacher()
    _print_json(ref.to_dict())
    return 0


def cmd_distill(args, pipeline):
    _print_json([{"teacher": teacher.to_dict(), "student": student.to_dict()}
                 for teacher, student in pipeline.distill_chain()])
    return 0


def cmd_eval(args, pipeline):
    if args.artifact:
        ref = pipeline.store.load_ref(args.artifact)
        encoder = None
    else:
        ref, encoder = pipeline.poisoned_encoder()
    _print_json(pipeline.evaluate(ref, encoder).to_dict())
    return 0


def cmd_run(args, pipeline):
    record = pipeline.run()
    _print_json({"config_hash": pipeline.hash, "undefended": pipeline.summary["undefended"],
                 "defended": record.to_dict()})
    return 0


def cmd_sweep(args, store):
    spec = SweepSpec(args.axis, _parse_values(args.values), _config(args))
    table = run_sweep(spec, store, workers=args.workers)
    out_dir = args.out or os.path.join(store.root, "reports")
    written = emit_report(table, ["CSV", "JSONL"], out_dir)
    for path in written:
        print(path)
    return 0 if table.all_completed else 1


def cmd_report(args, store):
    table = ResultTable.read(args.table)
    out_dir = args.out or os.path.join(store.root, "reports")
    for path in emit_report(table, [item for item in args.formats.split(",") if item], out_dir):
        print(path)
    return 0


PIPELINE_COMMANDS = {
    "pretrain": (cmd_pretrain, "contrastive pre-training of the clean encoder"),
    "attack": (cmd_attack, "backdoor the encoder (BadEncoder or BASSL)"),
    "teacher": (cmd_teacher, "produce the iteration 0 teacher net"),
    "distill": (cmd_distill, "teacher -> student distillation, all iterations"),
    "eval": (cmd_eval, "downstream probe ACC/ASR/BS of an encoder"),
    "run": (cmd_run, "the full experiment"),
}


def _common_options(parser):
    parser.add_argument("--config", help="experiment YAML file (defaults apply without it)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config field, e.g. attack.target_class=3")
    parser.add_argument("--root", help="data and artifact root (default $DISTILPY_ROOT)")
    parser.add_argument("--log-level", default="warning",
                        help="debug, info, warning, error or critical (or 1..5)")
    parser.add_argument("--log-file", help="write the log to a file instead of the console")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="distilpy", description="DistilPy %s: backdoor defense by distillation"
        % DISTILPY_VERSION)
    parser.add_argument("--version", action="version", version=DISTILPY_VERSION)
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    for name, (_, help_text) in PIPELINE_COMMANDS.items():
        sub = commands.add_parser(name, help=help_text)
        _common_options(sub)
        if name == "eval":
            sub.add_argument("--artifact", help="encoder artifact directory (default: the "
                                                "poisoned encoder of the config)")

    sweep = commands.add_parser("sweep", help="one experiment per value of an axis")
    _common_options(sweep)
    sweep.add_argument("--axis", required=True, choices=[axis.value for axis in SweepAxis])
    sweep.add_argument("--values", required=True, help="comma separated, e.g. 10,20,30")
    sweep.add_argument("--workers", type=int, default=1, help="parallel cells (default 1)")
    sweep.add_argument("--out", help="table directory (default $ROOT/reports)")

    report = commands.add_parser("report", help="render a result table")
    _common_options(report)
    report.add_argument("--table", required=True, help="table .csv or .jsonl file")
    report.add_argument("--formats", default="CSV,JSONL,PLOTS",
                        help="comma separated subset of CSV, JSONL, PLOTS")
    report.add_argument("--out", help="output directory (default $ROOT/reports)")
    return parser


def shell_main(argv=None):
    """
    Entry point of the ``distilpy`` console script. Returns 0 when every
    requested cell completed and 1 otherwise.
    """
    args = build_parser().parse_args(sys.argv[1:] if argv is None else argv)
    set_logging(args.log_level, args.log_file)
    store = ArtifactStore(args.root)

    try:
        if args.command == "sweep":
            return cmd_sweep(args, store)
        if args.command == "report":
            return cmd_report(args, store)
        config = _config(args)
        logger.info("Config %s, artifact root %s", config_hash(config), store.root)
        command, _ = PIPELINE_COMMANDS[args.command]
        return command(args, Pipeline(config, store))
    except DistilPyError as error:
        logger.error(str(error))
        return 1


if __name__ == "__main__":
    sys.exit(shell_main())
