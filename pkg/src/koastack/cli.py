"""``koastack`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import workflow
from .dataset import DatasetError
from .ensemble import SearchError, StackingError
from .imaging import ImageError
from .metrics import write_reports
from .nn import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("koastack")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration (defaults are used if omitted)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", type=Path, default=Path("koastack-run"), help="output directory")
    p.add_argument("--task", choices=cfgmod.TASKS, help="override the configured task")
    p.add_argument("--stage-resume", action="store_true",
                   help="skip stages whose artifacts already verify against this config")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koastack", description="KL grading with stacked CNN ensembles")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in workflow.STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage"))
    _common(sub.add_parser("run", help="run every stage in order"))
    p = sub.add_parser("eval", help="score a saved model bundle on an image folder")
    p.add_argument("--model", type=Path, required=True, help="train_base/<name>/model.json or stack/model.json")
    p.add_argument("--data", type=Path, required=True, help="image root laid out as <root>/<grade>/*.png")
    p.add_argument("--manifest", type=Path, help="split manifest CSV restricting the images")
    p.add_argument("--split", choices=workflow.SPLITS, help="manifest split to evaluate")
    p.add_argument("--out", type=Path, default=Path("."), help="directory for eval_report.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("defaults", help="print the default configuration")
    return parser


def _load_config(args) -> dict:
    raw = json.loads(args.config.read_text()) if args.config else {}
    return cfgmod.resolve(raw, seed=args.seed, task=args.task)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "defaults":
            sys.stdout.write(cfgmod.dump(cfgmod.resolve({})))
        elif args.command == "eval":
            if args.split and not args.manifest:
                raise cfgmod.ConfigError("--split requires --manifest")
            report = workflow.evaluate_model(args.model, args.data, args.manifest, args.split)
            args.out.mkdir(parents=True, exist_ok=True)
            write_reports([report], args.out / "eval_report.csv")
            print(f"accuracy={report.accuracy:.4f} balanced_accuracy={report.balanced_accuracy:.4f} "
                  f"auc={report.auc:.4f}")
        else:
            if args.config and not args.config.exists():
                raise cfgmod.ConfigError(f"config file {args.config} not found")
            cfg = _load_config(args)
            if args.command == "run":
                workflow.run_all(cfg, args.out, args.stage_resume)
            else:
                workflow.run_stage(args.command, cfg, args.out, args.stage_resume)
    except (cfgmod.ConfigError, SearchError, json.JSONDecodeError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DatasetError, ImageError, StackingError, workflow.StageError, FileNotFoundError, ValueError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
