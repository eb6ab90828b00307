"""Command-line entry point: ``tagstack <command> [--config FILE] [--set section.key=value ...]``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tagstack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", "-c", help="INI config file (defaults built in)")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
        return sp

    add("synth", "write a synthetic noisy-label dataset")
    add("extract", "compute feature tensors and clip statistics")
    add("stack", "train level-1 learners out-of-fold and assemble meta-features")
    add("audit-oof", "verify out-of-fold purity of the stacking outputs")
    sp = add("train-level2", "train one level-2 GBDT")
    sp.add_argument("--r", type=float, default=None, help="weight of non-verified clips")
    add("grid", "grid search over r, with and without statistics")
    sp = add("eval", "score a saved level-2 model on verified holdout clips")
    sp.add_argument("--model", default=None)
    add("show-config", "print the effective configuration")
    return p


def _run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    cmd = args.command
    if cmd == "synth":
        s = pipeline.cmd_synth(cfg)
        print(f"wrote {s['n_clips']} clips ({s['n_flipped']} labels flipped) to {cfg.path('data_dir')}")
    elif cmd == "extract":
        s = pipeline.cmd_extract(cfg)
        print(f"extract: {s['computed']} computed, {s['skipped']} up to date")
    elif cmd == "stack":
        s = pipeline.cmd_stack(cfg)
        print(f"stack: {s['models']} level-1 models, {s['columns']} meta-feature columns")
    elif cmd == "audit-oof":
        problems = pipeline.cmd_audit_oof(cfg)
        for line in problems:
            print(line)
        if problems:
            print(f"audit-oof: {len(problems)} violation(s)", file=sys.stderr)
            return EXIT_INVALID
        print("audit-oof: every OOF row comes from a model that never saw its clip")
    elif cmd == "train-level2":
        score = pipeline.cmd_train_level2(cfg, args.r)
        print(f"mAP@3 = {score:.4f}")
    elif cmd == "grid":
        print(pipeline.cmd_grid(cfg).to_table(), end="")
    elif cmd == "eval":
        report = pipeline.cmd_eval(cfg, args.model)
        print(f"mAP@3 = {report.map_at_3:.4f} over {report.n_clips} clips")
    elif cmd == "show-config":
        print(cfg.to_ini(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
