"""Command-line entry point: ``python -m kga <subcommand> [flags]``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (including
any seed whose pipeline failed).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from ..data import save_corpus
from ..models import save_model
from .config import METHODS, ConfigError, ExperimentConfig, dump_config, load_config
from .presets import PRESETS, SWEEP_AXES, preset
from .report import FORMATS, emit_report, emit_sweep, load_bundle, write_atomic
from .runner import Pipeline, run_experiment

log = logging.getLogger("kga")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser, method: bool = True) -> None:
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--seed", type=int, help="run a single root seed")
    if method:
        p.add_argument("--method", choices=METHODS, action="append",
                       help="unlearning method (repeatable)")
    p.add_argument("--forget-count", type=int, help="forget this many random training instances")
    p.add_argument("--forget-token", help="forget every instance whose target (or text) contains this token")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=FORMATS, action="append", help="report format (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="python -m kga", description="Knowledge-gap-alignment unlearning experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("gen-data", help="write the synthetic corpora as JSONL"), method=False)
    _common(sub.add_parser("train", help="train the original model and save its checkpoint"), method=False)
    _common(sub.add_parser("unlearn", help="run Retrain plus the configured method(s); save checkpoints"))
    _common(sub.add_parser("evaluate", help="full pipeline with all metrics; writes the report"))
    _common(sub.add_parser("mia", help="full pipeline plus the membership-inference attack"))
    p = sub.add_parser("report", help="re-emit files from an existing report.json")
    p.add_argument("source", help="directory holding report.json")
    p.add_argument("--out", help="output directory (default: the source directory)")
    p.add_argument("--format", choices=FORMATS, action="append")
    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name", choices=sorted(PRESETS))
    _common(p)
    p.add_argument("--print-config", action="store_true", help="print the preset's configs and exit")
    return ap


def resolve_config(args, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Config file (if any) on top of ``base``, then command-line flags on top of that."""
    cfg = base or ExperimentConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    return apply_flags(cfg, args)


def apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "method", None):
        changes["methods"] = tuple(dict.fromkeys(args.method))
    if getattr(args, "forget_count", None) is not None and getattr(args, "forget_token", None):
        raise ConfigError("--forget-count and --forget-token are mutually exclusive")
    if getattr(args, "forget_count", None) is not None:
        if args.forget_count < 0:
            raise ConfigError("--forget-count must be non-negative")
        changes["split"] = dataclasses.replace(cfg.split, mode="random", count=args.forget_count)
    if getattr(args, "forget_token", None):
        changes["split"] = dataclasses.replace(cfg.split, mode="token", token=args.forget_token)
    if getattr(args, "out", None):
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _out(cfg: ExperimentConfig) -> Path:
    if not cfg.out:
        raise ConfigError("no output directory (set [experiment] out or pass --out)")
    return Path(cfg.out)


def _formats(args):
    return args.format or list(FORMATS)


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    out = _out(cfg)
    for seed in cfg.seeds:
        d = out / f"seed-{seed}"
        d.mkdir(parents=True, exist_ok=True)
        for name, corpus in zip(("train", "extra", "test"), Pipeline(cfg, seed).corpora()):
            save_corpus(corpus, d / f"{name}.jsonl")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out(cfg)
    for seed in cfg.seeds:
        d = out / f"seed-{seed}"
        d.mkdir(parents=True, exist_ok=True)
        save_model(Pipeline(cfg, seed).original(), d / "original.ckpt")
    return 0


def cmd_unlearn(args) -> int:
    cfg = resolve_config(args).replace(save_checkpoints=True, metrics=())
    out = _out(cfg)
    failed = False
    for seed in cfg.seeds:
        pipe = Pipeline(cfg, seed)
        try:
            pipe.save_checkpoints(out)
        except ConfigError:
            raise
        except Exception:
            log.exception("seed %d failed", seed)
            failed = True
            continue
        if pipe.kga_report is not None:
            write_atomic(out / f"seed-{seed}" / "kga.json",
                         json.dumps(pipe.kga_report.to_json(), sort_keys=True, indent=1) + "\n")
    return 2 if failed else 0


def _run_and_emit(cfg: ExperimentConfig, formats) -> int:
    out = _out(cfg)
    bundle = run_experiment(cfg)
    emit_report(bundle, out, formats)
    write_atomic(out / "config.ini", dump_config(cfg))
    return 2 if bundle.failures else 0


def cmd_evaluate(args) -> int:
    return _run_and_emit(resolve_config(args), _formats(args))


def cmd_mia(args) -> int:
    return _run_and_emit(resolve_config(args).replace(mia=True), _formats(args))


def cmd_report(args) -> int:
    bundle = load_bundle(args.source)
    emit_report(bundle, args.out or args.source, _formats(args))
    return 0


def cmd_preset(args) -> int:
    kwargs = {}
    if args.name == "lexical-removal":
        if not args.forget_token:
            raise ConfigError("lexical-removal needs --forget-token")
        kwargs["token"] = args.forget_token
        args.forget_token = None  # already applied by the preset
    configs = [resolve_config(args, c) for c in preset(args.name, **kwargs)]
    if args.print_config:
        sys.stdout.write("\n".join(dump_config(c) for c in configs))
        return 0
    out = _out(configs[0])
    if len(configs) == 1:
        return _run_and_emit(configs[0], _formats(args))
    bundles = [run_experiment(c) for c in configs]
    xs = SWEEP_AXES.get(args.name, lambda cs: [c.label for c in cs])(configs)
    emit_sweep(bundles, xs, out, configs[0].metrics)
    for c, x in zip(configs, xs):
        write_atomic(out / str(x) / "config.ini", dump_config(c))
    return 2 if any(b.failures for b in bundles) else 0


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "unlearn": cmd_unlearn, "evaluate": cmd_evaluate,
    "mia": cmd_mia, "report": cmd_report, "preset": cmd_preset,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # any other failure is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
