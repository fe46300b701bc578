"""Command line entry point: drysvs <verb> [options]."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import PRESETS, PipelineConfig, load_config
from .errors import ConfigError, DataError, DrySvsError

log = logging.getLogger("drysvs")


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI-style config file")
    p.add_argument("--preset", default="toy", choices=sorted(PRESETS))
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override one config field (repeatable)")


def _require_file(path, what: str):
    if not Path(path).is_file():
        raise DataError(f"{what} {path} does not exist")


def cmd_gen_fixtures(args, config: PipelineConfig) -> int:
    from .fixtures import generate_fixtures
    spec = config.fixtures if args.seed is None else replace(config.fixtures, seed=args.seed)
    manifest = generate_fixtures(args.out, spec)
    print(manifest)
    return 0


def cmd_train(args, config: PipelineConfig) -> int:
    from .pipeline import train
    _require_file(config.paths.manifest, "manifest")
    if args.resume:
        _require_file(args.resume, "checkpoint")
    final = train(config, resume=args.resume, stop_at=args.stop_at)
    print(final)
    return 0


def cmd_separate(args, config: PipelineConfig) -> int:
    from .pipeline import separate_file
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.input, "input")
    separate_file(config, args.checkpoint, args.input, args.output, args.mel_out)
    print(args.output)
    return 0


def cmd_evaluate(args, config: PipelineConfig) -> int:
    from .pipeline import evaluate
    _require_file(args.checkpoint, "checkpoint")
    _require_file(config.paths.manifest, "manifest")
    out = args.out or config.work_dir / f"eval_{args.split}"
    result = evaluate(config, args.checkpoint, args.split, out)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    return 0


def cmd_inspect_checkpoint(args, config: PipelineConfig) -> int:
    from .pipeline import describe_checkpoint
    _require_file(args.checkpoint, "checkpoint")
    print(json.dumps(describe_checkpoint(args.checkpoint), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drysvs", description="Dry singing voice separation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-fixtures", help="write synthetic voice/accompaniment/SRIR clips")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides fixtures.seed")
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("train", help="train the separator")
    _add_config_args(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop after this many total steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate the dry voice from a mixture WAV")
    _add_config_args(p)
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mel-out", help="save the normalized pre-vocoder mel as .npy")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    _add_config_args(p)
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="report directory (default <work_dir>/eval_<split>)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata as JSON")
    _add_config_args(p)
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect_checkpoint)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.overrides, args.preset)
        with threadpool_limits(limits=config.train.num_threads):
            return args.func(args, config)
    except DrySvsError as exc:
        print(f"drysvs {args.verb}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # dataclass validation outside the config layer
        print(f"drysvs {args.verb}: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"drysvs {args.verb}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
