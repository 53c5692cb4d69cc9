"""Command-line entry point: one subcommand per pipeline.

Exit codes: 0 success, 1 usage or config error (nothing written), 2
numerical failure (outputs plus a diagnostic.json in the run directory).
Worker count resolves flag > TAND_WORKERS > config > 1; the environment
variable is the only environment override honored.
"""

import argparse
import json
import os
import sys

from . import __version__
from .config import ConfigError, load_config
from .pipelines import PipelineFailure, run_check_secular, run_drive1d, \
    run_eig, run_fss, run_gen, run_tmm, run_trace
from .wfio import ensure_dir


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse would exit 2; the contract reserves 2 for numerical failure
        raise CliError(message)


_COMMANDS = ("gen", "tmm", "fss", "eig", "trace", "drive1d", "check-secular")


def build_parser():
    parser = _Parser(prog="tand", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"tand {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--out", help="output directory (default: [run] out)")
        sp.add_argument("--seed", type=int, help="override [run] master_seed")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--resume", action="store_true",
                        help="skip jobs the manifest already records as done")
    return parser


def _resolve_workers(args, cfg):
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("TAND_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise CliError(f"TAND_WORKERS must be an integer, got {env!r}") from exc
    return max(1, cfg.get("run", "workers", 1))


def _dispatch(command, cfg, out, workers, resume):
    if command == "tmm":
        return run_tmm(cfg, out, workers=workers, resume=resume)
    table = {
        "gen": run_gen,
        "fss": run_fss,
        "eig": run_eig,
        "trace": run_trace,
        "drive1d": run_drive1d,
        "check-secular": run_check_secular,
    }
    return table[command](cfg, out)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError("a subcommand is required (one of %s)" % ", ".join(_COMMANDS))
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}") from exc
        if args.seed is not None:
            cfg = cfg.with_overrides("run", master_seed=args.seed)
        out = args.out or cfg.get("run", "out", "runs")
        workers = _resolve_workers(args, cfg)
    except (CliError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        result = _dispatch(args.command, cfg, out, workers, args.resume)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineFailure as exc:
        path = os.path.join(ensure_dir(out), "diagnostic.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(exc.diagnostic, f, sort_keys=True, indent=1)
            f.write("\n")
        print(f"error: {exc} (diagnostic: {path})", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected numerical blowup: still exit 2
        path = os.path.join(ensure_dir(out), "diagnostic.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"pipeline": args.command, "error": str(exc),
                       "type": type(exc).__name__}, f, sort_keys=True, indent=1)
            f.write("\n")
        print(f"error: {type(exc).__name__}: {exc} (diagnostic: {path})",
              file=sys.stderr)
        return 2

    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
