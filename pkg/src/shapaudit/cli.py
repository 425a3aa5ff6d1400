"""Command-line entry point: ``shapaudit {validate,run,xq,sgae} --config FILE``.

Exit codes: 0 success, 1 invalid configuration, 2 failure while running
(a partial ``manifest.json`` records the failing stage).
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config, validate_config
from .errors import ConfigurationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapaudit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "check a config, including the static leakage rules",
        "run": "train and evaluate every configured model",
        "xq": "faithfulness, stability and agreement of the attributions",
        "sgae": "agreement-weighted ensemble versus the static blend",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides seed)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for compiled kernels")
    return parser


def cmd_validate(path, seed=None, out=None) -> tuple[int, list[str]]:
    try:
        cfg = load_config(path, seed=seed, out_dir=out)
    except (ConfigurationError, OSError, ValueError) as exc:
        return EXIT_INVALID, [str(exc)]
    errs = validate_config(cfg)
    return (EXIT_INVALID if errs else EXIT_OK), errs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    code, errs = cmd_validate(args.config, args.seed, args.out)
    if code != EXIT_OK:
        for e in errs:
            print(f"invalid: {e}", file=sys.stderr)
        return code
    if args.command == "validate":
        print(f"{args.config}: ok")
        return EXIT_OK
    if args.threads is not None:
        from ._kernels import set_threads
        set_threads(args.threads)
    from .pipeline import execute
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    code, manifest = execute(args.command, cfg)
    if code == EXIT_OK:
        print(f"{args.command}: wrote {', '.join(manifest.outputs)} to {cfg.output_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
