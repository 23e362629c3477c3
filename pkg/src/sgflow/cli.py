"""Command-line entry point: ``sgflow {run,stability,vortex-validate,orlicz-demo,shallow-run}``.

Exit codes: 0 success, 2 configuration error, 3 transport solver did not
converge (partial artifacts are left in the output directory).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import experiments
from .errors import ConfigError, NonConvergence, SGFlowError

log = logging.getLogger("sgflow")

COMMANDS = {
    "run": experiments.run_experiment,
    "stability": experiments.stability_sweep,
    "vortex-validate": experiments.vortex_validate,
    "orlicz-demo": experiments.orlicz_demo,
    "shallow-run": experiments.shallow_experiment,
}

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgflow", description="Semi-geostrophic particle flows via semi-discrete transport.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", metavar="PATH", help="JSON config (defaults are used for missing keys)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, help="random seed (overrides config 'seed')")
        p.add_argument("--threads", type=int, default=1, help="worker threads for nearest-neighbour queries")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = experiments.load_config(args.config, {"output": args.out, "seed": args.seed})
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1", "threads")
    except ConfigError as exc:
        print(f"sgflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    runtime = dict(cfg, threads=args.threads)
    started = time.time()
    try:
        result = COMMANDS[args.command](runtime, cfg["output"])
    except ConfigError as exc:
        print(f"sgflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"sgflow: transport solver did not converge: {exc}", file=sys.stderr)
        out = Path(cfg["output"])
        if not (out / "manifest.json").exists():
            out.mkdir(parents=True, exist_ok=True)
            experiments.write_manifest(out, runtime, {"status": "nonconvergence", "error": str(exc),
                                                      "residual": exc.residual}, started)
        return EXIT_NONCONVERGENCE
    except SGFlowError as exc:
        print(f"sgflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished with status %s; artifacts in %s", args.command, result.status, result.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
