"""Command-line entry point.

``slotstream run`` executes one experiment; ``slotstream verify`` checks
a finished run's emit log against its state dump.

Exit codes: 0 success, 1 configuration error, 2 runtime abort,
3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace

from slotstream.engine import EngineAbort
from slotstream.harness import ExperimentConfig, run_experiment, verify
from slotstream.messages import ConfigError

logger = logging.getLogger(__name__)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    # Every flag defaults to None so that file-provided values are only
    # overridden by flags the user actually passed.
    parser.add_argument("--config", metavar="FILE", help="key=value config file")
    parser.add_argument("--sources", type=int, metavar="N")
    parser.add_argument("--mappers", type=int, metavar="N")
    parser.add_argument("--reducers", type=int, metavar="N")
    parser.add_argument("--skew", type=float, metavar="PCT")
    parser.add_argument("--pattern", choices=["fixed", "spike", "rotating"])
    parser.add_argument("--rate", type=float, metavar="R")
    parser.add_argument("--duration", type=float, metavar="S")
    parser.add_argument("--balance", choices=["on", "off"])
    parser.add_argument("--window-length", dest="window_length", type=int, metavar="K")
    parser.add_argument("--factor", type=float, metavar="F")
    parser.add_argument("--period", type=float, metavar="MS")
    parser.add_argument("--seed", type=int, metavar="X")
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--trace", choices=["on", "off"])
    parser.add_argument("--spike-skew", dest="spike_skew", type=float, metavar="PCT")
    parser.add_argument("--spike-start", dest="spike_start", type=float, metavar="S")
    parser.add_argument("--spike-length", dest="spike_length", type=float, metavar="S")
    parser.add_argument("--rotate-every", dest="rotate_every", type=float, metavar="S")
    parser.add_argument("--hot-keys", dest="hot_keys", type=int, metavar="N")
    parser.add_argument(
        "--slots-per-reducer", dest="slots_per_reducer", type=int, metavar="N"
    )
    parser.add_argument("--service-rate", dest="service_rate", type=float, metavar="R")
    parser.add_argument("--capacity", type=int, metavar="N")
    parser.add_argument("--key-space", dest="key_space", type=int, metavar="N")


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig()
    overrides: dict[str, object] = {}
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        if f.type == "bool":
            value = value == "on"
        overrides[f.name] = value
    if overrides:
        config = replace(config, **overrides)
    return config


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = argparse.ArgumentParser(prog="slotstream")
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="run one experiment")
    _add_run_flags(run_parser)
    verify_parser = sub.add_parser("verify", help="re-check a finished run")
    verify_parser.add_argument("emit_log")
    verify_parser.add_argument("state_dump")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = _build_config(args)
            result = run_experiment(config)
            for key, value in result.summary.items():
                print(f"{key}={value}")
            if not result.verified:
                for line in result.mismatches[:20]:
                    print(f"mismatch: {line}", file=sys.stderr)
                return 3
            return 0
        ok, mismatches = verify(args.emit_log, args.state_dump)
        if ok:
            print("verification=pass")
            return 0
        for line in mismatches[:20]:
            print(f"mismatch: {line}", file=sys.stderr)
        print("verification=fail")
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except EngineAbort as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
