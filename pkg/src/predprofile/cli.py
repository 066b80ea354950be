"""Command line entry point: ``predprofile <stage> --config FILE``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, DataError, ParseError, PrerequisiteError, StalenessError

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ = 0, 2, 3

log = logging.getLogger("predprofile")


def _parser() -> argparse.ArgumentParser:
    from .pipeline import STAGES

    p = argparse.ArgumentParser(prog="predprofile", description="Learn and evaluate prediction profile models.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        sp = sub.add_parser(name, help=f"run the {name} stage")
        sp.add_argument("--config", required=True, help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default="runs/default", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    pd = sub.add_parser("plotdata", help="long-format CSV from evaluation CSVs")
    pd.add_argument("inputs", nargs="*", help="eval.csv files")
    pd.add_argument("--out", default="plotdata.csv")
    return p


def _load(args):
    from .config import load_config, parse_config

    cfg = load_config(args.config)
    if args.set:
        text = cfg.to_text() + "".join(f"{kv}\n" for kv in args.set)
        base = getattr(cfg, "base_dir", None)
        cfg = parse_config(text, "--set")
        if base is not None:
            cfg.base_dir = base
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "plotdata":
            from .plotdata import emit_plotdata

            n = emit_plotdata(args.inputs, args.out)
            log.info("wrote %d rows to %s", n, args.out)
            return EXIT_OK
        from .pipeline import run_stage

        cfg = _load(args)
        manifest = run_stage(args.command, cfg, args.out)
        for stage, rec in sorted(manifest["stages"].items()):
            log.info("%-18s %8.2fs  %s", stage, rec["seconds"], " ".join(rec["artifacts"]))
        return EXIT_OK
    except (ConfigError, ParseError, DataError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (PrerequisiteError, StalenessError) as exc:
        log.error("prerequisite error: %s", exc)
        return EXIT_PREREQ


if __name__ == "__main__":
    sys.exit(main())
