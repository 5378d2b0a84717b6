"""Command line entry point: ``edgeseg <stage> --config <path> [--seed N] [--debug-panels]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .pipeline import STAGES, run_stage


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgeseg", description="Segmentation from synthetic edge-diagram pairs.")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override run.seed (and derived module seeds)")
    p.add_argument("--debug-panels", action="store_true", help="write intermediate mask-extraction panels")
    p.add_argument("--until-plateau", action="store_true",
                   help="gen-dataset: add synthetic pairs until validation Dice stops improving")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        out = run_stage(args.stage, cfg, debug_panels=args.debug_panels, until_plateau=args.until_plateau)
    except (ValueError, FileNotFoundError) as exc:
        print(f"edgeseg {args.stage}: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
