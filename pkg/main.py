"""
singular-hjb - optimal liquidation with a singular terminal constraint.
Batch front end for the solver, the Monte Carlo simulator and the
verification suites.
"""

import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from command_handler import COMMANDS, EXIT_FAULT, CommandHandler
from config import Config, RunConfig
from managers.file_manager import FileManager
from utils.errors import AssumptionError, SingularHJBError
from utils.terminal_utils import print_colored, set_colors_enabled


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for verification failures."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAULT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="singular-hjb",
                            description="Singular-terminal HJB solver and liquidation simulator")
    parser.add_argument("command", choices=COMMANDS, help="Pipeline to run")
    parser.add_argument("--config", required=True, help="Run configuration (TOML)")
    parser.add_argument("--out", help="Output directory (overrides [output] dir)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides [mc] seed)")
    parser.add_argument("--paths", type=int, help="Monte Carlo paths (overrides [mc] paths)")
    parser.add_argument("--no-color", action="store_true", help="Disable coloured output")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    return parser


async def main(argv: Optional[List[str]] = None) -> int:
    """
    Main application entry point.

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.debug else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = Config()
    set_colors_enabled(False if args.no_color or not config.use_colors else None)

    try:
        run = RunConfig.from_toml(args.config, config, out_dir=args.out, seed=args.seed,
                                  paths=args.paths)
        file_manager = FileManager(run.out_dir, encoding=config.default_encoding)
        handler = CommandHandler(run, file_manager)
        return await handler.dispatch(args.command)
    except AssumptionError as e:
        print_colored(f"Error: {str(e)}", "red", bold=True)
        if e.report is not None and args.debug:
            print(e.report.summary())
        return EXIT_FAULT
    except (SingularHJBError, ValueError, OSError) as e:
        if args.debug:
            logging.getLogger(__name__).exception("command failed")
        print_colored(f"Error: {str(e)}", "red", bold=True)
        return EXIT_FAULT


def run_cli(argv: Optional[List[str]] = None) -> int:
    return asyncio.run(main(argv))


if __name__ == "__main__":
    sys.exit(run_cli())
