"""
crossdiff command line.

    crossdiff run <config.json> [--out DIR]
    crossdiff preset --list
    crossdiff preset <name> [--out DIR] [--print]
    crossdiff check <artifact-dir>

Exit status: 0 on success, 1 on configuration errors, 2 when a run stage
fails or a check does not pass.
"""

import argparse
import json
import sys
from typing import List, Optional

from src import __version__
from src.config.presets import get_preset, list_presets, load_preset
from src.config.run_spec import parse_config
from src.processors.experiment_runner import check_artifacts, run_experiment
from src.utils.errors import ConfigError, CrossDiffError, StageError
from src.utils.logger import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURE = 2


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the run, preset and check subcommands."""
    parser = argparse.ArgumentParser(
        prog="crossdiff",
        description="Two-species nonlocal cross-diffusion with size exclusion"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run an experiment from a JSON config")
    run.add_argument("config", help="Path to the JSON run specification")
    run.add_argument("--out", default=None, help="Output directory (overrides the config)")

    preset = commands.add_parser("preset", help="Run or print a bundled preset")
    preset.add_argument("name", nargs="?", help="Preset name")
    preset.add_argument("--list", action="store_true", help="List available presets")
    preset.add_argument("--out", default=None, help="Output directory")
    preset.add_argument("--print", dest="print_only", action="store_true",
                        help="Print the preset JSON instead of running it")

    check = commands.add_parser("check", help="Re-verify invariants of a stored run")
    check.add_argument("directory", help="Artifact directory written by run or preset")
    return parser


def _report(lines: List[str]) -> None:
    for line in lines:
        print(line)


def _run(spec, output_dir: Optional[str]) -> int:
    outcome = run_experiment(spec, output_dir)
    _report(outcome.verdicts)
    print(f"artifacts: {outcome.directory}")
    return outcome.status


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the crossdiff command.

    Args:
        argv: Arguments without the program name. If None, uses sys.argv.

    Returns:
        Process exit status
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            return _run(parse_config(args.config), args.out)

        if args.command == "preset":
            if args.list:
                _report(list_presets())
                return EXIT_OK
            if not args.name:
                parser.error("preset: a name or --list is required")
            if args.print_only:
                print(json.dumps(get_preset(args.name), indent=2, sort_keys=True))
                return EXIT_OK
            return _run(load_preset(args.name, args.out), None)

        report = check_artifacts(args.directory)
        _report(report.lines)
        return EXIT_OK if report.passed else EXIT_FAILURE

    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"error: stage '{e.stage}' failed: {e.cause}", file=sys.stderr)
        return EXIT_FAILURE
    except CrossDiffError as e:
        logger.error(f"Run failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
