import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from app import __version__
from app.core.exceptions import UsageError
from app.services.instance_service import instance_service


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that reports bad input as UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def parse_vector(text: Optional[str]) -> Optional[np.ndarray]:
    """A JSON list or comma-separated numbers."""
    if text is None:
        return None
    text = text.strip()
    try:
        values = json.loads(text) if text.startswith("[") else [float(v) for v in text.split(",") if v.strip()]
        return np.asarray(values, dtype=float).ravel()
    except (ValueError, TypeError) as e:
        raise UsageError(f"not a numeric vector: '{text}'") from e


def emit(text: str, out: Optional[str] = None) -> None:
    """Write to `out` atomically, or to stdout."""
    if out:
        instance_service.write_text(out, text if text.endswith("\n") else text + "\n")
        return
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def default_output_path(name: str, directory: str) -> str:
    return os.path.join(directory, f"{name}.json")


def build_parser() -> CommandParser:
    from app.commands import bench, check, gen, oracle, solve

    parser = CommandParser(prog="ccp-pendc", description="Penalty DC solvers for SAA chance-constrained programs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, type=str.upper,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Override LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CommandParser)
    for module in (gen, solve, oracle, check, bench):
        module.register(subparsers)
    return parser


__all__: List[str] = ["CommandParser", "build_parser", "default_output_path", "emit", "parse_vector"]
