from typing import Optional, Sequence
import argparse
import logging
import sys

from splat_graph.cli.handlers import setup_handlers
from splat_graph.core.config import settings
from splat_graph.core.errors import EXIT_RUNTIME_ERROR, error_handler
from splat_graph.core.logging import setup_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.APP_NAME,
        description="Dynamic Gaussian scene graphs: synthesize, prepare poses, train, render, evaluate and edit"
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {settings.VERSION}")
    parser.add_argument('--log-level', default=None, help="Overrides LOG_LEVEL")
    subparsers = parser.add_subparsers(dest='command', required=True)
    setup_handlers(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(
        log_level=args.log_level or settings.LOG_LEVEL,
        log_format=settings.LOG_FORMAT,
        log_file=settings.LOG_FILE,
        log_dir=settings.LOGS_DIR
    )
    settings.configure_torch()
    settings.configure_prometheus()

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.warning(f"{args.command} interrupted")
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        return error_handler(e)


if __name__ == "__main__":
    sys.exit(main())
