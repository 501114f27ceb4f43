import logging
import sys
from typing import List, Optional

from app.commands import build_parser
from app.core.config import settings
from app.core.exceptions import EXIT_INTERNAL, handle_exception

logger = logging.getLogger("ccp_pendc")


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code.

    0 success, 1 usage or input error, 2 infeasible or budget outcome,
    3 internal error or interruption.
    """
    configure_logging()
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.log_level:
            configure_logging(args.log_level)
        return args.handler(args)
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)
    except KeyboardInterrupt:
        logger.error("Interrupted")
        return EXIT_INTERNAL
    except Exception as e:
        return handle_exception(e)


if __name__ == "__main__":
    sys.exit(cli_main())
