# app.py

import argparse
import logging
import sys

from command_handlers.handlers import register_handlers
from config.settings import LOG_LEVEL, RUNS_DATABASE_URL
from models import database
from utils.errors import ConfigError, TreeBoostError

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors follow the one-line error format."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"error: {ConfigError.kind}: {message}\n")


def build_parser():
    parser = _Parser(
        prog='treeboost',
        description='Density estimation by forward-stagewise boosting of tree-CDF transforms.',
    )
    parser.add_argument('--log-level', default=LOG_LEVEL, help='DEBUG, INFO, WARNING or ERROR')
    subparsers = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)
    register_handlers(subparsers)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    # Set up logging
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        if RUNS_DATABASE_URL:
            database.init_engine(RUNS_DATABASE_URL)
        return args.handler(args)
    except TreeBoostError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e.kind}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        print(f"error: internal: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
