"""Click commons.

This file contains common functions for the command line tool.
"""
import json
import logging
import sys
from functools import wraps
from typing import Any, Dict, Iterable, Optional, Tuple

import click

from .config import parse_override
from .exceptions import (
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    ConfigurationError,
    TsExprException,
)

_LOGGER = logging.getLogger(__name__)

REPORT_FORMAT = "tsexpr-report"
REPORT_VERSION = 1


class ExceptionHandlerGroup(click.Group):
    """Group translating package exceptions into exit statuses.

    Package errors are reported as a single ``error: <Class>: <message>`` line on
    stderr and exit with the status of the exception class. Operating system errors,
    such as an unwritable output path, are reported the same way and exit with the
    runtime status. Click usage errors exit with status 1.
    """

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
            code = rv if isinstance(rv, int) else EXIT_OK
        except click.ClickException as ex:
            ex.show()
            code = EXIT_USAGE
        except click.Abort:
            click.echo("Aborted!", err=True)
            code = EXIT_USAGE
        except TsExprException as ex:
            _LOGGER.debug("Exception: %s", ex, exc_info=True)
            click.echo("error: %s" % ex.reason, err=True)
            code = ex.exit_code
        except OSError as ex:
            _LOGGER.debug("Exception: %s", ex, exc_info=True)
            message = " ".join(str(ex).split())
            click.echo("error: %s: %s" % (ex.__class__.__name__, message), err=True)
            code = EXIT_RUNTIME

        if standalone_mode:
            sys.exit(code)
        return code


def validate_override(ctx, param, values):
    """Callback parsing ``--set key=value`` options."""
    try:
        return tuple(parse_override(value) for value in values)
    except ConfigurationError as ex:
        raise click.BadParameter(str(ex))


class GlobalContextObject:
    def __init__(
        self,
        debug: int = 0,
        values: Optional[Dict[str, Any]] = None,
        overrides: Iterable[Tuple[str, Any]] = (),
    ):
        self.debug = debug
        self.values = values or {}
        self.overrides = tuple(overrides)


def dump_record(record: Dict) -> str:
    """Serialize a report record; keys are sorted for reproducible output."""
    return json.dumps(record, sort_keys=True, default=_default)


def _default(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError("%r is not JSON serializable" % (value,))


def header_record(command: str, config: Dict) -> Dict:
    return {
        "record": "header",
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "command": command,
        "config": config,
    }


def json_lines(func):
    """Echo every record yielded by the command as one JSON line."""

    @wraps(func)
    def wrap(*args, **kwargs):
        records = func(*args, **kwargs)  # type: Iterable[Dict]
        for record in records:
            click.echo(dump_record(record))

    return wrap
