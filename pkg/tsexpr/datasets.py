"""Series input and synthetic generators."""
import csv
import logging
import math
import os
from typing import BinaryIO, Callable, Dict, Iterator, List, TextIO, Tuple

import numpy as np

from .exceptions import (
    CSVParseError,
    InvalidSeriesError,
    OrderingError,
    UnknownGeneratorError,
)
from .timeseries import TimeSeries
from .utils import derive_rng, format_number

_LOGGER = logging.getLogger(__name__)


def _parse_float(text: str, line: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise CSVParseError("invalid %s %r" % (what, text), line) from None
    if not math.isfinite(value):
        raise CSVParseError("%s %r is not finite" % (what, text), line)
    return value


def _decoded_lines(f: BinaryIO) -> Iterator[str]:
    for line, raw in enumerate(f, start=1):
        try:
            yield raw.decode("utf-8")
        except UnicodeDecodeError as ex:
            raise CSVParseError("not valid UTF-8: %s" % ex.reason, line) from None


def ingest_csv(path: os.PathLike) -> TimeSeries:
    """Read a two column ``timestamp,value`` CSV file.

    A header line is accepted if its first field is not a number. Empty lines are
    skipped.
    """
    timestamps = []
    values = []
    with open(path, "rb") as f:
        for line, row in enumerate(csv.reader(_decoded_lines(f)), start=1):
            if not row or all(not field.strip() for field in row):
                continue
            if len(row) != 2:
                raise CSVParseError("expected 2 columns, got %s" % len(row), line)

            first, second = (field.strip() for field in row)
            if line == 1 and not timestamps:
                try:
                    float(first)
                except ValueError:
                    _LOGGER.debug("Skipping header %s", row)
                    continue

            t = _parse_float(first, line, "timestamp")
            v = _parse_float(second, line, "value")
            if timestamps and t <= timestamps[-1]:
                raise OrderingError(
                    "line %s: timestamp %s does not follow %s"
                    % (line, format_number(t), format_number(timestamps[-1]))
                )
            timestamps.append(t)
            values.append(v)

    _LOGGER.debug("Read %s samples from %s", len(values), path)
    try:
        return TimeSeries(timestamps, values)
    except InvalidSeriesError as ex:
        raise InvalidSeriesError("%s: %s" % (path, ex)) from ex


def dump_csv(series: TimeSeries, f: TextIO, header: bool = True) -> None:
    writer = csv.writer(f, lineterminator="\n")
    if header:
        writer.writerow(["t", "value"])
    for t, v in zip(series.timestamps, series.values):
        writer.writerow([format_number(t), format_number(v)])


def write_csv(series: TimeSeries, path: os.PathLike, header: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        dump_csv(series, f, header)


def write_curve(series: TimeSeries, fitted, path: os.PathLike) -> None:
    """Write ``t,value,fitted`` rows for plotting a fit."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "value", "fitted"])
        for t, v, y in zip(series.timestamps, series.values, fitted):
            writer.writerow([format_number(t), format_number(v), format_number(y)])


def _linear(t):
    return t


def _sine(t):
    return np.sin(t)


def _sine_plus_trend(t):
    return np.sin(t) + 0.5 * t


def _log_trend(t):
    return np.log(t)


def _log_power_cosine(t):
    with np.errstate(invalid="ignore"):
        return 0.0974 * t * np.log(1.6042 * t) ** 2.65 + 0.9 * t * np.cos(
            (0.11 * t) ** 1.66
        )


# name -> (function, first timestamp)
GENERATORS = {
    "linear": (_linear, 0),
    "sine": (_sine, 0),
    "sine-plus-trend": (_sine_plus_trend, 0),
    "log-trend": (_log_trend, 1),
    "fig1": (_log_power_cosine, 1),
    "log-power-cosine": (_log_power_cosine, 1),
}  # type: Dict[str, Tuple[Callable, int]]


def synth(name: str, n: int, noise: float = 0.0, seed: int = 0) -> TimeSeries:
    """Sample a generator on n consecutive integer timestamps.

    Gaussian noise with standard deviation `noise` is added to the values.
    """
    try:
        func, start = GENERATORS[name]
    except KeyError:
        raise UnknownGeneratorError(
            "Unknown generator %r, expected one of %s" % (name, ", ".join(GENERATORS))
        ) from None

    t = np.arange(start, start + n, dtype=float)
    values = np.asarray(func(t), dtype=float)
    if noise:
        values = values + derive_rng(seed).normal(0.0, noise, size=values.size)
    return TimeSeries(t, values)


def generator_names() -> List[str]:
    return list(GENERATORS)
