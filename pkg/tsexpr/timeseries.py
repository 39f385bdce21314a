import logging

import attr
import numpy as np

from .exceptions import InvalidSeriesError

_LOGGER = logging.getLogger(__name__)


def _as_vector(value) -> np.ndarray:
    vector = np.array(value, dtype=float).ravel()
    vector.setflags(write=False)
    return vector


@attr.s(frozen=True, eq=False)
class TimeSeries:
    """Container for a univariate series of (timestamp, value) pairs.

    Timestamps are strictly increasing and there are at least two samples.
    """

    timestamps = attr.ib(converter=_as_vector)
    values = attr.ib(converter=_as_vector)

    def __attrs_post_init__(self):
        if self.timestamps.size != self.values.size:
            raise InvalidSeriesError(
                "Got %s timestamps for %s values"
                % (self.timestamps.size, self.values.size)
            )
        if self.timestamps.size < 2:
            raise InvalidSeriesError("A series needs at least two samples")
        if not np.all(np.isfinite(self.timestamps)):
            raise InvalidSeriesError("Timestamps must be finite")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InvalidSeriesError("Timestamps must be strictly increasing")

    @classmethod
    def from_values(cls, values, start: float = 0.0) -> "TimeSeries":
        """Create a series with timestamps start, start + 1, ..."""
        values = np.asarray(values, dtype=float).ravel()
        return cls(start + np.arange(values.size, dtype=float), values)

    def __len__(self):
        return int(self.values.size)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return np.array_equal(self.timestamps, other.timestamps) and np.array_equal(
            self.values, other.values
        )

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.timestamps[start:stop], self.values[start:stop])

    def reindexed(self) -> "TimeSeries":
        """Same values on timestamps 0, 1, 2, ..."""
        return TimeSeries.from_values(self.values)

    def normalized(self) -> "TimeSeries":
        """Values standardized to zero mean and unit variance.

        A constant series is only shifted to zero.
        """
        std = float(np.std(self.values))
        centered = self.values - float(np.mean(self.values))
        if std == 0:
            _LOGGER.debug("Constant series, skipping variance scaling")
            return TimeSeries(self.timestamps, centered)
        return TimeSeries(self.timestamps, centered / std)
