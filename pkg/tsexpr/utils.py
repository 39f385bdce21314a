from datetime import timedelta
from typing import Union

import numpy as np


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a random generator derived from a master seed and integer keys.

    Generators derived with different keys are statistically independent, which
    allows handing one to every window or worker without sharing state.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def as_seconds(x: Union[float, int, timedelta]) -> float:
    """Return a duration in seconds from seconds or a timedelta object."""
    if isinstance(x, timedelta):
        return x.total_seconds()
    return float(x)


def format_number(x: float) -> str:
    """Format a coefficient in the shortest form which keeps 15 significant digits."""
    text = format(float(x), ".15g")
    if text == "-0":
        return "0"
    return text
