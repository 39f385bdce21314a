# flake8: noqa
try:
    # python 3.7 and earlier
    from importlib_metadata import PackageNotFoundError, version  # type: ignore
except ImportError:
    # python 3.8 and later
    from importlib.metadata import PackageNotFoundError, version  # type: ignore

try:
    __version__ = version("python-tsexpr")
except PackageNotFoundError:
    __version__ = "unknown"

from tsexpr.exceptions import (
    ConfigurationError,
    DataError,
    FormatError,
    SearchError,
    TsExprException,
)
from tsexpr.expr import (
    ExpressionPath,
    ExpressionTree,
    Symbol,
    SymbolKind,
    autocomplete,
    evaluate,
    parse_prefix,
    to_infix,
    to_prefix,
    to_tree,
)
from tsexpr.library import AugmentedEntry, FunctionLibrary, SASConfig, SASRecorder
from tsexpr.mcts import SearchConfig, SearchMode, run_episode
from tsexpr.metrics import RewardConfig
from tsexpr.optimizer import OptimizerConfig, fit_coefficients, powell_minimize
from tsexpr.pipeline import (
    ExperimentConfig,
    FitResult,
    evaluate_windows,
    extrapolate,
    fit_series,
    train,
)
from tsexpr.pvnet import PolicyValueNet, TrainConfig, load_weights, save_weights
from tsexpr.timeseries import TimeSeries
