"""Training, fitting, evaluation and extrapolation workflows."""
import enum
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
from tqdm import tqdm

from .exceptions import (
    ConfigurationError,
    InsufficientDataError,
    UndefinedVarianceError,
)
from .expr import ExpressionPath, ExpressionTree
from .expr import evaluate as evaluate_expression
from .expr import to_infix, to_prefix, to_tree
from .library import (
    FunctionLibrary,
    SASConfig,
    SASRecorder,
    mine_top_k,
    save_library,
)
from .mcts import SearchConfig, SearchMode, StepCounter, run_episode
from .metrics import atc, corr, r_squared, reward_from_error
from .optimizer import OptimizerConfig, fit_coefficients
from .pvnet import (
    PolicyValueNet,
    TrainConfig,
    TrainingExample,
    save_weights,
    train_network,
)
from .timeseries import TimeSeries
from .utils import derive_rng, format_number

_LOGGER = logging.getLogger(__name__)

MODES = ("full", "no_ps", "no_re", "no_pvn", "no_sas")
WEIGHTS_FILENAME = "weights.tsxw"
LIBRARY_FILENAME = "library.yaml"
CONSTANT_FIT_TOLERANCE = 1e-9

# stream keys for derive_rng
_TRAIN_STREAM = 1
_FIT_STREAM = 2
_SHUFFLE_STREAM = 3


def default_iterations(window: int) -> int:
    return 200 if window <= 36 else 300


def _positive(instance, attribute, value):
    if value is not None and not value > 0:
        raise ValueError("%s must be positive, got %s" % (attribute.name, value))


@attr.s(frozen=True)
class ExperimentConfig:
    """Settings shared by every workflow.

    `iterations` defaults to 200 for windows up to 36 samples and 300 otherwise,
    `stride` defaults to the window length.
    """

    window = attr.ib(type=int, default=36, converter=int, validator=_positive)
    stride = attr.ib(
        type=Optional[int],
        default=None,
        converter=attr.converters.optional(int),
        validator=_positive,
    )
    train_fraction = attr.ib(type=float, default=0.1, converter=float)
    fit_length = attr.ib(type=int, default=30, converter=int)
    horizon = attr.ib(type=int, default=6, converter=int, validator=_positive)
    seed = attr.ib(type=int, default=0, converter=int)
    rounds = attr.ib(type=int, default=2, converter=int, validator=_positive)
    episodes = attr.ib(type=int, default=1, converter=int, validator=_positive)
    iterations = attr.ib(
        type=Optional[int],
        default=None,
        converter=attr.converters.optional(int),
        validator=_positive,
    )
    normalize = attr.ib(type=bool, default=False)
    workers = attr.ib(type=int, default=1, converter=int, validator=_positive)
    mode = attr.ib(type=str, default="full")
    search = attr.ib(type=SearchConfig, factory=SearchConfig)
    optimizer = attr.ib(type=OptimizerConfig, factory=OptimizerConfig)
    train = attr.ib(type=TrainConfig, factory=TrainConfig)
    sas = attr.ib(type=SASConfig, factory=SASConfig)

    @train_fraction.validator
    def _check_fraction(self, attribute, value):
        if not 0 < value < 1:
            raise ValueError("train_fraction must be in (0, 1), got %s" % value)

    @fit_length.validator
    def _check_fit_length(self, attribute, value):
        if value < 2:
            raise ValueError("fit_length must be at least 2, got %s" % value)

    @mode.validator
    def _check_mode(self, attribute, value):
        if value not in MODES:
            raise ValueError("Unknown mode %r, expected one of %s" % (value, MODES))

    @property
    def effective_stride(self) -> int:
        return self.stride or self.window

    @property
    def effective_iterations(self) -> int:
        return self.iterations or default_iterations(self.window)

    @property
    def search_mode(self) -> SearchMode:
        return search_mode(self.mode)

    @property
    def use_sas(self) -> bool:
        return self.mode != "no_sas"

    def search_config(
        self, mode: Optional[SearchMode] = None, **kwargs
    ) -> SearchConfig:
        return attr.evolve(
            self.search,
            mode=mode or self.search_mode,
            iterations_per_episode=self.effective_iterations,
            **kwargs,
        )

    def as_dict(self) -> Dict:
        """Plain, JSON serializable copy of the settings.

        The search block holds the settings the run searches with.
        """
        values = attr.asdict(self, filter=_without_counters)
        values["search"] = attr.asdict(self.search_config(), filter=_without_counters)
        return _plain(values)


def _without_counters(attribute, value) -> bool:
    return not isinstance(value, StepCounter)


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, enum.Enum):
        return value.value
    return value


def search_mode(mode: str) -> SearchMode:
    """Search mode used for a command line mode name."""
    if mode == "no_sas":
        return SearchMode.Full
    return SearchMode(mode)


def needs_network(mode: str) -> bool:
    return search_mode(mode).needs_network


def library_for_mode(lib: FunctionLibrary, mode: str) -> FunctionLibrary:
    """Drop augmented entries when symbolic augmentation is disabled."""
    if mode == "no_sas":
        return lib.with_entries(())
    return lib


def sliding_windows(
    series: TimeSeries, length: int, stride: Optional[int] = None
) -> List[TimeSeries]:
    """Cut `series` into windows re-indexed from 0."""
    stride = stride or length
    if length < 2 or stride < 1:
        raise ValueError("Invalid window length %s or stride %s" % (length, stride))
    if len(series) < length:
        raise InsufficientDataError(
            "Series of %s samples is shorter than the window of %s"
            % (len(series), length)
        )
    return [
        series.slice(start, start + length).reindexed()
        for start in range(0, len(series) - length + 1, stride)
    ]


def split_windows(
    windows: Sequence[TimeSeries], train_fraction: float
) -> Tuple[List[TimeSeries], List[TimeSeries]]:
    """Earliest windows train, the remaining ones test."""
    if not windows:
        raise InsufficientDataError("No windows to split")
    n_train = max(1, int(math.floor(train_fraction * len(windows) + 1e-9)))
    return list(windows[:n_train]), list(windows[n_train:])


@attr.s(frozen=True, eq=False)
class FitResult:
    """Fitted expression for one series.

    Predictions are ``evaluate_expression(tree, coefficients, t) * scale + offset``;
    scale and offset differ from 1 and 0 only for normalized fits. `r2` and `corr`
    are None when undefined, `flags` tells why.
    """

    backbone = attr.ib(type=str)
    expression_text = attr.ib(type=str)
    coefficients = attr.ib(type=tuple, converter=tuple)
    reward = attr.ib(type=float)
    r2 = attr.ib(type=Optional[float])
    corr = attr.ib(type=Optional[float])
    elapsed_seconds = attr.ib(type=float)
    tree = attr.ib(type=ExpressionTree, repr=False)
    offset = attr.ib(type=float, default=0.0)
    scale = attr.ib(type=float, default=1.0)
    steps = attr.ib(type=int, default=0)
    flags = attr.ib(type=tuple, default=(), converter=tuple)

    def predict(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        values = evaluate_expression(self.tree, self.coefficients, t)
        return np.asarray(values) * self.scale + self.offset

    def as_record(self, include_timing: bool = False) -> Dict:
        record = {
            "backbone": self.backbone,
            "expression": self.expression_text,
            "coefficients": [format_number(c) for c in self.coefficients],
            "reward": self.reward,
            "r2": self.r2,
            "corr": self.corr,
            "steps": self.steps,
            "flags": list(self.flags),
        }
        if self.scale != 1.0 or self.offset != 0.0:
            record["offset"] = self.offset
            record["scale"] = self.scale
        if include_timing:
            record["elapsed_seconds"] = self.elapsed_seconds
        return record


def _metrics(predicted: np.ndarray, actual: np.ndarray, error: float):
    flags = []
    if not np.all(np.isfinite(predicted)):
        _LOGGER.warning("Fitted expression is not finite on the series")
        return None, None, ["degenerate"]

    try:
        r2 = r_squared(predicted, actual)
    except UndefinedVarianceError:
        if error < CONSTANT_FIT_TOLERANCE:
            r2 = 1.0
            flags.append("constant-series")
        else:
            r2 = None
            flags.append("r2-undefined")
            _LOGGER.warning("R2 is undefined for a constant series")

    try:
        correlation = corr(predicted, actual)
    except UndefinedVarianceError:
        correlation = None
        flags.append("corr-undefined")

    return r2, correlation, flags


def _fit_candidate(
    path: ExpressionPath,
    series: TimeSeries,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
):
    tree = to_tree(path)
    coeffs, error = fit_coefficients(tree, series, cfg.optimizer, rng)
    return tree, coeffs, error, reward_from_error(error, tree.size, cfg.search.reward)


def fit_series(
    series: TimeSeries,
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    cfg: ExperimentConfig,
    rng: Optional[np.random.Generator] = None,
    search: Optional[SearchConfig] = None,
) -> FitResult:
    """Search a backbone for `series` and fit its coefficients.

    With best-rollout tracking the better of the backbone and the best simulated
    expression is returned.
    """
    start = time.perf_counter()
    if rng is None:
        rng = derive_rng(cfg.seed, _FIT_STREAM)
    if search is None:
        search = cfg.search_config()

    offset, scale = 0.0, 1.0
    target = series
    if cfg.normalize:
        offset = float(np.mean(series.values))
        scale = float(np.std(series.values)) or 1.0
        target = TimeSeries(series.timestamps, (series.values - offset) / scale)

    episode = run_episode(target, search, net, library_for_mode(lib, cfg.mode), rng)
    candidates = [episode.backbone]
    if episode.best_path is not None and to_prefix(episode.best_path) != to_prefix(
        episode.backbone
    ):
        candidates.append(episode.best_path)

    best = None
    for path in candidates:
        fitted = _fit_candidate(path, target, cfg, rng)
        if best is None or fitted[3] > best[3]:
            best = fitted
    tree, coeffs, error, value = best

    if value == 0.0:
        _LOGGER.warning("Degenerate fit %s", to_prefix(tree))

    predicted = np.asarray(evaluate_expression(tree, coeffs, target.timestamps))
    r2, correlation, flags = _metrics(predicted, target.values, error)
    result = FitResult(
        backbone=to_prefix(tree),
        expression_text=to_infix(tree, coeffs),
        coefficients=tuple(float(c) for c in coeffs),
        reward=value,
        r2=r2,
        corr=correlation,
        elapsed_seconds=time.perf_counter() - start,
        tree=tree,
        offset=offset,
        scale=scale,
        steps=episode.counter.steps,
        flags=flags,
    )
    _LOGGER.debug("Fitted %s: reward %s, R2 %s", result.expression_text, value, r2)
    return result


def generate_training_data(
    windows: Sequence[TimeSeries],
    lib: FunctionLibrary,
    cfg: ExperimentConfig,
    net: Optional[PolicyValueNet] = None,
    recorder: Optional[SASRecorder] = None,
    round_index: int = 0,
) -> Tuple[List[TrainingExample], SASRecorder]:
    """Run random-simulation episodes over `windows` and collect supervision.

    Without a network the search is uninformed; with one, its policy guides the
    expansion while rewards still come from rollouts. Every rollout is offered to
    the recorder.
    """
    if not windows:
        raise InsufficientDataError("No training windows")
    if recorder is None:
        recorder = SASRecorder.from_config(cfg.sas)

    mode = SearchMode.NoPVN if net is None else SearchMode.NoRewardEstimator
    search = cfg.search_config(mode)
    examples = []  # type: List[TrainingExample]
    for index, window in enumerate(windows):
        for episode in range(cfg.episodes):
            rng = derive_rng(cfg.seed, _TRAIN_STREAM, round_index, index, episode)
            result = run_episode(
                window,
                search,
                net,
                lib,
                rng,
                recorder=recorder if cfg.use_sas else None,
                collect_examples=True,
            )
            examples.extend(result.examples)

    _LOGGER.debug(
        "Round %s: %s examples, %s recorded patterns",
        round_index,
        len(examples),
        len(recorder),
    )
    return examples, recorder


@attr.s
class TrainResult:
    net = attr.ib(type=PolicyValueNet)
    library = attr.ib(type=FunctionLibrary)
    history = attr.ib(factory=list)  # type: List[float]
    n_examples = attr.ib(type=int, default=0)
    n_train_windows = attr.ib(type=int, default=0)
    n_test_windows = attr.ib(type=int, default=0)


def train_on_windows(
    windows: Sequence[TimeSeries],
    cfg: ExperimentConfig,
    lib: Optional[FunctionLibrary] = None,
    progress: bool = False,
) -> TrainResult:
    """Alternate data generation and network epochs, then mine the library."""
    if lib is None:
        lib = FunctionLibrary()
    net = PolicyValueNet.from_config(lib.action_vocabulary, cfg.window, cfg.train)
    recorder = SASRecorder.from_config(cfg.sas)

    history = []  # type: List[float]
    n_examples = 0
    for round_index in range(cfg.rounds):
        guide = net if round_index > 0 else None
        examples, recorder = generate_training_data(
            windows, lib, cfg, guide, recorder, round_index
        )
        n_examples += len(examples)
        rng = derive_rng(cfg.seed, _SHUFFLE_STREAM, round_index)
        with tqdm(
            total=len(examples) * cfg.train.epochs,
            desc="round %s/%s" % (round_index + 1, cfg.rounds),
            disable=not progress,
        ) as bar:
            losses = train_network(net, examples, cfg.train, rng, progress=bar.update)
        history.extend(losses)
        _LOGGER.info(
            "Round %s/%s: %s examples, loss %.6g",
            round_index + 1,
            cfg.rounds,
            len(examples),
            losses[-1],
        )

    if cfg.use_sas:
        lib = mine_top_k(recorder, lib)

    return TrainResult(net, lib, history, n_examples, len(windows))


def train(
    dataset: TimeSeries,
    cfg: ExperimentConfig,
    out_dir: Optional[os.PathLike] = None,
    progress: bool = False,
) -> Tuple[PolicyValueNet, FunctionLibrary]:
    """Train on the earliest windows of `dataset` and optionally persist the result."""
    result = train_dataset(dataset, cfg, out_dir, progress)
    return result.net, result.library


def train_dataset(
    dataset: TimeSeries,
    cfg: ExperimentConfig,
    out_dir: Optional[os.PathLike] = None,
    progress: bool = False,
) -> TrainResult:
    windows = sliding_windows(dataset, cfg.window, cfg.effective_stride)
    train_windows, test_windows = split_windows(windows, cfg.train_fraction)
    _LOGGER.info("Training on %s of %s windows", len(train_windows), len(windows))

    result = train_on_windows(train_windows, cfg, progress=progress)
    result.n_test_windows = len(test_windows)
    if out_dir is not None:
        save_artifacts(result.net, result.library, out_dir, cfg.sas)
    return result


def save_artifacts(
    net: PolicyValueNet,
    lib: FunctionLibrary,
    out_dir: os.PathLike,
    sas: SASConfig = SASConfig(),
) -> Tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    weights = os.path.join(out_dir, WEIGHTS_FILENAME)
    library = os.path.join(out_dir, LIBRARY_FILENAME)
    save_weights(net, weights)
    save_library(lib, library, sas)
    _LOGGER.info("Saved weights to %s and library to %s", weights, library)
    return weights, library


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def summarize(results: Sequence[FitResult]) -> Dict:
    """Mean metrics and average time cost of window fits."""
    total = sum(r.elapsed_seconds for r in results)
    return {
        "windows": len(results),
        "mean_r2": _mean([r.r2 for r in results]),
        "mean_corr": _mean([r.corr for r in results]),
        "mean_reward": _mean([r.reward for r in results]),
        "mean_steps": _mean([r.steps for r in results]),
        "atc": atc(total, len(results)) if results else None,
        "elapsed_seconds": total,
    }


@attr.s
class EvaluationReport:
    rows = attr.ib(factory=list)  # type: List[Dict]
    summary = attr.ib(factory=dict)  # type: Dict
    results = attr.ib(factory=list, repr=False)  # type: List[FitResult]


def fit_windows(
    windows: Sequence[TimeSeries],
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    cfg: ExperimentConfig,
    search: Optional[SearchConfig] = None,
    first_index: int = 0,
) -> List[FitResult]:
    """Fit every window, concurrently when more than one worker is configured.

    Random generators are derived from the window index, so results do not depend
    on scheduling.
    """
    if search is None:
        search = cfg.search_config()

    def fit(item):
        index, window = item
        rng = derive_rng(cfg.seed, _FIT_STREAM, index)
        return fit_series(window, net, lib, cfg, rng, search)

    items = list(enumerate(windows, start=first_index))
    if cfg.workers == 1:
        return [fit(item) for item in items]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fit, items))


def evaluate_windows(
    windows: Sequence[TimeSeries],
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    cfg: ExperimentConfig,
    first_index: int = 0,
) -> EvaluationReport:
    if not windows:
        raise InsufficientDataError("No test windows")

    results = fit_windows(windows, net, lib, cfg, first_index=first_index)
    rows = []
    for index, result in enumerate(results, start=first_index):
        row = result.as_record(include_timing=True)
        row["window"] = index
        rows.append(row)

    summary = summarize(results)
    summary["window_length"] = cfg.window
    _LOGGER.info(
        "Evaluated %s windows: mean R2 %s, ATC %.4gs",
        summary["windows"],
        summary["mean_r2"],
        summary["atc"],
    )
    return EvaluationReport(rows, summary, list(results))


def evaluate(
    dataset: TimeSeries,
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    cfg: ExperimentConfig,
) -> EvaluationReport:
    """Fit every test window of `dataset` and aggregate the metrics."""
    windows = sliding_windows(dataset, cfg.window, cfg.effective_stride)
    train_windows, test_windows = split_windows(windows, cfg.train_fraction)
    return evaluate_windows(test_windows, net, lib, cfg, first_index=len(train_windows))


@attr.s
class Extrapolation:
    fit = attr.ib(type=FitResult)
    timestamps = attr.ib(type=np.ndarray)
    predictions = attr.ib(type=np.ndarray)
    actual = attr.ib(type=np.ndarray)
    r2 = attr.ib(type=Optional[float])
    corr = attr.ib(type=Optional[float])

    def as_record(self, include_timing: bool = False) -> Dict:
        return {
            "fit": self.fit.as_record(include_timing),
            "timestamps": [float(t) for t in self.timestamps],
            "predictions": [float(v) for v in self.predictions],
            "actual": [float(v) for v in self.actual],
            "r2": self.r2,
            "corr": self.corr,
        }


def extrapolate(
    series: TimeSeries,
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    cfg: ExperimentConfig,
    rng: Optional[np.random.Generator] = None,
) -> Extrapolation:
    """Fit the first `fit_length` samples and predict the next `horizon` ones."""
    needed = cfg.fit_length + cfg.horizon
    if len(series) < needed:
        raise InsufficientDataError(
            "Extrapolation needs %s samples, got %s" % (needed, len(series))
        )

    fitted = fit_series(series.slice(0, cfg.fit_length), net, lib, cfg, rng)
    timestamps = series.timestamps[cfg.fit_length : needed]
    actual = series.values[cfg.fit_length : needed]
    predictions = fitted.predict(timestamps)

    r2 = correlation = None
    if np.all(np.isfinite(predictions)):
        try:
            r2 = r_squared(predictions, actual)
        except UndefinedVarianceError:
            _LOGGER.warning("R2 is undefined on the horizon")
        try:
            correlation = corr(predictions, actual)
        except UndefinedVarianceError:
            _LOGGER.warning("Correlation is undefined on the horizon")
    else:
        _LOGGER.warning("Predictions are not finite on the horizon")

    return Extrapolation(fitted, timestamps, predictions, actual, r2, correlation)


def bench(
    windows: Sequence[TimeSeries],
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    cfg: ExperimentConfig,
    modes: Sequence[str] = ("full", "no_re"),
) -> List[Dict]:
    """Fit the same windows under several modes.

    Returns one row per mode with ATC, simulation steps, mean R2 and the ratios of
    ATC and steps to the full mode (when it is part of the comparison).
    """
    if not windows:
        raise InsufficientDataError("No windows to benchmark")

    rows = []
    for mode in modes:
        if needs_network(mode) and net is None:
            raise ConfigurationError("Mode %s needs network weights" % mode)

        mode_cfg = attr.evolve(cfg, mode=mode)
        counter = StepCounter()
        search = mode_cfg.search_config(step_counter=counter)
        results = fit_windows(windows, net, lib, mode_cfg, search)
        summary = summarize(results)
        rows.append(
            {
                "mode": mode,
                "windows": summary["windows"],
                "atc": summary["atc"],
                "steps": counter.steps,
                "mean_r2": summary["mean_r2"],
                "mean_corr": summary["mean_corr"],
                "phase_seconds": dict(counter.phase_seconds),
            }
        )
        _LOGGER.info("%s: ATC %.4gs, %s steps", mode, summary["atc"], counter.steps)

    full = next((row for row in rows if row["mode"] == "full"), None)
    for row in rows:
        if full is None:
            break
        row["atc_ratio"] = row["atc"] / full["atc"] if full["atc"] else None
        row["steps_ratio"] = row["steps"] / full["steps"] if full["steps"] else None

    return rows
