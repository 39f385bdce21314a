import attr
import numpy as np
import pytest

from tsexpr.exceptions import ConfigurationError, InsufficientDataError
from tsexpr.expr import parse_prefix
from tsexpr.datasets import synth
from tsexpr.library import FunctionLibrary, load_library, mine_top_k
from tsexpr.mcts import SearchMode
from tsexpr.pipeline import (
    LIBRARY_FILENAME,
    WEIGHTS_FILENAME,
    ExperimentConfig,
    bench,
    default_iterations,
    evaluate,
    evaluate_windows,
    extrapolate,
    fit_series,
    fit_windows,
    generate_training_data,
    library_for_mode,
    needs_network,
    search_mode,
    sliding_windows,
    split_windows,
    summarize,
    train,
    train_on_windows,
)
from tsexpr.pvnet import TrainConfig, load_weights
from tsexpr.timeseries import TimeSeries

from .dummies import DummyPolicyValueNet

SMALL = TrainConfig(
    embedding_dim=4, hidden_dim=8, trunk_layers=1, conv_levels=2, epochs=1
)


@pytest.fixture
def linear():
    t = np.arange(40, dtype=float)
    return TimeSeries(t, 0.5 * t + 2)


@pytest.fixture
def cfg():
    return ExperimentConfig(
        window=10, iterations=8, mode="no_pvn", rounds=1, train=SMALL
    )


def test_default_iterations():
    assert default_iterations(36) == 200
    assert default_iterations(72) == 300
    assert ExperimentConfig(window=72).effective_iterations == 300
    assert ExperimentConfig(window=72, iterations=5).effective_iterations == 5


@pytest.mark.parametrize(
    "kwargs",
    [
        {"mode": "fast"},
        {"train_fraction": 1.0},
        {"train_fraction": 0},
        {"window": 0},
        {"fit_length": 1},
        {"workers": 0},
    ],
)
def test_invalid_experiment(kwargs):
    with pytest.raises(ValueError):
        ExperimentConfig(**kwargs)


def test_modes():
    assert search_mode("no_sas") is SearchMode.Full
    assert search_mode("no_ps") is SearchMode.NoPolicySelector
    assert needs_network("full")
    assert needs_network("no_sas")
    assert not needs_network("no_pvn")


def test_library_for_mode():
    lib = FunctionLibrary().with_entries([])
    assert library_for_mode(lib, "full") is lib
    assert not library_for_mode(lib, "no_sas").augmented_entries


def test_search_config(cfg):
    search = cfg.search_config()
    assert search.mode is SearchMode.NoPVN
    assert search.iterations_per_episode == 8

    search = cfg.search_config(SearchMode.Full)
    assert search.mode is SearchMode.Full


def test_as_dict_is_plain(cfg):
    values = cfg.as_dict()
    assert values["mode"] == "no_pvn"
    assert values["search"]["mode"] == "no_pvn"
    assert values["search"]["iterations_per_episode"] == 8
    assert values["train"]["kl_direction"] == "prior-target"
    assert "step_counter" not in values["search"]


def test_sliding_windows(linear):
    windows = sliding_windows(linear, 10)
    assert len(windows) == 4
    np.testing.assert_array_equal(windows[1].timestamps, np.arange(10.0))
    np.testing.assert_array_equal(windows[1].values, linear.values[10:20])

    assert len(sliding_windows(linear, 10, stride=5)) == 7
    with pytest.raises(InsufficientDataError):
        sliding_windows(linear, 41)


def test_split_windows(linear):
    windows = sliding_windows(linear, 4)
    train, test = split_windows(windows, 0.1)
    assert len(train) == 1
    assert len(test) == 9

    train, test = split_windows(windows, 0.5)
    assert len(train) == 5
    with pytest.raises(InsufficientDataError):
        split_windows([], 0.5)


def test_fit_series(linear, cfg):
    result = fit_series(linear.slice(0, 10), None, FunctionLibrary(), cfg)

    assert 0.0 <= result.reward <= 1.0
    assert parse_prefix(result.backbone).is_complete
    assert len(result.coefficients) == result.tree.n_coefficients
    assert result.steps > 0
    record = result.as_record()
    assert "elapsed_seconds" not in record
    assert "elapsed_seconds" in result.as_record(include_timing=True)


def test_fit_series_is_deterministic(linear, cfg):
    window = linear.slice(0, 10)
    first = fit_series(window, None, FunctionLibrary(), cfg)
    second = fit_series(window, None, FunctionLibrary(), cfg)
    assert first.as_record() == second.as_record()


def test_fit_series_normalized(linear, cfg):
    cfg = attr.evolve(cfg, normalize=True)
    result = fit_series(linear.slice(0, 10), None, FunctionLibrary(), cfg)

    assert result.scale == pytest.approx(np.std(linear.values[:10]))
    assert result.offset == pytest.approx(np.mean(linear.values[:10]))
    assert "scale" in result.as_record()
    assert result.predict(np.arange(10.0)).shape == (10,)


def test_fit_constant_series(cfg):
    series = TimeSeries.from_values(np.full(10, 5.0))
    cfg = attr.evolve(cfg, iterations=20)
    result = fit_series(series, None, FunctionLibrary(), cfg)

    np.testing.assert_allclose(result.predict(series.timestamps), 5.0, atol=1e-9)
    assert result.r2 == 1.0
    assert result.corr is None
    assert result.flags == ("constant-series", "corr-undefined")


def test_generate_training_data(linear, cfg):
    windows = sliding_windows(linear, 10)[:2]
    examples, recorder = generate_training_data(windows, FunctionLibrary(), cfg)

    assert len(examples) == 2 * cfg.effective_iterations
    assert recorder.k == cfg.sas.k
    with pytest.raises(InsufficientDataError):
        generate_training_data([], FunctionLibrary(), cfg)


def test_train_on_windows(linear, cfg):
    windows = sliding_windows(linear, 10)[:1]
    result = train_on_windows(windows, attr.evolve(cfg, rounds=2))

    assert len(result.history) == 2 * SMALL.epochs
    assert result.n_examples == 2 * cfg.effective_iterations
    assert result.net.window == 10
    assert len(result.library.augmented_entries) <= cfg.sas.k


def test_train_writes_artifacts(tmp_path, linear, cfg):
    net, lib = train(linear, cfg, tmp_path)

    loaded = load_weights(tmp_path / WEIGHTS_FILENAME, lib.action_vocabulary)
    np.testing.assert_array_equal(loaded.flat_parameters(), net.flat_parameters())
    assert load_library(tmp_path / LIBRARY_FILENAME) == lib


def test_train_without_augmentation(linear, cfg):
    cfg = attr.evolve(cfg, mode="no_sas")
    _, lib = train(linear, cfg)
    assert not lib.augmented_entries


def test_fit_windows_with_workers(linear, cfg):
    windows = sliding_windows(linear, 10)
    serial = fit_windows(windows, None, FunctionLibrary(), cfg)
    parallel = fit_windows(
        windows, None, FunctionLibrary(), attr.evolve(cfg, workers=3)
    )
    assert [r.as_record() for r in serial] == [r.as_record() for r in parallel]


def test_evaluate(linear, cfg):
    report = evaluate(linear, None, FunctionLibrary(), cfg)

    assert len(report.rows) == 3
    assert [row["window"] for row in report.rows] == [1, 2, 3]
    assert all("elapsed_seconds" in row for row in report.rows)
    assert report.summary["windows"] == 3
    assert report.summary["window_length"] == 10
    assert report.summary["atc"] == pytest.approx(
        sum(r.elapsed_seconds for r in report.results) / 3
    )


def test_evaluate_without_test_windows(cfg):
    with pytest.raises(InsufficientDataError):
        evaluate_windows([], None, FunctionLibrary(), cfg)


def test_summarize_skips_undefined_metrics(linear, cfg):
    results = fit_windows(sliding_windows(linear, 10)[:2], None, FunctionLibrary(), cfg)
    results[0] = attr.evolve(results[0], r2=None)

    summary = summarize(results)
    assert summary["mean_r2"] == results[1].r2
    assert summary["windows"] == 2


def test_extrapolate(linear, cfg):
    cfg = attr.evolve(cfg, fit_length=12, horizon=4)
    result = extrapolate(linear, None, FunctionLibrary(), cfg)

    np.testing.assert_array_equal(result.timestamps, [12.0, 13.0, 14.0, 15.0])
    np.testing.assert_array_equal(result.actual, linear.values[12:16])
    assert result.predictions.shape == (4,)
    record = result.as_record()
    assert len(record["predictions"]) == 4
    assert "elapsed_seconds" not in record["fit"]


def test_extrapolate_needs_enough_samples(cfg):
    series = TimeSeries.from_values(np.arange(20.0))
    with pytest.raises(InsufficientDataError):
        extrapolate(series, None, FunctionLibrary(), cfg)


def test_bench(linear, cfg):
    windows = sliding_windows(linear, 10)[:1]
    net = DummyPolicyValueNet()
    rows = bench(windows, net, FunctionLibrary(), cfg, modes=("full", "no_re"))

    full, no_re = rows
    assert full["mode"] == "full"
    assert full["steps"] == cfg.effective_iterations
    assert no_re["steps"] > full["steps"]
    assert full["steps_ratio"] == 1.0
    assert no_re["steps_ratio"] > 1.0
    assert set(full["phase_seconds"]) == {
        "selection",
        "expansion",
        "simulation",
        "backpropagation",
    }


def test_bench_needs_network(linear, cfg):
    windows = sliding_windows(linear, 10)[:1]
    with pytest.raises(ConfigurationError):
        bench(windows, None, FunctionLibrary(), cfg, modes=("no_pvn", "full"))

    rows = bench(windows, None, FunctionLibrary(), cfg, modes=("no_pvn",))
    assert "steps_ratio" not in rows[0]


def test_fit_series_predicts_with_fitted_coefficients(cfg):
    t = np.arange(10, dtype=float)
    series = TimeSeries(t, 2 * t + 1)
    cfg = attr.evolve(cfg, iterations=12)
    result = fit_series(series, None, FunctionLibrary(), cfg)

    assert result.steps > 0
    predicted = result.predict(t)
    assert predicted.shape == (10,)
    assert np.all(np.isfinite(predicted))
    expected_error = np.sum(np.abs(predicted - series.values))
    assert result.reward == pytest.approx(
        0.99 ** result.tree.size / (1 + expected_error)
    )


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_recovers_linear_series(seed):
    t = np.arange(36, dtype=float)
    cfg = ExperimentConfig(window=36, iterations=200, mode="no_pvn", seed=seed)
    result = fit_series(TimeSeries(t, 2 * t + 1), None, FunctionLibrary(), cfg)
    assert result.r2 >= 0.99


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_recovers_sine_with_trend(seed):
    cfg = ExperimentConfig(window=36, iterations=500, mode="no_pvn", seed=seed)
    result = fit_series(synth("sine-plus-trend", 36), None, FunctionLibrary(), cfg)
    assert result.r2 >= 0.95


def test_extrapolates_linear_series():
    t = np.arange(36, dtype=float)
    cfg = ExperimentConfig(mode="no_pvn", fit_length=30, horizon=6)
    result = extrapolate(TimeSeries(t, 0.5 * t), None, FunctionLibrary(), cfg)
    assert result.r2 >= 0.99


def test_extrapolates_sine():
    t = np.arange(36, dtype=float)
    cfg = ExperimentConfig(mode="no_pvn", fit_length=30, horizon=6)
    result = extrapolate(TimeSeries(t, np.sin(0.3 * t)), None, FunctionLibrary(), cfg)
    assert result.corr >= 0.8


def test_estimates_cut_simulation_steps():
    series = synth("sine-plus-trend", 40, noise=0.3, seed=1)
    windows = sliding_windows(series, 20)
    cfg = ExperimentConfig(window=20, iterations=200, mode="full")
    assert cfg.search.max_length == 20

    full, no_re = bench(
        windows, DummyPolicyValueNet(), FunctionLibrary(), cfg, ("full", "no_re")
    )
    assert full["steps"] == 200 * len(windows)
    assert no_re["steps_ratio"] >= 5
    assert full["atc"] < no_re["atc"]


def test_mining_finds_planted_pattern():
    t = np.arange(10, dtype=float)
    window = TimeSeries(t, 2.5 * t)
    found = 0
    for seed in range(3):
        cfg = ExperimentConfig(window=10, iterations=200, mode="no_pvn", seed=seed)
        _, recorder = generate_training_data([window, window], FunctionLibrary(), cfg)
        lib = mine_top_k(recorder, FunctionLibrary())
        keys = {entry.key for entry in lib.augmented_entries}
        found += bool(keys & {"mul C t", "mul t C"})
    assert found >= 2


def test_policy_selector_helps():
    t = np.arange(12, dtype=float)
    net = DummyPolicyValueNet(guide="add mul C t C")
    scores = {"full": [], "no_ps": []}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        window = TimeSeries(t, rng.uniform(0.5, 3.0) * t + rng.uniform(-2.0, 2.0))
        for mode, values in scores.items():
            cfg = ExperimentConfig(window=12, iterations=150, mode=mode, seed=seed)
            result = fit_series(window, net, FunctionLibrary(), cfg)
            if result.r2 is not None:
                values.append(result.r2)

    assert len(scores["full"]) == 20
    assert min(scores["full"]) >= 0.99
    if scores["no_ps"]:
        assert np.mean(scores["full"]) >= np.mean(scores["no_ps"]) - 1e-9
