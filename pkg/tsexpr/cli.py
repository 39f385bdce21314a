import io
import logging
import os
import sys
from typing import Dict, Iterator, Optional, Tuple

import click

from . import __version__
from .click_common import (
    ExceptionHandlerGroup,
    GlobalContextObject,
    header_record,
    json_lines,
    validate_override,
)
from .config import (
    RunConfig,
    default_artifact_dir,
    load_config_file,
    resolve,
)
from .datasets import dump_csv, ingest_csv, synth, write_csv, write_curve
from .exceptions import ConfigurationError
from .library import FunctionLibrary, load_library
from .pipeline import (
    LIBRARY_FILENAME,
    MODES,
    WEIGHTS_FILENAME,
    bench,
    evaluate,
    extrapolate,
    fit_series,
    needs_network,
    sliding_windows,
    split_windows,
    train_dataset,
)
from .pvnet import PolicyValueNet, load_weights

_LOGGER = logging.getLogger(__name__)

# option name -> configuration key
CORE_OPTIONS = {
    "seed": "seed",
    "window": "window",
    "mode": "mode",
    "iterations": "iterations",
    "eta": "reward.eta",
    "topk": "sas.k",
    "workers": "workers",
    "fit_length": "fit_length",
    "horizon": "horizon",
}

pass_global = click.make_pass_decorator(GlobalContextObject, ensure=True)


def experiment_options(func):
    """Add the core experiment flags to a command."""
    options = [
        click.option("--seed", type=int, default=None, help="Master random seed."),
        click.option(
            "--window", type=click.IntRange(min=2), default=None, help="Window length."
        ),
        click.option("--mode", type=click.Choice(MODES), default=None),
        click.option(
            "--iterations",
            type=click.IntRange(min=1),
            default=None,
            help="Search iterations per episode.",
        ),
        click.option("--eta", type=float, default=None, help="Reward size penalty."),
        click.option(
            "--topk",
            type=click.IntRange(min=1),
            default=None,
            help="Number of mined library entries.",
        ),
        click.option(
            "--workers",
            type=click.IntRange(min=1),
            default=None,
            help="Concurrent window fits.",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def artifact_options(func):
    func = click.option(
        "--library",
        type=click.Path(dir_okay=False),
        default=None,
        help="Library file, defaults to the one stored next to the weights.",
    )(func)
    func = click.option(
        "--model",
        type=click.Path(),
        default=None,
        help="Weights file or training output directory.",
    )(func)
    return func


def run_config(
    ctx: GlobalContextObject, command: str, core: Dict, **kwargs
) -> RunConfig:
    """Layer the core flags over the group level configuration."""
    options = {CORE_OPTIONS[name]: value for name, value in core.items()}
    experiment = resolve(ctx.values, ctx.overrides, options)
    return RunConfig(command, experiment, **kwargs)


def _weights_path(model: str) -> str:
    if os.path.isdir(model):
        return os.path.join(model, WEIGHTS_FILENAME)
    return model


def load_artifacts(
    cfg: RunConfig, modes: Tuple[str, ...] = (), untrained: bool = False
) -> Tuple[Optional[PolicyValueNet], FunctionLibrary]:
    """Load the library and, if any of the modes uses it, the network.

    Modes which need a network fail here, before any data is read.
    """
    modes = modes or (cfg.mode,)
    weights = _weights_path(cfg.model) if cfg.model else None

    library = cfg.library
    if library is None and weights is not None:
        sibling = os.path.join(os.path.dirname(weights), LIBRARY_FILENAME)
        if os.path.isfile(sibling):
            library = sibling
    lib = load_library(library) if library else FunctionLibrary()
    if library:
        _LOGGER.info(
            "Using library %s with %s entries", library, len(lib.augmented_entries)
        )

    if not any(needs_network(mode) for mode in modes):
        if weights is not None:
            _LOGGER.debug("Mode %s does not use network weights", cfg.mode)
        return None, lib

    if weights is None or not os.path.isfile(weights):
        if untrained:
            _LOGGER.warning("No weights given, using an untrained network")
            experiment = cfg.experiment
            net = PolicyValueNet.from_config(
                lib.action_vocabulary, experiment.window, experiment.train
            )
            return net, lib
        raise ConfigurationError(
            "Mode %s needs network weights: %s"
            % (
                next(mode for mode in modes if needs_network(mode)),
                "pass --model" if weights is None else "%s does not exist" % weights,
            )
        )

    net = load_weights(weights, lib.action_vocabulary)
    if net.window != cfg.experiment.window:
        _LOGGER.warning(
            "Network was trained on windows of %s, using it for %s",
            net.window,
            cfg.experiment.window,
        )
    return net, lib


def _train(cfg: RunConfig) -> Iterator[Dict]:
    dataset = ingest_csv(cfg.input)
    yield header_record(cfg.command, cfg.as_dict())

    result = train_dataset(
        dataset, cfg.experiment, cfg.out, progress=sys.stderr.isatty()
    )
    yield {
        "record": "summary",
        "weights": os.path.join(cfg.out, WEIGHTS_FILENAME),
        "library": os.path.join(cfg.out, LIBRARY_FILENAME),
        "train_windows": result.n_train_windows,
        "test_windows": result.n_test_windows,
        "examples": result.n_examples,
        "losses": list(result.history),
        "augmented_entries": [e.key for e in result.library.augmented_entries],
    }


def _fit(cfg: RunConfig) -> Iterator[Dict]:
    net, lib = load_artifacts(cfg)
    series = ingest_csv(cfg.input)
    yield header_record(cfg.command, cfg.as_dict())

    result = fit_series(series, net, lib, cfg.experiment)
    curve = cfg.options.get("curve")
    if curve:
        write_curve(series, result.predict(series.timestamps), curve)
        _LOGGER.info("Wrote fitted curve to %s", curve)

    record = {"record": "fit"}
    record.update(result.as_record(include_timing=cfg.options.get("timing", False)))
    yield record


def _evaluate(cfg: RunConfig) -> Iterator[Dict]:
    net, lib = load_artifacts(cfg)
    series = ingest_csv(cfg.input)
    yield header_record(cfg.command, cfg.as_dict())

    report = evaluate(series, net, lib, cfg.experiment)
    for row in report.rows:
        record = {"record": "window"}
        record.update(row)
        yield record
    summary = {"record": "summary"}
    summary.update(report.summary)
    yield summary


def _extrapolate(cfg: RunConfig) -> Iterator[Dict]:
    net, lib = load_artifacts(cfg)
    series = ingest_csv(cfg.input)
    yield header_record(cfg.command, cfg.as_dict())

    result = extrapolate(series, net, lib, cfg.experiment)
    record = {"record": "extrapolation"}
    record.update(result.as_record(include_timing=cfg.options.get("timing", False)))
    yield record


def _bench(cfg: RunConfig) -> Iterator[Dict]:
    modes = tuple(cfg.options.get("modes") or ("full", "no_re"))
    net, lib = load_artifacts(cfg, modes, untrained=cfg.options.get("untrained", False))
    series = ingest_csv(cfg.input)
    yield header_record(cfg.command, cfg.as_dict())

    experiment = cfg.experiment
    windows = sliding_windows(series, experiment.window, experiment.effective_stride)
    _, test_windows = split_windows(windows, experiment.train_fraction)
    rows = bench(test_windows, net, lib, experiment, modes)
    for row in rows:
        record = {"record": "bench"}
        record.update(row)
        yield record
    yield {
        "record": "summary",
        "modes": list(modes),
        "windows": len(test_windows),
    }


COMMANDS = {
    "train": _train,
    "fit": _fit,
    "evaluate": _evaluate,
    "extrapolate": _extrapolate,
    "bench": _bench,
}


def run(cfg: RunConfig) -> Iterator[Dict]:
    """Execute a command, yielding its report records."""
    try:
        command = COMMANDS[cfg.command]
    except KeyError:
        raise ConfigurationError("Unknown command %r" % cfg.command) from None
    _LOGGER.debug("Running %s", cfg)
    yield from command(cfg)


@click.group(cls=ExceptionHandlerGroup)
@click.option("-d", "--debug", default=False, count=True)
@click.option(
    "--config",
    "config_file",
    type=click.Path(dir_okay=False),
    default=None,
    help="YAML file of configuration keys.",
)
@click.option(
    "--set",
    "overrides",
    multiple=True,
    callback=validate_override,
    metavar="KEY=VALUE",
    help="Override a configuration key.",
)
@click.version_option(version=__version__)
@click.pass_context
def cli(ctx, debug: int, config_file: Optional[str], overrides):
    if debug:
        logging.basicConfig(level=logging.DEBUG)
        _LOGGER.info("Debug mode active")
    else:
        logging.basicConfig(level=logging.INFO)

    values = load_config_file(config_file) if config_file else {}
    ctx.obj = GlobalContextObject(debug=debug, values=values, overrides=overrides)


@cli.command(name="synth")
@click.argument("generator", type=str)
@click.option("--n", "length", type=click.IntRange(min=1), default=100)
@click.option("--noise", type=float, default=0.0)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def synth_command(generator: str, length: int, noise: float, seed: int, out):
    """Generate a synthetic series as timestamp,value CSV.

    Known generators: linear, sine, sine-plus-trend, log-trend and fig1, which is also
    available as log-power-cosine.
    """
    series = synth(generator, length, noise=noise, seed=seed)
    if out:
        write_csv(series, out)
        _LOGGER.info("Wrote %s samples of %s to %s", length, generator, out)
    else:
        buffer = io.StringIO()
        dump_csv(series, buffer)
        click.echo(buffer.getvalue(), nl=False)


@cli.command(name="train")
@click.option(
    "--input",
    "input_path",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
)
@click.option(
    "--out",
    type=click.Path(file_okay=False),
    default=None,
    help="Output directory, defaults to the per-user data directory.",
)
@experiment_options
@pass_global
@json_lines
def train_command(obj: GlobalContextObject, input_path: str, out, **core):
    """Train the network and mine the function library."""
    cfg = run_config(
        obj,
        "train",
        core,
        input=input_path,
        out=out or default_artifact_dir(),
    )
    return run(cfg)


@cli.command(name="fit")
@click.option(
    "--input",
    "input_path",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
)
@artifact_options
@click.option(
    "--curve",
    type=click.Path(dir_okay=False),
    default=None,
    help="Write t,value,fitted rows to this file.",
)
@click.option("--timing", is_flag=True, default=False, help="Report elapsed time.")
@experiment_options
@pass_global
@json_lines
def fit_command(obj, input_path, model, library, curve, timing, **core):
    """Fit an expression to a whole series."""
    cfg = run_config(
        obj,
        "fit",
        core,
        input=input_path,
        model=model,
        library=library,
        options={"curve": curve, "timing": timing},
    )
    return run(cfg)


@cli.command(name="evaluate")
@click.option(
    "--input",
    "input_path",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
)
@artifact_options
@experiment_options
@pass_global
@json_lines
def evaluate_command(obj, input_path, model, library, **core):
    """Fit every test window of a series and report the mean metrics."""
    cfg = run_config(
        obj, "evaluate", core, input=input_path, model=model, library=library
    )
    return run(cfg)


@cli.command(name="extrapolate")
@click.option(
    "--input",
    "input_path",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
)
@artifact_options
@click.option("--fit-length", type=click.IntRange(min=2), default=None)
@click.option("--horizon", type=click.IntRange(min=1), default=None)
@click.option("--timing", is_flag=True, default=False, help="Report elapsed time.")
@experiment_options
@pass_global
@json_lines
def extrapolate_command(
    obj, input_path, model, library, fit_length, horizon, timing, **core
):
    """Fit the start of a series and predict the following samples."""
    core.update({"fit_length": fit_length, "horizon": horizon})
    cfg = run_config(
        obj,
        "extrapolate",
        core,
        input=input_path,
        model=model,
        library=library,
        options={"timing": timing},
    )
    return run(cfg)


@cli.command(name="bench")
@click.option(
    "--input",
    "input_path",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
)
@artifact_options
@click.option(
    "--modes",
    type=click.Choice(MODES),
    multiple=True,
    help="Modes to compare, full and no_re by default.",
)
@click.option(
    "--untrained",
    is_flag=True,
    default=False,
    help="Use a freshly initialised network when no weights are given.",
)
@experiment_options
@pass_global
@json_lines
def bench_command(obj, input_path, model, library, modes, untrained, **core):
    """Compare time cost and simulation steps of several modes."""
    cfg = run_config(
        obj,
        "bench",
        core,
        input=input_path,
        model=model,
        library=library,
        options={"modes": list(modes), "untrained": untrained},
    )
    return run(cfg)


def create_cli():
    return cli(auto_envvar_prefix="TSEXPR")


if __name__ == "__main__":
    create_cli()
