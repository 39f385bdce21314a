"""Run configuration.

Settings are addressed by flat dotted keys such as ``search.c`` or ``sas.k``; keys
without a section belong to the experiment itself (``seed``, ``window``, ...). A
configuration file is a YAML mapping of such keys, nested mappings are accepted as
well::

    seed: 7
    search.c: 1.4
    optimizer:
      n_restarts: 3

Values are layered: built-in defaults, then the configuration file, then command
line options.
"""
import logging
import os
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

import attr
import yaml
from appdirs import user_data_dir

from .exceptions import ConfigurationError
from .library import SASConfig
from .mcts import SearchConfig
from .metrics import RewardConfig
from .optimizer import OptimizerConfig
from .pipeline import ExperimentConfig
from .pvnet import TrainConfig

_LOGGER = logging.getLogger(__name__)

APP_NAME = "python-tsexpr"

_NESTED = ("search", "optimizer", "train", "sas")
_SEARCH_MANAGED = (
    "mode",
    "iterations_per_episode",
    "reward",
    "rollout_optimizer",
    "step_counter",
)

# section -> configuration class
SECTIONS = {
    "": ExperimentConfig,
    "search": SearchConfig,
    "reward": RewardConfig,
    "optimizer": OptimizerConfig,
    "rollout": OptimizerConfig,
    "train": TrainConfig,
    "sas": SASConfig,
}


def _fields(section: str) -> Tuple[str, ...]:
    names = [a.name for a in attr.fields(SECTIONS[section])]
    if section == "":
        return tuple(n for n in names if n not in _NESTED)
    if section == "search":
        return tuple(n for n in names if n not in _SEARCH_MANAGED)
    return tuple(names)


def config_keys() -> Tuple[str, ...]:
    """All accepted dotted keys."""
    keys = []
    for section in SECTIONS:
        keys.extend(
            name if not section else "%s.%s" % (section, name)
            for name in _fields(section)
        )
    return tuple(sorted(keys))


def default_artifact_dir() -> str:
    return user_data_dir(APP_NAME)


def flatten(values: Mapping, prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in values.items():
        name = "%s.%s" % (prefix, key) if prefix else str(key)
        if isinstance(value, Mapping):
            flat.update(flatten(value, name))
        else:
            flat[name] = value
    return flat


def load_config_file(path: os.PathLike) -> Dict[str, Any]:
    """Read a YAML configuration file into flat dotted keys."""
    _LOGGER.debug("Reading configuration from %s", path)
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as ex:
        raise ConfigurationError("Unable to read %s: %s" % (path, ex)) from ex

    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigurationError("%s does not contain a mapping" % path)
    values = flatten(data)
    check_keys(values)
    return values


def parse_override(text: str) -> Tuple[str, Any]:
    """Parse ``key=value``; the value is interpreted as a YAML scalar."""
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigurationError("Expected key=value, got %r" % text)
    try:
        parsed = yaml.safe_load(value) if value.strip() else None
    except yaml.YAMLError as ex:
        raise ConfigurationError("Invalid value for %s: %s" % (key, ex)) from ex
    return key, parsed


def check_keys(values: Iterable[str]) -> None:
    known = set(config_keys())
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError("Unknown configuration keys: %s" % ", ".join(unknown))


def build_experiment(values: Mapping[str, Any]) -> ExperimentConfig:
    """Create the experiment configuration from flat dotted keys."""
    check_keys(values)
    grouped = {section: {} for section in SECTIONS}  # type: Dict[str, Dict[str, Any]]
    for key, value in values.items():
        section, _, name = key.rpartition(".")
        grouped[section][name] = value

    try:
        search = SearchConfig(
            reward=RewardConfig(**grouped["reward"]),
            rollout_optimizer=OptimizerConfig.fast(**grouped["rollout"]),
            **grouped["search"]
        )
        return ExperimentConfig(
            search=search,
            optimizer=OptimizerConfig(**grouped["optimizer"]),
            train=TrainConfig(**grouped["train"]),
            sas=SASConfig(**grouped["sas"]),
            **grouped[""]
        )
    except (TypeError, ValueError) as ex:
        raise ConfigurationError("Invalid configuration: %s" % ex) from ex


@attr.s(frozen=True)
class RunConfig:
    """Everything a command needs besides its input data."""

    command = attr.ib(type=str)
    experiment = attr.ib(type=ExperimentConfig, factory=ExperimentConfig)
    input = attr.ib(type=Optional[str], default=None)
    out = attr.ib(type=Optional[str], default=None)
    model = attr.ib(type=Optional[str], default=None)
    library = attr.ib(type=Optional[str], default=None)
    options = attr.ib(factory=dict)  # type: Dict[str, Any]

    @property
    def mode(self) -> str:
        return self.experiment.mode

    def as_dict(self) -> Dict:
        return {
            "command": self.command,
            "input": self.input,
            "out": self.out,
            "model": self.model,
            "library": self.library,
            "options": dict(self.options),
            "experiment": self.experiment.as_dict(),
        }


def resolve(
    file_values: Mapping[str, Any],
    overrides: Iterable[Tuple[str, Any]] = (),
    options: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Layer file values, ``--set`` overrides and named options.

    Options which are None were not given and do not override anything.
    """
    values = dict(file_values)
    values.update(overrides)
    if options:
        values.update({k: v for k, v in options.items() if v is not None})
    return build_experiment(values)
