"""Monte-Carlo tree search over expression paths.

Every iteration selects a node by PUCT (or UCB) scores, expands one untried action,
estimates the reward of the new node and back-propagates it to the root. Depending
on the :class:`SearchMode`, the policy-value network provides the expansion priors
and/or the reward estimate; otherwise priors are uniform and rewards come from random
rollouts whose coefficients are fitted to the series.
"""
import enum
import logging
import math
import threading
import time
from contextlib import contextmanager
from typing import Dict, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from .exceptions import (
    ConfigurationError,
    ContractViolationError,
    ExpansionExhaustedError,
    TerminalNodeError,
)
from .expr import (
    ExpressionPath,
    Symbol,
    SymbolKind,
    autocomplete,
    eligible_symbols,
    push_token,
    to_prefix,
    to_tree,
)
from .library import (
    AUGMENTED_TOKEN_ID,
    FunctionLibrary,
    SASRecorder,
    record,
    sample_entry,
    sample_uniform,
)
from .metrics import RewardConfig, reward_from_error
from .optimizer import OptimizerConfig, fit_coefficients
from .pvnet import PolicyValueNet, TrainingExample
from .timeseries import TimeSeries

_LOGGER = logging.getLogger(__name__)

TARGET_OFFSET = 1e-6
PHASES = ("selection", "expansion", "simulation", "backpropagation")


class SearchMode(enum.Enum):
    Full = "full"
    NoPolicySelector = "no_ps"
    NoRewardEstimator = "no_re"
    NoPVN = "no_pvn"

    @property
    def uses_policy(self) -> bool:
        return self in (SearchMode.Full, SearchMode.NoRewardEstimator)

    @property
    def uses_estimator(self) -> bool:
        return self in (SearchMode.Full, SearchMode.NoPolicySelector)

    @property
    def needs_network(self) -> bool:
        return self.uses_policy or self.uses_estimator


@attr.s
class StepCounter:
    """Accumulates simulation steps and per-phase wall time."""

    estimator_calls = attr.ib(type=int, default=0)
    rollout_steps = attr.ib(type=int, default=0)
    reward_evaluations = attr.ib(type=int, default=0)
    policy_calls = attr.ib(type=int, default=0)
    phase_seconds = attr.ib(factory=lambda: dict.fromkeys(PHASES, 0.0))
    _lock = attr.ib(factory=threading.Lock, repr=False, eq=False)

    @property
    def steps(self) -> int:
        """Simulation steps: estimator calls plus rollout extensions."""
        return self.estimator_calls + self.rollout_steps

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phase_seconds[name] += time.perf_counter() - start

    def merge(self, other: "StepCounter") -> None:
        with self._lock:
            self.estimator_calls += other.estimator_calls
            self.rollout_steps += other.rollout_steps
            self.reward_evaluations += other.reward_evaluations
            self.policy_calls += other.policy_calls
            for name, seconds in other.phase_seconds.items():
                self.phase_seconds[name] = self.phase_seconds.get(name, 0.0) + seconds

    def as_dict(self) -> Dict:
        return {
            "steps": self.steps,
            "estimator_calls": self.estimator_calls,
            "rollout_steps": self.rollout_steps,
            "reward_evaluations": self.reward_evaluations,
            "policy_calls": self.policy_calls,
            "phase_seconds": dict(self.phase_seconds),
        }


def _at_least(minimum):
    def check(instance, attribute, value):
        if value < minimum:
            raise ValueError(
                "%s must be at least %s, got %s" % (attribute.name, minimum, value)
            )

    return check


@attr.s(frozen=True)
class SearchConfig:
    c = attr.ib(type=float, default=1.0, converter=float, validator=_at_least(0))
    max_length = attr.ib(type=int, default=20, converter=int, validator=_at_least(3))
    iterations_per_episode = attr.ib(
        type=int, default=200, converter=int, validator=_at_least(1)
    )
    rollout_steps = attr.ib(
        type=int, default=200, converter=int, validator=_at_least(1)
    )
    mode = attr.ib(type=SearchMode, default=SearchMode.Full, converter=SearchMode)
    track_best = attr.ib(type=bool, default=True)
    reward = attr.ib(type=RewardConfig, factory=RewardConfig)
    rollout_optimizer = attr.ib(type=OptimizerConfig, factory=OptimizerConfig.fast)
    step_counter = attr.ib(type=StepCounter, factory=StepCounter, eq=False)


@attr.s(eq=False, repr=False)
class SearchNode:
    """Node of the search tree.

    The root has no symbol. `action` is the key of the node in its parent's children
    map; it differs from the symbol id only for augmented patterns, which are stored
    under the augmented token.
    """

    path = attr.ib(type=ExpressionPath)
    symbol = attr.ib(default=None)  # type: Optional[Symbol]
    action = attr.ib(default=None)  # type: Optional[str]
    parent = attr.ib(default=None)  # type: Optional[SearchNode]
    prior = attr.ib(type=float, default=1.0)
    q_total = attr.ib(type=float, default=0.0)
    n_visits = attr.ib(type=int, default=0)
    n_simulations = attr.ib(type=int, default=0)
    children = attr.ib(factory=dict)  # type: Dict[str, SearchNode]
    untried_actions = attr.ib(factory=list)  # type: List[Symbol]
    eligible_ids = attr.ib(type=tuple, default=())
    action_priors = attr.ib(default=None)  # type: Optional[Dict[str, float]]

    @classmethod
    def create(
        cls,
        path: ExpressionPath,
        lib: FunctionLibrary,
        max_length: int,
        **kwargs,
    ) -> "SearchNode":
        eligible = eligible_symbols(path, lib.symbols, max_length)
        return cls(
            path,
            untried_actions=list(eligible),
            eligible_ids=tuple(sym.id for sym in eligible),
            **kwargs,
        )

    @property
    def mean_value(self) -> float:
        return self.q_total / max(self.n_visits, 1)

    @property
    def child_visits(self) -> int:
        return sum(child.n_visits for child in self.children.values())

    def is_terminal(self, max_length: int) -> bool:
        if self.path.is_complete or self.path.length >= max_length:
            return True
        return not self.untried_actions and not self.children

    def __repr__(self):
        return "<SearchNode %s N=%s Q=%.4g P=%.4g>" % (
            " ".join(self.path.ids) or "root",
            self.n_visits,
            self.q_total,
            self.prior,
        )


def _child(parent: SearchNode, action: Union[str, Symbol, SearchNode]) -> SearchNode:
    if isinstance(action, SearchNode):
        return action
    key = action.id if isinstance(action, Symbol) else action
    return parent.children[key]


def puct_score(
    parent: SearchNode, action: Union[str, Symbol, SearchNode], c: float
) -> float:
    """Mean reward plus the prior-weighted exploration bonus."""
    child = _child(parent, action)
    total = parent.child_visits
    return child.mean_value + c * child.prior * math.sqrt(total) / (1 + child.n_visits)


def ucb_score(
    parent: SearchNode, action: Union[str, Symbol, SearchNode], c: float
) -> float:
    """Mean reward plus the prior-free exploration bonus."""
    child = _child(parent, action)
    total = max(parent.child_visits, 1)
    return child.mean_value + c * math.sqrt(math.log(total) / (1 + child.n_visits))


def select(root: SearchNode, cfg: SearchConfig) -> Tuple[SearchNode, List[SearchNode]]:
    """Descend from `root` to a node which still has untried actions.

    Returns the node and the nodes visited on the way, root first.
    """
    score = puct_score if cfg.mode.uses_policy else ucb_score
    node = root
    trail = [root]
    while not node.is_terminal(cfg.max_length) and not node.untried_actions:
        best = None
        best_score = -math.inf
        for key in sorted(node.children):
            value = score(node, key, cfg.c)
            if value > best_score:
                best, best_score = node.children[key], value
        node = best
        trail.append(node)

    return node, trail


def _policy_priors(
    node: SearchNode,
    net: Optional[PolicyValueNet],
    series: Optional[TimeSeries],
    cfg: SearchConfig,
) -> Dict[str, float]:
    eligible = node.eligible_ids
    uniform = {key: 1.0 / len(eligible) for key in eligible}
    if not cfg.mode.uses_policy:
        return uniform
    if net is None or series is None:
        raise ConfigurationError("Mode %s needs a network" % cfg.mode.value)

    prior, _ = net.predict(node.path, series.values)
    cfg.step_counter.policy_calls += 1
    weights = np.array([prior[net.action_index(key)] for key in eligible])
    total = float(weights.sum())
    if not total > 0:
        return uniform
    return {key: float(w) / total for key, w in zip(eligible, weights)}


def _remaining_budget(path: ExpressionPath, max_length: int) -> int:
    """Largest node count a terminal pushed now may have."""
    return max_length - path.length - (path.open_slots - 1)


def _concrete(
    sym: Symbol, path: ExpressionPath, lib: FunctionLibrary, max_length: int, rng
) -> Symbol:
    if sym.kind is SymbolKind.Augmented:
        return sample_entry(lib, rng, _remaining_budget(path, max_length)).symbol
    return sym


def expand(
    node: SearchNode,
    lib: FunctionLibrary,
    cfg: SearchConfig,
    rng: np.random.Generator,
    net: Optional[PolicyValueNet] = None,
    series: Optional[TimeSeries] = None,
) -> SearchNode:
    """Create a child for one uniformly drawn untried action.

    The augmented token is replaced by a frequency-weighted library pattern.
    """
    if node.path.is_complete or node.path.length >= cfg.max_length:
        raise TerminalNodeError("Cannot expand %r" % node)
    if not node.untried_actions:
        raise ExpansionExhaustedError("All actions of %r have been tried" % node)

    sym = sample_uniform(lib, rng, node.untried_actions)
    node.untried_actions.remove(sym)

    if node.action_priors is None:
        node.action_priors = _policy_priors(node, net, series, cfg)

    pushed = _concrete(sym, node.path, lib, cfg.max_length, rng)
    child = SearchNode.create(
        push_token(node.path, pushed),
        lib,
        cfg.max_length,
        symbol=pushed,
        action=sym.id,
        parent=node,
        prior=node.action_priors[sym.id],
    )
    node.children[sym.id] = child
    return child


@attr.s
class RolloutState:
    """Per-episode rollout bookkeeping."""

    cache = attr.ib(factory=dict)  # type: Dict[str, Tuple[float, np.ndarray]]
    best_reward = attr.ib(type=float, default=-1.0)
    best_path = attr.ib(default=None)  # type: Optional[ExpressionPath]
    recorder = attr.ib(default=None)  # type: Optional[SASRecorder]


def _fitted_reward(
    path: ExpressionPath,
    series: TimeSeries,
    cfg: SearchConfig,
    rng: np.random.Generator,
    state: RolloutState,
) -> float:
    key = to_prefix(path)
    if key in state.cache:
        return state.cache[key][0]

    tree = to_tree(path)
    coeffs, error = fit_coefficients(tree, series, cfg.rollout_optimizer, rng)
    value = reward_from_error(error, tree.size, cfg.reward)
    cfg.step_counter.reward_evaluations += 1
    if value == 0.0:
        _LOGGER.debug("Degenerate rollout %s", key)
    state.cache[key] = (value, coeffs)
    return value


def rollout(
    path: ExpressionPath,
    lib: FunctionLibrary,
    cfg: SearchConfig,
    rng: np.random.Generator,
) -> ExpressionPath:
    """Extend `path` by uniform eligible symbols and autocomplete it."""
    steps = 0
    while (
        not path.is_complete
        and path.length < cfg.max_length
        and steps < cfg.rollout_steps
    ):
        eligible = eligible_symbols(path, lib.symbols, cfg.max_length)
        if not eligible:
            break
        sym = _concrete(
            sample_uniform(lib, rng, eligible), path, lib, cfg.max_length, rng
        )
        path = push_token(path, sym)
        steps += 1

    cfg.step_counter.rollout_steps += steps
    return autocomplete(path)


def simulate(
    node: SearchNode,
    series: TimeSeries,
    cfg: SearchConfig,
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    rng: np.random.Generator,
    state: Optional[RolloutState] = None,
) -> float:
    """Estimate the reward of `node`.

    Modes using the reward estimator ask the network once. The other modes run a
    random rollout, fit its coefficients and compute the fit reward.
    """
    if cfg.mode.uses_estimator:
        if net is None:
            raise ConfigurationError("Mode %s needs a network" % cfg.mode.value)
        _, estimate = net.predict(node.path, series.values)
        cfg.step_counter.estimator_calls += 1
        return min(1.0, max(0.0, estimate))

    if state is None:
        state = RolloutState()

    path = rollout(node.path, lib, cfg, rng)
    value = _fitted_reward(path, series, cfg, rng, state)
    if state.recorder is not None:
        record(state.recorder, path, value)
    if value > state.best_reward:
        state.best_reward, state.best_path = value, path
    return value


def backpropagate(
    leaf: SearchNode, reward: float, path: Optional[Sequence[SearchNode]] = None
) -> None:
    """Add one visit and `reward` to every node between `leaf` and the root."""
    if not 0.0 <= reward <= 1.0:
        raise ContractViolationError("Reward %s is outside of [0, 1]" % reward)

    if path is None:
        path = []
        node = leaf
        while node is not None:
            path.append(node)
            node = node.parent

    for node in path:
        node.n_visits += 1
        node.q_total += reward
    leaf.n_simulations += 1


def extract_backbone(root: SearchNode) -> ExpressionPath:
    """Follow the most visited child on every level and autocomplete the path."""
    node = root
    while node.children:
        node = max(
            sorted(node.children.items()), key=lambda item: item[1].n_visits
        )[1]
    return autocomplete(node.path)


def score_distribution(node: SearchNode, cfg: SearchConfig) -> Dict[str, float]:
    """Selection scores over the eligible actions of `node` as a distribution.

    Scores are shifted to be non-negative, offset by 1e-6 and normalized. Untried
    actions are scored as unvisited children with their assigned prior.
    """
    score = puct_score if cfg.mode.uses_policy else ucb_score
    priors = node.action_priors or {}
    uniform = 1.0 / len(node.eligible_ids)
    total_visits = node.child_visits

    scores = {}
    for key in node.eligible_ids:
        if key in node.children:
            scores[key] = score(node, key, cfg.c)
        elif cfg.mode.uses_policy:
            scores[key] = cfg.c * priors.get(key, uniform) * math.sqrt(total_visits)
        else:
            scores[key] = cfg.c * math.sqrt(math.log(max(total_visits, 1)))

    low = min(scores.values())
    shifted = {key: value - low + TARGET_OFFSET for key, value in scores.items()}
    norm = sum(shifted.values())
    return {key: value / norm for key, value in shifted.items()}


def training_examples(
    simulations: Sequence[Tuple[SearchNode, float]],
    series: TimeSeries,
    cfg: SearchConfig,
    vocabulary: Sequence[str],
) -> List[TrainingExample]:
    """Supervision from the simulations of a finished search.

    Every simulated node yields the state it was reached from, the selection score
    distribution of that state after the search and the simulated reward.
    """
    index = {key: i for i, key in enumerate(vocabulary)}
    targets = {}  # type: Dict[int, np.ndarray]
    examples = []
    for node, value in simulations:
        parent = node.parent
        if parent is None:
            continue

        if id(parent) not in targets:
            target = np.zeros(len(vocabulary))
            for key, prob in score_distribution(parent, cfg).items():
                target[index[key]] = prob
            targets[id(parent)] = target / target.sum()

        tokens = tuple(
            AUGMENTED_TOKEN_ID if sym.kind is SymbolKind.Augmented else sym.id
            for sym in parent.path.tokens
        )
        examples.append(
            TrainingExample(tokens, series.values, targets[id(parent)], value)
        )

    return examples


@attr.s
class EpisodeResult:
    backbone = attr.ib(type=ExpressionPath)
    root = attr.ib(type=SearchNode, repr=False)
    examples = attr.ib(factory=list)  # type: List[TrainingExample]
    best_path = attr.ib(default=None)  # type: Optional[ExpressionPath]
    best_reward = attr.ib(default=None)  # type: Optional[float]
    counter = attr.ib(type=StepCounter, factory=StepCounter)


def run_episode(
    series: TimeSeries,
    cfg: SearchConfig,
    net: Optional[PolicyValueNet],
    lib: FunctionLibrary,
    rng: np.random.Generator,
    recorder: Optional[SASRecorder] = None,
    collect_examples: bool = False,
) -> EpisodeResult:
    """Run one search over `series` and return the backbone.

    Steps and timings are counted on a fresh counter which is merged into
    ``cfg.step_counter`` at the end. Training examples are collected when
    `collect_examples` is set and the mode simulates by random rollouts.
    """
    if cfg.mode.needs_network and net is None:
        raise ConfigurationError("Mode %s needs a network" % cfg.mode.value)

    counter = StepCounter()
    episode_cfg = attr.evolve(cfg, step_counter=counter)
    state = RolloutState(recorder=recorder)
    root = SearchNode.create(ExpressionPath(), lib, cfg.max_length)
    simulations = []

    for _ in range(cfg.iterations_per_episode):
        with counter.phase("selection"):
            node, trail = select(root, episode_cfg)

        if not node.is_terminal(cfg.max_length):
            with counter.phase("expansion"):
                node = expand(node, lib, episode_cfg, rng, net, series)
            trail.append(node)

        with counter.phase("simulation"):
            value = simulate(node, series, episode_cfg, net, lib, rng, state)
        simulations.append((node, value))

        with counter.phase("backpropagation"):
            backpropagate(node, value, trail)

    backbone = extract_backbone(root)
    _LOGGER.debug(
        "Episode finished after %s iterations: %s (%s steps)",
        root.n_visits,
        to_prefix(backbone),
        counter.steps,
    )

    result = EpisodeResult(backbone, root, counter=counter)
    if cfg.track_best and state.best_path is not None:
        result.best_path = state.best_path
        result.best_reward = state.best_reward
    if collect_examples and not cfg.mode.uses_estimator:
        result.examples = training_examples(
            simulations, series, cfg, lib.action_vocabulary
        )

    cfg.step_counter.merge(counter)
    return result
