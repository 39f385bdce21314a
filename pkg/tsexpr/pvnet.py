"""Policy-value network.

The network reads two inputs: the expression path built so far and a window of the
series being fitted. Path tokens are embedded and run through an LSTM whose final
hidden state represents the path, the (standardized) window goes through a stack of
dilated causal convolutions whose last time step represents the series. A shared
fully connected trunk feeds a policy head (distribution over the action vocabulary)
and a value head (reward estimate squashed to (0, 1)).

All computations use float64 on the CPU.
"""
import enum
import logging
import math
import os
from typing import Callable, List, Optional, Sequence, Tuple, Union

import attr
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from construct import (
    Adapter,
    Bytes,
    ConstructError,
    Const,
    Int16ul,
    Int32ul,
    Int64ul,
    PascalString,
    PrefixedArray,
    Struct,
    Terminated,
    this,
)

from .exceptions import (
    ContractViolationError,
    FormatError,
    ShapeError,
    TrainingDivergenceError,
    VocabularyError,
)
from .expr import ExpressionPath, SymbolKind
from .library import AUGMENTED_TOKEN_ID

_LOGGER = logging.getLogger(__name__)

TARGET_FLOOR = 1e-12
WEIGHTS_VERSION = 1

PAD_INDEX = 0
ROOT_INDEX = 1
_FIRST_SYMBOL_INDEX = 2


class KLDirection(enum.Enum):
    """Direction of the policy divergence.

    `PriorToTarget` sums ``prior * log(prior / target)``, `TargetToPrior` sums
    ``target * log(target / prior)``.
    """

    PriorToTarget = "prior-target"
    TargetToPrior = "target-prior"


def _non_negative(instance, attribute, value):
    if value < 0:
        raise ValueError("%s must not be negative, got %s" % (attribute.name, value))


def _positive(instance, attribute, value):
    if not value > 0:
        raise ValueError("%s must be positive, got %s" % (attribute.name, value))


@attr.s(frozen=True)
class TrainConfig:
    theta1 = attr.ib(type=float, default=1.0, converter=float, validator=_non_negative)
    theta2 = attr.ib(type=float, default=1.0, converter=float, validator=_non_negative)
    learning_rate = attr.ib(
        type=float, default=1e-3, converter=float, validator=_positive
    )
    batch_size = attr.ib(type=int, default=32, converter=int, validator=_positive)
    epochs = attr.ib(type=int, default=10, converter=int, validator=_positive)
    embedding_dim = attr.ib(type=int, default=16, converter=int, validator=_positive)
    hidden_dim = attr.ib(type=int, default=32, converter=int, validator=_positive)
    trunk_layers = attr.ib(type=int, default=2, converter=int, validator=_positive)
    conv_levels = attr.ib(type=int, default=3, converter=int, validator=_positive)
    kernel_size = attr.ib(type=int, default=3, converter=int, validator=_positive)
    seed = attr.ib(type=int, default=0, converter=int)
    kl_direction = attr.ib(
        type=KLDirection, default=KLDirection.PriorToTarget, converter=KLDirection
    )

    def __attrs_post_init__(self):
        if self.theta1 == 0 and self.theta2 == 0:
            raise ValueError("theta1 and theta2 cannot both be zero")


@attr.s(frozen=True, eq=False)
class TrainingExample:
    """One supervised sample generated by the search."""

    path_tokens = attr.ib(type=tuple, converter=tuple)
    series_window = attr.ib(converter=lambda x: np.asarray(x, dtype=float).ravel())
    target_policy = attr.ib(converter=lambda x: np.asarray(x, dtype=float).ravel())
    target_reward = attr.ib(type=float, converter=float)

    def __attrs_post_init__(self):
        if np.any(self.target_policy < 0) or abs(self.target_policy.sum() - 1) > 1e-9:
            raise ContractViolationError("Target policy is not a distribution")
        if not 0.0 <= self.target_reward <= 1.0:
            raise ContractViolationError(
                "Target reward %s is outside of [0, 1]" % self.target_reward
            )


def prepare_window(values, window: int) -> np.ndarray:
    """Fit `values` to `window` samples and standardize them.

    Longer inputs keep their last `window` values, shorter ones are left-padded with
    their first value.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ShapeError("Cannot encode an empty series")
    if values.size >= window:
        values = values[-window:]
    else:
        values = np.concatenate([np.full(window - values.size, values[0]), values])

    centered = values - values.mean()
    std = centered.std()
    if std > 0:
        centered = centered / std
    return centered


class CausalConvBlock(nn.Module):
    """Dilated convolution seeing only the current and past time steps."""

    def __init__(
        self, in_channels: int, out_channels: int, kernel_size: int, dilation: int
    ):
        super().__init__()
        self.padding = (kernel_size - 1) * dilation
        self.conv = nn.Conv1d(
            in_channels, out_channels, kernel_size=kernel_size, dilation=dilation
        )

    def forward(self, x):
        return F.relu(self.conv(F.pad(x, (self.padding, 0))))


class SeriesEncoder(nn.Module):
    def __init__(self, hidden_dim: int, levels: int, kernel_size: int):
        super().__init__()
        blocks = []
        for i in range(levels):
            in_channels = 1 if i == 0 else hidden_dim
            blocks.append(
                CausalConvBlock(in_channels, hidden_dim, kernel_size, dilation=2 ** i)
            )
        self.network = nn.Sequential(*blocks)

    def forward(self, windows):
        # (batch, window) -> (batch, hidden) at the last time step
        return self.network(windows.unsqueeze(1))[:, :, -1]


class PolicyValueNet(nn.Module):
    """Policy-value network over a fixed action vocabulary.

    Augmented entries in a path are encoded with the augmented token.
    """

    def __init__(
        self,
        vocabulary: Sequence[str],
        window: int,
        embedding_dim: int = 16,
        hidden_dim: int = 32,
        trunk_layers: int = 2,
        conv_levels: int = 3,
        kernel_size: int = 3,
        seed: int = 0,
        zero_heads: bool = False,
    ):
        super().__init__()
        self.vocabulary = tuple(vocabulary)
        if len(set(self.vocabulary)) != len(self.vocabulary) or not self.vocabulary:
            raise VocabularyError("Vocabulary must be non-empty and unique")
        self.window = int(window)
        if self.window < 1:
            raise ShapeError("Window must be positive")

        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.trunk_layers = trunk_layers
        self.conv_levels = conv_levels
        self.kernel_size = kernel_size
        self._index = {
            sym: i + _FIRST_SYMBOL_INDEX for i, sym in enumerate(self.vocabulary)
        }

        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.embedding = nn.Embedding(
                len(self.vocabulary) + _FIRST_SYMBOL_INDEX,
                embedding_dim,
                padding_idx=PAD_INDEX,
            )
            self.path_encoder = nn.LSTM(embedding_dim, hidden_dim, batch_first=True)
            self.series_encoder = SeriesEncoder(hidden_dim, conv_levels, kernel_size)

            layers = []  # type: List[nn.Module]
            for i in range(trunk_layers):
                in_features = 2 * hidden_dim if i == 0 else hidden_dim
                layers.extend([nn.Linear(in_features, hidden_dim), nn.ReLU()])
            self.trunk = nn.Sequential(*layers)

            self.policy_head = nn.Linear(hidden_dim, len(self.vocabulary))
            self.value_head = nn.Linear(hidden_dim, 1)

        if zero_heads:
            for head in (self.policy_head, self.value_head):
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)

        self.double()

    @classmethod
    def from_config(
        cls,
        vocabulary: Sequence[str],
        window: int,
        cfg: TrainConfig = TrainConfig(),
        zero_heads: bool = False,
    ) -> "PolicyValueNet":
        return cls(
            vocabulary,
            window,
            embedding_dim=cfg.embedding_dim,
            hidden_dim=cfg.hidden_dim,
            trunk_layers=cfg.trunk_layers,
            conv_levels=cfg.conv_levels,
            kernel_size=cfg.kernel_size,
            seed=cfg.seed,
            zero_heads=zero_heads,
        )

    @property
    def n_actions(self) -> int:
        return len(self.vocabulary)

    def action_index(self, symbol_id: str) -> int:
        """Position of `symbol_id` in the policy output."""
        try:
            return self._index[symbol_id] - _FIRST_SYMBOL_INDEX
        except KeyError:
            raise VocabularyError("Unknown symbol %r" % symbol_id) from None

    def path_ids(self, path: Union[ExpressionPath, Sequence[str]]) -> Tuple[str, ...]:
        if isinstance(path, ExpressionPath):
            return tuple(
                AUGMENTED_TOKEN_ID if sym.kind is SymbolKind.Augmented else sym.id
                for sym in path.tokens
            )
        return tuple(path)

    def encode_path(self, path: Union[ExpressionPath, Sequence[str]]) -> List[int]:
        indices = [ROOT_INDEX]
        for symbol_id in self.path_ids(path):
            try:
                indices.append(self._index[symbol_id])
            except KeyError:
                raise VocabularyError("Unknown symbol %r" % symbol_id) from None
        return indices

    def _batch(self, paths, windows) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        encoded = [self.encode_path(path) for path in paths]
        lengths = torch.tensor([len(x) for x in encoded], dtype=torch.int64)
        tokens = torch.full(
            (len(encoded), int(lengths.max())), PAD_INDEX, dtype=torch.int64
        )
        for i, indices in enumerate(encoded):
            tokens[i, : len(indices)] = torch.tensor(indices)

        series = torch.as_tensor(
            np.stack([prepare_window(w, self.window) for w in windows]),
            dtype=torch.float64,
        )
        return tokens, lengths, series

    def forward(self, tokens, lengths, series):
        """Return log policy of shape (batch, |A|) and values of shape (batch,)."""
        embedded = self.embedding(tokens)
        packed = nn.utils.rnn.pack_padded_sequence(
            embedded, lengths, batch_first=True, enforce_sorted=False
        )
        _, (hidden, _) = self.path_encoder(packed)
        state = torch.cat([hidden[-1], self.series_encoder(series)], dim=1)
        state = self.trunk(state)

        log_policy = F.log_softmax(self.policy_head(state), dim=1)
        value = torch.sigmoid(self.value_head(state)).squeeze(1)
        return log_policy, value

    def predict(self, path, series) -> Tuple[np.ndarray, float]:
        """Return the prior over the vocabulary and the reward estimate."""
        with torch.no_grad():
            log_policy, value = self(*self._batch([path], [series]))
        prior = torch.exp(log_policy[0]).numpy()
        estimate = float(
            np.clip(value[0].item(), np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        )
        return prior, estimate

    def flat_parameters(self) -> np.ndarray:
        with torch.no_grad():
            return nn.utils.parameters_to_vector(self.parameters()).numpy().copy()

    def set_flat_parameters(self, params) -> None:
        params = np.asarray(params, dtype=np.float64).ravel()
        expected = sum(p.numel() for p in self.parameters())
        if params.size != expected:
            raise FormatError(
                "Expected %s parameters, got %s" % (expected, params.size)
            )
        with torch.no_grad():
            nn.utils.vector_to_parameters(
                torch.from_numpy(params.copy()), self.parameters()
            )


def forward(
    net: PolicyValueNet, path: Union[ExpressionPath, Sequence[str]], series
) -> Tuple[np.ndarray, float]:
    return net.predict(path, series)


def _check_support(prior: np.ndarray, target: np.ndarray):
    if prior.shape != target.shape:
        raise ShapeError(
            "Distributions over %s and %s actions" % (prior.size, target.size)
        )


def loss_policy(
    prior, score_target, direction: KLDirection = KLDirection.PriorToTarget
) -> float:
    """Kullback-Leibler divergence between the prior and the search target.

    Target entries are clamped below by 1e-12.
    """
    prior = np.asarray(prior, dtype=float).ravel()
    target = np.maximum(np.asarray(score_target, dtype=float).ravel(), TARGET_FLOOR)
    _check_support(prior, target)

    if direction is KLDirection.TargetToPrior:
        prior, target = target, np.maximum(prior, TARGET_FLOOR)

    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(prior > 0, prior * np.log(prior / target), 0.0)
    return float(np.sum(terms))


def loss_value(estimate: float, simulated: float) -> float:
    return (float(estimate) - float(simulated)) ** 2


def _policy_loss_tensor(log_policy, target, direction: KLDirection):
    log_target = torch.log(torch.clamp(target, min=TARGET_FLOOR))
    if direction is KLDirection.TargetToPrior:
        return torch.sum(torch.xlogy(target, target) - target * log_policy, dim=1)
    return torch.sum(torch.exp(log_policy) * (log_policy - log_target), dim=1)


def batch_loss(
    net: PolicyValueNet, batch: Sequence[TrainingExample], cfg: TrainConfig
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Return the weighted objective of `batch` with its policy and value losses.

    Terms with a zero weight are left out of the objective.
    """
    if not batch:
        raise ShapeError("Cannot train on an empty batch")

    tokens, lengths, series = net._batch(
        [ex.path_tokens for ex in batch], [ex.series_window for ex in batch]
    )
    targets = np.stack([ex.target_policy for ex in batch])
    if targets.shape[1] != net.n_actions:
        raise ShapeError(
            "Target policy over %s actions, network has %s"
            % (targets.shape[1], net.n_actions)
        )
    target_policy = torch.as_tensor(targets, dtype=torch.float64)
    target_reward = torch.tensor(
        [ex.target_reward for ex in batch], dtype=torch.float64
    )

    log_policy, value = net(tokens, lengths, series)
    loss_ps = _policy_loss_tensor(log_policy, target_policy, cfg.kl_direction).mean()
    loss_re = torch.mean((value - target_reward) ** 2)

    terms = []
    if cfg.theta1 > 0:
        terms.append(cfg.theta1 * loss_ps)
    if cfg.theta2 > 0:
        terms.append(cfg.theta2 * loss_re)
    return sum(terms), loss_ps, loss_re


def train_step(
    net: PolicyValueNet, batch: Sequence[TrainingExample], cfg: TrainConfig
) -> Tuple[PolicyValueNet, float, float, float]:
    """Apply one SGD update on the mean batch loss.

    Returns the network and the total, policy and value losses measured before the
    update.
    """
    net.train()
    objective, loss_ps, loss_re = batch_loss(net, batch, cfg)

    ps, re = loss_ps.item(), loss_re.item()
    total = cfg.theta1 * ps + cfg.theta2 * re
    if not math.isfinite(total):
        raise TrainingDivergenceError("Loss is not finite: %s" % total)

    optimizer = torch.optim.SGD(net.parameters(), lr=cfg.learning_rate)
    optimizer.zero_grad()
    objective.backward()
    optimizer.step()
    net.eval()

    return net, total, ps, re


def train_network(
    net: PolicyValueNet,
    examples: Sequence[TrainingExample],
    cfg: TrainConfig,
    rng: Optional[np.random.Generator] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> List[float]:
    """Run `cfg.epochs` shuffled passes over `examples`.

    Returns the mean total loss of every epoch. `progress` is called with the number
    of examples consumed after every batch.
    """
    if not examples:
        raise ShapeError("No training examples")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            _, total, ps, re = train_step(net, batch, cfg)
            losses.append(total * len(batch))
            if progress is not None:
                progress(len(batch))

        history.append(sum(losses) / len(examples))
        _LOGGER.debug("Epoch %s: loss %.6g", epoch + 1, history[-1])

    return history


class ParameterAdapter(Adapter):
    """Adapter for the flat little-endian float64 parameter vector."""

    def _encode(self, obj, context, path):
        return np.asarray(obj, dtype="<f8").tobytes()

    def _decode(self, obj, context, path):
        return np.frombuffer(obj, dtype="<f8").astype(np.float64)


WeightsFile = Struct(
    Const(b"TSXW"),
    "version" / Int16ul,
    "n_actions" / Int32ul,
    "embedding_dim" / Int32ul,
    "hidden_dim" / Int32ul,
    "trunk_layers" / Int16ul,
    "conv_levels" / Int16ul,
    "kernel_size" / Int16ul,
    "window" / Int32ul,
    "vocabulary" / PrefixedArray(Int32ul, PascalString(Int16ul, "utf8")),
    "n_params" / Int64ul,
    "params" / ParameterAdapter(Bytes(this.n_params * 8)),
    Terminated,
)


def save_weights(net: PolicyValueNet, path: os.PathLike) -> None:
    params = net.flat_parameters()
    data = WeightsFile.build(
        dict(
            version=WEIGHTS_VERSION,
            n_actions=net.n_actions,
            embedding_dim=net.embedding_dim,
            hidden_dim=net.hidden_dim,
            trunk_layers=net.trunk_layers,
            conv_levels=net.conv_levels,
            kernel_size=net.kernel_size,
            window=net.window,
            vocabulary=list(net.vocabulary),
            n_params=params.size,
            params=params,
        )
    )
    _LOGGER.debug("Writing %s parameters to %s", params.size, path)
    with open(path, "wb") as f:
        f.write(data)


def load_weights(
    path: os.PathLike, vocabulary: Optional[Sequence[str]] = None
) -> PolicyValueNet:
    """Load a network written by :func:`save_weights`.

    If `vocabulary` is given, the stored action vocabulary must match it.
    """
    with open(path, "rb") as f:
        data = f.read()

    try:
        header = WeightsFile.parse(data)
    except ConstructError as ex:
        raise FormatError("Unable to parse weights file %s: %s" % (path, ex)) from ex

    if header.version != WEIGHTS_VERSION:
        raise FormatError("Unsupported weights version %s" % header.version)
    if header.n_actions != len(header.vocabulary):
        raise FormatError("Corrupt vocabulary in %s" % path)
    if vocabulary is not None and tuple(vocabulary) != tuple(header.vocabulary):
        raise FormatError(
            "Weights are for %s actions (%s), expected %s"
            % (header.n_actions, " ".join(header.vocabulary), len(vocabulary))
        )

    try:
        net = PolicyValueNet(
            header.vocabulary,
            header.window,
            embedding_dim=header.embedding_dim,
            hidden_dim=header.hidden_dim,
            trunk_layers=header.trunk_layers,
            conv_levels=header.conv_levels,
            kernel_size=header.kernel_size,
        )
    except (ValueError, RuntimeError, VocabularyError, ShapeError) as ex:
        raise FormatError("Invalid architecture in %s: %s" % (path, ex)) from ex
    net.set_flat_parameters(header.params)
    net.eval()
    return net
