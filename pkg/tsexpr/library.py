"""Function library and symbolic augmentation.

The library holds the base symbols available to the search. During training a
:class:`SASRecorder` counts complete expression backbones which reached a high reward.
The most frequent ones are mined into augmented entries; the search then sees a single
augmented token and picks a concrete pattern by sampling proportionally to the
recorded frequencies.

Augmented patterns are built from base symbols only, mined patterns never contain
other augmented patterns.
"""
import logging
import os
from typing import Dict, Iterable, Optional, Sequence, Tuple

import attr
import numpy as np
import yaml

from .exceptions import (
    ContractViolationError,
    ExhaustedLibraryError,
    FormatError,
    GrammarError,
    LibraryError,
    TsExprException,
)
from .expr import (
    BASE_SYMBOL_MAP,
    BASE_SYMBOLS,
    CONSTANT_ID,
    FUNCTIONS,
    POW,
    VARIABLE_ID,
    ExpressionPath,
    Symbol,
    SymbolKind,
    parse_prefix,
    to_prefix,
)

_LOGGER = logging.getLogger(__name__)

AUGMENTED_TOKEN_ID = "aug"
LIBRARY_FORMAT = "tsexpr-library"
LIBRARY_VERSION = 1


def _validate_pattern(instance, attribute, pattern: ExpressionPath):
    if not pattern.is_complete:
        raise LibraryError("Augmented pattern %s is incomplete" % (pattern.ids,))
    if pattern.length < 2:
        raise LibraryError("Augmented patterns need at least two nodes")
    if any(sym.kind is SymbolKind.Augmented for sym in pattern.tokens):
        raise LibraryError("Augmented patterns cannot be nested")


def _validate_count(instance, attribute, value):
    if value < 1:
        raise LibraryError("Pattern count must be at least 1, got %s" % value)


def _validate_mean_reward(instance, attribute, value):
    if not 0.0 <= value <= 1.0:
        raise LibraryError("Mean reward must be in [0, 1], got %s" % value)


@attr.s(frozen=True)
class AugmentedEntry:
    """Mined composite function."""

    id = attr.ib(type=str)
    pattern = attr.ib(type=ExpressionPath, validator=_validate_pattern)
    count = attr.ib(type=int, converter=int, validator=_validate_count)
    mean_reward = attr.ib(type=float, converter=float, validator=_validate_mean_reward)

    @property
    def key(self) -> str:
        return to_prefix(self.pattern)

    @property
    def symbol(self) -> Symbol:
        """Token which inlines this pattern when pushed to a path."""
        return Symbol(self.id, 0, SymbolKind.Augmented, pattern=self.pattern)


def _validate_base_symbol(sym: Symbol):
    if sym.kind is SymbolKind.Augmented:
        raise LibraryError("%s is not a base symbol" % sym.id)
    if sym.kind is SymbolKind.Variable and sym.id != VARIABLE_ID:
        raise LibraryError("Only %s is supported as variable" % VARIABLE_ID)
    if sym.kind is SymbolKind.Constant and sym.id != CONSTANT_ID:
        raise LibraryError("Only %s is supported as constant" % CONSTANT_ID)
    if not sym.is_terminal and sym.id not in FUNCTIONS:
        raise LibraryError("No implementation for operator %s" % sym.id)
    if sym.id == POW.id and sym.const_operands != POW.const_operands:
        raise LibraryError("pow is only supported with a constant exponent")


@attr.s(frozen=True)
class FunctionLibrary:
    """Base symbols plus the augmented entries mined so far."""

    base_symbols = attr.ib(type=tuple, default=BASE_SYMBOLS, converter=tuple)
    augmented_entries = attr.ib(type=tuple, default=(), converter=tuple)

    def __attrs_post_init__(self):
        if not self.base_symbols:
            raise LibraryError("Library has no base symbols")
        for sym in self.base_symbols:
            _validate_base_symbol(sym)

        ids = [sym.id for sym in self.base_symbols]
        ids.extend(entry.id for entry in self.augmented_entries)
        ids.append(AUGMENTED_TOKEN_ID)
        duplicates = sorted({x for x in ids if ids.count(x) > 1})
        if duplicates:
            raise LibraryError("Duplicate symbol ids: %s" % ", ".join(duplicates))

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "FunctionLibrary":
        """Create a library from base symbol ids such as ``["add", "sin", "t"]``."""
        symbols = []
        for symbol_id in ids:
            try:
                symbols.append(BASE_SYMBOL_MAP[symbol_id])
            except KeyError:
                raise LibraryError("Unknown base symbol %r" % symbol_id) from None
        return cls(symbols)

    @property
    def has_augmented_token(self) -> bool:
        return bool(self.augmented_entries)

    @property
    def augmented_symbol(self) -> Optional[Symbol]:
        """The single augmented token offered to the search.

        Its size is that of the shortest entry, so it is eligible whenever at least
        one pattern fits the remaining budget.
        """
        if not self.augmented_entries:
            return None
        shortest = min(self.augmented_entries, key=lambda e: e.pattern.length)
        return Symbol(
            AUGMENTED_TOKEN_ID, 0, SymbolKind.Augmented, pattern=shortest.pattern
        )

    @property
    def symbols(self) -> Tuple[Symbol, ...]:
        """Symbols the expansion sampler chooses from."""
        if self.augmented_entries:
            return self.base_symbols + (self.augmented_symbol,)
        return self.base_symbols

    @property
    def action_vocabulary(self) -> Tuple[str, ...]:
        """Fixed policy head support: base ids and the augmented token."""
        return tuple(sym.id for sym in self.base_symbols) + (AUGMENTED_TOKEN_ID,)

    @property
    def symbol_map(self) -> Dict[str, Symbol]:
        return {sym.id: sym for sym in self.base_symbols}

    def with_entries(self, entries: Sequence[AugmentedEntry]) -> "FunctionLibrary":
        return attr.evolve(self, augmented_entries=tuple(entries))


def sample_uniform(
    lib: FunctionLibrary,
    rng: np.random.Generator,
    eligible: Optional[Sequence[Symbol]] = None,
) -> Symbol:
    """Draw a symbol uniformly.

    `eligible` is the caller-filtered candidate set; all library symbols are used
    when it is not given.
    """
    candidates = lib.symbols if eligible is None else tuple(eligible)
    if not candidates:
        raise ExhaustedLibraryError("No eligible symbol to sample from")
    return candidates[int(rng.integers(len(candidates)))]


def sample_entry(
    lib: FunctionLibrary, rng: np.random.Generator, max_size: Optional[int] = None
) -> AugmentedEntry:
    """Draw an augmented entry with probability proportional to its count.

    Entries larger than `max_size` nodes are left out.
    """
    entries = [
        entry
        for entry in lib.augmented_entries
        if max_size is None or entry.pattern.length <= max_size
    ]
    if not entries:
        raise ExhaustedLibraryError("No augmented entry to sample from")

    counts = np.array([entry.count for entry in entries], dtype=float)
    index = int(rng.choice(len(entries), p=counts / counts.sum()))
    return entries[index]


def secondary_sample(
    lib: FunctionLibrary, rng: np.random.Generator, max_size: Optional[int] = None
) -> ExpressionPath:
    """Return the pattern of a frequency-weighted augmented entry."""
    return sample_entry(lib, rng, max_size).pattern


@attr.s(frozen=True)
class SASConfig:
    reward_threshold = attr.ib(type=float, default=0.5, converter=float)
    k = attr.ib(type=int, default=10, converter=int)

    @reward_threshold.validator
    def _check_threshold(self, attribute, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError("reward_threshold must be in [0, 1], got %s" % value)

    @k.validator
    def _check_k(self, attribute, value):
        if value < 1:
            raise ValueError("k must be positive, got %s" % value)


@attr.s
class PatternStats:
    count = attr.ib(type=int, default=0)
    reward_sum = attr.ib(type=float, default=0.0)

    @property
    def mean_reward(self) -> float:
        return self.reward_sum / self.count if self.count else 0.0


@attr.s
class SASRecorder:
    """Counts high-reward backbones by their prefix key."""

    reward_threshold = attr.ib(type=float, default=0.5)
    k = attr.ib(type=int, default=10)
    pattern_stats = attr.ib(factory=dict)  # type: Dict[str, PatternStats]

    @classmethod
    def from_config(cls, cfg: SASConfig) -> "SASRecorder":
        return cls(reward_threshold=cfg.reward_threshold, k=cfg.k)

    def __len__(self):
        return len(self.pattern_stats)


def record(rec: SASRecorder, path: ExpressionPath, reward: float) -> SASRecorder:
    """Count `path` if `reward` reaches the recorder threshold.

    Single-node paths are not composite and are never counted.
    """
    if not path.is_complete:
        raise GrammarError("Only complete paths can be recorded")
    if not 0.0 <= reward <= 1.0:
        raise ContractViolationError("Reward %s is outside of [0, 1]" % reward)

    if reward < rec.reward_threshold or path.length < 2:
        return rec

    key = to_prefix(path)
    stats = rec.pattern_stats.setdefault(key, PatternStats())
    stats.count += 1
    stats.reward_sum += reward
    return rec


def mine_top_k(rec: SASRecorder, lib: FunctionLibrary) -> FunctionLibrary:
    """Return `lib` with its augmented entries replaced by the top-k patterns.

    Patterns are ranked by count, then by mean reward, then by key.
    """
    if not rec.pattern_stats:
        _LOGGER.debug("Nothing recorded, keeping the library")
        return lib

    ranked = sorted(
        rec.pattern_stats.items(),
        key=lambda item: (-item[1].count, -item[1].mean_reward, item[0]),
    )[: rec.k]

    symbols = lib.symbol_map
    entries = []
    for index, (key, stats) in enumerate(ranked):
        entries.append(
            AugmentedEntry(
                id="%s%s" % (AUGMENTED_TOKEN_ID, index),
                pattern=parse_prefix(key, symbols),
                count=stats.count,
                mean_reward=min(1.0, stats.mean_reward),
            )
        )

    _LOGGER.info(
        "Mined %s of %s recorded patterns: %s",
        len(entries),
        len(rec.pattern_stats),
        ", ".join("[%s] x%s" % (e.key, e.count) for e in entries),
    )
    return lib.with_entries(entries)


def library_document(lib: FunctionLibrary, cfg: SASConfig = SASConfig()) -> Dict:
    return {
        "format": LIBRARY_FORMAT,
        "version": LIBRARY_VERSION,
        "config": {"reward_threshold": cfg.reward_threshold, "k": cfg.k},
        "base_symbols": [sym.id for sym in lib.base_symbols],
        "augmented_entries": [
            {
                "id": entry.id,
                "pattern": entry.key,
                "count": entry.count,
                "mean_reward": entry.mean_reward,
            }
            for entry in lib.augmented_entries
        ],
    }


def library_from_document(doc) -> Tuple[FunctionLibrary, SASConfig]:
    if not isinstance(doc, dict):
        raise FormatError("Library document is not a mapping")
    if doc.get("format") != LIBRARY_FORMAT:
        raise FormatError("Not a library file: format %r" % doc.get("format"))
    if doc.get("version") != LIBRARY_VERSION:
        raise FormatError("Unsupported library version %r" % doc.get("version"))

    try:
        cfg = SASConfig(**doc["config"])
        lib = FunctionLibrary.from_ids(doc["base_symbols"])
        symbols = lib.symbol_map
        entries = [
            AugmentedEntry(
                id=item["id"],
                pattern=parse_prefix(item["pattern"], symbols),
                count=item["count"],
                mean_reward=item["mean_reward"],
            )
            for item in doc.get("augmented_entries") or ()
        ]
        return lib.with_entries(entries), cfg
    except (KeyError, TypeError, ValueError, TsExprException) as ex:
        raise FormatError("Invalid library document: %s" % ex) from ex


def save_library(
    lib: FunctionLibrary, path: os.PathLike, cfg: SASConfig = SASConfig()
) -> None:
    _LOGGER.debug(
        "Writing library with %s entries to %s", len(lib.augmented_entries), path
    )
    with open(path, "w") as f:
        yaml.safe_dump(
            library_document(lib, cfg), f, sort_keys=False, default_flow_style=False
        )


def load_library(path: os.PathLike) -> FunctionLibrary:
    return read_library(path)[0]


def read_library(path: os.PathLike) -> Tuple[FunctionLibrary, SASConfig]:
    """Load a library file together with the mining settings it was written with."""
    _LOGGER.debug("Reading library from %s", path)
    with open(path) as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as ex:
            raise FormatError("Unable to parse %s: %s" % (path, ex)) from ex
    return library_from_document(doc)
