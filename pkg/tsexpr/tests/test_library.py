import numpy as np
import pytest
import yaml

from tsexpr.exceptions import (
    ContractViolationError,
    ExhaustedLibraryError,
    FormatError,
    GrammarError,
    LibraryError,
)
from tsexpr.expr import (
    ADD,
    BASE_SYMBOLS,
    SIN,
    VAR,
    SymbolKind,
    build_path,
    parse_prefix,
)
from tsexpr.library import (
    AUGMENTED_TOKEN_ID,
    AugmentedEntry,
    FunctionLibrary,
    SASConfig,
    SASRecorder,
    load_library,
    mine_top_k,
    read_library,
    record,
    sample_entry,
    sample_uniform,
    save_library,
    secondary_sample,
)
from tsexpr.utils import derive_rng


def entry(pattern, count=1, mean_reward=0.5, id="aug0"):
    return AugmentedEntry(id, parse_prefix(pattern), count, mean_reward)


@pytest.fixture
def mined():
    return FunctionLibrary().with_entries(
        [entry("mul C t", 3, 0.8, "aug0"), entry("sin mul C t", 1, 0.6, "aug1")]
    )


def test_default_library():
    lib = FunctionLibrary()
    assert lib.base_symbols == BASE_SYMBOLS
    assert not lib.has_augmented_token
    assert lib.augmented_symbol is None
    assert lib.symbols == BASE_SYMBOLS
    assert lib.action_vocabulary[-1] == AUGMENTED_TOKEN_ID
    assert len(lib.action_vocabulary) == len(BASE_SYMBOLS) + 1


def test_augmented_token(mined):
    assert mined.has_augmented_token
    sym = mined.augmented_symbol
    assert sym.id == AUGMENTED_TOKEN_ID
    assert sym.kind is SymbolKind.Augmented
    assert sym.size == 3
    assert mined.symbols[-1] == sym
    assert mined.action_vocabulary == FunctionLibrary().action_vocabulary


def test_from_ids():
    lib = FunctionLibrary.from_ids(["add", "sin", "t", "C"])
    assert [sym.id for sym in lib.base_symbols] == ["add", "sin", "t", "C"]

    with pytest.raises(LibraryError):
        FunctionLibrary.from_ids(["add", "tan"])


def test_duplicate_ids():
    with pytest.raises(LibraryError):
        FunctionLibrary([SIN, SIN, VAR])
    with pytest.raises(LibraryError):
        FunctionLibrary().with_entries([entry("sin t", id="sin")])
    with pytest.raises(LibraryError):
        FunctionLibrary().with_entries([entry("sin t", id=AUGMENTED_TOKEN_ID)])


def test_empty_library():
    with pytest.raises(LibraryError):
        FunctionLibrary([])


@pytest.mark.parametrize(
    "pattern,count,mean_reward",
    [("t", 1, 0.5), ("sin t", 0, 0.5), ("sin t", 1, 1.5)],
)
def test_invalid_entries(pattern, count, mean_reward):
    with pytest.raises(LibraryError):
        entry(pattern, count, mean_reward)


def test_incomplete_entry():
    with pytest.raises(LibraryError):
        AugmentedEntry("aug0", build_path([SIN]), 1, 0.5)


def test_entry_symbol():
    aug = entry("mul C t").symbol
    assert aug.id == "aug0"
    assert aug.pattern == parse_prefix("mul C t")
    assert aug.size == 3


def test_sample_uniform():
    lib = FunctionLibrary()
    rng = derive_rng(1)
    drawn = {sample_uniform(lib, rng).id for _ in range(500)}
    assert drawn == {sym.id for sym in BASE_SYMBOLS}

    assert sample_uniform(lib, rng, [VAR]) == VAR
    with pytest.raises(ExhaustedLibraryError):
        sample_uniform(lib, rng, [])


def test_sample_entry_proportional(mined):
    rng = derive_rng(2)
    drawn = [sample_entry(mined, rng).id for _ in range(4000)]
    assert drawn.count("aug0") / len(drawn) == pytest.approx(0.75, abs=0.03)


def test_sample_entry_respects_size(mined):
    rng = derive_rng(3)
    assert {sample_entry(mined, rng, max_size=3).id for _ in range(50)} == {"aug0"}
    assert secondary_sample(mined, rng, max_size=3) == parse_prefix("mul C t")

    with pytest.raises(ExhaustedLibraryError):
        sample_entry(mined, rng, max_size=2)
    with pytest.raises(ExhaustedLibraryError):
        sample_entry(FunctionLibrary(), rng)


def test_record_threshold():
    rec = SASRecorder.from_config(SASConfig(reward_threshold=0.5, k=3))
    record(rec, parse_prefix("mul C t"), 0.4)
    assert len(rec) == 0

    record(rec, parse_prefix("mul C t"), 0.5)
    record(rec, parse_prefix("mul C t"), 0.7)
    stats = rec.pattern_stats["mul C t"]
    assert stats.count == 2
    assert stats.mean_reward == pytest.approx(0.6)


def test_record_skips_single_nodes():
    rec = SASRecorder()
    record(rec, parse_prefix("t"), 0.9)
    assert len(rec) == 0


def test_record_invalid():
    rec = SASRecorder()
    with pytest.raises(GrammarError):
        record(rec, build_path([SIN]), 0.9)
    with pytest.raises(ContractViolationError):
        record(rec, parse_prefix("sin t"), 1.5)


def test_record_augmented_path_uses_expanded_key(mined):
    rec = SASRecorder(reward_threshold=0.0)
    path = build_path([ADD, mined.augmented_symbol, VAR])
    record(rec, path, 0.9)
    assert list(rec.pattern_stats) == ["add mul C t t"]


def test_mine_top_k_ordering():
    rec = SASRecorder(reward_threshold=0.0, k=2)
    for pattern, value in [
        ("sin t", 0.9),
        ("mul C t", 0.6),
        ("mul C t", 0.6),
        ("cos t", 0.6),
        ("cos t", 0.8),
    ]:
        record(rec, parse_prefix(pattern), value)

    lib = mine_top_k(rec, FunctionLibrary())
    assert [e.key for e in lib.augmented_entries] == ["cos t", "mul C t"]
    assert [e.id for e in lib.augmented_entries] == ["aug0", "aug1"]
    assert lib.augmented_entries[0].count == 2
    assert lib.augmented_entries[0].mean_reward == pytest.approx(0.7)


def test_mine_top_k_is_idempotent():
    rec = SASRecorder(reward_threshold=0.0, k=5)
    record(rec, parse_prefix("sin t"), 0.9)

    once = mine_top_k(rec, FunctionLibrary())
    twice = mine_top_k(rec, once)
    assert once == twice


def test_mine_top_k_without_records():
    lib = FunctionLibrary()
    assert mine_top_k(SASRecorder(), lib) is lib


@pytest.mark.parametrize("kwargs", [{"k": 0}, {"reward_threshold": 1.5}])
def test_invalid_sas_config(kwargs):
    with pytest.raises(ValueError):
        SASConfig(**kwargs)


def test_library_file(tmp_path, mined):
    path = tmp_path / "library.yaml"
    save_library(mined, path, SASConfig(reward_threshold=0.25, k=4))

    doc = yaml.safe_load(path.read_text())
    assert list(doc) == [
        "format",
        "version",
        "config",
        "base_symbols",
        "augmented_entries",
    ]
    assert doc["augmented_entries"][1]["pattern"] == "sin mul C t"

    lib, cfg = read_library(path)
    assert lib == mined
    assert cfg == SASConfig(reward_threshold=0.25, k=4)
    assert load_library(path) == mined


@pytest.mark.parametrize(
    "text",
    [
        "just text",
        "format: other\nversion: 1\n",
        "format: tsexpr-library\nversion: 99\n",
        "format: tsexpr-library\nversion: 1\n",
        "format: tsexpr-library\nversion: 1\nconfig: {k: 1, reward_threshold: 0.5}\n"
        "base_symbols: [add, t]\naugmented_entries:\n"
        "- {id: aug0, pattern: sin t, count: 1, mean_reward: 0.5}\n",
        "{unbalanced",
    ],
)
def test_corrupt_library_file(tmp_path, text):
    path = tmp_path / "library.yaml"
    path.write_text(text)
    with pytest.raises(FormatError):
        load_library(path)


def test_sampling_is_deterministic(mined):
    first = [sample_entry(mined, derive_rng(9)).id for _ in range(3)]
    second = [sample_entry(mined, derive_rng(9)).id for _ in range(3)]
    assert first == second
    assert np.unique(first).size == 1


def test_secondary_sample_matches_counts():
    lib = FunctionLibrary().with_entries(
        [
            entry("mul C t", 5, 0.8, "aug0"),
            entry("sin mul C t", 3, 0.7, "aug1"),
            entry("add t C", 2, 0.6, "aug2"),
        ]
    )
    rng = derive_rng(12)
    draws = 100000
    drawn = [secondary_sample(lib, rng) for _ in range(draws)]

    observed = np.array([drawn.count(e.pattern) for e in lib.augmented_entries])
    expected = draws * np.array([0.5, 0.3, 0.2])
    chi_square = float(np.sum((observed - expected) ** 2 / expected))
    # 99th percentile with two degrees of freedom
    assert chi_square < 9.2103
