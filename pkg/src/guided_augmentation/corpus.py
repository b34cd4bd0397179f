"""Labeled text datasets: ingestion, cleaning, splitting and starvation.

Every operation here is a pure function of its inputs and seed. ``Dataset``
and ``Vocab`` are frozen after construction and safe to share between
threads.
"""

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from guided_augmentation.errors import ConfigError, GuidedAugmentationError
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)


class EmptyDataset(GuidedAugmentationError):
    """Raised when a dataset file holds no examples."""

    code = "empty_dataset"


class MalformedRow(GuidedAugmentationError):
    """Raised when a dataset row cannot be parsed."""

    code = "malformed_row"

    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


class StratifyImpossible(GuidedAugmentationError):
    """Raised when a class is too small to appear on both sides of a split."""

    code = "stratify_impossible"


class StarvedClassEmpty(GuidedAugmentationError):
    """Raised when starvation would leave a class without examples."""

    code = "starved_class_empty"


class EmptyCorpus(GuidedAugmentationError):
    """Raised when no tokens survive preprocessing."""

    code = "empty_corpus"


class EmptyVocab(GuidedAugmentationError):
    """Raised when no token reaches the vocabulary frequency floor."""

    code = "empty_vocab"


class Provenance(str, Enum):
    ORIGINAL = "original"
    BOOSTED = "boosted"


class SplitTag(str, Enum):
    UNSPLIT = "unsplit"
    TRAIN = "train"
    TEST = "test"


class DataFormat(str, Enum):
    JSONL = "jsonl"
    CSV = "csv"
    TSV = "tsv"


@dataclass(frozen=True)
class DatasetHeader:
    """First line of a JSONL dataset: class order and split tag."""

    classes: Tuple[str, ...]
    split_tag: SplitTag


@dataclass(frozen=True)
class LabeledExample:
    """One labeled text. ``ref`` links generated rows to their diagnostics."""

    text: str
    label: str
    provenance: Provenance = Provenance.ORIGINAL
    ref: Optional[str] = None

    def to_record(self) -> Dict[str, str]:
        record = {"text": self.text, "label": self.label, "provenance": self.provenance.value}
        if self.ref is not None:
            record["ref"] = self.ref
        return record


@dataclass(frozen=True)
class Dataset:
    """Ordered examples over an ordered class set."""

    examples: Tuple[LabeledExample, ...]
    classes: Tuple[str, ...]
    split_tag: SplitTag = SplitTag.UNSPLIT

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("Dataset needs a non-empty class set")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"Duplicate classes in {self.classes}")
        known = set(self.classes)
        for example in self.examples:
            if example.label not in known:
                raise ValueError(f"Label {example.label!r} is not in classes {self.classes}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[LabeledExample]:
        return iter(self.examples)

    @property
    def texts(self) -> List[str]:
        return [example.text for example in self.examples]

    @property
    def labels(self) -> List[str]:
        return [example.label for example in self.examples]

    def indices_by_class(self) -> Dict[str, List[int]]:
        grouped: Dict[str, List[int]] = {label: [] for label in self.classes}
        for index, example in enumerate(self.examples):
            grouped[example.label].append(index)
        return grouped

    def class_counts(self) -> Dict[str, int]:
        return {label: len(indices) for label, indices in self.indices_by_class().items()}

    def subset(self, indices: Iterable[int], split_tag: Optional[SplitTag] = None) -> "Dataset":
        return Dataset(
            examples=tuple(self.examples[i] for i in indices),
            classes=self.classes,
            split_tag=self.split_tag if split_tag is None else split_tag,
        )

    def with_examples(self, examples: Iterable[LabeledExample]) -> "Dataset":
        return Dataset(examples=tuple(examples), classes=self.classes, split_tag=self.split_tag)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.classes != self.classes:
            raise ValueError(f"Class sets differ: {self.classes} vs {other.classes}")
        return self.with_examples(self.examples + other.examples)


def load_stopwords(path: Optional[Path] = None) -> FrozenSet[str]:
    """Read a stopword file (one token per line); the bundled English list by default."""
    if path is None:
        text = resources.files("guided_augmentation").joinpath("data/stopwords.txt").read_text(
            encoding="utf-8"
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class PreprocessConfig:
    max_tokens: int = 30
    stopwords: FrozenSet[str] = field(default_factory=load_stopwords)
    strip_punctuation: bool = True
    strip_hashtags: bool = True
    strip_urls: bool = True

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigError([f"max_tokens must be >= 1, got {self.max_tokens}"])
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))


_URL_RE = re.compile(r"^(?:[a-z][a-z0-9+.\-]*://|www\.)")
_PUNCT_RE = re.compile(r"[^\w\s]|_")
_URL_LEAD = "\"'([{<"


def _tokenize(text: str, cfg: PreprocessConfig) -> List[str]:
    tokens = []
    for raw in text.lower().split():
        if cfg.strip_urls and _URL_RE.match(raw.lstrip(_URL_LEAD)):
            continue
        if cfg.strip_hashtags and raw.startswith("#"):
            continue
        token = _PUNCT_RE.sub("", raw) if cfg.strip_punctuation else raw
        if not token or token in cfg.stopwords:
            continue
        tokens.append(token)
    return tokens


def preprocess(
    example: LabeledExample, cfg: PreprocessConfig, vocab: Optional["Vocab"] = None
) -> Optional[List[str]]:
    """Clean and tokenize one example; None when the example is dropped.

    With a vocabulary, out-of-vocabulary tokens become the unknown token.
    """
    tokens = _tokenize(example.text, cfg)
    if not tokens or len(tokens) > cfg.max_tokens:
        return None
    if vocab is not None:
        tokens = [token if token in vocab else vocab.unk_token for token in tokens]
    return tokens


@dataclass
class CleanStats:
    kept: Dict[str, int]
    dropped_empty: Dict[str, int]
    dropped_length: Dict[str, int]

    @property
    def total_dropped(self) -> int:
        return sum(self.dropped_empty.values()) + sum(self.dropped_length.values())


def clean(ds: Dataset, cfg: PreprocessConfig) -> Tuple[Dataset, CleanStats]:
    """Preprocess every example, keeping survivors with their joined tokens as text."""
    stats = CleanStats(
        kept={c: 0 for c in ds.classes},
        dropped_empty={c: 0 for c in ds.classes},
        dropped_length={c: 0 for c in ds.classes},
    )
    kept = []
    for example in ds:
        tokens = _tokenize(example.text, cfg)
        if not tokens:
            stats.dropped_empty[example.label] += 1
            continue
        if len(tokens) > cfg.max_tokens:
            stats.dropped_length[example.label] += 1
            continue
        stats.kept[example.label] += 1
        kept.append(
            LabeledExample(" ".join(tokens), example.label, example.provenance, example.ref)
        )
    logger.info(
        f"Cleaned {len(ds)} examples: kept {len(kept)}, dropped {stats.total_dropped} "
        f"(empty {sum(stats.dropped_empty.values())}, "
        f"over {cfg.max_tokens} tokens {sum(stats.dropped_length.values())})"
    )
    return ds.with_examples(kept), stats


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def allocate_largest_remainder(
    exact: Mapping[str, float], total: int, order: Sequence[str]
) -> Dict[str, int]:
    """Integer shares summing to ``total``, each within 1 of its exact share.

    Leftover units go to the largest fractional remainders; ties follow
    ``order``.
    """
    shares = {key: int(math.floor(exact[key])) for key in order}
    remaining = total - sum(shares.values())
    position = {key: i for i, key in enumerate(order)}
    ranked = sorted(order, key=lambda key: (-(exact[key] - shares[key]), position[key]))
    for key in ranked[: max(remaining, 0)]:
        shares[key] += 1
    return shares


def split_stratified(
    ds: Dataset, test_fraction: float, seed: int
) -> Tuple[Dataset, Dataset]:
    """Split into train and test keeping per-class proportions."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")

    by_class = ds.indices_by_class()
    for label, indices in by_class.items():
        if len(indices) < 2:
            raise StratifyImpossible(
                f"Class {label!r} has {len(indices)} example(s); at least 2 are required"
            )

    exact = {label: len(indices) * test_fraction for label, indices in by_class.items()}
    quotas = allocate_largest_remainder(exact, round_half_up(len(ds) * test_fraction), ds.classes)

    rng = np.random.default_rng(seed)
    test_indices: List[int] = []
    for label in ds.classes:
        indices = by_class[label]
        quota = min(max(quotas[label], 1), len(indices) - 1)
        test_indices.extend(int(i) for i in rng.permutation(indices)[:quota])

    chosen = set(test_indices)
    train = ds.subset([i for i in range(len(ds)) if i not in chosen], SplitTag.TRAIN)
    test = ds.subset(sorted(chosen), SplitTag.TEST)
    logger.debug(f"Stratified split (seed {seed}): train {len(train)}, test {len(test)}")
    return train, test


def starve(train: Dataset, fraction: float, seed: int) -> Dataset:
    """Stratified subsample holding ``round(fraction * |train|)`` examples."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return train

    by_class = train.indices_by_class()
    exact = {label: len(indices) * fraction for label, indices in by_class.items()}
    quotas = allocate_largest_remainder(exact, round_half_up(len(train) * fraction), train.classes)
    empty = [label for label in train.classes if quotas[label] == 0]
    if empty:
        raise StarvedClassEmpty(
            f"Fraction {fraction} of {len(train)} examples leaves no example for {empty}"
        )

    rng = np.random.default_rng(seed)
    chosen: List[int] = []
    for label in train.classes:
        picked = rng.choice(by_class[label], size=quotas[label], replace=False)
        chosen.extend(int(i) for i in picked)
    return train.subset(sorted(chosen))


def class_distribution(ds: Dataset) -> Dict[str, float]:
    counts = ds.class_counts()
    total = sum(counts.values())
    if total == 0:
        raise EmptyDataset("Cannot take the class distribution of an empty dataset")
    return {label: count / total for label, count in counts.items()}


BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = (BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


@dataclass(frozen=True)
class Vocab:
    """Token/id bijection; ids 0, 1, 2 are begin, end and unknown."""

    tokens: Tuple[str, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    bos_id = 0
    eos_id = 1
    unk_id = 2
    unk_token = UNK_TOKEN

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError(f"Vocab must start with {SPECIAL_TOKENS}")
        if len(self.tokens) < len(SPECIAL_TOKENS) + 1:
            raise EmptyVocab("Vocab holds no token besides the specials")
        index = {token: i for i, token in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("Vocab tokens must be distinct")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.id_of(token) for token in tokens]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> List[str]:
        special = {self.bos_id, self.eos_id} if skip_special else set()
        return [self.tokens[i] for i in ids if i not in special]


def iter_token_lists(
    ds: Dataset, cfg: PreprocessConfig
) -> Iterator[Tuple[LabeledExample, List[str]]]:
    for example in ds:
        tokens = preprocess(example, cfg)
        if tokens is not None:
            yield example, tokens


def build_vocab(train: Dataset, cfg: PreprocessConfig, min_count: int = 1) -> Vocab:
    """Vocabulary ordered by (frequency desc, token) over tokens seen ``min_count`` times."""
    counts: Counter = Counter()
    for _, tokens in iter_token_lists(train, cfg):
        counts.update(tokens)
    if not counts:
        raise EmptyCorpus("No tokens survive preprocessing")
    kept = sorted(
        (token for token, count in counts.items() if count >= min_count),
        key=lambda token: (-counts[token], token),
    )
    if not kept:
        raise EmptyVocab(f"No token occurs at least {min_count} times")
    logger.debug(f"Vocab: {len(kept)} of {len(counts)} token types (min_count {min_count})")
    return Vocab(SPECIAL_TOKENS + tuple(kept))


def write_vocab(vocab: Vocab, path: Path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def read_vocab(path: Path) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocab(tuple(line for line in lines if line))


def _example_from_fields(
    line: int, text: Optional[str], label: Optional[str], provenance: Optional[str], ref=None
) -> LabeledExample:
    if not isinstance(text, str):
        raise MalformedRow(line, "missing or non-string field 'text'")
    if not isinstance(label, str) or not label:
        raise MalformedRow(line, "missing or empty field 'label'")
    try:
        origin = Provenance(provenance or Provenance.ORIGINAL.value)
    except ValueError:
        raise MalformedRow(line, f"unknown provenance {provenance!r}") from None
    return LabeledExample(text=text, label=label, provenance=origin, ref=ref)


def _read_header(line_number: int, record: Dict) -> DatasetHeader:
    classes = record["classes"]
    if (
        not isinstance(classes, list)
        or not classes
        or not all(isinstance(label, str) and label for label in classes)
    ):
        raise MalformedRow(line_number, "header 'classes' must be a list of non-empty strings")
    try:
        split_tag = SplitTag(record.get("split", SplitTag.UNSPLIT.value))
    except ValueError:
        raise MalformedRow(line_number, f"unknown split {record.get('split')!r}") from None
    return DatasetHeader(tuple(classes), split_tag)


def _read_jsonl(path: Path) -> Tuple[Optional[DatasetHeader], List[Tuple[int, LabeledExample]]]:
    header = None
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRow(line_number, f"invalid JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise MalformedRow(line_number, "expected a JSON object")
            if header is None and not rows and "classes" in record and "text" not in record:
                header = _read_header(line_number, record)
                continue
            rows.append(
                (
                    line_number,
                    _example_from_fields(
                        line_number,
                        record.get("text"),
                        record.get("label"),
                        record.get("provenance"),
                        record.get("ref"),
                    ),
                )
            )
    return header, rows


def _read_delimited(path: Path, delimiter: str) -> List[Tuple[int, LabeledExample]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle, delimiter=delimiter)
        if reader.fieldnames is None:
            return rows
        if "text" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise MalformedRow(1, "header must contain columns text,label")
        for record in reader:
            line_number = reader.line_num
            rows.append(
                (
                    line_number,
                    _example_from_fields(
                        line_number,
                        record.get("text"),
                        record.get("label"),
                        record.get("provenance"),
                        record.get("ref") or None,
                    ),
                )
            )
    return rows


def ingest(
    path: Path,
    format: str = "jsonl",
    classes: Optional[Sequence[str]] = None,
    split_tag: Optional[SplitTag] = None,
) -> Dataset:
    """Read a labeled dataset file.

    Class order and split tag come from the JSONL header line that
    ``write_jsonl`` writes. Without a header, classes follow the order of
    first appearance and the split is UNSPLIT. Explicit ``classes`` and
    ``split_tag`` arguments take precedence over both.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    data_format = DataFormat(format)
    header = None
    if data_format is DataFormat.JSONL:
        header, rows = _read_jsonl(path)
    else:
        rows = _read_delimited(path, "," if data_format is DataFormat.CSV else "\t")
    if not rows:
        raise EmptyDataset(f"No examples in {path}")

    if classes is None and header is not None:
        classes = header.classes
    if split_tag is None:
        split_tag = header.split_tag if header is not None else SplitTag.UNSPLIT
    if classes is None:
        order = list(dict.fromkeys(example.label for _, example in rows))
    else:
        order = list(classes)
        known = set(order)
        for line_number, example in rows:
            if example.label not in known:
                raise MalformedRow(line_number, f"label {example.label!r} not in {order}")

    dataset = Dataset(tuple(example for _, example in rows), tuple(order), split_tag)
    logger.info(f"Ingested {len(dataset)} examples from {path} ({len(order)} classes)")
    return dataset


def write_jsonl(ds: Dataset, path: Path) -> None:
    """Write a header line with class order and split, then one record per example."""
    header = {"classes": list(ds.classes), "split": ds.split_tag.value}
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(header, ensure_ascii=False) + "\n")
        for example in ds:
            handle.write(json.dumps(example.to_record(), ensure_ascii=False) + "\n")
