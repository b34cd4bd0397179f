"""Per-class word salience and top-N salient lexicons.

A word is salient for a class when both P(class | word) and P(word | class)
are high; the salience score is the geometric mean of the two count
ratios.
"""

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from guided_augmentation.corpus import Dataset, PreprocessConfig, Vocab, iter_token_lists
from guided_augmentation.errors import GuidedAugmentationError
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)


class EmptyClass(GuidedAugmentationError):
    """Raised when a class has no tokens to count."""

    code = "empty_class"


class UnknownClass(GuidedAugmentationError):
    """Raised when a class is not part of the count table or lexicon."""

    code = "unknown_class"


class EmptyLexiconClass(GuidedAugmentationError):
    """Raised when no word qualifies for a class lexicon."""

    code = "empty_lexicon_class"


@dataclass(frozen=True)
class CountTable:
    """Token counts per (class, word) with both marginals."""

    class_counts: Mapping[str, Counter]
    class_totals: Mapping[str, int]
    word_totals: Mapping[str, int]

    @property
    def classes(self) -> Tuple[str, ...]:
        return tuple(self.class_counts)

    def count(self, word: str, label: str) -> int:
        if label not in self.class_counts:
            raise UnknownClass(f"Class {label!r} is not in the count table")
        return self.class_counts[label].get(word, 0)


def count(train: Dataset, cfg: PreprocessConfig) -> CountTable:
    """Count token occurrences (with multiplicity) per class."""
    class_counts: Dict[str, Counter] = {label: Counter() for label in train.classes}
    for example, tokens in iter_token_lists(train, cfg):
        class_counts[example.label].update(tokens)

    if not any(class_counts.values()):
        raise EmptyClass("No class has any token after preprocessing")
    empty = [label for label, counts in class_counts.items() if not counts]
    if empty:
        raise EmptyClass(f"Classes without tokens after preprocessing: {empty}")

    word_totals: Counter = Counter()
    for counts in class_counts.values():
        word_totals.update(counts)
    return CountTable(
        class_counts=class_counts,
        class_totals={label: sum(counts.values()) for label, counts in class_counts.items()},
        word_totals=dict(word_totals),
    )


def salience_score(ct: CountTable, word: str, label: str) -> float:
    """Geometric mean of count(word, c)/count(word, ·) and count(word, c)/count(·, c)."""
    in_class = ct.count(word, label)
    if in_class == 0:
        return 0.0
    class_share = in_class / ct.word_totals[word]
    word_share = in_class / ct.class_totals[label]
    return math.sqrt(class_share * word_share)


@dataclass(frozen=True)
class Lexicon:
    """Per-class salient words, best first, at most ``n`` per class."""

    entries: Mapping[str, Tuple[Tuple[str, float], ...]]
    n: int

    @property
    def classes(self) -> Tuple[str, ...]:
        return tuple(self.entries)

    def words(self, label: str) -> List[str]:
        if label not in self.entries:
            raise UnknownClass(f"No lexicon entry for class {label!r}")
        return [word for word, _ in self.entries[label]]


def build_lexicon(
    ct: CountTable, n: int, min_count: int = 2, vocab: Optional[Vocab] = None
) -> Lexicon:
    """Top-``n`` salient words per class.

    Ties are broken by higher in-class count, then lexicographically. Words
    seen fewer than ``min_count`` times in the class, or unknown to
    ``vocab`` when given, are skipped.
    """
    if n < 1:
        raise ValueError(f"Lexicon size must be >= 1, got {n}")

    entries: Dict[str, Tuple[Tuple[str, float], ...]] = {}
    for label in ct.classes:
        counts = ct.class_counts[label]
        candidates = [
            word
            for word, in_class in counts.items()
            if in_class >= min_count and (vocab is None or word in vocab)
        ]
        if not candidates:
            raise EmptyLexiconClass(
                f"Class {label!r} has no word with count >= {min_count}"
                + (" in the vocabulary" if vocab is not None else "")
            )
        scored = [(word, salience_score(ct, word, label)) for word in candidates]
        scored.sort(key=lambda item: (-item[1], -counts[item[0]], item[0]))
        entries[label] = tuple(scored[:n])
        logger.debug(f"Lexicon {label!r}: {[word for word, _ in entries[label][:5]]} ...")
    return Lexicon(entries=entries, n=n)


def write_lexicon(lexicon: Lexicon, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["class", "word", "score"])
        for label, words in lexicon.entries.items():
            for word, score in words:
                writer.writerow([label, word, repr(score)])


def read_lexicon(path: Path) -> Lexicon:
    entries: Dict[str, List[Tuple[str, float]]] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle, delimiter="\t")
        for row in reader:
            entries.setdefault(row["class"], []).append((row["word"], float(row["score"])))
    if not entries:
        raise EmptyLexiconClass(f"Lexicon file {path} holds no entries")
    return Lexicon(
        entries={label: tuple(words) for label, words in entries.items()},
        n=max(len(words) for words in entries.values()),
    )


def lexicon_from_dataset(
    ds: Dataset,
    cfg: PreprocessConfig,
    n: int,
    min_count: int = 2,
    vocab: Optional[Vocab] = None,
) -> Lexicon:
    """Count and build in one go, retrying with ``min_count=1`` when a class comes up empty."""
    ct = count(ds, cfg)
    try:
        return build_lexicon(ct, n, min_count=min_count, vocab=vocab)
    except EmptyLexiconClass as exc:
        if min_count <= 1:
            raise
        logger.warning(f"{exc}; rebuilding the lexicon with min_count=1")
        return build_lexicon(ct, n, min_count=1, vocab=vocab)
