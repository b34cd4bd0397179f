"""Templated benchmark corpora with class-exclusive lexical markers.

Every sentence mixes shared filler words with one or two markers of its
class. Markers follow a Zipf-like frequency so that a starved sample sees
only the common ones. A small share of sentences carries a marker of a
foreign class, and some carry a hashtag or a link that cleaning removes.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from guided_augmentation.corpus import Dataset, LabeledExample
from guided_augmentation.errors import ConfigError
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)

CLASS_MARKERS: Dict[str, Tuple[str, ...]] = {
    "positive": (
        "lovely", "wonderful", "delighted", "amazing", "brilliant", "cheerful", "grateful",
        "fantastic", "adorable", "superb", "joyful", "charming", "splendid", "thrilled",
        "marvelous", "gorgeous", "blessed", "excellent", "sweet", "glorious", "radiant",
        "pleasant", "uplifting", "perfect",
    ),
    "negative": (
        "awful", "terrible", "horrible", "disgusting", "miserable", "furious", "dreadful",
        "pathetic", "annoying", "useless", "gloomy", "nasty", "broken", "hateful",
        "disappointing", "lousy", "tragic", "painful", "boring", "ugly", "rotten",
        "bitter", "worthless", "grim",
    ),
    "sports": (
        "goal", "striker", "referee", "league", "match", "stadium", "coach", "penalty",
        "tournament", "midfield", "championship", "keeper", "dribble", "playoff",
        "season", "trophy", "kickoff", "derby", "winger", "offside", "roster", "fixture",
        "semifinal", "scoreline",
    ),
    "politics": (
        "senate", "ballot", "minister", "election", "parliament", "policy", "campaign",
        "governor", "vote", "reform", "debate", "congress", "cabinet", "treaty",
        "legislation", "mayor", "candidate", "referendum", "budget", "lobby", "veto",
        "coalition", "diplomat", "caucus",
    ),
}

FILLER: Tuple[str, ...] = (
    "people", "today", "morning", "night", "week", "city", "street", "friend", "family",
    "house", "coffee", "phone", "news", "story", "picture", "weekend", "train", "office",
    "school", "music", "dinner", "weather", "road", "window", "book", "movie", "time",
    "place", "group", "team", "thing", "world", "year", "moment", "life", "watch", "read",
    "talk", "walk", "wait", "think", "look", "share", "post", "said", "going", "really",
    "still", "maybe", "later", "again", "new", "old", "big", "small", "long", "early",
    "late", "whole", "little",
)

_HASHTAGS = ("#mood", "#news", "#tbt", "#weekend", "#life")
_LINKS = ("http://t.co/abc123", "https://example.com/post", "www.example.org/x")


def _zipf_weights(n: int) -> np.ndarray:
    weights = 1.0 / np.arange(1, n + 1)
    return weights / weights.sum()


def make_synthetic_corpus(
    n_examples: int,
    n_classes: int = 2,
    seed: int = 0,
    noise: float = 0.05,
    class_weights: Optional[Sequence[float]] = None,
) -> Dataset:
    """A seeded labeled corpus; identical for identical arguments."""
    problems = []
    if n_classes not in (2, 4):
        problems.append(f"n_classes must be 2 or 4, got {n_classes}")
    if n_examples < 2 * n_classes:
        problems.append(f"n_examples must be >= {2 * n_classes}, got {n_examples}")
    if not 0.0 <= noise < 0.5:
        problems.append(f"noise must be in [0, 0.5), got {noise}")
    if class_weights is not None and len(class_weights) != n_classes:
        problems.append(f"class_weights needs {n_classes} entries, got {len(class_weights)}")
    if problems:
        raise ConfigError(problems)

    classes = tuple(CLASS_MARKERS)[:n_classes]
    prior = np.full(n_classes, 1.0 / n_classes)
    if class_weights is not None:
        prior = np.asarray(class_weights, dtype=float) / float(np.sum(class_weights))

    rng = np.random.default_rng(seed)
    marker_weights = {c: _zipf_weights(len(CLASS_MARKERS[c])) for c in classes}
    # Every class gets at least two rows so the corpus can always be split.
    labels = [classes[i % n_classes] for i in range(2 * n_classes)]
    labels += [classes[i] for i in rng.choice(n_classes, size=n_examples - len(labels), p=prior)]

    examples: List[LabeledExample] = []
    for label in labels:
        words = list(rng.choice(FILLER, size=int(rng.integers(4, 10))))
        n_markers = 1 + int(rng.random() < 0.5)
        words += list(
            rng.choice(CLASS_MARKERS[label], size=n_markers, replace=False, p=marker_weights[label])
        )
        if n_classes > 1 and rng.random() < noise:
            other = classes[int(rng.choice([i for i, c in enumerate(classes) if c != label]))]
            words.append(str(rng.choice(CLASS_MARKERS[other])))
        rng.shuffle(words)
        extra = rng.random()
        if extra < 0.05:
            words.append(str(rng.choice(_HASHTAGS)))
        elif extra < 0.10:
            words.append(str(rng.choice(_LINKS)))
        text = " ".join(str(word) for word in words)
        examples.append(LabeledExample(text[0].upper() + text[1:] + ".", label))

    dataset = Dataset(tuple(examples), classes)
    logger.info(f"Synthetic corpus: {len(dataset)} rows, {dataset.class_counts()} (seed {seed})")
    return dataset
