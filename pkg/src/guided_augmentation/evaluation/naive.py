"""Token-level delete/swap augmentation used as the naive baseline."""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from guided_augmentation.augment import BoostPlan, ImpossiblePlan
from guided_augmentation.corpus import Dataset, LabeledExample, Provenance
from guided_augmentation.errors import ConfigError
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class NaiveConfig:
    delete_prob: float = 0.1
    swap_prob: float = 0.1

    def __post_init__(self):
        problems = [
            f"{name} must be in [0, 1], got {getattr(self, name)}"
            for name in ("delete_prob", "swap_prob")
            if not 0.0 <= getattr(self, name) <= 1.0
        ]
        if problems:
            raise ConfigError(problems)


def naive_edit(tokens: Sequence[str], cfg: NaiveConfig, rng: np.random.Generator) -> List[str]:
    """Randomly delete tokens (keeping at least one), then randomly swap pairs."""
    kept = [token for token in tokens if rng.random() >= cfg.delete_prob]
    if not kept and tokens:
        kept = [tokens[int(rng.integers(len(tokens)))]]
    for i in range(len(kept)):
        if len(kept) > 1 and rng.random() < cfg.swap_prob:
            j = int(rng.integers(len(kept)))
            kept[i], kept[j] = kept[j], kept[i]
    return kept


def naive_baseline_augment(
    starved: Dataset, plan: BoostPlan, cfg: NaiveConfig = NaiveConfig()
) -> Dataset:
    """Top ``starved`` up to the plan's counts with edited copies of its own rows."""
    by_class = starved.indices_by_class()
    generated: List[LabeledExample] = []
    for class_index, label in enumerate(starved.classes):
        target = plan.targets.get(label, 0)
        if target == 0:
            continue
        pool = by_class[label]
        if not pool:
            raise ImpossiblePlan(f"No {label!r} row to edit")
        rng = np.random.default_rng([plan.seed, class_index])
        for sample in range(target):
            source = starved.examples[pool[int(rng.integers(len(pool)))]]
            text = " ".join(naive_edit(source.text.split(), cfg, rng))
            generated.append(
                LabeledExample(text, label, Provenance.BOOSTED, f"{label}-naive-{sample:05d}")
            )
    logger.info(f"Naive augmentation added {len(generated)} rows to {len(starved)}")
    return starved.with_examples(starved.examples + tuple(generated))
