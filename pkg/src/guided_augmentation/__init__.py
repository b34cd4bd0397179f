"""Guided Augmentation - reward-guided text generation for training-data augmentation."""

from guided_augmentation.augment import BoostPlan, BoostResult, boost, plan_boost
from guided_augmentation.corpus import Dataset, LabeledExample, Vocab, ingest
from guided_augmentation.guide import GuideConfig, generate_conditional, generate_unconditional
from guided_augmentation.salience import Lexicon, build_lexicon

__version__ = "0.1.0"

__all__ = [
    "BoostPlan",
    "BoostResult",
    "Dataset",
    "GuideConfig",
    "LabeledExample",
    "Lexicon",
    "Vocab",
    "__version__",
    "boost",
    "build_lexicon",
    "generate_conditional",
    "generate_unconditional",
    "ingest",
    "plan_boost",
]
