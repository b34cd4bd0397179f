"""Language models: the guided decoder backend and the n-gram scorer."""

from guided_augmentation.lm.base import (
    ContextOverflow,
    KvCache,
    LanguageModel,
    NonFiniteGradient,
    reward_gradient,
    softmax_with_temperature,
)
from guided_augmentation.lm.checkpoint import load_checkpoint, save_checkpoint
from guided_augmentation.lm.decoder import (
    DecoderConfig,
    LmDivergence,
    LmTrainingConfig,
    TinyDecoder,
    nn_perplexity,
    train_lm,
)
from guided_augmentation.lm.ngram import (
    NgramLm,
    ngram_perplexity,
    read_ngram,
    train_ngram,
    write_ngram,
)

__all__ = [
    "ContextOverflow",
    "DecoderConfig",
    "KvCache",
    "LanguageModel",
    "LmDivergence",
    "LmTrainingConfig",
    "NgramLm",
    "NonFiniteGradient",
    "TinyDecoder",
    "load_checkpoint",
    "ngram_perplexity",
    "nn_perplexity",
    "read_ngram",
    "reward_gradient",
    "save_checkpoint",
    "softmax_with_temperature",
    "train_lm",
    "train_ngram",
    "write_ngram",
]
