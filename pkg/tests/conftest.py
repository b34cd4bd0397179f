"""Shared fixtures: a synthetic two-class corpus and a small trained decoder."""

import logging
import os

import pytest
from hypothesis import HealthCheck, settings

from guided_augmentation.corpus import PreprocessConfig, build_vocab, clean, split_stratified
from guided_augmentation.evaluation.synthetic import make_synthetic_corpus
from guided_augmentation.lm import LmTrainingConfig, train_lm
from guided_augmentation.salience import lexicon_from_dataset

logging.basicConfig(level=logging.INFO, format="%(message)s")

# shared CI runners are slow; set GUIDED_AUG_HYPOTHESIS_PROFILE=ci there
settings.register_profile("ci", suppress_health_check=(HealthCheck.too_slow,), derandomize=True)
settings.load_profile(os.environ.get("GUIDED_AUG_HYPOTHESIS_PROFILE", "default"))

TOY_LM = LmTrainingConfig(
    epochs=4, batch_size=32, learning_rate=5e-3, d_model=32, n_layer=1, n_head=2, seed=0
)


@pytest.fixture(scope="session")
def preprocess_cfg():
    return PreprocessConfig()


@pytest.fixture(scope="session")
def synthetic_corpus():
    return make_synthetic_corpus(400, n_classes=2, seed=0)


@pytest.fixture(scope="session")
def toy_split(synthetic_corpus, preprocess_cfg):
    cleaned, _ = clean(synthetic_corpus, preprocess_cfg)
    return split_stratified(cleaned, 0.2, seed=0)


@pytest.fixture(scope="session")
def toy_train(toy_split):
    return toy_split[0]


@pytest.fixture(scope="session")
def toy_test(toy_split):
    return toy_split[1]


@pytest.fixture(scope="session")
def toy_vocab(toy_train, preprocess_cfg):
    return build_vocab(toy_train, preprocess_cfg)


@pytest.fixture(scope="session")
def toy_lm(toy_train, toy_vocab, preprocess_cfg):
    return train_lm(toy_train, toy_vocab, TOY_LM, preprocess_cfg)


@pytest.fixture(scope="session")
def toy_lexicon(toy_train, toy_vocab, preprocess_cfg):
    return lexicon_from_dataset(toy_train, preprocess_cfg, 5, min_count=2, vocab=toy_vocab)
