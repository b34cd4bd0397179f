"""Tests for the experiment protocols on the synthetic corpus and toy LM."""

import logging
import time

import numpy as np
import pytest
import torch

from guided_augmentation.corpus import PreprocessConfig, Provenance, class_distribution
from guided_augmentation.errors import ConfigError
from guided_augmentation.evaluation.classifiers import ClassifierConfig, train_classifier
from guided_augmentation.evaluation.experiments import (
    ExperimentConfig,
    augmenter_comparison_experiment,
    classifier_agnostic_experiment,
    prepare_experiment,
    ratio_experiment,
    starvation_experiment,
)
from guided_augmentation.evaluation.report import paired_test, summarize
from guided_augmentation.evaluation.synthetic import make_synthetic_corpus
from guided_augmentation.guide import GuideConfig, guided_step, lexicon_ids, start_session
from guided_augmentation.lm import LmTrainingConfig

logger = logging.getLogger(__name__)


def log_test(test_name, message):
    """Simple test logging."""
    logger.info(f"TEST: {test_name} - {message}")


@pytest.fixture(scope="module")
def ctx(synthetic_corpus, toy_lm, toy_vocab):
    return prepare_experiment(
        synthetic_corpus,
        PreprocessConfig(),
        GuideConfig(k=1, max_len=10),
        LmTrainingConfig(),
        ClassifierConfig(epochs=5),
        ExperimentConfig(fractions=(0.05, 0.8), repeats=2, lexicon_size=5),
        model=toy_lm,
        vocab=toy_vocab,
        config={"seed": "0"},
        version="test",
    )


class TestExperimentConfig:
    """Validation and derived values."""

    def test_rejects_bad_ratios(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig(ratios=((60, 30), (0, 100)), architecture="rnn")
        log_test("test_rejects_bad_ratios", f"problems={info.value.problems}")
        assert len(info.value.problems) == 3

    def test_seeds(self):
        assert ExperimentConfig(seed=10, repeats=3).seeds() == [10, 11, 12]
        assert ExperimentConfig(seed=10).seeds(2) == [10, 11]

    def test_train_share(self, ctx):
        assert ctx.train_share(0.4) == pytest.approx(0.5)
        assert ctx.train_share(0.8) == 1.0
        assert ctx.train_share(0.9) == 1.0

    def test_pretrained_model_needs_vocab(self, synthetic_corpus, toy_lm):
        with pytest.raises(ValueError):
            prepare_experiment(
                synthetic_corpus,
                PreprocessConfig(),
                GuideConfig(),
                LmTrainingConfig(),
                ClassifierConfig(),
                ExperimentConfig(),
                model=toy_lm,
            )


class TestProtocols:
    """Each experiment end to end at toy scale."""

    def test_starvation(self, ctx):
        report = starvation_experiment(ctx)
        log_test("test_starvation", f"{len(report.rows)} rows")
        assert len(report.rows) == 2 * 2 * 2
        assert report.test_digest == ctx.test_digest
        originals = {r.seed: r for r in report.rows_for("original", fraction=0.8)}
        for boosted in report.rows_for("boosted", fraction=0.8):
            # nothing to generate on the full train split
            assert boosted.macro_f1 == originals[boosted.seed].macro_f1
            assert boosted.train_size == len(ctx.train)
        for boosted in report.rows_for("boosted", fraction=0.05):
            if not boosted.partial:
                assert boosted.train_size == len(ctx.train)

    def test_starvation_without_boost(self, ctx):
        report = starvation_experiment(ctx, fractions=(0.05,), repeats=1, with_boost=False)
        assert [r.condition for r in report.rows] == ["original"]
        assert report.rows[0].train_size == round(0.05 / 0.8 * len(ctx.train))

    def test_starvation_every_architecture(self, ctx):
        report = starvation_experiment(ctx, fractions=(0.05,), repeats=1, archs=("bag", "cnn"))
        keys = [(s.condition, s.architecture) for s in summarize(report)]
        log_test("test_starvation_every_architecture", f"conditions={keys}")
        assert keys == [
            ("original", "bag"),
            ("original", "cnn"),
            ("boosted", "bag"),
            ("boosted", "cnn"),
        ]
        (bag,) = report.rows_for("boosted", "bag")
        (cnn,) = report.rows_for("boosted", "cnn")
        assert bag.train_size == cnn.train_size

    def test_ratio(self, ctx):
        report = ratio_experiment(ctx, ratios=((100, 0), (50, 50)), repeats=1)
        baseline = ctx.score("check", "full", "bag", 1.0, ctx.experiment.seed, ctx.train)
        (identity,) = report.rows_for("100/0")
        (mixed,) = report.rows_for("50/50")
        log_test("test_ratio", f"100/0 ppl {identity.ppl:.2f}, 50/50 ppl {mixed.ppl:.2f}")
        assert identity.macro_f1 == baseline.macro_f1
        assert identity.fraction == 1.0 and mixed.fraction == 0.5
        assert identity.ppl >= 1.0 and mixed.ppl >= 1.0
        assert mixed.mixed_ppl >= 1.0
        if not mixed.partial:
            assert mixed.train_size == len(ctx.train)

    def test_classifier_agnostic(self, ctx):
        report = classifier_agnostic_experiment(ctx, fractions=(0.05,), repeats=1)
        assert len(report.rows) == 2 * 2 + 2
        assert {r.architecture for r in report.rows} == {"bag", "cnn"}
        for arch in ("bag", "cnn"):
            (original,) = report.rows_for("original", arch)
            (doubled,) = report.rows_for("doubled", arch)
            (full,) = report.rows_for("full", arch)
            assert full.train_size == len(ctx.train)
            if not doubled.partial:
                assert doubled.train_size == 2 * original.train_size

    def test_augmenter_comparison(self, ctx):
        report = augmenter_comparison_experiment(ctx, repeats=1)
        conditions = [r.condition for r in report.rows]
        log_test("test_augmenter_comparison", f"conditions={conditions}")
        assert conditions == ["original", "naive", "vanilla", "boosted"]
        original = report.rows[0]
        assert original.ppl is None
        naive = report.rows[1]
        assert naive.train_size == len(ctx.train)
        assert all(r.ppl is None or r.ppl >= 1.0 for r in report.rows)


@pytest.fixture(scope="module")
def desk_ctx():
    """The two-class lexical corpus at N=4000 with a decoder trained on its train split."""
    corpus = make_synthetic_corpus(4000, n_classes=2, seed=1)
    return prepare_experiment(
        corpus,
        PreprocessConfig(),
        GuideConfig(),
        LmTrainingConfig(epochs=10),
        ClassifierConfig(),
        ExperimentConfig(fractions=(0.05,), repeats=5),
        jobs=2,
    )


def mean_f1(report, condition, arch=None):
    return float(np.mean([r.macro_f1 for r in report.rows_for(condition, arch)]))


@pytest.mark.slow
class TestDeskScale:
    """Boosting outcomes on the N=4000 synthetic corpus."""

    def test_boosting_helps_both_architectures(self, desk_ctx):
        report = starvation_experiment(desk_ctx, archs=("bag", "cnn"))
        for arch in ("bag", "cnn"):
            original = mean_f1(report, "original", arch)
            boosted = mean_f1(report, "boosted", arch)
            p_value = paired_test(report, "boosted", "original", architecture=arch)
            log_test(
                "test_boosting_helps_both_architectures",
                f"{arch}: original {original:.4f} boosted {boosted:.4f} p={p_value:.4f}",
            )
            assert len(report.rows_for("boosted", arch)) == 5
            assert boosted - original >= 0.03

    def test_ratio_quality(self, desk_ctx):
        report = ratio_experiment(desk_ctx, repeats=3)
        identity = report.rows_for("100/0")
        mostly_boosted = report.rows_for("25/75")
        f1_drop = mean_f1(report, "100/0") - mean_f1(report, "25/75")
        reference_ppl = identity[0].ppl
        boosted_ppl = float(np.mean([r.ppl for r in mostly_boosted]))
        log_test(
            "test_ratio_quality",
            f"F1 drop {f1_drop:.4f}, PPL {reference_ppl:.2f} -> {boosted_ppl:.2f}",
        )
        assert all(r.ppl == reference_ppl for r in identity)
        assert f1_drop <= 0.10
        assert np.isfinite(boosted_ppl)
        assert boosted_ppl <= 2.5 * reference_ppl

    def test_boosted_rows_keep_their_class(self, desk_ctx):
        seed = desk_ctx.experiment.seed
        oracle = train_classifier(
            "bag", desk_ctx.train, seed, desk_ctx.classifier, desk_ctx.preprocess
        )
        starved = desk_ctx.starve(0.05, seed)
        result = desk_ctx.boost_to(starved, 2 * len(starved), class_distribution(starved), seed)
        generated = result.dataset.with_examples(
            e for e in result.dataset if e.provenance is Provenance.BOOSTED
        )
        predictions = oracle.predict(generated)
        for label, indices in generated.indices_by_class().items():
            agreement = np.mean([predictions[i] == label for i in indices])
            log_test(
                "test_boosted_rows_keep_their_class",
                f"{label}: {agreement:.1%} of {len(indices)} generated rows",
            )
            assert len(indices) > 0
            assert agreement >= 0.70

    def test_boosting_beats_naive_edits(self, desk_ctx):
        report = augmenter_comparison_experiment(desk_ctx, fraction=0.05, repeats=5)
        means = {c: mean_f1(report, c) for c in ("original", "naive", "vanilla", "boosted")}
        log_test("test_boosting_beats_naive_edits", f"means={means}")
        assert means["boosted"] >= means["naive"]


@pytest.mark.slow
def test_thirty_token_generation_latency(toy_lm, toy_vocab, toy_lexicon):
    """30 guided steps with k=3 and 8 rollouts, one thread."""
    cfg = GuideConfig(k=3, num_rollouts=8, max_len=30)
    label = toy_lexicon.classes[0]
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        session = start_session(
            toy_lm, toy_vocab, cfg, 0, lexicon_ids(toy_lexicon, label, toy_vocab)
        )
        started = time.perf_counter()
        # an id no token can take, so every step emits and the run lasts 30 tokens
        for _ in range(cfg.max_len):
            guided_step(session, eos_id=-1)
        elapsed = time.perf_counter() - started
    finally:
        torch.set_num_threads(threads)
    log_test("test_thirty_token_generation_latency", f"{elapsed:.3f}s")
    assert len(session.tokens) == 30
    assert elapsed <= 1.0
