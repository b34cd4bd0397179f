"""Tests for the decoder, its cache interface, checkpoints and the n-gram scorer."""

import logging
import math

import pytest
import torch

from guided_augmentation.corpus import Dataset, LabeledExample, PreprocessConfig, build_vocab
from guided_augmentation.errors import ConfigError
from guided_augmentation.lm import (
    ContextOverflow,
    DecoderConfig,
    LmTrainingConfig,
    NonFiniteGradient,
    load_checkpoint,
    ngram_perplexity,
    nn_perplexity,
    read_ngram,
    reward_gradient,
    save_checkpoint,
    softmax_with_temperature,
    train_lm,
    train_ngram,
    write_ngram,
)
from guided_augmentation.lm.checkpoint import CheckpointFormatError
from tests.toy_models import random_decoder

logger = logging.getLogger(__name__)


def log_test(test_name, message):
    """Simple test logging."""
    logger.info(f"TEST: {test_name} - {message}")


NO_STOPWORDS = PreprocessConfig(stopwords=frozenset())


def feed(model, tokens):
    logits, cache = None, model.new_cache()
    for token in tokens:
        logits, cache = model.step(token, cache)
    return logits, cache


@pytest.fixture(scope="module")
def decoder():
    return random_decoder(vocab_size=12, seed=0)


class TestSoftmax:
    """Temperature softmax."""

    def test_closed_form(self):
        probs = softmax_with_temperature(torch.tensor([1.0, 2.0], dtype=torch.float64), 1.0)
        log_test("test_closed_form", f"probs={probs.tolist()}")
        assert probs.tolist() == pytest.approx([0.2689, 0.7311], abs=1e-4)

    def test_greedy_limit(self):
        probs = softmax_with_temperature(torch.tensor([1.0, 2.0], dtype=torch.float64), 0.01)
        assert probs[1] > 1 - 1e-9

    def test_uniform(self):
        probs = softmax_with_temperature(torch.zeros(7, dtype=torch.float64), 0.3)
        assert torch.allclose(probs, torch.full((7,), 1 / 7, dtype=torch.float64))

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            softmax_with_temperature(torch.zeros(3), 0.0)


class TestDecoderCache:
    """Stepwise decoding against the full-prefix forward pass."""

    def test_config_validation(self):
        with pytest.raises(ConfigError) as info:
            DecoderConfig(vocab_size=3, d_model=10, n_head=3, context_length=8)
        log_test("test_config_validation", f"problems={info.value.problems}")
        assert len(info.value.problems) == 3

    def test_stepwise_matches_forward(self, decoder):
        generator = torch.Generator().manual_seed(1)
        worst = 0.0
        for _ in range(5):
            prefix = torch.randint(0, decoder.vocab_size, (10,), generator=generator).tolist()
            full = decoder(torch.tensor([prefix]))[0]
            cache = decoder.new_cache()
            for position, token in enumerate(prefix):
                logits, cache = decoder.step(token, cache)
                worst = max(worst, float((logits - full[position]).abs().max()))
        log_test("test_stepwise_matches_forward", f"max abs diff={worst:.2e}")
        assert worst <= 1e-5

    def test_readout_reproduces_step(self, decoder):
        logits, cache = feed(decoder, [0, 5, 7, 3])
        assert torch.allclose(decoder.readout(cache), logits, atol=1e-12)

    def test_first_step_is_distribution(self, decoder):
        logits, cache = decoder.step(0, decoder.new_cache())
        probs = softmax_with_temperature(logits, 1.0)
        assert cache.steps == 1
        assert cache.data.shape == (2, 2, 2, 1, 8)
        assert float(probs.sum()) == pytest.approx(1.0)
        assert bool((probs >= 0).all())

    def test_context_overflow(self, decoder):
        _, cache = feed(decoder, [3] * decoder.context_length)
        with pytest.raises(ContextOverflow):
            decoder.step(3, cache)
        with pytest.raises(ContextOverflow):
            decoder(torch.zeros(1, decoder.context_length + 1, dtype=torch.long))

    def test_readout_empty_cache(self, decoder):
        with pytest.raises(ValueError):
            decoder.readout(decoder.new_cache())


class TestRewardGradient:
    """Exact gradients of scalar rewards of the cache."""

    def test_constant_reward(self, decoder):
        _, cache = feed(decoder, [0, 4, 5])
        grad = reward_gradient(decoder, cache, lambda c: torch.tensor(2.0, dtype=torch.float64))
        assert bool((grad == 0).all())

    def test_linear_reward(self, decoder):
        _, cache = feed(decoder, [0, 4])
        direction = torch.zeros_like(cache.data)
        direction[1, 0, 1, 1, 3] = 1.0
        grad = reward_gradient(decoder, cache, lambda c: (c.data * direction).sum())
        assert torch.equal(grad, direction)

    def test_finite_differences(self, decoder):
        weights = torch.linspace(-1.0, 1.0, decoder.vocab_size, dtype=torch.float64)

        def reward(cache):
            return (softmax_with_temperature(decoder.readout(cache), 0.7) * weights).sum()

        generator = torch.Generator().manual_seed(2)
        for instance in range(3):
            prefix = [0] + torch.randint(3, 12, (4,), generator=generator).tolist()
            _, cache = feed(decoder, prefix)
            noise = torch.randn(cache.data.shape, generator=generator, dtype=torch.float64)
            cache = cache.with_data(cache.data + 0.3 * noise)
            grad = reward_gradient(decoder, cache, reward).flatten()
            picks = torch.randperm(grad.numel(), generator=generator)[:25]
            h = 1e-5
            numeric = []
            for index in picks.tolist():
                bump = torch.zeros(grad.numel(), dtype=torch.float64)
                bump[index] = h
                bump = bump.view_as(cache.data)
                with torch.no_grad():
                    up = reward(cache.with_data(cache.data + bump))
                    down = reward(cache.with_data(cache.data - bump))
                numeric.append(float((up - down) / (2 * h)))
            numeric = torch.tensor(numeric, dtype=torch.float64)
            error = torch.linalg.vector_norm(numeric - grad[picks]) / torch.linalg.vector_norm(
                grad[picks]
            )
            log_test("test_finite_differences", f"instance {instance}: relative error {error:.2e}")
            assert error <= 1e-4

    def test_non_finite(self, decoder):
        _, cache = feed(decoder, [0, 4])
        with pytest.raises(NonFiniteGradient):
            reward_gradient(decoder, cache, lambda c: c.data.sum() * float("nan"))


@pytest.fixture(scope="module")
def repeated_corpus():
    return Dataset(
        tuple(LabeledExample("the cat sat on the mat", "x") for _ in range(16)), ("x",)
    )


class TestTraining:
    """LM training, perplexity and checkpoints."""

    def test_loss_decreases_and_frozen(self, repeated_corpus):
        vocab = build_vocab(repeated_corpus, NO_STOPWORDS)
        cfg = LmTrainingConfig(epochs=15, d_model=16, n_layer=1, n_head=2, batch_size=8)
        model = train_lm(repeated_corpus, vocab, cfg, NO_STOPWORDS)
        log_test("test_loss_decreases_and_frozen", f"loss {model.loss_history}")
        assert model.loss_history[-1] < model.loss_history[0]
        assert len(model.loss_history) == cfg.epochs + 2
        assert model.wte.weight.dtype == torch.float64
        assert not model.training
        assert not any(p.requires_grad for p in model.parameters())

    def test_seed_determinism(self, repeated_corpus):
        vocab = build_vocab(repeated_corpus, NO_STOPWORDS)
        cfg = LmTrainingConfig(epochs=2, d_model=16, n_layer=1, n_head=2, batch_size=4)
        first = train_lm(repeated_corpus, vocab, cfg, NO_STOPWORDS)
        second = train_lm(repeated_corpus, vocab, cfg, NO_STOPWORDS)
        for (name, a), (_, b) in zip(first.state_dict().items(), second.state_dict().items()):
            assert torch.equal(a, b), name

    def test_uniform_model_perplexity(self, repeated_corpus):
        vocab = build_vocab(repeated_corpus, NO_STOPWORDS)
        model = random_decoder(vocab_size=len(vocab))
        with torch.no_grad():
            model.wte.weight.zero_()
        ppl = nn_perplexity(model, repeated_corpus, vocab, NO_STOPWORDS)
        log_test("test_uniform_model_perplexity", f"ppl={ppl:.4f} |V|={len(vocab)}")
        assert ppl == pytest.approx(len(vocab))

    def test_perplexity_order_invariant(self, toy_lm, toy_vocab, toy_test):
        forward = nn_perplexity(toy_lm, toy_test, toy_vocab)
        backward = nn_perplexity(toy_lm, toy_test.with_examples(toy_test.examples[::-1]), toy_vocab)
        assert forward == pytest.approx(backward, rel=1e-9)
        assert forward >= 1.0

    @pytest.mark.slow
    def test_memorization(self, repeated_corpus):
        vocab = build_vocab(repeated_corpus, NO_STOPWORDS)
        cfg = LmTrainingConfig(epochs=200, batch_size=16)
        model = train_lm(repeated_corpus, vocab, cfg, NO_STOPWORDS)
        ppl = nn_perplexity(model, repeated_corpus, vocab, NO_STOPWORDS)
        log_test("test_memorization", f"ppl={ppl:.4f}")
        assert ppl < 1.2

    def test_checkpoint_round_trip(self, decoder, tmp_path):
        path = tmp_path / "model.galm"
        save_checkpoint(decoder, path)
        loaded = load_checkpoint(path)
        assert loaded.config == decoder.config
        assert loaded.wte.weight.dtype == torch.float64
        for (name, a), (_, b) in zip(decoder.state_dict().items(), loaded.state_dict().items()):
            assert torch.equal(a, b), name

    def test_checkpoint_bad_magic(self, tmp_path):
        path = tmp_path / "bad.galm"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_checkpoint_truncated(self, decoder, tmp_path):
        path = tmp_path / "model.galm"
        save_checkpoint(decoder, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)


class TestNgram:
    """Kneser-Ney perplexity scorer."""

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_distributions_normalized(self, toy_train, order):
        lm = train_ngram(toy_train, order)
        for history in lm.histories()[:40]:
            total = math.fsum(lm.prob(token, history) for token in lm.vocab)
            assert total == pytest.approx(1.0, abs=1e-9), history

    def test_uniform_unigram(self):
        ds = Dataset(tuple(LabeledExample("alpha beta gamma", "x") for _ in range(50)), ("x",))
        lm = train_ngram(ds, 1, NO_STOPWORDS)
        ppl = ngram_perplexity(lm, ds, NO_STOPWORDS)
        log_test("test_uniform_unigram", f"ppl={ppl:.4f} vocab={lm.vocab}")
        # alpha, beta, gamma and </s> are equally frequent; <unk> takes a sliver of mass
        assert ppl == pytest.approx(4.0, rel=0.01)

    def test_in_domain_lower(self, toy_train, toy_test):
        lm = train_ngram(toy_train, 3)
        off_domain = Dataset((LabeledExample("quantum lattice entropy spectra", "x"),), ("x",))
        assert ngram_perplexity(lm, toy_test) < ngram_perplexity(lm, off_domain)

    def test_table_round_trip(self, toy_train, toy_test, tmp_path):
        lm = train_ngram(toy_train, 3)
        path = tmp_path / "ngram.tsv"
        write_ngram(lm, path)
        again = read_ngram(path)
        assert again.order == 3
        assert ngram_perplexity(again, toy_test) == pytest.approx(ngram_perplexity(lm, toy_test))
