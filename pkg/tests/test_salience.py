"""Tests for salience counting, scoring and lexicon construction."""

import logging
import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guided_augmentation.corpus import Dataset, LabeledExample, PreprocessConfig
from guided_augmentation.salience import (
    EmptyClass,
    EmptyLexiconClass,
    UnknownClass,
    build_lexicon,
    count,
    lexicon_from_dataset,
    read_lexicon,
    salience_score,
    write_lexicon,
)

logger = logging.getLogger(__name__)


def log_test(test_name, message):
    """Simple test logging."""
    logger.info(f"TEST: {test_name} - {message}")


NO_STOPWORDS = PreprocessConfig(stopwords=frozenset())


@pytest.fixture(scope="module")
def toy_table():
    ds = Dataset(
        (LabeledExample("good good great", "A"), LabeledExample("bad good", "B")),
        ("A", "B"),
    )
    return count(ds, NO_STOPWORDS)


def brute_force_scores(texts_by_class):
    """Geometric-mean salience of every (word, class) pair straight from the texts."""
    per_class = {label: Counter(" ".join(texts).split()) for label, texts in texts_by_class.items()}
    scores = {}
    for label, counts in per_class.items():
        class_total = sum(counts.values())
        for word, in_class in counts.items():
            word_total = sum(c[word] for c in per_class.values())
            scores[(word, label)] = math.sqrt(in_class / word_total * in_class / class_total)
    return scores


class TestCounting:
    """Per-class counts and their marginals."""

    def test_toy_counts(self, toy_table):
        log_test("test_toy_counts", f"totals={dict(toy_table.class_totals)}")
        assert toy_table.count("good", "A") == 2
        assert toy_table.count("good", "B") == 1
        assert toy_table.class_totals["A"] == 3
        assert toy_table.word_totals["good"] == 3

    def test_order_invariant(self):
        examples = (
            LabeledExample("good good great", "A"),
            LabeledExample("bad good", "B"),
            LabeledExample("great bad", "A"),
        )
        forward = count(Dataset(examples, ("A", "B")), NO_STOPWORDS)
        backward = count(Dataset(examples[::-1], ("A", "B")), NO_STOPWORDS)
        assert forward.class_counts == backward.class_counts

    def test_empty_class(self):
        ds = Dataset((LabeledExample("#tag", "A"),), ("A",))
        with pytest.raises(EmptyClass):
            count(ds, NO_STOPWORDS)

    def test_unknown_class(self, toy_table):
        with pytest.raises(UnknownClass):
            toy_table.count("good", "C")


class TestScore:
    """Geometric-mean salience."""

    def test_exclusive_only_token(self):
        ds = Dataset((LabeledExample("solo", "A"), LabeledExample("other", "B")), ("A", "B"))
        assert salience_score(count(ds, NO_STOPWORDS), "solo", "A") == pytest.approx(1.0)

    def test_absent_word(self, toy_table):
        assert salience_score(toy_table, "bad", "A") == 0.0

    def test_hand_arithmetic(self, toy_table):
        score = salience_score(toy_table, "good", "A")
        log_test("test_hand_arithmetic", f"score={score:.4f}")
        assert score == pytest.approx(2 / 3)
        assert salience_score(toy_table, "great", "A") == pytest.approx(math.sqrt(1 / 3))


class TestLexicon:
    """Top-N lexicons."""

    def test_top_word(self, toy_table):
        lexicon = build_lexicon(toy_table, 1, min_count=1)
        log_test("test_top_word", f"A={lexicon.entries['A']}")
        assert lexicon.words("A") == ["good"]

    def test_saturation(self, toy_table):
        lexicon = build_lexicon(toy_table, 50, min_count=1)
        assert lexicon.words("A") == ["good", "great"]
        assert sorted(lexicon.words("B")) == ["bad", "good"]

    def test_min_count_filters(self, toy_table):
        with pytest.raises(EmptyLexiconClass):
            build_lexicon(toy_table, 3, min_count=2)

    def test_fallback_to_min_count_one(self):
        ds = Dataset(
            (LabeledExample("alpha alpha beta", "A"), LabeledExample("gamma delta", "B")),
            ("A", "B"),
        )
        lexicon = lexicon_from_dataset(ds, NO_STOPWORDS, 2, min_count=2)
        assert lexicon.words("A") == ["alpha", "beta"]
        assert lexicon.words("B") == ["delta", "gamma"]

    def test_unknown_class(self, toy_table):
        with pytest.raises(UnknownClass):
            build_lexicon(toy_table, 1, min_count=1).words("C")

    def test_file_round_trip(self, toy_table, tmp_path):
        lexicon = build_lexicon(toy_table, 2, min_count=1)
        path = tmp_path / "lexicon.tsv"
        write_lexicon(lexicon, path)
        assert read_lexicon(path) == lexicon

    @settings(max_examples=50, deadline=None)
    @given(
        corpus=st.lists(
            st.tuples(
                st.sampled_from(["A", "B", "C"]),
                st.lists(st.sampled_from(list("pqrstuvw")), min_size=1, max_size=6),
            ),
            min_size=3,
            max_size=10,
        )
    )
    def test_matches_brute_force(self, corpus):
        labels = sorted({label for label, _ in corpus})
        texts_by_class = {label: [] for label in labels}
        for label, words in corpus:
            texts_by_class[label].append(" ".join(words))
        ds = Dataset(
            tuple(LabeledExample(" ".join(words), label) for label, words in corpus),
            tuple(labels),
        )
        oracle = brute_force_scores(texts_by_class)
        lexicon = build_lexicon(count(ds, NO_STOPWORDS), 100, min_count=1)

        for label in labels:
            got = dict(lexicon.entries[label])
            expected = {word: s for (word, c), s in oracle.items() if c == label}
            assert got.keys() == expected.keys()
            for word, score in expected.items():
                assert got[word] == pytest.approx(score)
            ranked = [s for _, s in lexicon.entries[label]]
            assert ranked == sorted(ranked, reverse=True)
