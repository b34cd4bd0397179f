"""Tests for ingestion, preprocessing, splits, starvation and the vocabulary."""

import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guided_augmentation.corpus import (
    Dataset,
    EmptyDataset,
    EmptyVocab,
    LabeledExample,
    MalformedRow,
    PreprocessConfig,
    Provenance,
    SplitTag,
    StarvedClassEmpty,
    StratifyImpossible,
    allocate_largest_remainder,
    build_vocab,
    clean,
    ingest,
    preprocess,
    read_vocab,
    split_stratified,
    starve,
    write_jsonl,
    write_vocab,
)

logger = logging.getLogger(__name__)


def log_test(test_name, message):
    """Simple test logging."""
    logger.info(f"TEST: {test_name} - {message}")


def make_dataset(counts, prefix="word"):
    """Dataset with ``counts[label]`` distinct one-sentence examples per class."""
    examples = [
        LabeledExample(f"{prefix} {label} {i}", label)
        for label, n in counts.items()
        for i in range(n)
    ]
    return Dataset(tuple(examples), tuple(counts))


NO_STOPWORDS = PreprocessConfig(stopwords=frozenset())


class TestIngest:
    """Reading JSONL, CSV and TSV datasets."""

    def test_jsonl(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            '{"text":"good day","label":"pos"}\n{"text":"bad day","label":"neg"}\n',
            encoding="utf-8",
        )
        ds = ingest(path, "jsonl")
        log_test("test_jsonl", f"classes={ds.classes} size={len(ds)}")
        assert ds.classes == ("pos", "neg")
        assert len(ds) == 2
        assert ds.examples[0] == LabeledExample("good day", "pos")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(EmptyDataset):
            ingest(path, "jsonl")

    def test_csv_missing_label_column(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("text\nhello there\n", encoding="utf-8")
        with pytest.raises(MalformedRow):
            ingest(path, "csv")

    def test_csv_empty_label_reports_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("text,label\nhello,pos\nworld,\n", encoding="utf-8")
        with pytest.raises(MalformedRow) as info:
            ingest(path, "csv")
        log_test("test_csv_empty_label_reports_line", str(info.value))
        assert "3" in str(info.value)

    def test_tsv_with_explicit_classes(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text("text\tlabel\nhello\tpos\nworld\tneg\n", encoding="utf-8")
        ds = ingest(path, "tsv", classes=["neg", "pos"])
        assert ds.classes == ("neg", "pos")

    def test_label_outside_explicit_classes(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"text":"x","label":"other"}\n', encoding="utf-8")
        with pytest.raises(MalformedRow):
            ingest(path, "jsonl", classes=["pos"])

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"text":"x","label":"pos"}\n{not json\n', encoding="utf-8")
        with pytest.raises(MalformedRow) as info:
            ingest(path, "jsonl")
        assert info.value.line == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest(tmp_path / "missing.jsonl")

    def test_jsonl_round_trip(self, tmp_path):
        ds = Dataset(
            (
                LabeledExample("first text", "b"),
                LabeledExample("second text", "a", Provenance.BOOSTED, "a-00000"),
                LabeledExample("third", "b"),
            ),
            ("a", "b"),
            SplitTag.TRAIN,
        )
        path = tmp_path / "round.jsonl"
        write_jsonl(ds, path)
        again = ingest(path, "jsonl")
        lines = path.read_text(encoding="utf-8").splitlines()
        log_test("test_jsonl_round_trip", f"{len(again)} rows, header={lines[0]}")
        assert again == ds
        assert json.loads(lines[0]) == {"classes": ["a", "b"], "split": "train"}
        assert json.loads(lines[2])["ref"] == "a-00000"

    def test_explicit_arguments_override_header(self, tmp_path):
        ds = Dataset((LabeledExample("x", "b"), LabeledExample("y", "a")), ("a", "b"))
        path = tmp_path / "data.jsonl"
        write_jsonl(ds, path)
        again = ingest(path, "jsonl", classes=["b", "a"], split_tag=SplitTag.TEST)
        assert again.classes == ("b", "a")
        assert again.split_tag is SplitTag.TEST

    def test_header_with_unknown_split(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            '{"classes":["pos"],"split":"dev"}\n{"text":"x","label":"pos"}\n', encoding="utf-8"
        )
        with pytest.raises(MalformedRow) as info:
            ingest(path, "jsonl")
        assert info.value.line == 1

    def test_header_without_rows(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"classes":["pos","neg"],"split":"unsplit"}\n', encoding="utf-8")
        with pytest.raises(EmptyDataset):
            ingest(path, "jsonl")

    @settings(max_examples=50, deadline=None)
    @given(
        classes=st.lists(
            st.text(alphabet="abcdefgh", min_size=1, max_size=4),
            min_size=1,
            max_size=5,
            unique=True,
        ),
        split_tag=st.sampled_from(list(SplitTag)),
        data=st.data(),
    )
    def test_round_trip_any_class_order(self, tmp_path_factory, classes, split_tag, data):
        rows = data.draw(
            st.lists(
                st.builds(
                    LabeledExample,
                    text=st.text(max_size=20),
                    label=st.sampled_from(classes),
                    provenance=st.sampled_from(list(Provenance)),
                    ref=st.one_of(st.none(), st.text(alphabet="abc-0123", min_size=1)),
                ),
                min_size=1,
                max_size=12,
            )
        )
        ds = Dataset(tuple(rows), tuple(classes), split_tag)
        path = tmp_path_factory.mktemp("round") / "data.jsonl"
        write_jsonl(ds, path)
        assert ingest(path, "jsonl") == ds


class TestPreprocess:
    """Tokenization, stripping and the length filter."""

    def test_stopwords_and_punctuation(self):
        cfg = PreprocessConfig(stopwords=frozenset({"so", "the", "is", "very"}))
        tokens = preprocess(LabeledExample("So Cute! The baby is very lovely!", "pos"), cfg)
        log_test("test_stopwords_and_punctuation", f"tokens={tokens}")
        assert tokens == ["cute", "baby", "lovely"]

    def test_everything_stripped(self):
        assert preprocess(LabeledExample("#fun http://x.co !!!", "pos"), NO_STOPWORDS) is None

    def test_length_limit(self):
        words = " ".join(f"tok{i}" for i in range(31))
        assert preprocess(LabeledExample(words, "pos"), NO_STOPWORDS) is None
        words = " ".join(f"tok{i}" for i in range(30))
        assert len(preprocess(LabeledExample(words, "pos"), NO_STOPWORDS)) == 30

    def test_unknown_tokens_mapped(self):
        vocab = build_vocab(Dataset((LabeledExample("alpha beta", "x"),), ("x",)), NO_STOPWORDS)
        tokens = preprocess(LabeledExample("alpha gamma", "x"), NO_STOPWORDS, vocab)
        assert tokens == ["alpha", vocab.unk_token]

    def test_clean_counts_drops(self):
        ds = Dataset(
            (
                LabeledExample("keep this one", "a"),
                LabeledExample("#only #tags", "a"),
                LabeledExample(" ".join(["long"] * 40), "b"),
                LabeledExample("fine", "b"),
            ),
            ("a", "b"),
        )
        cleaned, stats = clean(ds, NO_STOPWORDS)
        log_test("test_clean_counts_drops", f"stats={stats}")
        assert cleaned.texts == ["keep this one", "fine"]
        assert stats.dropped_empty == {"a": 1, "b": 0}
        assert stats.dropped_length == {"a": 0, "b": 1}
        assert stats.total_dropped == 2


class TestSplitAndStarve:
    """Stratified split and starvation subsets."""

    def test_split_proportions(self):
        ds = make_dataset({"A": 60, "B": 40})
        train, test = split_stratified(ds, 0.2, seed=3)
        counts = f"train={train.class_counts()} test={test.class_counts()}"
        log_test("test_split_proportions", counts)
        assert train.class_counts() == {"A": 48, "B": 32}
        assert test.class_counts() == {"A": 12, "B": 8}
        assert train.split_tag is SplitTag.TRAIN
        assert test.split_tag is SplitTag.TEST
        assert not set(train.texts) & set(test.texts)

    def test_split_deterministic(self):
        ds = make_dataset({"A": 60, "B": 40})
        assert split_stratified(ds, 0.2, seed=5) == split_stratified(ds, 0.2, seed=5)

    def test_split_needs_two_per_class(self):
        with pytest.raises(StratifyImpossible):
            split_stratified(make_dataset({"A": 10, "B": 1}), 0.2, seed=0)

    @settings(max_examples=60, deadline=None)
    @given(
        counts=st.lists(st.integers(min_value=2, max_value=60), min_size=1, max_size=5),
        test_fraction=st.floats(min_value=0.05, max_value=0.95),
        seed=st.integers(min_value=0, max_value=2**16),
    )
    def test_split_within_one_example(self, counts, test_fraction, seed):
        ds = make_dataset({f"c{i}": n for i, n in enumerate(counts)})
        train, test = split_stratified(ds, test_fraction, seed)
        assert len(train) + len(test) == len(ds)
        for label, n in ds.class_counts().items():
            in_test = test.class_counts()[label]
            assert 1 <= in_test <= n - 1
            assert abs(in_test - n * test_fraction) <= 1 or in_test in (1, n - 1)

    def test_starve_identity(self):
        ds = make_dataset({"A": 8, "B": 2})
        assert starve(ds, 1.0, seed=0) is ds

    def test_starve_proportional(self):
        starved = starve(make_dataset({"A": 80, "B": 20}), 0.05, seed=1)
        log_test("test_starve_proportional", f"counts={starved.class_counts()}")
        assert starved.class_counts() == {"A": 4, "B": 1}

    def test_starve_empty_class(self):
        with pytest.raises(StarvedClassEmpty):
            starve(make_dataset({"A": 50, "B": 50}), 0.001, seed=0)

    def test_largest_remainder(self):
        shares = allocate_largest_remainder({"a": 1.5, "b": 1.5, "c": 1.0}, 4, ["a", "b", "c"])
        assert shares == {"a": 2, "b": 1, "c": 1}


class TestVocab:
    """Vocabulary construction."""

    def test_counts_and_specials(self):
        ds = Dataset((LabeledExample("a a b", "x"),), ("x",))
        vocab = build_vocab(ds, NO_STOPWORDS)
        log_test("test_counts_and_specials", f"tokens={vocab.tokens}")
        assert len(vocab) == 5
        assert vocab.tokens[3:] == ("a", "b")
        assert vocab.decode([vocab.bos_id, 3, 4, vocab.eos_id]) == ["a", "b"]
        assert vocab.id_of("zzz") == vocab.unk_id

    def test_min_count_too_high(self):
        ds = Dataset((LabeledExample("a a b", "x"),), ("x",))
        with pytest.raises(EmptyVocab):
            build_vocab(ds, NO_STOPWORDS, min_count=3)

    def test_file_keeps_ids(self, tmp_path):
        ds = Dataset((LabeledExample("b c c a a a", "x"),), ("x",))
        vocab = build_vocab(ds, NO_STOPWORDS)
        write_vocab(vocab, tmp_path / "vocab.txt")
        again = read_vocab(tmp_path / "vocab.txt")
        assert again.tokens == vocab.tokens
        assert again.id_of("a") == 3
