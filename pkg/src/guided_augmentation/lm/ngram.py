"""Interpolated Kneser-Ney n-gram language model for perplexity scoring.

Probabilities are stored in backoff form: for every seen history h the
interpolated probability of each seen continuation plus the interpolation
weight of h. An unseen continuation of h costs weight(h) times its
probability under the shorter history, which is exactly the interpolated
estimate, so every conditional distribution sums to one.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

from guided_augmentation.corpus import (
    BOS_TOKEN,
    EOS_TOKEN,
    UNK_TOKEN,
    Dataset,
    EmptyCorpus,
    PreprocessConfig,
    iter_token_lists,
)
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)

History = Tuple[str, ...]
BACKOFF_TOKEN = "<backoff>"


@dataclass(frozen=True)
class NgramLm:
    order: int
    vocab: Tuple[str, ...]
    probs: Mapping[History, Mapping[str, float]]
    backoff: Mapping[History, float]

    def prob(self, token: str, history: Sequence[str] = ()) -> float:
        """P(token | history); unknown tokens are scored as ``<unk>``."""
        if token not in self.probs[()]:
            token = UNK_TOKEN
        context = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        return self._prob(token, context)

    def _prob(self, token: str, context: History) -> float:
        row = self.probs.get(context)
        if row is not None and token in row:
            return row[token]
        if not context:
            return self.probs[()][token]
        if context in self.backoff:
            return self.backoff[context] * self._prob(token, context[1:])
        return self._prob(token, context[1:])

    def histories(self) -> List[History]:
        return sorted(self.probs)


def _discount(counts: Iterable[int]) -> float:
    """Absolute discount n1 / (n1 + 2 n2), clipped to [0.05, 0.95]."""
    tally = Counter(counts)
    n1, n2 = tally.get(1, 0), tally.get(2, 0)
    if n1 == 0 or n2 == 0:
        return 0.5
    return min(max(n1 / (n1 + 2 * n2), 0.05), 0.95)


def _pad(tokens: Sequence[str], order: int) -> List[str]:
    return [BOS_TOKEN] * (order - 1) + list(tokens) + [EOS_TOKEN]


def train_ngram(
    train: Dataset, order: int = 3, preprocess_cfg: PreprocessConfig = None
) -> NgramLm:
    """Fit an interpolated Kneser-Ney model of the given order.

    Order 1 is a discounted unigram model mixed with a uniform floor.
    """
    if not 1 <= order <= 5:
        raise ValueError(f"n-gram order must be in 1..5, got {order}")
    preprocess_cfg = preprocess_cfg or PreprocessConfig()
    sentences = [tokens for _, tokens in iter_token_lists(train, preprocess_cfg)]
    if not sentences:
        raise EmptyCorpus("No sentence to train the n-gram model on")

    raw: Dict[History, Counter] = defaultdict(Counter)
    types: Dict[int, set] = defaultdict(set)
    for tokens in sentences:
        padded = _pad(tokens, order)
        for i in range(order - 1, len(padded)):
            gram = tuple(padded[i - order + 1 : i + 1])
            raw[gram[:-1]][gram[-1]] += 1
            for m in range(2, order + 1):
                types[m].add(tuple(padded[i - m + 1 : i + 1]))

    # Lower orders count distinct left extensions instead of occurrences.
    tables: Dict[int, Dict[History, Counter]] = {order: raw}
    for m in range(1, order):
        continuation: Dict[History, Counter] = defaultdict(Counter)
        for gram in types[m + 1]:
            continuation[gram[1:-1]][gram[-1]] += 1
        tables[m] = continuation

    vocab = tuple(sorted(set(tables[1][()]) | {EOS_TOKEN, UNK_TOKEN}))
    probs: Dict[History, Dict[str, float]] = {}
    backoff: Dict[History, float] = {}

    unigrams = tables[1][()]
    total = sum(unigrams.values())
    discount = _discount(unigrams.values())
    floor = discount * len(unigrams) / total / len(vocab)
    probs[()] = {
        token: max(unigrams.get(token, 0) - discount, 0.0) / total + floor for token in vocab
    }

    partial = NgramLm(order=order, vocab=vocab, probs=probs, backoff=backoff)
    for m in range(2, order + 1):
        table = tables[m]
        discount = _discount(c for row in table.values() for c in row.values())
        rows: Dict[History, Dict[str, float]] = {}
        for history, row in table.items():
            total = sum(row.values())
            weight = discount * len(row) / total
            rows[history] = {
                token: (count - discount) / total + weight * partial._prob(token, history[1:])
                for token, count in row.items()
            }
            backoff[history] = weight
        probs.update(rows)

    logger.info(
        f"Trained {order}-gram model on {len(sentences)} sentences, |V|={len(vocab)}, "
        f"{len(probs)} histories"
    )
    return NgramLm(order=order, vocab=vocab, probs=probs, backoff=backoff)


def ngram_perplexity(
    lm: NgramLm, ds: Dataset, preprocess_cfg: PreprocessConfig = None
) -> float:
    """exp(mean negative log-likelihood per token, end-of-sequence included)."""
    preprocess_cfg = preprocess_cfg or PreprocessConfig()
    log_likelihood, count = 0.0, 0
    for _, tokens in iter_token_lists(ds, preprocess_cfg):
        padded = _pad(tokens, lm.order)
        for i in range(lm.order - 1, len(padded)):
            log_likelihood += math.log(lm.prob(padded[i], padded[max(i - lm.order + 1, 0) : i]))
            count += 1
    if count == 0:
        raise EmptyCorpus("No sentence to score")
    return math.exp(-log_likelihood / count)


def write_ngram(lm: NgramLm, path: Path) -> None:
    """Sorted text table: context, token, log10 probability (and backoff weights)."""
    lines = []
    for history in lm.histories():
        context = " ".join(history)
        for token in sorted(lm.probs[history]):
            lines.append(f"{context}\t{token}\t{math.log10(lm.probs[history][token])!r}")
        if history in lm.backoff:
            lines.append(f"{context}\t{BACKOFF_TOKEN}\t{math.log10(lm.backoff[history])!r}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# order\t{lm.order}\n")
        handle.write("\n".join(lines) + "\n")


def read_ngram(path: Path) -> NgramLm:
    order = None
    probs: Dict[History, Dict[str, float]] = defaultdict(dict)
    backoff: Dict[History, float] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# order\t"):
                order = int(line.split("\t")[1])
                continue
            context, token, value = line.split("\t")
            history = tuple(context.split()) if context else ()
            if token == BACKOFF_TOKEN:
                backoff[history] = 10.0 ** float(value)
            else:
                probs[history][token] = 10.0 ** float(value)
    if order is None or () not in probs:
        raise EmptyCorpus(f"{path} is not an n-gram table")
    return NgramLm(
        order=order, vocab=tuple(sorted(probs[()])), probs=dict(probs), backoff=backoff
    )
