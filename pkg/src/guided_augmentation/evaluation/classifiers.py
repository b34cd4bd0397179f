"""Two small text classifiers used to measure augmentation benefit."""

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.nn import functional as F

from guided_augmentation.corpus import (
    Dataset,
    LabeledExample,
    PreprocessConfig,
    Vocab,
    build_vocab,
    preprocess,
)
from guided_augmentation.errors import ConfigError, GuidedAugmentationError
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)

PAD_ID = 0
_INIT_LOCK = threading.Lock()


class DegenerateTrainSet(GuidedAugmentationError):
    """Raised when a training set holds fewer than two classes."""

    code = "degenerate_train_set"


class Architecture(str, Enum):
    BAG = "bag"
    CNN = "cnn"


@dataclass(frozen=True)
class ClassifierConfig:
    embedding_dim: int = 32
    num_filters: int = 32
    window: int = 3
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-2

    def __post_init__(self):
        problems = []
        for name in ("embedding_dim", "num_filters", "window", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                problems.append(f"classifier {name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            problems.append(f"classifier learning_rate must be > 0, got {self.learning_rate}")
        if problems:
            raise ConfigError(problems)


class ClassifierModel(nn.Module, ABC):
    """Maps token id rows (padded with ``PAD_ID``) to one logit per class."""

    architecture: Architecture

    def __init__(self, vocab: Vocab, classes: Sequence[str], preprocess_cfg: PreprocessConfig):
        nn.Module.__init__(self)
        self.vocab = vocab
        self.classes = tuple(classes)
        self.preprocess_cfg = preprocess_cfg

    @abstractmethod
    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """(batch, width) ids -> (batch, classes) logits."""

    def encode(self, examples: Sequence[LabeledExample]) -> torch.Tensor:
        rows = []
        for example in examples:
            tokens = preprocess(example, self.preprocess_cfg, self.vocab)
            rows.append(self.vocab.encode(tokens) if tokens else [self.vocab.unk_id])
        width = max(len(row) for row in rows)
        ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        for i, row in enumerate(rows):
            ids[i, : len(row)] = torch.tensor(row)
        return ids

    def predict(self, ds: Dataset, batch_size: int = 256) -> List[str]:
        predictions: List[str] = []
        with torch.no_grad():
            for start in range(0, len(ds), batch_size):
                ids = self.encode(ds.examples[start : start + batch_size])
                predictions.extend(self.classes[i] for i in self(ids).argmax(dim=-1).tolist())
        return predictions

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(classes={self.classes}, vocab_size={len(self.vocab)})"
        )


class BagOfEmbeddingsClassifier(ClassifierModel):
    """Mean of token embeddings followed by a linear layer."""

    architecture = Architecture.BAG

    def __init__(self, vocab, classes, preprocess_cfg, cfg: ClassifierConfig):
        super().__init__(vocab, classes, preprocess_cfg)
        self.embed = nn.Embedding(len(vocab), cfg.embedding_dim, padding_idx=PAD_ID)
        self.out = nn.Linear(cfg.embedding_dim, len(self.classes))

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        mask = (ids != PAD_ID).unsqueeze(-1).to(self.embed.weight.dtype)
        summed = (self.embed(ids) * mask).sum(dim=1)
        return self.out(summed / mask.sum(dim=1).clamp_min(1.0))


class ConvWindowClassifier(ClassifierModel):
    """One convolution over token windows, max-pooled over positions."""

    architecture = Architecture.CNN

    def __init__(self, vocab, classes, preprocess_cfg, cfg: ClassifierConfig):
        super().__init__(vocab, classes, preprocess_cfg)
        self.embed = nn.Embedding(len(vocab), cfg.embedding_dim, padding_idx=PAD_ID)
        self.conv = nn.Conv1d(
            cfg.embedding_dim, cfg.num_filters, kernel_size=cfg.window, padding=cfg.window // 2
        )
        self.out = nn.Linear(cfg.num_filters, len(self.classes))

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        features = F.relu(self.conv(self.embed(ids).transpose(1, 2)))
        mask = (ids != PAD_ID).unsqueeze(1)
        features = features[..., : ids.size(1)].masked_fill(~mask, float("-inf"))
        return self.out(features.max(dim=-1).values)


_ARCHITECTURES = {
    Architecture.BAG: BagOfEmbeddingsClassifier,
    Architecture.CNN: ConvWindowClassifier,
}


def _labels(model: ClassifierModel, examples: Sequence[LabeledExample]) -> torch.Tensor:
    index = {label: i for i, label in enumerate(model.classes)}
    return torch.tensor([index[example.label] for example in examples], dtype=torch.long)


def train_classifier(
    arch: str,
    train: Dataset,
    seed: int,
    cfg: Optional[ClassifierConfig] = None,
    preprocess_cfg: Optional[PreprocessConfig] = None,
) -> ClassifierModel:
    """Train one classifier; identical weights for identical inputs and seed."""
    cfg = cfg or ClassifierConfig()
    preprocess_cfg = preprocess_cfg or PreprocessConfig()
    architecture = Architecture(arch)
    present = [label for label, n in train.class_counts().items() if n > 0]
    if len(present) < 2:
        raise DegenerateTrainSet(f"Training set holds {len(present)} class(es): {present}")

    vocab = build_vocab(train, preprocess_cfg)
    with _INIT_LOCK, torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = _ARCHITECTURES[architecture](vocab, train.classes, preprocess_cfg, cfg)

    ids, labels = model.encode(train.examples), _labels(model, train.examples)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffler = torch.Generator().manual_seed(seed)
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        order = torch.randperm(len(train), generator=shuffler)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss = F.cross_entropy(model(ids[batch]), labels[batch])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(batch)
        logger.debug(f"{architecture.value} epoch {epoch}: loss {epoch_loss / len(train):.4f}")

    model.eval()
    model.requires_grad_(False)
    logger.debug(f"Trained {model!r} on {len(train)} rows (seed {seed})")
    return model


def accuracy(model: ClassifierModel, ds: Dataset) -> float:
    predictions = model.predict(ds)
    return sum(p == t for p, t in zip(predictions, ds.labels)) / max(len(ds), 1)


def architectures() -> Tuple[str, ...]:
    return tuple(a.value for a in Architecture)
