"""Small causal transformer decoder with an explicit key/value cache."""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from torch.nn import functional as F

from guided_augmentation.corpus import Dataset, PreprocessConfig, Vocab, iter_token_lists
from guided_augmentation.errors import ConfigError, GuidedAugmentationError
from guided_augmentation.lm.base import ContextOverflow, KvCache, LanguageModel
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)

IGNORE_INDEX = -100


class LmDivergence(GuidedAugmentationError):
    """Raised when the training loss stops being finite."""

    code = "lm_divergence"

    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        super().__init__(f"Loss became {loss} at epoch {epoch}, step {step}")


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layer: int = 2
    n_head: int = 2
    context_length: int = 32

    def __post_init__(self):
        problems = []
        if self.vocab_size < 4:
            problems.append(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.d_model % self.n_head:
            problems.append(f"d_model {self.d_model} is not divisible by n_head {self.n_head}")
        if self.context_length < 31:
            problems.append(f"context_length must be >= 31, got {self.context_length}")
        if problems:
            raise ConfigError(problems)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_head


class CausalSelfAttention(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.n_head = config.n_head
        self.d_model = config.d_model
        self.c_attn = nn.Linear(config.d_model, 3 * config.d_model)
        self.c_proj = nn.Linear(config.d_model, config.d_model)

    def project(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(B, T, C) -> q, k, v each (B, heads, T, head_dim)."""
        B, T, C = x.size()
        q, k, v = self.c_attn(x).split(self.d_model, dim=2)
        shape = (B, T, self.n_head, C // self.n_head)
        return (
            q.view(shape).transpose(1, 2),
            k.view(shape).transpose(1, 2),
            v.view(shape).transpose(1, 2),
        )

    def attend(
        self,
        q: torch.Tensor,
        k: torch.Tensor,
        v: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        att = (q @ k.transpose(-2, -1)) * (1.0 / math.sqrt(k.size(-1)))
        if mask is not None:
            att = att.masked_fill(~mask, float("-inf"))
        y = F.softmax(att, dim=-1) @ v
        B, _, T, _ = y.size()
        return self.c_proj(y.transpose(1, 2).contiguous().view(B, T, self.d_model))


class MLP(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.c_fc = nn.Linear(config.d_model, 4 * config.d_model)
        self.gelu = nn.GELU()
        self.c_proj = nn.Linear(4 * config.d_model, config.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.c_proj(self.gelu(self.c_fc(x)))


class Block(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln_2 = nn.LayerNorm(config.d_model)
        self.mlp = MLP(config)


class TinyDecoder(nn.Module, LanguageModel):
    """Pre-norm GPT-style decoder with tied input/output embeddings."""

    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        self.wte = nn.Embedding(config.vocab_size, config.d_model)
        self.wpe = nn.Embedding(config.context_length, config.d_model)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layer))
        self.ln_f = nn.LayerNorm(config.d_model)
        self.loss_history: List[float] = []
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    @property
    def context_length(self) -> int:
        return self.config.context_length

    def embedding(self) -> torch.Tensor:
        return self.wte.weight.detach()

    def _head(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(self.ln_f(x), self.wte.weight)

    def _embed(self, token: int, position: int) -> torch.Tensor:
        device = self.wte.weight.device
        return (
            self.wte(torch.tensor([[token]], device=device))
            + self.wpe(torch.tensor([[position]], device=device))
        )

    def forward(self, idx: torch.Tensor) -> torch.Tensor:
        """Logits at every position of ``idx`` (B, T) -> (B, T, vocab)."""
        B, T = idx.size()
        if T > self.context_length:
            raise ContextOverflow(f"Sequence of {T} exceeds context {self.context_length}")
        positions = torch.arange(T, device=idx.device)
        x = self.wte(idx) + self.wpe(positions)[None]
        mask = torch.tril(torch.ones(T, T, dtype=torch.bool, device=idx.device))
        for block in self.blocks:
            q, k, v = block.attn.project(block.ln_1(x))
            x = x + block.attn.attend(q, k, v, mask)
            x = x + block.mlp(block.ln_2(x))
        return self._head(x)

    def new_cache(self) -> KvCache:
        c = self.config
        data = torch.zeros(
            c.n_layer, 2, c.n_head, 0, c.head_dim,
            dtype=self.wte.weight.dtype, device=self.wte.weight.device,
        )
        return KvCache(data=data, tokens=())

    def step(self, token: int, cache: KvCache) -> Tuple[torch.Tensor, KvCache]:
        position = cache.steps
        if position >= self.context_length:
            raise ContextOverflow(
                f"Prefix of {position} tokens is at the context limit {self.context_length}"
            )
        x = self._embed(token, position)
        fresh = []
        for layer, block in enumerate(self.blocks):
            q, k, v = block.attn.project(block.ln_1(x))
            keys = torch.cat([cache.data[layer, 0][None], k], dim=2)
            values = torch.cat([cache.data[layer, 1][None], v], dim=2)
            x = x + block.attn.attend(q, keys, values)
            x = x + block.mlp(block.ln_2(x))
            fresh.append(torch.stack([k[0], v[0]]))
        data = torch.cat([cache.data, torch.stack(fresh)], dim=3)
        return self._head(x)[0, -1], KvCache(data=data, tokens=cache.tokens + (token,))

    def readout(self, cache: KvCache) -> torch.Tensor:
        if cache.steps == 0:
            raise ValueError("Cannot read logits from an empty cache")
        x = self._embed(cache.tokens[-1], cache.steps - 1)
        for layer, block in enumerate(self.blocks):
            q, _, _ = block.attn.project(block.ln_1(x))
            x = x + block.attn.attend(q, cache.data[layer, 0][None], cache.data[layer, 1][None])
            x = x + block.mlp(block.ln_2(x))
        return self._head(x)[0, -1]


@dataclass(frozen=True)
class LmTrainingConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 3e-3
    d_model: int = 64
    n_layer: int = 2
    n_head: int = 2
    context_length: int = 32
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append(f"lm epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"lm batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            problems.append(f"lm learning_rate must be > 0, got {self.learning_rate}")
        if problems:
            raise ConfigError(problems)


def encode_sequences(
    ds: Dataset, vocab: Vocab, cfg: PreprocessConfig, context_length: int
) -> List[List[int]]:
    """``[BOS] + ids + [EOS]`` per surviving example, cut to fit the context."""
    sequences = []
    for _, tokens in iter_token_lists(ds, cfg):
        ids = [vocab.bos_id] + vocab.encode(tokens) + [vocab.eos_id]
        sequences.append(ids[: context_length + 1])
    return sequences


def _batch(sequences: Sequence[List[int]]) -> Tuple[torch.Tensor, torch.Tensor]:
    width = max(len(seq) for seq in sequences) - 1
    inputs = torch.full((len(sequences), width), 0, dtype=torch.long)
    targets = torch.full((len(sequences), width), IGNORE_INDEX, dtype=torch.long)
    for row, seq in enumerate(sequences):
        inputs[row, : len(seq) - 1] = torch.tensor(seq[:-1])
        targets[row, : len(seq) - 1] = torch.tensor(seq[1:])
    return inputs, targets


def _mean_loss(model: TinyDecoder, sequences: Sequence[List[int]], batch_size: int) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            inputs, targets = _batch(sequences[start : start + batch_size])
            inputs = inputs.to(model.wte.weight.device)
            logits = model(inputs)
            total += F.cross_entropy(
                logits.reshape(-1, logits.size(-1)),
                targets.reshape(-1).to(logits.device),
                ignore_index=IGNORE_INDEX,
                reduction="sum",
            ).item()
            count += int((targets != IGNORE_INDEX).sum())
    return total / max(count, 1)


def train_lm(
    train: Dataset,
    vocab: Vocab,
    cfg: LmTrainingConfig,
    preprocess_cfg: Optional[PreprocessConfig] = None,
) -> TinyDecoder:
    """Train the decoder on the text of ``train``; deterministic for a fixed seed.

    The returned model is in 64-bit precision, in eval mode, with frozen
    parameters. ``loss_history`` holds the initial loss, each epoch's mean
    training loss and the final loss.
    """
    preprocess_cfg = preprocess_cfg or PreprocessConfig()
    sequences = encode_sequences(train, vocab, preprocess_cfg, cfg.context_length)
    if not sequences:
        raise GuidedAugmentationError("No training sequence survives preprocessing")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = TinyDecoder(
            DecoderConfig(
                vocab_size=len(vocab),
                d_model=cfg.d_model,
                n_layer=cfg.n_layer,
                n_head=cfg.n_head,
                context_length=cfg.context_length,
            )
        )
        shuffler = torch.Generator().manual_seed(cfg.seed)
        optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=0.0)

        model.eval()
        initial = _mean_loss(model, sequences, cfg.batch_size)
        history = [initial]
        logger.info(
            f"Training LM on {len(sequences)} sequences, |V|={len(vocab)}, "
            f"initial loss {initial:.4f}"
        )

        step = 0
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = torch.randperm(len(sequences), generator=shuffler).tolist()
            epoch_loss, batches = 0.0, 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [sequences[i] for i in order[start : start + cfg.batch_size]]
                inputs, targets = _batch(batch)
                logits = model(inputs)
                loss = F.cross_entropy(
                    logits.reshape(-1, logits.size(-1)),
                    targets.reshape(-1),
                    ignore_index=IGNORE_INDEX,
                )
                step += 1
                if not torch.isfinite(loss):
                    raise LmDivergence(epoch, step, loss.item())
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                epoch_loss += loss.item()
                batches += 1
            history.append(epoch_loss / batches)
            logger.debug(f"Epoch {epoch}/{cfg.epochs}: loss {history[-1]:.4f}")
            if epoch == cfg.epochs or epoch % 10 == 0:
                logger.info(f"Epoch {epoch}/{cfg.epochs}: loss {history[-1]:.4f}")

    model = model.double().eval()
    model.requires_grad_(False)
    final = _mean_loss(model, sequences, cfg.batch_size)
    history.append(final)
    model.loss_history = history
    logger.info(f"LM trained: loss {initial:.4f} -> {final:.4f}")
    return model


def nn_perplexity(
    model: TinyDecoder,
    ds: Dataset,
    vocab: Vocab,
    preprocess_cfg: Optional[PreprocessConfig] = None,
) -> float:
    """exp(mean per-token negative log-likelihood), end-of-sequence included."""
    preprocess_cfg = preprocess_cfg or PreprocessConfig()
    sequences = encode_sequences(ds, vocab, preprocess_cfg, model.context_length)
    if not sequences:
        raise GuidedAugmentationError("No sequence to score")
    was_training = model.training
    model.eval()
    try:
        return math.exp(_mean_loss(model, sequences, batch_size=64))
    finally:
        model.train(was_training)
