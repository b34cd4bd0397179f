"""Hand-set language models with closed-form next-token distributions."""

from typing import Sequence, Tuple

import torch

from guided_augmentation.corpus import SPECIAL_TOKENS, Vocab
from guided_augmentation.lm import DecoderConfig, KvCache, LanguageModel, TinyDecoder


class EmbeddingReadoutModel(LanguageModel):
    """Next-token logits are ``E @ key`` of the last cached key.

    Feeding token t caches E[t] as both key and value, so the logits after
    a prefix are the dot products of every embedding with the last token's.
    """

    def __init__(self, emb: Sequence[Sequence[float]], context_length: int = 32):
        self.emb = torch.tensor(emb, dtype=torch.float64)
        self._context_length = context_length

    @property
    def vocab_size(self) -> int:
        return self.emb.size(0)

    @property
    def context_length(self) -> int:
        return self._context_length

    def embedding(self) -> torch.Tensor:
        return self.emb

    def new_cache(self) -> KvCache:
        return KvCache(torch.zeros(1, 2, 1, 0, self.emb.size(1), dtype=torch.float64), ())

    def step(self, token: int, cache: KvCache) -> Tuple[torch.Tensor, KvCache]:
        entry = torch.stack([self.emb[token], self.emb[token]])[None, :, None, None, :]
        extended = KvCache(torch.cat([cache.data, entry], dim=3), cache.tokens + (token,))
        return self.readout(extended), extended

    def readout(self, cache: KvCache) -> torch.Tensor:
        if cache.steps == 0:
            raise ValueError("Cannot read out an empty cache")
        return self.emb @ cache.data[0, 0, 0, -1]


# ids: <s>, </s>, <unk>, "good"
TOY_VOCAB = Vocab(SPECIAL_TOKENS + ("good",))
TOY_EMBEDDING = [
    [0.5, 0.2, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 0.0],
]


def toy_model() -> EmbeddingReadoutModel:
    return EmbeddingReadoutModel(TOY_EMBEDDING)


def random_decoder(vocab_size: int = 12, seed: int = 0, d_model: int = 16) -> TinyDecoder:
    """Untrained 64-bit decoder with frozen parameters."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = TinyDecoder(
            DecoderConfig(vocab_size=vocab_size, d_model=d_model, n_layer=2, n_head=2)
        )
    model = model.double().eval()
    model.requires_grad_(False)
    return model


def random_vocab(vocab_size: int = 12) -> Vocab:
    return Vocab(SPECIAL_TOKENS + tuple(f"w{i}" for i in range(vocab_size - len(SPECIAL_TOKENS))))
