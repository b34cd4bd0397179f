"""Abstract language-model backend seen through (step, cache, logits)."""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Tuple

import torch

from guided_augmentation.errors import GuidedAugmentationError


class ContextOverflow(GuidedAugmentationError):
    """Raised when a step would exceed the model's context length."""

    code = "context_overflow"


class NonFiniteGradient(GuidedAugmentationError):
    """Raised when a reward gradient contains NaN or infinity."""

    code = "non_finite_gradient"


@dataclass(frozen=True)
class KvCache:
    """Attention keys and values accumulated for a prefix.

    ``data`` has shape (layers, 2, heads, steps, head_dim); index 0 of the
    second axis holds keys, index 1 values. ``tokens`` is the prefix that
    produced the entries, one token per step.
    """

    data: torch.Tensor
    tokens: Tuple[int, ...]

    def __post_init__(self):
        if self.data.dim() != 5 or self.data.shape[1] != 2:
            raise ValueError(
                f"Cache data must be (layers, 2, heads, steps, dim), got {tuple(self.data.shape)}"
            )
        if self.data.shape[3] != len(self.tokens):
            raise ValueError(
                f"Cache holds {self.data.shape[3]} steps for {len(self.tokens)} tokens"
            )

    @property
    def steps(self) -> int:
        return len(self.tokens)

    def with_data(self, data: torch.Tensor) -> "KvCache":
        """Same prefix, replaced (e.g. perturbed) entries."""
        if data.shape != self.data.shape:
            raise ValueError(f"Shape mismatch: {tuple(data.shape)} vs {tuple(self.data.shape)}")
        return KvCache(data=data, tokens=self.tokens)

    def detached(self) -> "KvCache":
        return KvCache(data=self.data.detach().clone(), tokens=self.tokens)


class LanguageModel(ABC):
    """Abstract autoregressive backend.

    Guided decoding only uses this interface, so any backend exposing its
    attention cache can replace the bundled decoder.
    """

    @property
    @abstractmethod
    def vocab_size(self) -> int:
        """Size of the output distribution."""

    @property
    @abstractmethod
    def context_length(self) -> int:
        """Maximum number of cached steps."""

    @abstractmethod
    def embedding(self) -> torch.Tensor:
        """Token embedding matrix, shape (vocab_size, d)."""

    @abstractmethod
    def new_cache(self) -> KvCache:
        """Empty cache."""

    @abstractmethod
    def step(self, token: int, cache: KvCache) -> Tuple[torch.Tensor, KvCache]:
        """Feed one token; return next-token logits and the extended cache."""

    @abstractmethod
    def readout(self, cache: KvCache) -> torch.Tensor:
        """Next-token logits read from a non-empty cache.

        Every entry, including the last token's own keys and values, is
        taken from ``cache``; on an unmodified cache this equals the logits
        ``step`` returned when it produced the cache.
        """

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(vocab_size={self.vocab_size}, "
            f"context_length={self.context_length})"
        )


def softmax_with_temperature(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Probabilities of ``logits / temperature``; argmax is unchanged for any T > 0."""
    if temperature <= 0:
        raise ValueError(f"Temperature must be > 0, got {temperature}")
    return torch.softmax(logits / temperature, dim=-1)


def reward_gradient(
    model: LanguageModel,
    cache: KvCache,
    reward: Callable[[KvCache], torch.Tensor],
) -> torch.Tensor:
    """Exact gradient of a scalar reward with respect to every cache entry."""
    theta = cache.data.detach().clone().requires_grad_(True)
    value = reward(cache.with_data(theta))
    if not isinstance(value, torch.Tensor) or not value.requires_grad:
        return torch.zeros_like(theta)
    (grad,) = torch.autograd.grad(value, theta, allow_unused=True)
    if grad is None:
        return torch.zeros_like(theta)
    if not torch.isfinite(grad).all():
        raise NonFiniteGradient(f"Reward gradient is not finite for {model!r}")
    return grad
