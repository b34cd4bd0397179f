"""Reward-guided conditional decoding.

At every decoding step the attention cache of the prefix (θ) is copied
into a conditional cache (θ_c) and pushed, by a few normalized gradient
steps, towards a higher reward: the importance-weighted salience gain of
the conditional next-token distribution minus a β-weighted KL penalty
against the unconditional distribution. The next token is then sampled
from the conditional distribution and β is adapted towards a target KL.

The perturbed cache is carried forward: each step starts from the
previous step's conditional cache extended by the decoded token.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.nn import functional as F

from guided_augmentation.corpus import Vocab
from guided_augmentation.errors import ConfigError, GuidedAugmentationError
from guided_augmentation.lm.base import (
    KvCache,
    LanguageModel,
    NonFiniteGradient,
    reward_gradient,
    softmax_with_temperature,
)
from guided_augmentation.logging_config import get_logger
from guided_augmentation.salience import Lexicon

logger = get_logger(__name__)

PROB_FLOOR = 1e-12
GRAD_NORM_FLOOR = 1e-12
BANNED_LOGIT = -1e9
UPDATE_RULES = ("normalized", "adam")


class LexiconWordMissing(GuidedAugmentationError):
    """Raised when a lexicon word has no id in the model vocabulary."""

    code = "lexicon_word_missing"


@dataclass(frozen=True)
class GuideConfig:
    """Knobs of guided decoding; all defaults are exposed to config files."""

    beta0: float = 0.1
    sigma: float = 0.5
    k: int = 3
    eta: float = 0.02
    temperature: float = 1.0
    max_len: int = 30
    num_rollouts: int = 8
    epsilon: float = 0.01
    update_rule: str = "normalized"
    prompt: str = ""

    def __post_init__(self):
        problems = []
        if self.beta0 <= 0:
            problems.append(f"beta0 must be > 0, got {self.beta0}")
        if self.sigma <= 0:
            problems.append(f"sigma must be > 0, got {self.sigma}")
        if self.k < 0:
            problems.append(f"k must be >= 0, got {self.k}")
        if self.eta <= 0:
            problems.append(f"eta must be > 0, got {self.eta}")
        if self.temperature <= 0:
            problems.append(f"temperature must be > 0, got {self.temperature}")
        if self.max_len < 1:
            problems.append(f"max_len must be >= 1, got {self.max_len}")
        if self.num_rollouts < 1:
            problems.append(f"num_rollouts must be >= 1, got {self.num_rollouts}")
        if not 0 < self.epsilon <= 0.1:
            problems.append(f"epsilon must be in (0, 0.1], got {self.epsilon}")
        if self.update_rule not in UPDATE_RULES:
            problems.append(f"update_rule must be one of {UPDATE_RULES}, got {self.update_rule!r}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "GuideConfig":
        """Build from string values, e.g. the lines of a key=value file."""
        known = {f.name: f for f in fields(cls)}
        problems = [f"unknown guide key {key!r}" for key in values if key not in known]
        parsed = {}
        for key, raw in values.items():
            if key not in known:
                continue
            default = known[key].default
            try:
                parsed[key] = type(default)(raw)
            except ValueError:
                problems.append(f"{key}: cannot parse {raw!r} as {type(default).__name__}")
        if problems:
            raise ConfigError(problems)
        return cls(**parsed)

    @classmethod
    def from_file(cls, path: Path) -> "GuideConfig":
        from guided_augmentation.config import read_key_value_file

        return cls.from_mapping(read_key_value_file(path))

    def to_key_values(self) -> Dict[str, str]:
        return {key: str(value) for key, value in asdict(self).items()}


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    token: int
    reward: float
    kl: float
    beta: float
    gain: float
    fail_open: bool = False


@dataclass
class DecodeSession:
    """Mutable state of one guided generation; owned by a single thread."""

    model: LanguageModel
    cfg: GuideConfig
    embedding: torch.Tensor
    banned: torch.Tensor
    lexicon_ids: Optional[torch.Tensor]
    theta: KvCache
    theta_c: KvCache
    logits: torch.Tensor
    beta: float
    rollout_generator: torch.Generator
    sample_generator: torch.Generator
    tokens: List[int] = field(default_factory=list)
    log: List[StepDiagnostics] = field(default_factory=list)
    fail_open_steps: int = 0

    def policy(self) -> torch.Tensor:
        """Unconditional next-token distribution π_θ at the current state."""
        return softmax_with_temperature(self.logits, self.cfg.temperature)


@dataclass(frozen=True)
class Generation:
    label: Optional[str]
    seed: int
    token_ids: Tuple[int, ...]
    tokens: Tuple[str, ...]
    diagnostics: Tuple[StepDiagnostics, ...]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def empty(self) -> bool:
        return not self.token_ids


def lexicon_ids(lexicon: Lexicon, label: str, vocab: Vocab) -> torch.Tensor:
    """Vocabulary ids of a class lexicon."""
    words = lexicon.words(label)
    missing = [word for word in words if word not in vocab]
    if missing:
        raise LexiconWordMissing(
            f"Lexicon words of class {label!r} missing from the vocabulary: {missing[:10]}"
        )
    return torch.tensor(vocab.encode(words), dtype=torch.long)


def salience_gain(
    dist: torch.Tensor, lexicon: torch.Tensor, emb: torch.Tensor, epsilon: float
) -> torch.Tensor:
    """Σ_w log(ε + (1 + cos(ê, emb(w))) / 2) with ê the expected embedding under ``dist``."""
    expected = dist.to(emb.dtype) @ emb
    cosine = F.cosine_similarity(expected[None, :], emb[lexicon], dim=-1)
    return torch.log(epsilon + (1.0 + cosine) / 2.0).sum()


def sequence_gain(
    token_ids: Sequence[int], lexicon: torch.Tensor, emb: torch.Tensor, epsilon: float
) -> float:
    """Mean salience gain of the tokens of an output, each as a point distribution."""
    if not token_ids:
        return float("nan")
    with torch.no_grad():
        one_hot = F.one_hot(torch.tensor(list(token_ids)), emb.size(0)).to(emb.dtype)
        gains = [salience_gain(row, lexicon, emb, epsilon) for row in one_hot]
    return float(torch.stack(gains).mean())


def kl_policies(trajectory: Iterable[Tuple[torch.Tensor, torch.Tensor]]) -> torch.Tensor:
    """Σ over steps of KL(π_θ || π_θc), with q floored at 1e-12."""
    total = None
    for p, q in trajectory:
        term = (p * (p.clamp_min(PROB_FLOOR).log() - q.clamp_min(PROB_FLOOR).log())).sum()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("Empty trajectory")
    return total


def adapt_beta(beta: float, kl: float, sigma: float) -> float:
    """Double β above twice the target KL, halve it below half of it."""
    if kl >= 2.0 * sigma:
        return 2.0 * beta
    if kl <= sigma / 2.0:
        return beta / 2.0
    return beta


def _mask(logits: torch.Tensor, banned: torch.Tensor) -> torch.Tensor:
    return logits.masked_fill(banned, BANNED_LOGIT)


def _reward_terms(
    session: DecodeSession,
    theta_c: KvCache,
    p: torch.Tensor,
    actions: torch.Tensor,
    weights: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(R, KL, G) at a conditional cache for a fixed set of weighted rollouts."""
    cfg = session.cfg
    logits = _mask(session.model.readout(theta_c), session.banned)
    q = softmax_with_temperature(logits, cfg.temperature)
    ratio = q[actions].clamp_min(PROB_FLOOR) / p[actions].clamp_min(PROB_FLOOR)
    gain = salience_gain(q, session.lexicon_ids, session.embedding, cfg.epsilon)
    kl = kl_policies([(p, q)])
    reward = (weights * ratio).sum() * gain - session.beta * kl
    return reward, kl, gain


def sample_rollouts(session: DecodeSession, num_rollouts: int) -> torch.Tensor:
    """Off-policy actions drawn from the unconditional policy."""
    return torch.multinomial(
        session.policy(), num_rollouts, replacement=True, generator=session.rollout_generator
    )


def step_reward(
    session: DecodeSession,
    num_rollouts: int,
    actions: Optional[torch.Tensor] = None,
    weights: Optional[torch.Tensor] = None,
) -> float:
    """Reward of the current conditional cache.

    Without explicit ``actions`` the expectation is estimated from
    ``num_rollouts`` samples of π_θ with equal weights.
    """
    if session.lexicon_ids is None:
        raise ValueError("Session has no lexicon to reward")
    if actions is None:
        actions = sample_rollouts(session, num_rollouts)
    if weights is None:
        weights = torch.full((len(actions),), 1.0 / len(actions), dtype=torch.float64)
    with torch.no_grad():
        reward, _, _ = _reward_terms(session, session.theta_c, session.policy(), actions, weights)
    return float(reward)


def reward_fn(
    session: DecodeSession,
    actions: torch.Tensor,
    weights: Optional[torch.Tensor] = None,
) -> Callable[[KvCache], torch.Tensor]:
    """Reward of a candidate conditional cache, with π_θ and the rollouts held fixed."""
    p = session.policy().detach()
    if weights is None:
        weights = torch.full((len(actions),), 1.0 / len(actions), dtype=p.dtype)

    def reward(cache: KvCache) -> torch.Tensor:
        value, _, _ = _reward_terms(session, cache, p, actions, weights)
        return value

    return reward


def normalized_ascent(
    model: LanguageModel,
    cache: KvCache,
    reward: Callable[[KvCache], torch.Tensor],
    k: int,
    eta: float,
) -> Tuple[KvCache, List[float]]:
    """θ + η Σ_i g_i / ||g_i||, each g_i taken after the previous sub-step.

    Returns the moved cache and the norm of every applied unit increment;
    sub-steps whose gradient norm is below 1e-12 are skipped.
    """
    data = cache.data.detach().clone()
    increments = []
    for _ in range(k):
        grad = reward_gradient(model, cache.with_data(data), reward)
        norm = torch.linalg.vector_norm(grad)
        if norm < GRAD_NORM_FLOOR:
            continue
        unit = grad / norm
        increments.append(float(torch.linalg.vector_norm(unit)))
        data = data + eta * unit
    return cache.with_data(data), increments


def adam_ascent(
    model: LanguageModel,
    cache: KvCache,
    reward: Callable[[KvCache], torch.Tensor],
    k: int,
    eta: float,
) -> KvCache:
    """k Adam steps on the cache entries maximizing ``reward``."""
    param = cache.data.detach().clone().requires_grad_(True)
    optimizer = torch.optim.Adam([param], lr=eta)
    for _ in range(k):
        optimizer.zero_grad()
        value = reward(cache.with_data(param))
        if not value.requires_grad:
            break
        (-value).backward()
        if not torch.isfinite(param.grad).all():
            raise NonFiniteGradient(f"Reward gradient is not finite for {model!r}")
        optimizer.step()
    return cache.with_data(param.detach())


def policy_update(
    session: DecodeSession, actions: Optional[torch.Tensor] = None
) -> KvCache:
    """Move θ_c away from θ along the reward gradient; fail open to θ on numerical errors."""
    cfg = session.cfg
    if cfg.k < 1 or session.lexicon_ids is None:
        session.theta_c = session.theta
        return session.theta_c
    if actions is None:
        actions = sample_rollouts(session, cfg.num_rollouts)
    reward = reward_fn(session, actions)

    try:
        if cfg.update_rule == "adam":
            session.theta_c = adam_ascent(session.model, session.theta, reward, cfg.k, cfg.eta)
        else:
            session.theta_c, _ = normalized_ascent(
                session.model, session.theta, reward, cfg.k, cfg.eta
            )
    except NonFiniteGradient as exc:
        logger.warning(f"Guidance failed at step {len(session.tokens)}, decoding unguided: {exc}")
        session.theta_c = session.theta
        session.fail_open_steps += 1
    return session.theta_c


def _generators(seed: int) -> Tuple[torch.Generator, torch.Generator]:
    rollout_seed, sample_seed = np.random.SeedSequence(seed).generate_state(2)
    return (
        torch.Generator().manual_seed(int(rollout_seed)),
        torch.Generator().manual_seed(int(sample_seed)),
    )


def _banned_ids(model: LanguageModel, vocab: Vocab) -> torch.Tensor:
    banned = torch.zeros(model.vocab_size, dtype=torch.bool)
    banned[[vocab.bos_id, vocab.unk_id]] = True
    return banned


def _prompt_ids(cfg: GuideConfig, vocab: Vocab) -> List[int]:
    return [vocab.id_of(token) for token in cfg.prompt.lower().split() if token in vocab]


def start_session(
    model: LanguageModel,
    vocab: Vocab,
    cfg: GuideConfig,
    seed: int,
    lexicon: Optional[torch.Tensor] = None,
) -> DecodeSession:
    """Feed begin-of-sequence and the optional prompt; β starts at β0."""
    if cfg.max_len >= model.context_length:
        raise ConfigError(
            [f"max_len {cfg.max_len} needs a context longer than {model.context_length}"]
        )
    if len(vocab) != model.vocab_size:
        raise ConfigError([f"Vocab size {len(vocab)} != model vocab size {model.vocab_size}"])
    banned = _banned_ids(model, vocab)
    rollout_generator, sample_generator = _generators(seed)
    prompt = _prompt_ids(cfg, vocab)[: cfg.max_len - 1]
    with torch.no_grad():
        logits, cache = model.step(vocab.bos_id, model.new_cache())
        for token in prompt:
            logits, cache = model.step(token, cache)
    return DecodeSession(
        model=model,
        cfg=cfg,
        embedding=model.embedding(),
        banned=banned,
        lexicon_ids=lexicon,
        theta=cache,
        theta_c=cache,
        logits=_mask(logits, banned),
        beta=cfg.beta0,
        rollout_generator=rollout_generator,
        sample_generator=sample_generator,
        tokens=list(prompt),
    )


def guided_step(session: DecodeSession, eos_id: int) -> int:
    """One step: rollouts, k updates, β adaptation, conditional sampling, cache advance."""
    cfg = session.cfg
    p = session.policy()
    actions = sample_rollouts(session, cfg.num_rollouts)
    failures = session.fail_open_steps
    theta_c = policy_update(session, actions)
    fail_open = session.fail_open_steps > failures

    with torch.no_grad():
        if theta_c is session.theta:
            logits = session.logits
        else:
            logits = _mask(session.model.readout(theta_c), session.banned)
        q = softmax_with_temperature(logits, cfg.temperature)
        kl = float(kl_policies([(p, q)]))
        if session.lexicon_ids is not None:
            weights = torch.full((len(actions),), 1.0 / len(actions), dtype=p.dtype)
            reward, _, gain = _reward_terms(session, theta_c, p, actions, weights)
            reward, gain = float(reward), float(gain)
        else:
            reward = gain = float("nan")
        token = int(torch.multinomial(q, 1, generator=session.sample_generator))

    session.log.append(
        StepDiagnostics(
            step=len(session.log),
            token=token,
            reward=reward,
            kl=kl,
            beta=session.beta,
            gain=gain,
            fail_open=fail_open,
        )
    )
    session.beta = adapt_beta(session.beta, kl, cfg.sigma)
    if token == eos_id:
        return token

    session.tokens.append(token)
    if len(session.tokens) < cfg.max_len:
        with torch.no_grad():
            next_logits, cache = session.model.step(token, theta_c)
        session.theta = session.theta_c = cache
        session.logits = _mask(next_logits, session.banned)
    return token


def generate_conditional(
    model: LanguageModel,
    vocab: Vocab,
    label: str,
    lexicon: Lexicon,
    cfg: GuideConfig,
    seed: int,
) -> Generation:
    """Decode up to ``max_len`` tokens guided towards ``label``; deterministic per seed."""
    session = start_session(model, vocab, cfg, seed, lexicon_ids(lexicon, label, vocab))
    while len(session.tokens) < cfg.max_len:
        if guided_step(session, vocab.eos_id) == vocab.eos_id:
            break
    generation = Generation(
        label=label,
        seed=seed,
        token_ids=tuple(session.tokens),
        tokens=tuple(vocab.decode(session.tokens)),
        diagnostics=tuple(session.log),
    )
    if generation.empty:
        logger.debug(f"Empty generation for {label!r} (seed {seed})")
    return generation


def generate_unconditional(
    model: LanguageModel, vocab: Vocab, cfg: GuideConfig, seed: int
) -> Generation:
    """Vanilla temperature sampling with the same seeding as the guided decoder."""
    session = start_session(model, vocab, cfg, seed)
    cache = session.theta
    logits = session.logits
    tokens = list(session.tokens)
    with torch.no_grad():
        while len(tokens) < cfg.max_len:
            q = softmax_with_temperature(logits, cfg.temperature)
            token = int(torch.multinomial(q, 1, generator=session.sample_generator))
            if token == vocab.eos_id:
                break
            tokens.append(token)
            if len(tokens) < cfg.max_len:
                logits, cache = model.step(token, cache)
                logits = _mask(logits, session.banned)
    return Generation(
        label=None,
        seed=seed,
        token_ids=tuple(tokens),
        tokens=tuple(vocab.decode(tokens)),
        diagnostics=(),
    )


def write_diagnostics(path: Path, generations: Iterable[Tuple[str, Generation]]) -> None:
    """JSONL, one line per decoding step, keyed by the row reference id."""
    with open(path, "w", encoding="utf-8") as handle:
        for ref, generation in generations:
            for diag in generation.diagnostics:
                record = {"ref": ref, "label": generation.label, "seed": generation.seed}
                record.update(asdict(diag))
                handle.write(json.dumps(record) + "\n")
