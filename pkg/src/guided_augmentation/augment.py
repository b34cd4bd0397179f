"""Class-conditional boosting of a starved training set."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from guided_augmentation.corpus import (
    Dataset,
    LabeledExample,
    Provenance,
    Vocab,
    allocate_largest_remainder,
)
from guided_augmentation.errors import ConfigError, GuidedAugmentationError
from guided_augmentation.guide import (
    GuideConfig,
    Generation,
    generate_conditional,
    generate_unconditional,
)
from guided_augmentation.lm.base import LanguageModel
from guided_augmentation.logging_config import get_logger
from guided_augmentation.salience import Lexicon, UnknownClass

logger = get_logger(__name__)


class ImpossiblePlan(GuidedAugmentationError):
    """Raised when the starved set cannot be topped up to the requested distribution."""

    code = "impossible_plan"


class DedupPolicy(str, Enum):
    EXACT = "exact"
    NONE = "none"


@dataclass(frozen=True)
class BoostPlan:
    """How many rows to generate per class, and how."""

    targets: Mapping[str, int]
    guide: GuideConfig = field(default_factory=GuideConfig)
    seed: int = 0
    dedup: DedupPolicy = DedupPolicy.EXACT
    max_attempts: int = 10

    def __post_init__(self):
        object.__setattr__(self, "targets", dict(self.targets))
        object.__setattr__(self, "dedup", DedupPolicy(self.dedup))
        problems = [f"target for {c!r} is negative" for c, n in self.targets.items() if n < 0]
        if self.max_attempts < 1:
            problems.append(f"max_attempts must be >= 1, got {self.max_attempts}")
        if problems:
            raise ConfigError(problems)

    @property
    def total(self) -> int:
        return sum(self.targets.values())


@dataclass
class BoostResult:
    dataset: Dataset
    shortfall: Dict[str, int]
    generations: List[Tuple[str, Generation]]

    @property
    def partial(self) -> bool:
        return any(self.shortfall.values())


def plan_boost(
    starved: Dataset,
    full_train_size: int,
    class_distribution: Mapping[str, float],
    guide: Optional[GuideConfig] = None,
    seed: int = 0,
    dedup: DedupPolicy = DedupPolicy.EXACT,
    max_attempts: int = 10,
) -> BoostPlan:
    """Targets that bring ``starved`` to ``full_train_size`` rows in the given proportions."""
    if full_train_size < len(starved):
        raise ImpossiblePlan(
            f"Starved set already holds {len(starved)} rows, more than {full_train_size}"
        )
    missing = [c for c in starved.classes if c not in class_distribution]
    if missing:
        raise ImpossiblePlan(f"No target share for classes {missing}")

    mass = sum(class_distribution[c] for c in starved.classes)
    exact = {c: class_distribution[c] / mass * full_train_size for c in starved.classes}
    counts = starved.class_counts()
    over = [c for c in starved.classes if counts[c] - exact[c] >= 1]
    if over:
        raise ImpossiblePlan(
            f"Classes {over} already exceed their share of {full_train_size} rows: "
            + ", ".join(f"{c}={counts[c]} > {exact[c]:.1f}" for c in over)
        )

    remaining = full_train_size - len(starved)
    deficits = {c: max(exact[c] - counts[c], 0.0) for c in starved.classes}
    total_deficit = sum(deficits.values())
    if remaining == 0 or total_deficit == 0:
        targets = {c: 0 for c in starved.classes}
    else:
        shares = {c: deficits[c] * remaining / total_deficit for c in starved.classes}
        targets = allocate_largest_remainder(shares, remaining, starved.classes)

    return BoostPlan(
        targets=targets,
        guide=guide or GuideConfig(),
        seed=seed,
        dedup=dedup,
        max_attempts=max_attempts,
    )


def format_plan(plan: BoostPlan, starved: Dataset) -> str:
    """Printable per-class table of the plan."""
    counts = starved.class_counts()
    final_total = len(starved) + plan.total
    width = max([len("class")] + [len(c) for c in starved.classes])
    lines = [
        f"{'class':<{width}}  {'starved':>8}  {'generate':>8}  {'final':>8}  {'share':>6}",
        "-" * (width + 40),
    ]
    for label in starved.classes:
        final = counts[label] + plan.targets.get(label, 0)
        share = final / final_total if final_total else 0.0
        lines.append(
            f"{label:<{width}}  {counts[label]:>8}  {plan.targets.get(label, 0):>8}  "
            f"{final:>8}  {share:>6.1%}"
        )
    lines.append("-" * (width + 40))
    lines.append(
        f"{'total':<{width}}  {len(starved):>8}  {plan.total:>8}  {final_total:>8}  "
        f"{'':>6}"
    )
    lines.append(
        f"seed={plan.seed} dedup={plan.dedup.value} max_attempts={plan.max_attempts} "
        f"k={plan.guide.k} eta={plan.guide.eta} beta0={plan.guide.beta0} "
        f"sigma={plan.guide.sigma} T={plan.guide.temperature}"
    )
    return "\n".join(lines)


def generation_seed(seed: int, class_index: int, sample: int, attempt: int) -> int:
    return int(np.random.SeedSequence([seed, class_index, sample, attempt]).generate_state(1)[0])


GenerateFn = Callable[[str, int], Generation]


def _boost_class(
    class_index: int,
    label: str,
    target: int,
    plan: BoostPlan,
    generate: GenerateFn,
) -> Tuple[List[LabeledExample], List[Tuple[str, Generation]]]:
    rows: List[LabeledExample] = []
    generations: List[Tuple[str, Generation]] = []
    seen = set()
    for sample in range(target):
        accepted = None
        for attempt in range(plan.max_attempts):
            generation = generate(label, generation_seed(plan.seed, class_index, sample, attempt))
            if generation.empty:
                logger.debug(f"{label}: sample {sample} attempt {attempt} is empty")
                continue
            if plan.dedup is DedupPolicy.EXACT and generation.text in seen:
                logger.debug(f"{label}: sample {sample} attempt {attempt} is a duplicate")
                continue
            accepted = generation
            break
        if accepted is None:
            logger.warning(
                f"{label}: {plan.max_attempts} attempts exhausted at sample {sample}, "
                f"stopping with {len(rows)}/{target} rows"
            )
            break
        seen.add(accepted.text)
        ref = f"{label}-{sample:05d}"
        rows.append(LabeledExample(accepted.text, label, Provenance.BOOSTED, ref))
        generations.append((ref, accepted))
        if (sample + 1) % 100 == 0:
            logger.info(f"{label}: generated {sample + 1}/{target}")
    return rows, generations


def _augment(starved: Dataset, plan: BoostPlan, generate: GenerateFn, jobs: int) -> BoostResult:
    active = [(i, c) for i, c in enumerate(starved.classes) if plan.targets.get(c, 0) > 0]
    if not active:
        return BoostResult(starved, {c: 0 for c in starved.classes}, [])

    logger.info(
        f"Boosting {len(starved)} rows by {plan.total} across {len(active)} classes "
        f"(jobs={jobs})"
    )
    with ThreadPoolExecutor(max_workers=max(1, min(jobs, len(active)))) as pool:
        futures = {
            label: pool.submit(_boost_class, index, label, plan.targets[label], plan, generate)
            for index, label in active
        }
        results = {label: future.result() for label, future in futures.items()}

    generated: List[LabeledExample] = []
    generations: List[Tuple[str, Generation]] = []
    shortfall = {c: 0 for c in starved.classes}
    for _, label in active:
        rows, class_generations = results[label]
        generated.extend(rows)
        generations.extend(class_generations)
        shortfall[label] = plan.targets[label] - len(rows)

    result = BoostResult(
        dataset=starved.with_examples(starved.examples + tuple(generated)),
        shortfall=shortfall,
        generations=generations,
    )
    if result.partial:
        logger.warning(f"Boost is partial, shortfall per class: {shortfall}")
    logger.info(f"Boosted dataset: {len(result.dataset)} rows {result.dataset.class_counts()}")
    return result


def boost(
    starved: Dataset,
    plan: BoostPlan,
    model: LanguageModel,
    vocab: Vocab,
    lexicon: Lexicon,
    jobs: int = 1,
) -> BoostResult:
    """Generate the planned rows and append them, in class order, after ``starved``.

    Generated rows are deduplicated among themselves; a class whose sample
    exhausts ``max_attempts`` stops early and the result is marked partial.
    """
    unknown = [c for c, n in plan.targets.items() if n > 0 and c not in lexicon.classes]
    if unknown:
        raise UnknownClass(f"No lexicon for classes {unknown}")

    def generate(label: str, seed: int) -> Generation:
        return generate_conditional(model, vocab, label, lexicon, plan.guide, seed)

    return _augment(starved, plan, generate, jobs)


def vanilla_augment(
    starved: Dataset,
    plan: BoostPlan,
    model: LanguageModel,
    vocab: Vocab,
    jobs: int = 1,
) -> BoostResult:
    """Same contract as ``boost`` with unguided samples simply labeled with the target class."""

    def generate(label: str, seed: int) -> Generation:
        return generate_unconditional(model, vocab, plan.guide, seed)

    return _augment(starved, plan, generate, jobs)
