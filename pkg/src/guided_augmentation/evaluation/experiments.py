"""Experiment protocols: starvation sweeps, boosting ratios, classifier-agnostic
comparison and augmenter comparison.

Fractions are fractions of the whole cleaned dataset. The test split takes
``test_fraction`` of it once per experiment and stays fixed across every
condition, so with the default 0.2 a fraction of 0.8 is the full train split.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from guided_augmentation.augment import (
    BoostResult,
    boost,
    plan_boost,
    vanilla_augment,
)
from guided_augmentation.corpus import (
    Dataset,
    PreprocessConfig,
    Provenance,
    Vocab,
    build_vocab,
    class_distribution,
    clean,
    split_stratified,
    starve,
)
from guided_augmentation.errors import ConfigError
from guided_augmentation.evaluation.classifiers import (
    ClassifierConfig,
    architectures,
    train_classifier,
)
from guided_augmentation.evaluation.metrics import macro_f1
from guided_augmentation.evaluation.naive import NaiveConfig, naive_baseline_augment
from guided_augmentation.evaluation.report import ExperimentReport, ReportRow
from guided_augmentation.guide import GuideConfig
from guided_augmentation.lm import LanguageModel, LmTrainingConfig, train_lm
from guided_augmentation.lm.ngram import NgramLm, ngram_perplexity, train_ngram
from guided_augmentation.logging_config import get_logger
from guided_augmentation.salience import Lexicon, lexicon_from_dataset

logger = get_logger(__name__)

Ratio = Tuple[int, int]


@dataclass(frozen=True)
class ExperimentConfig:
    test_fraction: float = 0.2
    fractions: Tuple[float, ...] = (0.05, 0.1, 0.2, 0.4, 0.8)
    repeats: int = 5
    architecture: str = "bag"
    architectures: Tuple[str, ...] = ("bag", "cnn")
    with_boost: bool = True
    ratios: Tuple[Ratio, ...] = ((100, 0), (75, 25), (50, 50), (25, 75))
    compare_fraction: float = 0.05
    lexicon_size: int = 10
    lexicon_min_count: int = 2
    ngram_order: int = 3
    naive_delete: float = 0.1
    naive_swap: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(self.fractions))
        object.__setattr__(self, "architectures", tuple(self.architectures))
        object.__setattr__(self, "ratios", tuple(tuple(r) for r in self.ratios))
        problems = []
        if not 0.0 < self.test_fraction < 1.0:
            problems.append(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        for fraction in self.fractions + (self.compare_fraction,):
            if not 0.0 < fraction <= 1.0:
                problems.append(f"fractions must be in (0, 1], got {fraction}")
        if self.repeats < 1:
            problems.append(f"repeats must be >= 1, got {self.repeats}")
        known = architectures()
        for arch in (self.architecture,) + self.architectures:
            if arch not in known:
                problems.append(f"unknown architecture {arch!r}, expected one of {known}")
        for ratio in self.ratios:
            if len(ratio) != 2 or sum(ratio) != 100 or min(ratio) < 0 or ratio[0] == 0:
                problems.append(f"ratio {ratio} must be original/boosted shares summing to 100")
        if self.lexicon_size < 1:
            problems.append(f"lexicon_size must be >= 1, got {self.lexicon_size}")
        if self.lexicon_min_count < 1:
            problems.append(f"lexicon_min_count must be >= 1, got {self.lexicon_min_count}")
        if not 1 <= self.ngram_order <= 5:
            problems.append(f"ngram_order must be in 1..5, got {self.ngram_order}")
        if problems:
            raise ConfigError(problems)

    def seeds(self, repeats: Optional[int] = None) -> List[int]:
        return [self.seed + r for r in range(repeats or self.repeats)]


def dataset_digest(ds: Dataset) -> str:
    digest = hashlib.sha256()
    for example in ds:
        digest.update(json.dumps(example.to_record(), sort_keys=True).encode("utf-8") + b"\n")
    return digest.hexdigest()


@dataclass
class ExperimentContext:
    """Everything fixed within one experiment: splits, LM and configs."""

    dataset: Dataset
    train: Dataset
    test: Dataset
    vocab: Vocab
    model: LanguageModel
    preprocess: PreprocessConfig
    guide: GuideConfig
    classifier: ClassifierConfig
    experiment: ExperimentConfig
    jobs: int = 1
    config: Dict[str, str] = field(default_factory=dict)
    version: str = ""

    @property
    def test_digest(self) -> str:
        return dataset_digest(self.test)

    def train_share(self, fraction: float) -> float:
        """Fraction of the whole dataset as a share of the train split."""
        share = fraction / (1.0 - self.experiment.test_fraction)
        if share > 1.0 + 1e-9:
            logger.warning(f"Fraction {fraction} exceeds the train split, using all of it")
        return 1.0 if share > 1.0 - 1e-9 else share

    def starve(self, fraction: float, seed: int) -> Dataset:
        return starve(self.train, self.train_share(fraction), seed)

    def lexicon(self, source: Dataset) -> Lexicon:
        return lexicon_from_dataset(
            source,
            self.preprocess,
            self.experiment.lexicon_size,
            min_count=self.experiment.lexicon_min_count,
            vocab=self.vocab,
        )

    def boost_to(
        self, starved: Dataset, size: int, distribution: Dict[str, float], seed: int
    ) -> BoostResult:
        plan = plan_boost(starved, size, distribution, self.guide, seed)
        if plan.total == 0:
            return BoostResult(starved, {c: 0 for c in starved.classes}, [])
        return boost(starved, plan, self.model, self.vocab, self.lexicon(starved))

    def score(
        self,
        experiment: str,
        condition: str,
        arch: str,
        fraction: float,
        seed: int,
        train: Dataset,
        **extra,
    ) -> ReportRow:
        model = train_classifier(arch, train, seed, self.classifier, self.preprocess)
        f1 = macro_f1(model, self.test)
        logger.info(
            f"[{experiment}] {condition} arch={arch} fraction={fraction} seed={seed} "
            f"n={len(train)}: macro-F1 {f1:.4f}"
        )
        return ReportRow(
            experiment=experiment,
            condition=condition,
            architecture=arch,
            fraction=fraction,
            seed=seed,
            train_size=len(train),
            macro_f1=f1,
            **extra,
        )

    def new_report(self, name: str) -> ExperimentReport:
        return ExperimentReport(
            name=name, config=dict(self.config), version=self.version, test_digest=self.test_digest
        )


def prepare_experiment(
    ds: Dataset,
    preprocess: PreprocessConfig,
    guide: GuideConfig,
    lm_cfg: LmTrainingConfig,
    classifier: ClassifierConfig,
    experiment: ExperimentConfig,
    jobs: int = 1,
    model: Optional[LanguageModel] = None,
    vocab: Optional[Vocab] = None,
    config: Optional[Dict[str, str]] = None,
    version: str = "",
) -> ExperimentContext:
    """Clean, split once, and train the LM on the train split unless one is given."""
    cleaned, _ = clean(ds, preprocess)
    train, test = split_stratified(cleaned, experiment.test_fraction, experiment.seed)
    logger.info(f"Experiment split: train {len(train)}, test {len(test)}")
    if model is None:
        vocab = build_vocab(train, preprocess)
        model = train_lm(train, vocab, lm_cfg, preprocess)
    elif vocab is None:
        raise ValueError("A pretrained model needs its vocabulary")
    return ExperimentContext(
        dataset=cleaned,
        train=train,
        test=test,
        vocab=vocab,
        model=model,
        preprocess=preprocess,
        guide=guide,
        classifier=classifier,
        experiment=experiment,
        jobs=jobs,
        config=dict(config or {}),
        version=version,
    )


def _run_all(jobs: int, run: Callable[..., List[ReportRow]], tasks: Sequence[tuple]):
    """Run independent conditions, returning their rows in task order."""
    if jobs <= 1:
        results = [run(*task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda task: run(*task), tasks))
    return [row for rows in results for row in rows]


def _augmented_ppl(ngram: NgramLm, ds: Dataset, preprocess: PreprocessConfig) -> Optional[float]:
    generated = [e for e in ds if e.provenance is Provenance.BOOSTED]
    if not generated:
        return None
    return ngram_perplexity(ngram, ds.with_examples(generated), preprocess)


def starvation_experiment(
    ctx: ExperimentContext,
    fractions: Optional[Sequence[float]] = None,
    repeats: Optional[int] = None,
    arch: Optional[str] = None,
    with_boost: Optional[bool] = None,
    archs: Optional[Sequence[str]] = None,
) -> ExperimentReport:
    """Per fraction and seed: starve, optionally boost back to the train size, score.

    With ``archs`` every listed architecture scores the same starved and
    boosted rows; otherwise only ``arch`` does.
    """
    exp = ctx.experiment
    fractions = tuple(fractions or exp.fractions)
    archs = tuple(archs or (arch or exp.architecture,))
    with_boost = exp.with_boost if with_boost is None else with_boost
    full_size, distribution = len(ctx.train), class_distribution(ctx.train)

    def run(fraction: float, seed: int) -> List[ReportRow]:
        starved = ctx.starve(fraction, seed)
        rows = [ctx.score("starvation", "original", a, fraction, seed, starved) for a in archs]
        if with_boost:
            result = ctx.boost_to(starved, full_size, distribution, seed)
            rows.extend(
                ctx.score(
                    "starvation", "boosted", a, fraction, seed, result.dataset,
                    partial=result.partial,
                )
                for a in archs
            )
        return rows

    report = ctx.new_report("starvation")
    tasks = [(fraction, seed) for fraction in fractions for seed in exp.seeds(repeats)]
    report.rows.extend(_run_all(ctx.jobs, run, tasks))
    return report


def ratio_experiment(
    ctx: ExperimentContext,
    ratios: Optional[Sequence[Ratio]] = None,
    arch: Optional[str] = None,
    repeats: Optional[int] = None,
) -> ExperimentReport:
    """Fixed train size with an original/boosted mix per ratio.

    ``ppl`` is the perplexity of the boosted rows under an n-gram model of
    the original train split (the held-out test perplexity for 100/0);
    ``mixed_ppl`` covers the whole mixed train set.
    """
    exp = ctx.experiment
    ratios = tuple(tuple(r) for r in (ratios or exp.ratios))
    arch = arch or exp.architecture
    ngram = train_ngram(ctx.train, exp.ngram_order, ctx.preprocess)
    test_ppl = ngram_perplexity(ngram, ctx.test, ctx.preprocess)
    logger.info(f"Held-out {exp.ngram_order}-gram perplexity: {test_ppl:.2f}")
    full_size, distribution = len(ctx.train), class_distribution(ctx.train)

    def run(ratio: Ratio, seed: int) -> List[ReportRow]:
        original, boosted = ratio
        portion = starve(ctx.train, original / 100.0, seed)
        result = ctx.boost_to(portion, full_size, distribution, seed)
        ppl = _augmented_ppl(ngram, result.dataset, ctx.preprocess)
        return [
            ctx.score(
                "ratio",
                f"{original}/{boosted}",
                arch,
                original / 100.0,
                seed,
                result.dataset,
                ppl=test_ppl if ppl is None else ppl,
                mixed_ppl=ngram_perplexity(ngram, result.dataset, ctx.preprocess),
                partial=result.partial,
            )
        ]

    report = ctx.new_report("ratio")
    tasks = [(ratio, seed) for ratio in ratios for seed in exp.seeds(repeats)]
    report.rows.extend(_run_all(ctx.jobs, run, tasks))
    return report


def classifier_agnostic_experiment(
    ctx: ExperimentContext,
    fractions: Optional[Sequence[float]] = None,
    archs: Optional[Sequence[str]] = None,
    repeats: Optional[int] = None,
) -> ExperimentReport:
    """Original vs doubled (same amount again, boosted) for every architecture.

    Each (fraction, seed) boosts once and every architecture trains on the
    same rows; a ``full`` reference row per architecture and seed uses the
    whole train split.
    """
    exp = ctx.experiment
    fractions = tuple(fractions or exp.fractions)
    archs = tuple(archs or exp.architectures)
    seeds = exp.seeds(repeats)

    def run(fraction: float, seed: int) -> List[ReportRow]:
        starved = ctx.starve(fraction, seed)
        result = ctx.boost_to(starved, 2 * len(starved), class_distribution(starved), seed)
        rows = []
        for arch in archs:
            rows.append(ctx.score("agnostic", "original", arch, fraction, seed, starved))
            rows.append(
                ctx.score(
                    "agnostic", "doubled", arch, fraction, seed, result.dataset,
                    partial=result.partial,
                )
            )
        return rows

    def reference(seed: int) -> List[ReportRow]:
        full = 1.0 - exp.test_fraction
        return [ctx.score("agnostic", "full", arch, full, seed, ctx.train) for arch in archs]

    report = ctx.new_report("agnostic")
    tasks = [(fraction, seed) for fraction in fractions for seed in seeds]
    report.rows.extend(_run_all(ctx.jobs, run, tasks))
    report.rows.extend(_run_all(ctx.jobs, reference, [(seed,) for seed in seeds]))
    return report


def augmenter_comparison_experiment(
    ctx: ExperimentContext,
    fraction: Optional[float] = None,
    repeats: Optional[int] = None,
    arch: Optional[str] = None,
) -> ExperimentReport:
    """original / naive / vanilla / boosted at one fraction, each topped up to the train size."""
    exp = ctx.experiment
    fraction = fraction or exp.compare_fraction
    arch = arch or exp.architecture
    naive_cfg = NaiveConfig(delete_prob=exp.naive_delete, swap_prob=exp.naive_swap)
    ngram = train_ngram(ctx.train, exp.ngram_order, ctx.preprocess)
    full_size, distribution = len(ctx.train), class_distribution(ctx.train)

    def run(seed: int) -> List[ReportRow]:
        starved = ctx.starve(fraction, seed)
        plan = plan_boost(starved, full_size, distribution, ctx.guide, seed)
        naive = naive_baseline_augment(starved, plan, naive_cfg)
        vanilla = vanilla_augment(starved, plan, ctx.model, ctx.vocab)
        boosted = boost(starved, plan, ctx.model, ctx.vocab, ctx.lexicon(starved))
        rows = [ctx.score("compare", "original", arch, fraction, seed, starved)]
        for condition, ds, partial in (
            ("naive", naive, False),
            ("vanilla", vanilla.dataset, vanilla.partial),
            ("boosted", boosted.dataset, boosted.partial),
        ):
            rows.append(
                ctx.score(
                    "compare", condition, arch, fraction, seed, ds,
                    ppl=_augmented_ppl(ngram, ds, ctx.preprocess),
                    partial=partial,
                )
            )
        return rows

    report = ctx.new_report("compare")
    report.rows.extend(_run_all(ctx.jobs, run, [(seed,) for seed in exp.seeds(repeats)]))
    return report
