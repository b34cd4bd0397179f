"""Configuration management for pipeline runs.

Values are resolved from, in increasing precedence: the defaults in
``SCHEMA``, environment variables ``GUIDED_AUG_<KEY>``, a flat key=value
config file, and command-line flags.
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from guided_augmentation.corpus import PreprocessConfig, load_stopwords
from guided_augmentation.errors import ConfigError
from guided_augmentation.evaluation.classifiers import ClassifierConfig
from guided_augmentation.evaluation.experiments import ExperimentConfig
from guided_augmentation.guide import GuideConfig
from guided_augmentation.lm.decoder import LmTrainingConfig

ENV_PREFIX = "GUIDED_AUG_"


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def _names(raw: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _ratios(raw: str) -> Tuple[Tuple[int, int], ...]:
    ratios = []
    for part in _names(raw):
        original, _, boosted = part.partition("/")
        ratios.append((int(original), int(boosted)))
    return tuple(ratios)


@dataclass(frozen=True)
class ConfigKey:
    name: str
    parse: Callable[[str], Any]
    default: str
    help: str


SCHEMA: Tuple[ConfigKey, ...] = (
    # run
    ConfigKey("data", str, "", "input dataset file"),
    ConfigKey("format", str, "jsonl", "dataset format: jsonl, csv or tsv"),
    ConfigKey("out", str, "runs/latest", "output directory"),
    ConfigKey("checkpoint", str, "", "decoder checkpoint file"),
    ConfigKey("vocab", str, "", "vocabulary file matching the checkpoint"),
    ConfigKey("lexicon", str, "", "lexicon TSV (built from --data when empty)"),
    ConfigKey("reference", str, "", "dataset whose class distribution or text is the reference"),
    ConfigKey("seed", int, "0", "master seed"),
    ConfigKey("jobs", int, "1", "maximum concurrent decode sessions or conditions"),
    ConfigKey("log_level", str, "INFO", "DEBUG, INFO, WARNING or ERROR"),
    # preprocessing
    ConfigKey("max_tokens", int, "30", "drop examples longer than this after cleaning"),
    ConfigKey("stopwords", str, "", "stopword file (bundled English list when empty)"),
    ConfigKey("strip_punctuation", _bool, "true", "remove punctuation"),
    ConfigKey("strip_hashtags", _bool, "true", "drop #hashtag tokens"),
    ConfigKey("strip_urls", _bool, "true", "drop link tokens"),
    ConfigKey("vocab_min_count", int, "1", "minimum count for LM vocabulary tokens"),
    # lexicon
    ConfigKey("lexicon_size", int, "10", "salient words per class"),
    ConfigKey("lexicon_min_count", int, "2", "minimum in-class count of a lexicon word"),
    # guided decoding
    ConfigKey("beta0", float, "0.1", "initial KL weight"),
    ConfigKey("sigma", float, "0.5", "target KL divergence"),
    ConfigKey("k", int, "3", "policy update steps per token"),
    ConfigKey("eta", float, "0.02", "policy update step size"),
    ConfigKey("temperature", float, "1.0", "sampling temperature"),
    ConfigKey("max_len", int, "30", "maximum generated tokens"),
    ConfigKey("num_rollouts", int, "8", "unconditional samples per reward estimate"),
    ConfigKey("epsilon", float, "0.01", "log floor of the salience gain"),
    ConfigKey("update_rule", str, "normalized", "normalized or adam"),
    ConfigKey("prompt", str, "", "text fed after begin-of-sequence"),
    # boosting
    ConfigKey("target_size", int, "0", "rows after boosting (0: size of --reference)"),
    ConfigKey("max_attempts", int, "10", "generations tried per row"),
    ConfigKey("dedup", str, "exact", "exact or none"),
    ConfigKey("label", str, "", "class to generate for"),
    ConfigKey("count", int, "1", "generations to print"),
    # language model training
    ConfigKey("lm_epochs", int, "30", "decoder training epochs"),
    ConfigKey("lm_batch_size", int, "32", "decoder batch size"),
    ConfigKey("lm_learning_rate", float, "0.003", "decoder learning rate"),
    ConfigKey("lm_d_model", int, "64", "decoder width"),
    ConfigKey("lm_n_layer", int, "2", "decoder layers"),
    ConfigKey("lm_n_head", int, "2", "decoder attention heads"),
    ConfigKey("lm_context_length", int, "32", "decoder context length"),
    # classifiers
    ConfigKey("clf_embedding_dim", int, "32", "classifier embedding width"),
    ConfigKey("clf_num_filters", int, "32", "convolution filters"),
    ConfigKey("clf_window", int, "3", "convolution window"),
    ConfigKey("clf_epochs", int, "20", "classifier training epochs"),
    ConfigKey("clf_batch_size", int, "32", "classifier batch size"),
    ConfigKey("clf_learning_rate", float, "0.01", "classifier learning rate"),
    # experiments
    ConfigKey("test_fraction", float, "0.2", "held-out share of the cleaned dataset"),
    ConfigKey("fractions", _floats, "0.05,0.1,0.2,0.4,0.8", "training fractions of the dataset"),
    ConfigKey("repeats", int, "5", "seeds per condition"),
    ConfigKey("architecture", str, "bag", "classifier: bag or cnn"),
    ConfigKey("architectures", _names, "bag,cnn", "classifiers of the agnostic experiment"),
    ConfigKey("with_boost", _bool, "true", "add boosted conditions to the starvation sweep"),
    ConfigKey("ratios", _ratios, "100/0,75/25,50/50,25/75", "original/boosted mixes"),
    ConfigKey("compare_fraction", float, "0.05", "fraction of the augmenter comparison"),
    ConfigKey("ngram_order", int, "3", "order of the perplexity n-gram model"),
    ConfigKey("naive_delete", float, "0.1", "per-token delete probability of the naive baseline"),
    ConfigKey("naive_swap", float, "0.1", "per-token swap probability of the naive baseline"),
    # synthetic corpus
    ConfigKey("synth_examples", int, "4000", "rows of the synthetic corpus"),
    ConfigKey("synth_classes", int, "2", "classes of the synthetic corpus: 2 or 4"),
    ConfigKey("synth_noise", float, "0.05", "share of rows with a foreign-class marker"),
)

KEYS: Dict[str, ConfigKey] = {key.name: key for key in SCHEMA}


def read_key_value_file(path: Path) -> Dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    values: Dict[str, str] = {}
    problems: List[str] = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            problems.append(f"{path}:{number}: expected key=value, got {line!r}")
        elif key in values:
            problems.append(f"{path}:{number}: duplicate key {key!r}")
        else:
            values[key] = value.strip()
    if problems:
        raise ConfigError(problems)
    return values


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one command.

    Keys are readable as attributes (``cfg.seed``); typed sub-configs are
    built on access.
    """

    values: Mapping[str, Any]
    raw: Mapping[str, str]

    def __getattr__(self, name: str) -> Any:
        values = object.__getattribute__(self, "values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    @property
    def preprocess(self) -> PreprocessConfig:
        v = self.values
        return PreprocessConfig(
            max_tokens=v["max_tokens"],
            stopwords=load_stopwords(Path(v["stopwords"]) if v["stopwords"] else None),
            strip_punctuation=v["strip_punctuation"],
            strip_hashtags=v["strip_hashtags"],
            strip_urls=v["strip_urls"],
        )

    @property
    def guide(self) -> GuideConfig:
        v = self.values
        return GuideConfig(
            beta0=v["beta0"],
            sigma=v["sigma"],
            k=v["k"],
            eta=v["eta"],
            temperature=v["temperature"],
            max_len=v["max_len"],
            num_rollouts=v["num_rollouts"],
            epsilon=v["epsilon"],
            update_rule=v["update_rule"],
            prompt=v["prompt"],
        )

    @property
    def lm(self) -> LmTrainingConfig:
        v = self.values
        return LmTrainingConfig(
            epochs=v["lm_epochs"],
            batch_size=v["lm_batch_size"],
            learning_rate=v["lm_learning_rate"],
            d_model=v["lm_d_model"],
            n_layer=v["lm_n_layer"],
            n_head=v["lm_n_head"],
            context_length=v["lm_context_length"],
            seed=v["seed"],
        )

    @property
    def classifier(self) -> ClassifierConfig:
        v = self.values
        return ClassifierConfig(
            embedding_dim=v["clf_embedding_dim"],
            num_filters=v["clf_num_filters"],
            window=v["clf_window"],
            epochs=v["clf_epochs"],
            batch_size=v["clf_batch_size"],
            learning_rate=v["clf_learning_rate"],
        )

    @property
    def experiment(self) -> ExperimentConfig:
        v = self.values
        return ExperimentConfig(
            test_fraction=v["test_fraction"],
            fractions=v["fractions"],
            repeats=v["repeats"],
            architecture=v["architecture"],
            architectures=v["architectures"],
            with_boost=v["with_boost"],
            ratios=v["ratios"],
            compare_fraction=v["compare_fraction"],
            lexicon_size=v["lexicon_size"],
            lexicon_min_count=v["lexicon_min_count"],
            ngram_order=v["ngram_order"],
            naive_delete=v["naive_delete"],
            naive_swap=v["naive_swap"],
            seed=v["seed"],
        )

    def to_key_values(self) -> Dict[str, str]:
        return dict(sorted(self.raw.items()))

    def render(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in self.to_key_values().items())

    def write_effective(self, directory: Path) -> Path:
        path = Path(directory) / "effective.conf"
        path.write_text(self.render(), encoding="utf-8")
        return path


def _validate(cfg: RunConfig) -> List[str]:
    problems: List[str] = []
    for name in ("preprocess", "guide", "lm", "classifier", "experiment"):
        try:
            getattr(cfg, name)
        except ConfigError as exc:
            problems.extend(exc.problems)
        except (OSError, ValueError) as exc:
            problems.append(f"{name}: {exc}")
    v = cfg.values
    if v["jobs"] < 1:
        problems.append(f"jobs must be >= 1, got {v['jobs']}")
    if v["target_size"] < 0:
        problems.append(f"target_size must be >= 0, got {v['target_size']}")
    if v["max_attempts"] < 1:
        problems.append(f"max_attempts must be >= 1, got {v['max_attempts']}")
    if v["dedup"] not in ("exact", "none"):
        problems.append(f"dedup must be exact or none, got {v['dedup']!r}")
    if v["format"] not in ("jsonl", "csv", "tsv"):
        problems.append(f"format must be jsonl, csv or tsv, got {v['format']!r}")
    if v["log_level"].upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        problems.append(f"unknown log_level {v['log_level']!r}")
    if v["vocab_min_count"] < 1:
        problems.append(f"vocab_min_count must be >= 1, got {v['vocab_min_count']}")
    if v["count"] < 1:
        problems.append(f"count must be >= 1, got {v['count']}")
    if v["max_len"] >= v["lm_context_length"]:
        problems.append(
            f"max_len ({v['max_len']}) must be below lm_context_length ({v['lm_context_length']})"
        )
    return problems


def load_config(
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge defaults, environment, file and overrides; raise every problem at once."""
    environ = os.environ if environ is None else environ
    raw = {key.name: key.default for key in SCHEMA}
    problems: List[str] = []

    for key in SCHEMA:
        env_value = environ.get(f"{ENV_PREFIX}{key.name.upper()}")
        if env_value is not None:
            raw[key.name] = env_value

    if config_file is not None:
        try:
            from_file = read_key_value_file(config_file)
        except ConfigError as exc:
            problems.extend(exc.problems)
            from_file = {}
        for key, value in from_file.items():
            if key not in KEYS:
                problems.append(f"unknown config key {key!r} in {config_file}")
            else:
                raw[key] = value

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in KEYS:
            problems.append(f"unknown override {key!r}")
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        raw[key] = str(value)

    values: Dict[str, Any] = {}
    for key in SCHEMA:
        try:
            values[key.name] = key.parse(raw[key.name])
        except ValueError as exc:
            problems.append(f"{key.name}: cannot parse {raw[key.name]!r} ({exc})")
    if problems:
        raise ConfigError(problems)

    cfg = RunConfig(values=values, raw=raw)
    problems = _validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def describe_schema() -> str:
    """One line per key, for ``--help`` epilogs."""
    width = max(len(key.name) for key in SCHEMA)
    return "\n".join(
        f"  {key.name:<{width}}  {key.help} (default: {key.default or '-'})" for key in SCHEMA
    )
