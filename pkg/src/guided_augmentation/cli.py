"""Command-line interface for the augmentation pipeline."""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from guided_augmentation.augment import (
    DedupPolicy,
    boost,
    format_plan,
    plan_boost,
)
from guided_augmentation.config import RunConfig, describe_schema, load_config
from guided_augmentation.corpus import (
    Dataset,
    build_vocab,
    class_distribution,
    clean,
    ingest,
    read_vocab,
    write_jsonl,
    write_vocab,
)
from guided_augmentation.environment import collect_runtime_environment, describe_version
from guided_augmentation.errors import ConfigError
from guided_augmentation.evaluation.experiments import (
    ExperimentContext,
    augmenter_comparison_experiment,
    classifier_agnostic_experiment,
    prepare_experiment,
    ratio_experiment,
    starvation_experiment,
)
from guided_augmentation.evaluation.report import (
    ExperimentReport,
    format_report,
    paired_test,
    write_report_tsv,
)
from guided_augmentation.evaluation.synthetic import make_synthetic_corpus
from guided_augmentation.guide import generate_conditional, write_diagnostics
from guided_augmentation.lm import (
    load_checkpoint,
    ngram_perplexity,
    nn_perplexity,
    save_checkpoint,
    train_lm,
    train_ngram,
    write_ngram,
)
from guided_augmentation.logging_config import get_logger, setup_logging
from guided_augmentation.salience import Lexicon, lexicon_from_dataset, read_lexicon, write_lexicon

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_PARTIAL = 4
EXIT_INTERRUPTED = 130


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument("--seed", type=int, help="master seed (default: 0)")
    common.add_argument("--jobs", type=int, help="concurrent sessions or conditions (default: 1)")
    common.add_argument("--out", type=str, help="output directory (default: runs/latest)")
    common.add_argument(
        "--dry-run", action="store_true", help="print the resolved plan and write nothing"
    )
    common.add_argument("--debug", action="store_true", help="enable debug logging")
    common.add_argument("--log-file", type=str, help="also log to this file")
    common.add_argument(
        "--set",
        dest="settings",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key",
    )
    return common


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=str, help="dataset file")
    parser.add_argument("--format", type=str, choices=("jsonl", "csv", "tsv"))


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", type=str, help="decoder checkpoint")
    parser.add_argument("--vocab", type=str, help="vocabulary of the checkpoint")


def _add_experiment(parser: argparse.ArgumentParser) -> None:
    _add_data(parser)
    _add_model(parser)
    parser.add_argument("--repeats", type=int, help="seeds per condition")
    parser.add_argument("--architecture", type=str, choices=("bag", "cnn"))


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="guided-augmentation",
        description="Reward-guided text generation for data augmentation and its evaluation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  guided-augmentation synth --out runs/synth
  guided-augmentation train-lm --data runs/synth/synthetic.jsonl --out runs/lm
  guided-augmentation boost --data starved.jsonl --reference train.jsonl \\
      --checkpoint runs/lm/model.galm --vocab runs/lm/vocab.txt --yes
  guided-augmentation eval-starve --data runs/synth/synthetic.jsonl --repeats 5

Exit codes:
  0 ok, 2 configuration error, 3 runtime error, 4 partial result, 130 interrupted

Config keys (file, --set KEY=VALUE, or env GUIDED_AUG_<KEY>):
{describe_schema()}
        """,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="write a synthetic corpus")
    synth.add_argument("--examples", dest="synth_examples", type=int)
    synth.add_argument("--classes", dest="synth_classes", type=int, choices=(2, 4))

    for name, help_text in (
        ("ingest", "clean a dataset and report what was dropped"),
        ("lexicon", "build per-class salient lexicons"),
        ("train-lm", "train the decoder language model"),
    ):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        _add_data(sub)
        if name == "lexicon":
            sub.add_argument("--vocab", type=str, help="keep only words of this vocabulary")

    generate = commands.add_parser("generate", parents=[common], help="guided generations")
    _add_data(generate)
    _add_model(generate)
    generate.add_argument("--lexicon", type=str)
    generate.add_argument("--label", type=str, help="target class")
    generate.add_argument("--count", type=int, help="number of generations")
    generate.add_argument("--k", type=int, help="policy update steps per token")

    boost_parser = commands.add_parser("boost", parents=[common], help="augment a starved set")
    _add_data(boost_parser)
    _add_model(boost_parser)
    boost_parser.add_argument("--lexicon", type=str)
    boost_parser.add_argument("--reference", type=str, help="dataset with the target distribution")
    boost_parser.add_argument("--target-size", dest="target_size", type=int)
    boost_parser.add_argument("--yes", action="store_true", help="skip the confirmation prompt")

    for name, help_text in (
        ("eval-starve", "data-starvation sweep"),
        ("eval-ratio", "original/boosted ratio sweep"),
        ("eval-agnostic", "original vs doubled across classifiers"),
        ("eval-compare", "original, naive, vanilla and boosted augmentation"),
    ):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        _add_experiment(sub)

    ppl = commands.add_parser("ppl", parents=[common], help="perplexity of a text file")
    _add_data(ppl)
    _add_model(ppl)
    ppl.add_argument("--reference", type=str, help="text the n-gram model is trained on")
    ppl.add_argument("--order", dest="ngram_order", type=int)

    return parser.parse_args(args)


_NOT_CONFIG = {"command", "config", "dry_run", "debug", "log_file", "settings", "yes"}


def _overrides(parsed: argparse.Namespace) -> Dict[str, Any]:
    overrides = {
        key: value
        for key, value in vars(parsed).items()
        if key not in _NOT_CONFIG and value is not None
    }
    problems = []
    for setting in parsed.settings:
        key, sep, value = setting.partition("=")
        if not sep:
            problems.append(f"--set expects KEY=VALUE, got {setting!r}")
        else:
            overrides[key.strip()] = value.strip()
    if problems:
        raise ConfigError(problems)
    return overrides


def error_body(exc: BaseException) -> Dict[str, Any]:
    """Machine-readable description of a failure."""
    code = getattr(exc, "code", None)
    if not isinstance(code, str):
        code = "file_not_found" if isinstance(exc, FileNotFoundError) else "runtime_error"
    return {
        "error": {
            "code": code,
            "type": type(exc).__name__,
            "message": str(exc),
            "details": list(getattr(exc, "details", [])),
        }
    }


def _emit_error(exc: BaseException) -> None:
    print(json.dumps(error_body(exc)), file=sys.stderr)


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = [
        f"{key} is required (--{key.replace('_', '-')})" for key in keys if not cfg.values[key]
    ]
    if missing:
        raise ConfigError(missing)


class Run:
    """Output directory bookkeeping: effective config plus the ``run.json`` sidecar."""

    def __init__(self, cfg: RunConfig, command: str, dry_run: bool):
        self.cfg = cfg
        self.command = command
        self.dry_run = dry_run
        self.out = Path(cfg.out)
        self.outputs: List[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def open(self) -> None:
        if not self.dry_run:
            self.out.mkdir(parents=True, exist_ok=True)
            self.cfg.write_effective(self.out)

    def close(self, exit_code: int, **extra: Any) -> int:
        if self.dry_run:
            return exit_code
        metadata = {
            "command": self.command,
            "version": describe_version(),
            "seed": self.cfg.seed,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "exit_code": exit_code,
            "outputs": ["effective.conf"] + self.outputs,
            "environment": collect_runtime_environment(),
        }
        metadata.update(extra)
        (self.out / "run.json").write_text(json.dumps(metadata, indent=2) + "\n", encoding="utf-8")
        return exit_code


def _print_dry_run(cfg: RunConfig, command: str, actions: List[str]) -> int:
    print(f"# {command} (dry run)")
    print(cfg.render(), end="")
    for action in actions:
        print(f"would {action}")
    return EXIT_OK


def _load_dataset(cfg: RunConfig, key: str = "data", classes=None) -> Dataset:
    return ingest(Path(cfg.values[key]), cfg.format, classes=classes)


def _load_lexicon(cfg: RunConfig, ds: Dataset, vocab) -> Lexicon:
    if cfg.lexicon:
        return read_lexicon(Path(cfg.lexicon))
    return lexicon_from_dataset(
        ds, cfg.preprocess, cfg.lexicon_size, min_count=cfg.lexicon_min_count, vocab=vocab
    )


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    run = Run(cfg, "synth", args.dry_run)
    if args.dry_run:
        return _print_dry_run(
            cfg, "synth", [f"write {cfg.synth_examples} rows to {run.out / 'synthetic.jsonl'}"]
        )
    ds = make_synthetic_corpus(cfg.synth_examples, cfg.synth_classes, cfg.seed, cfg.synth_noise)
    run.open()
    write_jsonl(ds, run.path("synthetic.jsonl"))
    print(run.out / "synthetic.jsonl")
    return run.close(EXIT_OK, rows=len(ds))


def cmd_ingest(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "data")
    run = Run(cfg, "ingest", args.dry_run)
    if args.dry_run:
        return _print_dry_run(cfg, "ingest", [f"clean {cfg.data} into {run.out}/clean.jsonl"])
    ds = _load_dataset(cfg)
    cleaned, stats = clean(ds, cfg.preprocess)
    run.open()
    write_jsonl(cleaned, run.path("clean.jsonl"))
    run.path("clean_stats.json").write_text(
        json.dumps(
            {
                "kept": stats.kept,
                "dropped_empty": stats.dropped_empty,
                "dropped_length": stats.dropped_length,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    for label in cleaned.classes:
        print(
            f"{label}\tkept={stats.kept[label]}\tempty={stats.dropped_empty[label]}\t"
            f"too_long={stats.dropped_length[label]}"
        )
    return run.close(EXIT_OK, rows=len(cleaned))


def cmd_lexicon(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "data")
    run = Run(cfg, "lexicon", args.dry_run)
    if args.dry_run:
        return _print_dry_run(cfg, "lexicon", [f"write {run.out}/lexicon.tsv"])
    vocab = read_vocab(Path(cfg.vocab)) if cfg.vocab else None
    lexicon = lexicon_from_dataset(
        _load_dataset(cfg),
        cfg.preprocess,
        cfg.lexicon_size,
        min_count=cfg.lexicon_min_count,
        vocab=vocab,
    )
    run.open()
    write_lexicon(lexicon, run.path("lexicon.tsv"))
    for label in lexicon.classes:
        print(f"{label}\t{' '.join(lexicon.words(label))}")
    return run.close(EXIT_OK)


def cmd_train_lm(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "data")
    run = Run(cfg, "train-lm", args.dry_run)
    if args.dry_run:
        return _print_dry_run(
            cfg, "train-lm", [f"train for {cfg.lm_epochs} epochs", f"write {run.out}/model.galm"]
        )
    cleaned, _ = clean(_load_dataset(cfg), cfg.preprocess)
    vocab = build_vocab(cleaned, cfg.preprocess, min_count=cfg.vocab_min_count)
    model = train_lm(cleaned, vocab, cfg.lm, cfg.preprocess)
    run.open()
    save_checkpoint(model, run.path("model.galm"))
    write_vocab(vocab, run.path("vocab.txt"))
    history = "".join(f"{i}\t{loss!r}\n" for i, loss in enumerate(model.loss_history))
    run.path("loss.tsv").write_text("epoch\tloss\n" + history, encoding="utf-8")
    ppl = nn_perplexity(model, cleaned, vocab, cfg.preprocess)
    print(f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}, train PPL {ppl:.2f}")
    return run.close(EXIT_OK, train_ppl=ppl)


def cmd_generate(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "checkpoint", "vocab", "label")
    if not cfg.lexicon:
        _require(cfg, "data")
    run = Run(cfg, "generate", args.dry_run)
    if args.dry_run:
        return _print_dry_run(
            cfg, "generate", [f"generate {cfg.count} sequence(s) for {cfg.label!r}"]
        )
    model = load_checkpoint(Path(cfg.checkpoint))
    vocab = read_vocab(Path(cfg.vocab))
    lexicon = _load_lexicon(cfg, None if cfg.lexicon else _load_dataset(cfg), vocab)
    generations = []
    for i in range(cfg.count):
        generation = generate_conditional(model, vocab, cfg.label, lexicon, cfg.guide, cfg.seed + i)
        generations.append((f"{cfg.label}-{i:05d}", generation))
        print(generation.text if not generation.empty else "<empty>")
    run.open()
    write_diagnostics(run.path("diagnostics.jsonl"), generations)
    return run.close(EXIT_OK)


def _confirm(prompt: str) -> bool:
    if not sys.stdin.isatty():
        raise ConfigError(["boost needs --yes when stdin is not interactive"])
    return input(f"{prompt} [y/N] ").strip().lower() in ("y", "yes")


def cmd_boost(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "data", "checkpoint", "vocab")
    if cfg.reference:
        reference, _ = clean(_load_dataset(cfg, "reference"), cfg.preprocess)
        starved, _ = clean(_load_dataset(cfg, classes=reference.classes), cfg.preprocess)
        distribution = class_distribution(reference)
        target = cfg.target_size or len(reference)
    else:
        _require(cfg, "target_size")
        starved, _ = clean(_load_dataset(cfg), cfg.preprocess)
        distribution = class_distribution(starved)
        target = cfg.target_size

    plan = plan_boost(
        starved,
        target,
        distribution,
        cfg.guide,
        cfg.seed,
        DedupPolicy(cfg.dedup),
        cfg.max_attempts,
    )
    print(format_plan(plan, starved))
    run = Run(cfg, "boost", args.dry_run)
    if args.dry_run:
        return EXIT_OK
    if not args.yes and not _confirm(f"Generate {plan.total} rows?"):
        print("Aborted.")
        return EXIT_OK

    model = load_checkpoint(Path(cfg.checkpoint))
    vocab = read_vocab(Path(cfg.vocab))
    lexicon = _load_lexicon(cfg, starved, vocab)
    result = boost(starved, plan, model, vocab, lexicon, jobs=cfg.jobs)
    run.open()
    write_jsonl(result.dataset, run.path("boosted.jsonl"))
    write_lexicon(lexicon, run.path("lexicon.tsv"))
    write_diagnostics(run.path("diagnostics.jsonl"), result.generations)
    exit_code = EXIT_PARTIAL if result.partial else EXIT_OK
    return run.close(exit_code, shortfall=result.shortfall)


def _experiment_context(cfg: RunConfig) -> ExperimentContext:
    model = vocab = None
    if cfg.checkpoint:
        _require(cfg, "vocab")
        model = load_checkpoint(Path(cfg.checkpoint))
        vocab = read_vocab(Path(cfg.vocab))
    return prepare_experiment(
        _load_dataset(cfg),
        cfg.preprocess,
        cfg.guide,
        cfg.lm,
        cfg.classifier,
        cfg.experiment,
        jobs=cfg.jobs,
        model=model,
        vocab=vocab,
        config=cfg.to_key_values(),
        version=describe_version(),
    )


def _run_experiment(
    cfg: RunConfig,
    args: argparse.Namespace,
    name: str,
    planned_rows: int,
    execute: Callable[[ExperimentContext], ExperimentReport],
    comparisons: Callable[[ExperimentReport], List[str]] = lambda report: [],
) -> int:
    _require(cfg, "data")
    run = Run(cfg, args.command, args.dry_run)
    if args.dry_run:
        return _print_dry_run(
            cfg, args.command, [f"score {planned_rows} conditions", f"write {run.out}/{name}.tsv"]
        )
    report = execute(_experiment_context(cfg))
    run.open()
    write_report_tsv(report, run.path(f"{name}.tsv"))
    print(format_report(report))
    for line in comparisons(report):
        print(line)
    return run.close(EXIT_PARTIAL if report.partial else EXIT_OK, rows=len(report.rows))


def _pairs(treated: str, control: str, archs: List[str], fractions: List[float]):
    def lines(report: ExperimentReport) -> List[str]:
        return [
            f"{treated} > {control} ({arch}, fraction {fraction}): one-sided p = "
            f"{paired_test(report, treated, control, arch, fraction):.4g}"
            for arch in archs
            for fraction in fractions
        ]

    return lines


def cmd_eval_starve(cfg: RunConfig, args: argparse.Namespace) -> int:
    exp = cfg.experiment
    conditions = 2 if exp.with_boost else 1
    return _run_experiment(
        cfg,
        args,
        "starvation",
        len(exp.fractions) * exp.repeats * conditions,
        starvation_experiment,
        _pairs("boosted", "original", [exp.architecture], list(exp.fractions))
        if exp.with_boost
        else (lambda report: []),
    )


def cmd_eval_ratio(cfg: RunConfig, args: argparse.Namespace) -> int:
    exp = cfg.experiment
    return _run_experiment(cfg, args, "ratio", len(exp.ratios) * exp.repeats, ratio_experiment)


def cmd_eval_agnostic(cfg: RunConfig, args: argparse.Namespace) -> int:
    exp = cfg.experiment
    archs = list(exp.architectures)
    return _run_experiment(
        cfg,
        args,
        "agnostic",
        (2 * len(exp.fractions) + 1) * len(archs) * exp.repeats,
        classifier_agnostic_experiment,
        _pairs("doubled", "original", archs, list(exp.fractions)),
    )


def cmd_eval_compare(cfg: RunConfig, args: argparse.Namespace) -> int:
    exp = cfg.experiment
    fraction = exp.compare_fraction
    return _run_experiment(
        cfg,
        args,
        "compare",
        4 * exp.repeats,
        augmenter_comparison_experiment,
        lambda report: [
            _pairs("boosted", control, [exp.architecture], [fraction])(report)[0]
            for control in ("original", "naive", "vanilla")
        ],
    )


def cmd_ppl(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "data", "reference")
    run = Run(cfg, "ppl", args.dry_run)
    if args.dry_run:
        return _print_dry_run(
            cfg, "ppl", [f"train a {cfg.ngram_order}-gram model on {cfg.reference}"]
        )
    ngram = train_ngram(_load_dataset(cfg, "reference"), cfg.ngram_order, cfg.preprocess)
    scored = _load_dataset(cfg)
    results = {"ngram_ppl": ngram_perplexity(ngram, scored, cfg.preprocess)}
    if cfg.checkpoint:
        _require(cfg, "vocab")
        model = load_checkpoint(Path(cfg.checkpoint))
        vocab = read_vocab(Path(cfg.vocab))
        results["lm_ppl"] = nn_perplexity(model, scored, vocab, cfg.preprocess)
    run.open()
    write_ngram(ngram, run.path("ngram.tsv"))
    lines = "".join(f"{key}\t{value!r}\n" for key, value in results.items())
    run.path("ppl.tsv").write_text("metric\tvalue\n" + lines, encoding="utf-8")
    for key, value in results.items():
        print(f"{key}\t{value:.4f}")
    return run.close(EXIT_OK, **results)


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "lexicon": cmd_lexicon,
    "train-lm": cmd_train_lm,
    "generate": cmd_generate,
    "boost": cmd_boost,
    "eval-starve": cmd_eval_starve,
    "eval-ratio": cmd_eval_ratio,
    "eval-agnostic": cmd_eval_agnostic,
    "eval-compare": cmd_eval_compare,
    "ppl": cmd_ppl,
}


def main(args: Optional[List[str]] = None) -> int:
    """Main entry point."""
    try:
        try:
            parsed_args = parse_args(args)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else EXIT_CONFIG

        try:
            config = load_config(parsed_args.config, overrides=_overrides(parsed_args))
        except ConfigError as exc:
            _emit_error(exc)
            return EXIT_CONFIG

        setup_logging(
            level="DEBUG" if parsed_args.debug else config.log_level,
            log_file=parsed_args.log_file,
        )
        logger.info("=" * 70)
        logger.info(f"guided-augmentation {parsed_args.command}")
        logger.info("=" * 70)
        logger.info(f"Seed: {config.seed}, jobs: {config.jobs}, out: {config.out}")
        logger.info("=" * 70)

        return COMMANDS[parsed_args.command](config, parsed_args)

    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except ConfigError as exc:
        _emit_error(exc)
        return EXIT_CONFIG
    except Exception as exc:
        logger.error(f"Fatal error: {exc}", exc_info=logger.isEnabledFor(logging.DEBUG))
        _emit_error(exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
