"""Command-line interface: `tgt-recsys <command> [--section.key value ...]`.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data errors, 3 on numeric
failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, NoReturn, Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_schema, default_of, load_config
from .core.errors import ConfigError, ContractError, DataError, NumericError
from .data import emit_interactions
from .dataset import Dataset, load_dataset
from .evaluation import (
    evaluate,
    export_diagnostics,
    recommend,
    write_ranking_report,
    write_user_ranks,
)
from .model import ModelSizes, TemporalGraphTransformer
from .selfcheck import gradient_sweep
from .synthetic import generate_synthetic, synthetic_vocabulary
from .training import train, write_loss_log

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
GRADIENT_TOLERANCE = 1e-4

ABLATION_FLAGS = {
    "ce": "ablation.context_embedding_off",
    "sd": "ablation.sequence_encoder_off",
    "mcp": "ablation.multi_channel_off",
    "lbd": "ablation.global_context_off",
    "cta": "ablation.concat_aggregation",
    "fba": "ablation.frequency_aggregation",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise ConfigError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="File of `section.key = value` lines.")
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging threshold (default: INFO).",
    )
    settings = common.add_argument_group("settings")
    for key, setting in config_schema().items():
        text = setting.metadata.get("help", "")
        reported = setting.metadata.get("reported")
        default = default_of(key)
        shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
        suffix = f" (default: {shown}"
        suffix += f"; reported: {reported})" if reported else ")"
        settings.add_argument(
            f"--{key}", dest=key, default=argparse.SUPPRESS, metavar="VALUE", help=text + suffix
        )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="tgt-recsys", description="Temporal graph transformer recommender.")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    commands.add_parser("ingest", parents=[common], help="Parse the data and print statistics.")
    commands.add_parser("train", parents=[common], help="Train and write a checkpoint.")

    evaluate_cmd = commands.add_parser("evaluate", parents=[common], help="Rank held-out items.")
    evaluate_cmd.add_argument("--checkpoint", help="Default: <run.output_dir>/checkpoint.tgt.")

    recommend_cmd = commands.add_parser("recommend", parents=[common], help="Top-N items.")
    recommend_cmd.add_argument("user", help="User label as it appears in the data.")
    recommend_cmd.add_argument("count", type=int, help="Number of items N.")
    recommend_cmd.add_argument("--checkpoint", help="Default: <run.output_dir>/checkpoint.tgt.")

    synth = commands.add_parser("synth", parents=[common], help="Write a synthetic corpus.")
    synth.add_argument("--users", type=int, help="Shortcut for --synth.users.")
    synth.add_argument("--items", type=int, help="Shortcut for --synth.items.")
    synth.add_argument("--kappa", type=float, help="Shortcut for --synth.kappa.")
    synth.add_argument("--seed", type=int, help="Shortcut for --synth.seed.")
    synth.add_argument("--output", help="Interactions file; the vocabulary goes to *.vocab.")

    gradcheck = commands.add_parser("gradcheck", parents=[common], help="Check gradients.")
    gradcheck.add_argument("--dim", type=int, default=8)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--eps", type=float, default=1e-5)

    ablate = commands.add_parser("ablate", parents=[common], help="Train and evaluate a variant.")
    ablate.add_argument(
        "variants",
        nargs="+",
        help=f"Any of {', '.join(ABLATION_FLAGS)} or drop:<label>[,<label>].",
    )
    return parser


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    keys = config_schema()
    return {key: value for key, value in vars(args).items() if key in keys}


def _output_dir(config: RunConfig) -> Path:
    path = Path(config.run.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sizes(dataset: Dataset, config: RunConfig) -> ModelSizes:
    return ModelSizes(
        dataset.num_users, dataset.num_items, len(dataset.vocabulary), config.data.window
    )


def _load_model(
    path: str | Path, dataset: Dataset, config: RunConfig
) -> TemporalGraphTransformer:
    params, _ = load_checkpoint(path)
    return TemporalGraphTransformer(params, config.model, config.ablation, _sizes(dataset, config))


def _checkpoint_path(args: argparse.Namespace, config: RunConfig) -> Path:
    given = getattr(args, "checkpoint", None)
    return Path(given) if given else Path(config.run.output_dir) / "checkpoint.tgt"


def _ingest(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = load_dataset(config)
    for key, value in dataset.statistics().items():
        print(f"{key}\t{value}")
    return 0


def _train(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = load_dataset(config)
    model, optimizer = None, None
    if config.train.resume:
        params, optimizer = load_checkpoint(config.train.resume)
        model = TemporalGraphTransformer(
            params, config.model, config.ablation, _sizes(dataset, config)
        )

    result = train(dataset, config, model, optimizer)
    out = _output_dir(config)
    save_checkpoint(out / "checkpoint.tgt", result.model.params, result.optimizer)
    write_loss_log(out / "loss.tsv", result.losses)
    return 0


def _evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = load_dataset(config)
    model = _load_model(_checkpoint_path(args, config), dataset, config)
    reps = model(dataset.graph())
    report = evaluate(
        model,
        dataset,
        config.eval.cutoffs,
        config.eval.negatives,
        config.eval.full_catalog,
        config.run.seed,
        config.eval.workers,
        reps=reps,
    )

    out = _output_dir(config)
    write_ranking_report(out / "ranking.tsv", report)
    write_user_ranks(out / "ranks.tsv", report, dataset)
    if config.eval.diagnostics:
        (out / "diagnostics.tsv").write_text(export_diagnostics(reps, dataset), encoding="utf-8")
    sys.stdout.write(report.to_tsv())
    return 0


def _recommend(args: argparse.Namespace, config: RunConfig) -> int:
    if args.count < 1:
        raise ConfigError("recommend: the item count must be positive.")
    dataset = load_dataset(config)
    user = dataset.user_id(args.user)
    model = _load_model(_checkpoint_path(args, config), dataset, config)
    for item, value in recommend(model, dataset, user, args.count):
        print(f"{dataset.item_labels[item]}\t{value!r}")
    return 0


def _synth(args: argparse.Namespace, config: RunConfig) -> int:
    shortcuts = {"users": args.users, "items": args.items, "kappa": args.kappa, "seed": args.seed}
    cfg = replace(config.synth, **{k: v for k, v in shortcuts.items() if v is not None})
    output = Path(args.output) if args.output else _output_dir(config) / "synthetic.tsv"
    output.parent.mkdir(parents=True, exist_ok=True)

    vocabulary = synthetic_vocabulary(cfg)
    output.write_text(emit_interactions(generate_synthetic(cfg), vocabulary), encoding="utf-8")
    output.with_suffix(".vocab").write_text(
        "".join(f"{label}\n" for label in vocabulary.labels), encoding="utf-8"
    )
    logger.info("wrote %s and %s", output, output.with_suffix(".vocab"))
    return 0


def _gradcheck(args: argparse.Namespace, config: RunConfig) -> int:
    errors = gradient_sweep(args.dim, args.seed, args.eps)
    for stage, error in errors.items():
        print(f"{stage}\t{error:.3e}")
    worst = max(errors.values())
    print(f"max\t{worst:.3e}")
    if worst >= GRADIENT_TOLERANCE:
        logger.error("gradient check failed: %.3e >= %.0e", worst, GRADIENT_TOLERANCE)
        return 3
    return 0


def variant_overrides(variants: Sequence[str]) -> dict[str, Any]:
    """Configuration keys switched on by ablation names and `drop:<label>` tokens."""
    overrides: dict[str, Any] = {}
    dropped: list[str] = []
    for token in variants:
        name = token.strip().lower()
        if name.startswith("drop:"):
            dropped.extend(label for label in token.split(":", 1)[1].split(",") if label)
        elif name in ABLATION_FLAGS:
            overrides[ABLATION_FLAGS[name]] = True
        else:
            raise ConfigError(
                f"Unknown variant '{token}'; expected {', '.join(ABLATION_FLAGS)} or drop:<labels>."
            )
    if dropped:
        overrides["data.drop_behaviors"] = tuple(dropped)
    return overrides


def _ablate(args: argparse.Namespace, config: RunConfig) -> int:
    config = config.updated(variant_overrides(args.variants))
    dataset = load_dataset(config)
    result = train(dataset, config)
    report = evaluate(
        result.model,
        dataset,
        config.eval.cutoffs,
        config.eval.negatives,
        config.eval.full_catalog,
        config.run.seed,
        config.eval.workers,
    )

    name = "-".join(token.replace(":", "_").replace(",", "_") for token in args.variants)
    out = _output_dir(config) / f"ablate-{name}"
    out.mkdir(parents=True, exist_ok=True)
    write_loss_log(out / "loss.tsv", result.losses)
    write_ranking_report(out / "ranking.tsv", report)
    sys.stdout.write(report.to_tsv())
    return 0


_COMMANDS = {
    "ingest": _ingest,
    "train": _train,
    "evaluate": _evaluate,
    "recommend": _recommend,
    "synth": _synth,
    "gradcheck": _gradcheck,
    "ablate": _ablate,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse `argv`, run the command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.log_level)
        config = load_config(args.config, _overrides(args))
        return _COMMANDS[args.command](args, config)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    except ConfigError as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    except (DataError, ContractError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 2
    except NumericError as error:
        print(f"error: {error}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


__all__ = ["build_parser", "main", "run", "variant_overrides"]
