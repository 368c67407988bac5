from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .core.errors import ConfigError


def _setting(default: Any, help: str, reported: str = "") -> Any:
    """A dataclass field carrying its `--help` text and the value used in published runs."""
    return field(default=default, metadata={"help": help, "reported": reported})


@dataclass(frozen=True)
class DataConfig:
    interactions: str = _setting("", "Interactions TSV: user, item, behavior label, timestamp.")
    vocabulary: str = _setting("", "Behavior vocabulary file, one label per line.")
    target_behavior: str = _setting("buy", "Label of the behavior to predict.")
    window: int = _setting(6, "Sub-sequence length W.", "6 (Taobao), 10 (IJCAI)")
    negatives: int = _setting(1, "Negative samples C per training instance.")
    drop_behaviors: tuple[str, ...] = _setting((), "Behavior labels removed before training.")

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigError("data.window must be >= 1.")
        if self.negatives < 0:
            raise ConfigError("data.negatives must be >= 0.")


@dataclass(frozen=True)
class TimeConfig:
    granularity_seconds: int = _setting(3600, "Seconds per time slot of the encoding.")
    origin: int | None = _setting(None, "First timestamp of slot 0; default: earliest event.")

    def __post_init__(self) -> None:
        if self.granularity_seconds < 1:
            raise ConfigError("time.granularity_seconds must be >= 1.")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = _setting(16, "Hidden dimensionality d.", "16")
    layers: int = _setting(2, "Propagation layers L.", "chosen from 1, 2, 3")
    attention_heads: int = _setting(2, "Self-attention heads.", "2")
    channels: int = _setting(2, "Base transformations of the multi-channel projection.", "2")
    eta_mode: str = _setting("softmax", "Sub-sequence weights: 'softmax' or raw 'literal'.")
    refine_gamma: str = _setting("fresh", "Refine sub-users with the 'fresh' or 'literal' user.")
    mean_aggregation: bool = _setting(False, "Average instead of summing propagated messages.")

    def __post_init__(self) -> None:
        if self.dim < 1 or self.attention_heads < 1 or self.channels < 1:
            raise ConfigError("model.dim, model.attention_heads and model.channels must be >= 1.")
        if self.dim % self.attention_heads:
            raise ConfigError(
                f"model.dim ({self.dim}) must be divisible by model.attention_heads "
                f"({self.attention_heads})."
            )
        if self.layers < 0:
            raise ConfigError("model.layers must be >= 0.")
        if self.eta_mode not in ("softmax", "literal"):
            raise ConfigError(
                f"model.eta_mode must be 'softmax' or 'literal', got {self.eta_mode}."
            )
        if self.refine_gamma not in ("fresh", "literal"):
            raise ConfigError(
                f"model.refine_gamma must be 'fresh' or 'literal', got {self.refine_gamma}."
            )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = _setting(20, "Training epochs.")
    batch_size: int = _setting(256, "Users per mini-batch.", "256 (Taobao), 512 (IJCAI)")
    learning_rate: float = _setting(1e-3, "Adam learning rate.", "1e-3")
    decay: float = _setting(0.96, "Per-epoch multiplicative learning rate decay.", "0.96")
    weight_decay: float = _setting(
        0.005, "Frobenius regularization weight λ.", "from 0.05, 0.01, 0.005, 0.001, 0.0005"
    )
    graph_scope: str = _setting("full", "Propagate over the 'full' graph or per 'batch'.")
    resume: str = _setting("", "Checkpoint to continue training from.")

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size >= 1.")
        if self.graph_scope not in ("full", "batch"):
            raise ConfigError(
                f"train.graph_scope must be 'full' or 'batch', got {self.graph_scope}."
            )


@dataclass(frozen=True)
class EvalConfig:
    cutoffs: tuple[int, ...] = _setting((5, 10, 20), "Ranking cutoffs N.")
    negatives: int = _setting(99, "Sampled negative candidates per test user.")
    full_catalog: bool = _setting(False, "Rank against the whole catalog instead of samples.")
    workers: int = _setting(1, "Threads scoring test users.")
    diagnostics: bool = _setting(False, "Write per sub-sequence attention weights.")

    def __post_init__(self) -> None:
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ConfigError("eval.cutoffs must hold positive integers.")
        if self.workers < 1:
            raise ConfigError("eval.workers must be >= 1.")


@dataclass(frozen=True)
class AblationConfig:
    """Switches for the model variants; all off is the full model."""

    context_embedding_off: bool = _setting(False, "w/o CE: item and positional embeddings only.")
    sequence_encoder_off: bool = _setting(False, "w/o SD: skip the self-attention encoder.")
    multi_channel_off: bool = _setting(False, "w/o MCP: one shared behavior transformation.")
    global_context_off: bool = _setting(False, "w/o LBD: skip global user aggregation.")
    concat_aggregation: bool = _setting(False, "w/o CTA: concatenate behavior embeddings.")
    frequency_aggregation: bool = _setting(False, "FBA: weight behaviors by frequency.")

    def __post_init__(self) -> None:
        if self.concat_aggregation and self.frequency_aggregation:
            raise ConfigError(
                "ablation.concat_aggregation and ablation.frequency_aggregation are exclusive."
            )


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator for corpora with a planted context-to-target dependency.

    Rates are per (user, preferred item, time step). A target event on an item is boosted by
    `kappa` when the same item received a context event within the previous `window` steps.
    """

    users: int = _setting(1000, "Synthetic users.")
    items: int = _setting(500, "Synthetic catalog size.")
    labels: tuple[str, ...] = _setting(
        ("view", "fav", "cart", "buy"), "Behavior labels; the last one is the target."
    )
    base_rates: tuple[float, ...] = _setting(
        (0.01, 0.002, 0.002, 0.002), "Event probability per behavior, item and step."
    )
    kappa: float = _setting(0.5, "Target probability boost after a recent context event.")
    window: int = _setting(3, "Steps during which a context event boosts the target.")
    preferred: int = _setting(40, "Preferred items per user.")
    horizon: int = _setting(60, "Time steps per user.")
    step_seconds: int = _setting(3600, "Seconds between time steps.")
    seed: int = _setting(0, "Generator seed.")

    @property
    def behaviors(self) -> int:
        return len(self.labels)

    def __post_init__(self) -> None:
        if len(self.labels) < 1 or len(set(self.labels)) != len(self.labels):
            raise ConfigError("synth.labels must be distinct and non-empty.")
        if len(self.base_rates) != len(self.labels):
            raise ConfigError("synth.base_rates needs one rate per label.")
        if any(not 0.0 <= p <= 1.0 for p in (*self.base_rates, self.kappa)):
            raise ConfigError("synth.base_rates and synth.kappa must lie in [0, 1].")
        if min(self.users, self.items, self.window, self.preferred, self.horizon) < 1:
            raise ConfigError("synth sizes must be >= 1.")
        if self.preferred > self.items:
            raise ConfigError("synth.preferred cannot exceed synth.items.")


@dataclass(frozen=True)
class SessionConfig:
    seed: int = _setting(0, "Seed of every random component.")
    output_dir: str = _setting("runs", "Directory for checkpoints, logs and reports.")


@dataclass(frozen=True)
class RunConfig:
    """Every setting of a run, grouped by section.

    Keys are addressed as `section.name`, e.g. `model.dim`. Values come from the built-in defaults,
    then a `key = value` file, then command-line overrides.
    """

    data: DataConfig = field(default_factory=DataConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)
    run: SessionConfig = field(default_factory=SessionConfig)

    def updated(self, values: Mapping[str, Any]) -> RunConfig:
        """Return a copy with `section.name` keys replaced.

        String values are parsed according to the field type; other values are used as given.

        Raises:
            ConfigError: On unknown keys or unparsable values.
        """
        schema = config_schema()
        grouped: dict[str, dict[str, Any]] = {}
        for key, value in values.items():
            if key not in schema:
                raise ConfigError(f"Unknown configuration key '{key}'.")
            section, name = key.split(".", 1)
            typed = coerce(schema[key].type, value, key) if isinstance(value, str) else value
            grouped.setdefault(section, {})[name] = typed

        sections = {
            section: replace(getattr(self, section), **changes)
            for section, changes in grouped.items()
        }
        return replace(self, **sections)


def config_schema() -> dict[str, Any]:
    """Every valid `section.name` key mapped to its dataclass field."""
    schema: dict[str, Any] = {}
    for section in fields(RunConfig):
        for setting in fields(section.default_factory):  # type: ignore[arg-type]
            schema[f"{section.name}.{setting.name}"] = setting
    return schema


def default_of(key: str) -> Any:
    section, name = key.split(".", 1)
    return getattr(getattr(RunConfig(), section), name)


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def coerce(type_name: Any, raw: str, key: str = "") -> Any:
    """Parse the text form of a setting according to its annotated type."""
    kind = str(type_name).replace(" ", "")
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "int|None":
            return None if text.lower() in ("", "none") else int(text)
        if kind.startswith("tuple["):
            element = kind[len("tuple[") :].split(",")[0]
            parts = [part.strip() for part in text.split(",") if part.strip()]
            cast = {"int": int, "float": float}.get(element, str)
            return tuple(cast(part) for part in parts)
        return text
    except ValueError as error:
        raise ConfigError(f"Invalid value '{raw}' for '{key}' (expected {kind}).") from error


def read_config_file(path: str | Path) -> dict[str, str]:
    """Read `key = value` lines; blank lines and `#` comments are ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as error:
        raise ConfigError(f"Cannot read configuration file {path}: {error.strerror}.") from error

    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got '{line.strip()}'.")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Build a `RunConfig` with precedence: overrides > file > built-in defaults."""
    config = RunConfig()
    if path:
        config = config.updated(read_config_file(path))
    if overrides:
        config = config.updated(overrides)
    return config


__all__ = [
    "AblationConfig",
    "DataConfig",
    "EvalConfig",
    "ModelConfig",
    "RunConfig",
    "SessionConfig",
    "SyntheticConfig",
    "TimeConfig",
    "TrainConfig",
    "config_schema",
    "load_config",
]
