"""
Training and experiment configuration.

Both configs are frozen dataclasses validated on construction and mapped to and
from plain JSON dictionaries. The experiment file format is versioned; see
PROJECT_STRUCTURE.md for the schema.
"""

import hashlib
import json
import numbers
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from errors import ConfigError

CONFIG_FORMAT_VERSION = 1
MODEL_KINDS = ("mlcddl", "mlcdtl")
MAX_DEPTH = 4
MAX_SEED = 2**64 - 1
# Run manifests embed the experiment config and can be fed back to train
RUN_MANIFEST_KIND = "run_manifest"
MEAN_ON_ESTIMATORS = ("instants", "windows")

# Published widths for three layers; a fourth layer halves the third
DEFAULT_LAYER_SIZES: Dict[str, Tuple[int, ...]] = {
    "mlcddl": (120, 80, 50),
    "mlcdtl": (120, 80, 40),
}


def layer_sizes_for_depth(kind: str, depth: int) -> Tuple[int, ...]:
    """Layer widths used for a given depth in the layer-count sweep.

    Args:
        kind: "mlcddl" or "mlcdtl"
        depth: Number of layers, 1 to 4

    Returns:
        Tuple of widths, e.g. (120, 80, 40, 20) for a 4-layer MLCDTL
    """
    if kind not in DEFAULT_LAYER_SIZES:
        raise ConfigError(f"unknown model kind: {kind!r}")
    if not 1 <= depth <= MAX_DEPTH:
        raise ConfigError(f"depth must be between 1 and {MAX_DEPTH}, got {depth}")
    sizes = DEFAULT_LAYER_SIZES[kind]
    if depth <= len(sizes):
        return sizes[:depth]
    return sizes + (max(1, sizes[-1] // 2),)


def _check_seed(seed: Any, where: str) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"{where} must be an integer in [0, 2**64), got {seed!r}")
    return seed


def _check_count(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ConfigError(f"{where} must be a positive integer, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by both trainers.

    ``lam`` weights the label-consistency term, ``mu`` the layer coupling
    penalties and ``eps`` the transform regularizer (MLCDTL only).
    ``ridge_delta`` of None selects the automatic numerical ridge.
    """

    layer_sizes: Optional[Tuple[int, ...]] = None
    lam: float = 1.0
    mu: float = 1.0
    eps: float = 0.1
    max_iter: int = 100
    tol: float = 1e-4
    infer_iter: int = 50
    seed: int = 0
    ridge_delta: Optional[float] = None
    clamp_delta: float = 1e-6
    log_every: int = 10

    def __post_init__(self):
        if self.layer_sizes is not None:
            sizes = tuple(_check_count(k, "layer width") for k in self.layer_sizes)
            if not sizes or len(sizes) > MAX_DEPTH:
                raise ConfigError(f"layer_sizes must hold 1 to {MAX_DEPTH} widths, got {sizes}")
            object.__setattr__(self, "layer_sizes", sizes)
        if self.lam < 0:
            raise ConfigError(f"lam must be nonnegative, got {self.lam}")
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        for name in ("max_iter", "infer_iter", "log_every"):
            _check_count(getattr(self, name), name)
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.ridge_delta is not None and self.ridge_delta < 0:
            raise ConfigError(f"ridge_delta must be nonnegative, got {self.ridge_delta}")
        if not 0.0 < self.clamp_delta <= 0.1:
            raise ConfigError(f"clamp_delta must lie in (0, 0.1], got {self.clamp_delta}")
        _check_seed(self.seed, "seed")

    def resolved(self, kind: str) -> "TrainConfig":
        """Copy with layer_sizes filled in from the model-kind defaults"""
        if self.layer_sizes is not None:
            return self
        if kind not in DEFAULT_LAYER_SIZES:
            raise ConfigError(f"unknown model kind: {kind!r}")
        return replace(self, layer_sizes=DEFAULT_LAYER_SIZES[kind])

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["layer_sizes"] = list(self.layer_sizes) if self.layer_sizes is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        kwargs = dict(data)
        if kwargs.get("layer_sizes") is not None:
            kwargs["layer_sizes"] = tuple(kwargs["layer_sizes"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"invalid train config: {exc}") from exc


@dataclass(frozen=True)
class SynthSource:
    """Parameters of the synthetic generator"""

    appliances: int = 4
    windows: int = 2000
    window_length: int = 60
    snr_db: float = 20.0
    seed: int = 0
    activation_prob: float = 0.5

    def __post_init__(self):
        if self.appliances < 1:
            raise ConfigError(f"synth.appliances must be at least 1, got {self.appliances}")
        if self.windows < 1 or self.window_length < 1:
            raise ConfigError("synth.windows and synth.window_length must be positive")
        if not 0.0 < self.activation_prob < 1.0:
            raise ConfigError(f"synth.activation_prob must lie in (0, 1), got {self.activation_prob}")
        _check_seed(self.seed, "synth.seed")


@dataclass(frozen=True)
class CsvSource:
    """Smart-meter CSV exports, one file per house"""

    paths: Tuple[str, ...]
    aggregate: str
    appliances: Tuple[str, ...]
    timestamp: str = "timestamp"
    resample_seconds: int = 60
    window_length: int = 60
    on_threshold_watts: Union[float, Dict[str, float]] = 10.0
    on_fraction: float = 0.5
    stride: Optional[int] = None
    mean_on_estimator: str = "instants"

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        object.__setattr__(self, "appliances", tuple(self.appliances))
        if not self.paths:
            raise ConfigError("csv.paths must name at least one file")
        if not self.appliances:
            raise ConfigError("csv.appliances must name at least one column")
        if self.resample_seconds < 1 or self.window_length < 1:
            raise ConfigError("csv.resample_seconds and csv.window_length must be positive")
        if not 0.0 < self.on_fraction <= 1.0:
            raise ConfigError(f"csv.on_fraction must lie in (0, 1], got {self.on_fraction}")
        if self.stride is not None and self.stride < 1:
            raise ConfigError(f"csv.stride must be positive, got {self.stride}")
        if self.mean_on_estimator not in MEAN_ON_ESTIMATORS:
            raise ConfigError(
                f"csv.mean_on_estimator must be one of {MEAN_ON_ESTIMATORS}, got {self.mean_on_estimator!r}"
            )


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split; group_key "house" keeps whole houses on one side"""

    train_fraction: float = 0.8
    group_key: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"split.train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.group_key not in (None, "house"):
            raise ConfigError(f"split.group_key must be null or \"house\", got {self.group_key!r}")
        _check_seed(self.seed, "split.seed")


@dataclass(frozen=True)
class ThresholdPolicy:
    """Fixed per-label cutoff, or F1-calibrated on a validation slice.

    A validation_fraction of 0 calibrates on the training split itself.
    """

    policy: str = "calibrate"
    value: float = 0.5
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.policy not in ("fixed", "calibrate"):
            raise ConfigError(f"thresholds.policy must be \"fixed\" or \"calibrate\", got {self.policy!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"thresholds.validation_fraction must lie in [0, 1), got {self.validation_fraction}"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: data source, model, split, thresholds and output dir"""

    model: str = "mlcddl"
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: Optional[SynthSource] = None
    csv: Optional[CsvSource] = None
    dataset: Optional[str] = None
    split: SplitSpec = field(default_factory=SplitSpec)
    thresholds: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    output_dir: str = "runs"
    depths: Tuple[int, ...] = ()
    standardize: Union[bool, str] = False

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        sources = [s for s in (self.synth, self.csv, self.dataset) if s is not None]
        if len(sources) != 1:
            raise ConfigError("exactly one data source (synth, csv or dataset) is required")
        depths = tuple(int(k) for k in self.depths)
        for depth in depths:
            layer_sizes_for_depth(self.model, depth)
        object.__setattr__(self, "depths", depths)
        if self.split.group_key == "house" and self.synth is not None:
            raise ConfigError("split.group_key \"house\" needs a csv or dataset source")
        if not (isinstance(self.standardize, bool) or self.standardize == "scale"):
            raise ConfigError(f"standardize must be true, false or \"scale\", got {self.standardize!r}")

    def validate_paths(self) -> None:
        """Check that every referenced input exists"""
        missing = []
        if self.csv is not None:
            missing.extend(p for p in self.csv.paths if not Path(p).is_file())
        if self.dataset is not None and not Path(self.dataset).is_dir():
            missing.append(self.dataset)
        if missing:
            raise ConfigError(f"input not found: {', '.join(missing)}")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "format_version": CONFIG_FORMAT_VERSION,
            "model": self.model,
            "train": self.train.to_dict(),
            "split": asdict(self.split),
            "thresholds": asdict(self.thresholds),
            "output_dir": self.output_dir,
            "depths": list(self.depths),
            "standardize": self.standardize,
        }
        if self.synth is not None:
            data["synth"] = asdict(self.synth)
        if self.csv is not None:
            csv = asdict(self.csv)
            csv["paths"] = list(self.csv.paths)
            csv["appliances"] = list(self.csv.appliances)
            data["csv"] = csv
        if self.dataset is not None:
            data["dataset"] = self.dataset
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        version = data.get("format_version", CONFIG_FORMAT_VERSION)
        if version != CONFIG_FORMAT_VERSION:
            raise ConfigError(f"unsupported config format_version {version}")
        known = set(cls.__dataclass_fields__) | {"format_version"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(
                model=data.get("model", "mlcddl"),
                train=TrainConfig.from_dict(data.get("train", {})),
                synth=SynthSource(**data["synth"]) if data.get("synth") is not None else None,
                csv=CsvSource(**data["csv"]) if data.get("csv") is not None else None,
                dataset=data.get("dataset"),
                split=SplitSpec(**data.get("split", {})),
                thresholds=ThresholdPolicy(**data.get("thresholds", {})),
                output_dir=data.get("output_dir", "runs"),
                depths=tuple(data.get("depths", ())),
                standardize=data.get("standardize", False),
            )
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate an experiment config file or a run manifest"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if data.get("kind") == RUN_MANIFEST_KIND:
        data = data.get("config")
        if not isinstance(data, dict):
            raise ConfigError(f"run manifest {path} holds no config")
    return ExperimentConfig.from_dict(data)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: Union[ExperimentConfig, TrainConfig]) -> str:
    """SHA-256 of the canonical JSON form of a config"""
    return hashlib.sha256(canonical_json(config.to_dict()).encode("utf-8")).hexdigest()
