"""
Trained layered models and their JSON serialization.

A model is an immutable value: ordered factor matrices (dictionaries for
MLCDDL, transforms for MLCDTL), the label map M, per-label thresholds, the
activation, and a snapshot of the training config. The model file is a single
self-describing JSON document; Python's shortest-repr float encoding makes
save -> load value-exact and repeated saves byte-identical.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, ClassVar, Dict, Optional, Sequence, Tuple, Type, Union

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from config import TrainConfig
from errors import DataError, DimensionError, ModelFormatError
from numerics import ActivationSpec, Matrix, as_matrix

MODEL_FORMAT_VERSION = 1


def _frozen(a: ArrayLike, name: str) -> Matrix:
    arr = np.array(as_matrix(a, name), dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


def _frozen_vector(a: Optional[ArrayLike], name: str) -> Optional[NDArray[np.float64]]:
    if a is None:
        return None
    arr = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class LayeredModel:
    """Common state of both model kinds; use DdlModel or DtlModel"""

    factors: Tuple[Matrix, ...]
    label_map: Matrix
    thresholds: NDArray[np.float64]
    activation: ActivationSpec
    config: TrainConfig
    objective_trace: Tuple[float, ...] = ()
    max_ascent: float = 0.0
    appliance_names: Tuple[str, ...] = ()
    mean_on_power: Optional[NDArray[np.float64]] = None
    feature_shift: Optional[NDArray[np.float64]] = None
    feature_scale: Optional[NDArray[np.float64]] = None

    kind: ClassVar[str] = ""

    def __post_init__(self):
        factors = tuple(_frozen(f, f"factor {i + 1}") for i, f in enumerate(self.factors))
        if not factors:
            raise DimensionError("a model needs at least one layer")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "label_map", _frozen(self.label_map, "label map"))
        object.__setattr__(self, "thresholds", _frozen_vector(self.thresholds, "thresholds"))
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))
        object.__setattr__(self, "appliance_names", tuple(self.appliance_names))
        for name in ("mean_on_power", "feature_shift", "feature_scale"):
            object.__setattr__(self, name, _frozen_vector(getattr(self, name), name))
        self._check_chain()
        n_labels = self.label_map.shape[0]
        if self.label_map.shape[1] != self.code_size:
            raise DimensionError(
                f"label map has {self.label_map.shape[1]} columns, expected {self.code_size}"
            )
        if self.thresholds.shape != (n_labels,):
            raise DimensionError(f"expected {n_labels} thresholds, got {self.thresholds.shape[0]}")
        if self.appliance_names and len(self.appliance_names) != n_labels:
            raise DimensionError(f"expected {n_labels} appliance names")
        if self.mean_on_power is not None and self.mean_on_power.shape != (n_labels,):
            raise DimensionError(f"expected {n_labels} mean ON powers")

    def _check_chain(self) -> None:
        raise NotImplementedError

    @property
    def depth(self) -> int:
        return len(self.factors)

    @property
    def n_labels(self) -> int:
        return self.label_map.shape[0]

    @property
    def input_size(self) -> int:
        raise NotImplementedError

    @property
    def code_size(self) -> int:
        raise NotImplementedError

    def with_thresholds(self, thresholds: ArrayLike) -> "LayeredModel":
        return replace(self, thresholds=np.asarray(thresholds, dtype=np.float64))

    def with_metadata(
        self,
        appliance_names: Sequence[str],
        mean_on_power: Optional[ArrayLike],
        feature_shift: Optional[ArrayLike] = None,
        feature_scale: Optional[ArrayLike] = None,
    ) -> "LayeredModel":
        """Attach the dataset facts needed at evaluation time"""
        return replace(
            self,
            appliance_names=tuple(appliance_names),
            mean_on_power=mean_on_power,
            feature_shift=feature_shift,
            feature_scale=feature_scale,
        )


@dataclass(frozen=True, eq=False)
class DdlModel(LayeredModel):
    """Deep dictionary model; factors are D1 (d x k1), D2 (k1 x k2), ..."""

    kind: ClassVar[str] = "mlcddl"

    def _check_chain(self) -> None:
        for i, (upper, lower) in enumerate(zip(self.factors, self.factors[1:]), start=1):
            if upper.shape[1] != lower.shape[0]:
                raise DimensionError(
                    f"D{i} has {upper.shape[1]} atoms but D{i + 1} has {lower.shape[0]} rows"
                )

    @property
    def dicts(self) -> Tuple[Matrix, ...]:
        return self.factors

    @property
    def input_size(self) -> int:
        return self.factors[0].shape[0]

    @property
    def code_size(self) -> int:
        return self.factors[-1].shape[1]


@dataclass(frozen=True, eq=False)
class DtlModel(LayeredModel):
    """Deep transform model; factors are T1 (k1 x d), T2 (k2 x k1), ..."""

    kind: ClassVar[str] = "mlcdtl"

    def _check_chain(self) -> None:
        for i, (inner, outer) in enumerate(zip(self.factors, self.factors[1:]), start=1):
            if inner.shape[0] != outer.shape[1]:
                raise DimensionError(
                    f"T{i} has {inner.shape[0]} rows but T{i + 1} has {outer.shape[1]} columns"
                )
        for i, T in enumerate(self.factors, start=1):
            s = scipy.linalg.svdvals(T)
            if s.min() <= s.max() * max(T.shape) * np.finfo(np.float64).eps:
                raise DataError(f"T{i} is rank deficient (smallest singular value {s.min():.3g})")

    @property
    def transforms(self) -> Tuple[Matrix, ...]:
        return self.factors

    @property
    def input_size(self) -> int:
        return self.factors[0].shape[1]

    @property
    def code_size(self) -> int:
        return self.factors[-1].shape[0]


MODEL_CLASSES: Dict[str, Type[LayeredModel]] = {DdlModel.kind: DdlModel, DtlModel.kind: DtlModel}


def _matrix_to_dict(M: Matrix) -> Dict[str, Any]:
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]), "data": M.ravel(order="C").tolist()}


def _matrix_from_dict(data: Dict[str, Any]) -> Matrix:
    rows, cols = int(data["rows"]), int(data["cols"])
    values = np.asarray(data["data"], dtype=np.float64)
    if values.size != rows * cols:
        raise ModelFormatError(f"matrix payload has {values.size} values, expected {rows * cols}")
    return values.reshape(rows, cols)


def _vector(a: Optional[NDArray[np.float64]]) -> Optional[list]:
    return None if a is None else a.tolist()


def model_to_dict(model: LayeredModel) -> Dict[str, Any]:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "activation": model.activation.to_dict(),
        "factors": [_matrix_to_dict(f) for f in model.factors],
        "label_map": _matrix_to_dict(model.label_map),
        "thresholds": model.thresholds.tolist(),
        "objective_trace": list(model.objective_trace),
        "max_ascent": model.max_ascent,
        "appliance_names": list(model.appliance_names),
        "mean_on_power": _vector(model.mean_on_power),
        "feature_shift": _vector(model.feature_shift),
        "feature_scale": _vector(model.feature_scale),
    }


def model_from_dict(data: Dict[str, Any]) -> LayeredModel:
    if data.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {data.get('format_version')!r}")
    cls = MODEL_CLASSES.get(data.get("kind", ""))
    if cls is None:
        raise ModelFormatError(f"unknown model kind {data.get('kind')!r}")
    try:
        return cls(
            factors=tuple(_matrix_from_dict(f) for f in data["factors"]),
            label_map=_matrix_from_dict(data["label_map"]),
            thresholds=np.asarray(data["thresholds"], dtype=np.float64),
            activation=ActivationSpec.from_dict(data["activation"]),
            config=TrainConfig.from_dict(data["config"]),
            objective_trace=tuple(data.get("objective_trace", ())),
            max_ascent=float(data.get("max_ascent", 0.0)),
            appliance_names=tuple(data.get("appliance_names", ())),
            mean_on_power=data.get("mean_on_power"),
            feature_shift=data.get("feature_shift"),
            feature_scale=data.get("feature_scale"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc}") from exc


def save_model(model: LayeredModel, path: Union[str, Path]) -> Path:
    """Write the model as JSON; identical models give byte-identical files"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(model_to_dict(model), indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    return path


def load_model(path: Union[str, Path]) -> LayeredModel:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(data)
