"""
Multi-label evaluation for appliance-state prediction.

F1 follows 2TP / (2TP + FP + FN); a label that is never present and never
predicted scores 1.0 and is reported as vacuous. Energy error compares the
energy implied by predicted states (ON count times mean ON power) against the
metered energy.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from sklearn.metrics import multilabel_confusion_matrix

from errors import DataError, DimensionError
from numerics import as_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LabelConfusion:
    """Per-label true positive, false positive and false negative counts"""

    tp: NDArray[np.int64]
    fp: NDArray[np.int64]
    fn: NDArray[np.int64]
    n_samples: Optional[int] = None

    def __post_init__(self):
        counts = []
        for name in ("tp", "fp", "fn"):
            raw = np.asarray(getattr(self, name)).reshape(-1)
            arr = raw.astype(np.int64)
            if not np.array_equal(arr, raw) or np.any(arr < 0):
                raise DataError(f"{name} counts must be nonnegative integers")
            counts.append(arr)
            object.__setattr__(self, name, arr)
        if not counts[0].size or len({c.size for c in counts}) != 1:
            raise DimensionError("tp, fp and fn need the same, nonzero number of labels")
        if self.n_samples is not None and np.any(self.tp + self.fp + self.fn > self.n_samples):
            raise DataError(f"confusion counts exceed the {self.n_samples} samples")

    @classmethod
    def from_triples(cls, triples: Sequence[Tuple[int, int, int]], n_samples: Optional[int] = None):
        tp, fp, fn = zip(*triples)
        return cls(tp=np.array(tp), fp=np.array(fp), fn=np.array(fn), n_samples=n_samples)

    @property
    def n_labels(self) -> int:
        return int(self.tp.size)

    @property
    def vacuous(self) -> NDArray[np.bool_]:
        """Labels with no positives in either truth or prediction"""
        return (self.tp + self.fp + self.fn) == 0


def f1(tp: int, fp: int, fn: int) -> float:
    """2TP / (2TP + FP + FN), defined as 1.0 when all three counts are zero"""
    if min(tp, fp, fn) < 0:
        raise DataError(f"counts must be nonnegative, got ({tp}, {fp}, {fn})")
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def per_label_f1(conf: LabelConfusion) -> NDArray[np.float64]:
    return np.array([f1(int(a), int(b), int(c)) for a, b, c in zip(conf.tp, conf.fp, conf.fn)])


def f1_micro(conf: LabelConfusion) -> float:
    """F1 of the label-summed counts"""
    return f1(int(conf.tp.sum()), int(conf.fp.sum()), int(conf.fn.sum()))


def f1_macro(conf: LabelConfusion) -> float:
    """Mean of the per-label F1 scores"""
    return float(np.mean(per_label_f1(conf)))


def _binary(Y: ArrayLike, name: str) -> NDArray[np.float64]:
    Y = as_matrix(Y, name)
    if not np.all((Y == 0.0) | (Y == 1.0)):
        raise DataError(f"{name} must be binary (entries 0 or 1)")
    return Y


def confusion_from_labels(Yhat: ArrayLike, Ytrue: ArrayLike) -> LabelConfusion:
    """Per-label counts for L x N predicted and true label matrices"""
    Yhat = _binary(Yhat, "Yhat")
    Ytrue = _binary(Ytrue, "Ytrue")
    if Yhat.shape != Ytrue.shape:
        raise DimensionError(f"Yhat has shape {Yhat.shape} but Ytrue has {Ytrue.shape}")
    # sklearn wants samples as rows; each 2x2 block is [[tn, fp], [fn, tp]]
    if Ytrue.shape[0] == 1:
        # a single column reads as binary targets, so ask for the positive class block
        mcm = multilabel_confusion_matrix(
            Ytrue[0].astype(np.int64), Yhat[0].astype(np.int64), labels=[0, 1]
        )[1:]
    else:
        mcm = multilabel_confusion_matrix(Ytrue.T.astype(np.int64), Yhat.T.astype(np.int64))
    return LabelConfusion(tp=mcm[:, 1, 1], fp=mcm[:, 0, 1], fn=mcm[:, 1, 0], n_samples=Ytrue.shape[1])


def _energy_inputs(predicted_states, actual_power, mean_on_power):
    S = _binary(predicted_states, "predicted states")
    P = as_matrix(actual_power, "actual power")
    w = np.asarray(mean_on_power, dtype=np.float64).reshape(-1)
    if P.shape != S.shape:
        raise DimensionError(f"actual power has shape {P.shape}, expected {S.shape}")
    if w.shape != (S.shape[0],):
        raise DimensionError(f"expected {S.shape[0]} mean ON powers, got {w.size}")
    return S.sum(axis=1) * w, P.sum(axis=1)


def energy_error(
    predicted_states: ArrayLike,
    actual_power: ArrayLike,
    mean_on_power: ArrayLike,
    signed: bool = False,
) -> float:
    """|predicted - actual| / actual over the summed energy of all appliances.

    Args:
        predicted_states: L x N binary states
        actual_power: L x N metered appliance power
        mean_on_power: Per-appliance mean ON power, from the training split
        signed: Return (predicted - actual) / actual instead

    Raises:
        DataError: when the actual energy is zero
    """
    predicted, actual = _energy_inputs(predicted_states, actual_power, mean_on_power)
    total = float(actual.sum())
    if total <= 0.0:
        raise DataError("actual energy is zero; energy error undefined")
    ratio = (float(predicted.sum()) - total) / total
    return ratio if signed else abs(ratio)


def energy_error_per_appliance(
    predicted_states: ArrayLike,
    actual_power: ArrayLike,
    mean_on_power: ArrayLike,
    signed: bool = False,
) -> NDArray[np.float64]:
    """Per-appliance ratio; NaN where the appliance used no energy"""
    predicted, actual = _energy_inputs(predicted_states, actual_power, mean_on_power)
    ratio = np.full(actual.shape, np.nan)
    used = actual > 0
    ratio[used] = (predicted[used] - actual[used]) / actual[used]
    return ratio if signed else np.abs(ratio)


def calibrate_thresholds(scores: ArrayLike, Ytrue: ArrayLike) -> NDArray[np.float64]:
    """Per-label threshold maximizing F1 on the given split.

    The N+1 candidates are one below the smallest score, the midpoints of
    consecutive sorted scores, and one above the largest. Ties go to the
    larger threshold. When every score is equal the midpoints collapse onto
    that value, which becomes the threshold.
    """
    scores = as_matrix(scores, "scores")
    Ytrue = _binary(Ytrue, "Ytrue")
    if scores.shape != Ytrue.shape:
        raise DimensionError(f"scores have shape {scores.shape} but Ytrue has {Ytrue.shape}")
    N = scores.shape[1]
    thresholds = np.empty(scores.shape[0])
    for i, (s, y) in enumerate(zip(scores, Ytrue)):
        order = np.sort(s)
        candidates = np.concatenate(([order[0] - 1.0], 0.5 * (order[:-1] + order[1:]), [order[-1] + 1.0]))
        positives = np.sort(s[y == 1.0])
        predicted = N - np.searchsorted(order, candidates, side="left")
        tp = positives.size - np.searchsorted(positives, candidates, side="left")
        fp = predicted - tp
        fn = positives.size - tp
        denom = 2 * tp + fp + fn
        score = np.divide(2.0 * tp, denom, out=np.ones(candidates.size), where=denom > 0)
        best = candidates.size - 1 - int(np.argmax(score[::-1]))
        thresholds[i] = candidates[best]
        if order[0] == order[-1]:
            thresholds[i] = order[0]
            logger.warning("label %d: all %d scores equal %.6g; threshold is degenerate", i, N, order[0])
        elif positives.size in (0, N):
            logger.warning("label %d: every window has the same state; threshold is degenerate", i)
    return thresholds


# ============= REPORTS =============

def _nan_to_none(value: float) -> Optional[float]:
    return None if value is None or math.isnan(value) else float(value)


def _none_to_nan(value: Optional[float]) -> float:
    return float("nan") if value is None else float(value)


@dataclass(frozen=True)
class ApplianceMetrics:
    name: str
    f1: float
    energy_error: float
    signed_energy_error: float
    vacuous: bool = False


@dataclass(frozen=True)
class MetricsReport:
    """Overall and per-appliance scores of one evaluation"""

    macro_f1: float
    micro_f1: float
    energy_error: float
    signed_energy_error: float
    per_appliance: Tuple[ApplianceMetrics, ...]
    sample_count: int

    @property
    def vacuous_labels(self) -> List[str]:
        return [a.name for a in self.per_appliance if a.vacuous]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "energy_error": _nan_to_none(self.energy_error),
            "signed_energy_error": _nan_to_none(self.signed_energy_error),
            "sample_count": self.sample_count,
            "vacuous_labels": self.vacuous_labels,
            "per_appliance": [
                {
                    **asdict(a),
                    "energy_error": _nan_to_none(a.energy_error),
                    "signed_energy_error": _nan_to_none(a.signed_energy_error),
                }
                for a in self.per_appliance
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        per_appliance = tuple(
            ApplianceMetrics(
                name=a["name"],
                f1=float(a["f1"]),
                energy_error=_none_to_nan(a["energy_error"]),
                signed_energy_error=_none_to_nan(a["signed_energy_error"]),
                vacuous=bool(a.get("vacuous", False)),
            )
            for a in data["per_appliance"]
        )
        return cls(
            macro_f1=float(data["macro_f1"]),
            micro_f1=float(data["micro_f1"]),
            energy_error=_none_to_nan(data["energy_error"]),
            signed_energy_error=_none_to_nan(data["signed_energy_error"]),
            per_appliance=per_appliance,
            sample_count=int(data["sample_count"]),
        )

    def csv_header(self) -> List[str]:
        columns = ["macro_f1", "micro_f1", "energy_error", "signed_energy_error", "sample_count"]
        for a in self.per_appliance:
            columns += [f"f1_{a.name}", f"error_{a.name}"]
        return columns

    def to_csv_row(self) -> List[Any]:
        row: List[Any] = [
            self.macro_f1,
            self.micro_f1,
            self.energy_error,
            self.signed_energy_error,
            self.sample_count,
        ]
        for a in self.per_appliance:
            row += [a.f1, a.energy_error]
        return row


def evaluate_predictions(
    Yhat: ArrayLike,
    Ytrue: ArrayLike,
    mean_on_power: ArrayLike,
    actual_power: Optional[ArrayLike] = None,
    appliance_names: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """Assemble the full report.

    Args:
        Yhat: L x N predicted states
        Ytrue: L x N true states
        mean_on_power: Training-split mean ON power per appliance
        actual_power: L x N metered power; defaults to Ytrue times mean ON
            power (states-only reconstruction)
        appliance_names: Row labels; defaults to label_1, label_2, ...

    Returns:
        MetricsReport; energy errors are NaN when the split used no energy
    """
    conf = confusion_from_labels(Yhat, Ytrue)
    L = conf.n_labels
    mean_on = np.asarray(mean_on_power, dtype=np.float64).reshape(-1)
    if actual_power is None:
        actual_power = np.asarray(Ytrue, dtype=np.float64) * mean_on[:, None]
    names = list(appliance_names) if appliance_names is not None else [f"label_{i + 1}" for i in range(L)]
    if len(names) != L:
        raise DimensionError(f"expected {L} appliance names, got {len(names)}")

    try:
        total_abs = energy_error(Yhat, actual_power, mean_on)
        total_signed = energy_error(Yhat, actual_power, mean_on, signed=True)
    except DataError as exc:
        logger.warning("%s", exc)
        total_abs = total_signed = float("nan")
    per_abs = energy_error_per_appliance(Yhat, actual_power, mean_on)
    per_signed = energy_error_per_appliance(Yhat, actual_power, mean_on, signed=True)

    scores = per_label_f1(conf)
    vacuous = conf.vacuous
    per_appliance = tuple(
        ApplianceMetrics(
            name=names[i],
            f1=float(scores[i]),
            energy_error=float(per_abs[i]),
            signed_energy_error=float(per_signed[i]),
            vacuous=bool(vacuous[i]),
        )
        for i in range(L)
    )
    return MetricsReport(
        macro_f1=f1_macro(conf),
        micro_f1=f1_micro(conf),
        energy_error=total_abs,
        signed_energy_error=total_signed,
        per_appliance=per_appliance,
        sample_count=conf.n_samples,
    )
