"""
Smart-meter data ingestion and windowed datasets.

Pipeline for real exports: load_power_csv -> resample_mean -> derive_states ->
windowize, once per house, then concat_datasets and split_dataset. The
synthetic generator produces the same WindowedDataset directly. Datasets are
persisted as a directory of CSV files plus a JSON sidecar (see
PROJECT_STRUCTURE.md).
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from sklearn.model_selection import GroupShuffleSplit, ShuffleSplit
from sklearn.preprocessing import StandardScaler

from errors import DataError, DimensionError, ModelFormatError

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1
DEFAULT_ON_THRESHOLD_WATTS = 10.0
DEFAULT_ON_FRACTION = 0.5
FLOAT_FORMAT = "%.17g"
# Synthetic windows are one reading per minute
SYNTH_PERIOD_SECONDS = 60

_EPOCH = pd.Timestamp("1970-01-01", tz="UTC")


# ============= TIME SERIES =============

@dataclass(frozen=True)
class CsvSchema:
    """Column names of one smart-meter export"""

    aggregate: str
    appliances: Tuple[str, ...]
    timestamp: str = "timestamp"

    def __post_init__(self):
        object.__setattr__(self, "appliances", tuple(self.appliances))
        names = [self.timestamp, self.aggregate, *self.appliances]
        if len(set(names)) != len(names):
            raise DataError(f"schema column names must be distinct, got {names}")


@dataclass(frozen=True, eq=False)
class TimeSeriesTable:
    """Aggregate and appliance power (watts) on a shared epoch-seconds axis"""

    timestamps: NDArray[np.int64]
    channels: Dict[str, NDArray[np.float64]]
    aggregate: str

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        if ts.ndim != 1 or ts.size == 0:
            raise DataError("a table needs a non-empty 1-D timestamp axis")
        if np.any(np.diff(ts) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if self.aggregate not in self.channels:
            raise DataError(f"aggregate channel {self.aggregate!r} missing")
        channels = {}
        # aggregate first, then appliances in insertion order
        for name in [self.aggregate] + [c for c in self.channels if c != self.aggregate]:
            values = np.asarray(self.channels[name], dtype=np.float64)
            if values.shape != ts.shape:
                raise DimensionError(f"channel {name!r} has {values.size} values for {ts.size} timestamps")
            if not np.all(np.isfinite(values)):
                raise DataError(f"channel {name!r} contains non-finite values")
            negative = np.flatnonzero(values < 0)
            if negative.size:
                raise DataError(f"channel {name!r} has a negative reading at row {negative[0]}")
            channels[name] = values
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", channels)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def appliance_names(self) -> Tuple[str, ...]:
        return tuple(c for c in self.channels if c != self.aggregate)

    @property
    def native_period(self) -> Optional[int]:
        """Smallest spacing between readings; None for a single reading"""
        if len(self) < 2:
            return None
        return int(np.diff(self.timestamps).min())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeriesTable):
            return NotImplemented
        return (
            self.aggregate == other.aggregate
            and list(self.channels) == list(other.channels)
            and np.array_equal(self.timestamps, other.timestamps)
            and all(np.array_equal(self.channels[c], other.channels[c]) for c in self.channels)
        )

    __hash__ = None


def _line_list(rows: NDArray[np.int64], limit: int = 10) -> str:
    # +2: one-based lines and the header row
    lines = [str(int(r) + 2) for r in rows[:limit]]
    return ", ".join(lines) + (", ..." if rows.size > limit else "")


def _parse_timestamps(raw: pd.Series) -> pd.Series:
    """Epoch seconds as float (NaN where unparseable); ISO-8601 auto-detected"""
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().sum() * 2 >= len(raw):
        return np.floor(numeric)
    parsed = pd.to_datetime(raw, errors="coerce", utc=True)
    return (parsed - _EPOCH) / pd.Timedelta(seconds=1)


def load_power_csv(path: Union[str, Path], schema: CsvSchema) -> Tuple[TimeSeriesTable, int]:
    """Read one smart-meter export.

    Args:
        path: CSV with a header row (timestamp, aggregate, appliances...)
        schema: Which columns to use

    Returns:
        (table, number of skipped rows). Rows with unparseable, negative or
        duplicate-timestamp values are logged and skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"power CSV not found: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"could not parse {path}: {exc}") from exc

    value_columns = [schema.aggregate, *schema.appliances]
    missing = [c for c in [schema.timestamp, *value_columns] if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")

    timestamps = _parse_timestamps(frame[schema.timestamp])
    values = frame[value_columns].apply(pd.to_numeric, errors="coerce").astype(np.float64)
    bad = (
        timestamps.isna().to_numpy()
        | values.isna().any(axis=1).to_numpy()
        | np.isinf(values.to_numpy()).any(axis=1)
        | (values.to_numpy() < 0).any(axis=1)
    )
    rejected = np.flatnonzero(bad)
    if rejected.size:
        logger.warning(
            "%s: skipped %d rows with unparseable or negative values (lines %s)",
            path,
            rejected.size,
            _line_list(rejected),
        )

    good = pd.DataFrame({"_ts": timestamps[~bad].astype(np.int64)}).join(values[~bad])
    good = good.sort_values("_ts", kind="mergesort")
    duplicated = good["_ts"].duplicated(keep="first").to_numpy()
    if duplicated.any():
        logger.warning("%s: dropped %d rows with repeated timestamps", path, int(duplicated.sum()))
        good = good[~duplicated]
    if good.empty:
        raise DataError(f"{path}: no usable rows")

    table = TimeSeriesTable(
        timestamps=good["_ts"].to_numpy(np.int64),
        channels={c: good[c].to_numpy(np.float64) for c in value_columns},
        aggregate=schema.aggregate,
    )
    skipped = int(rejected.size + duplicated.sum())
    logger.info("loaded %s: %d rows, %d skipped", path, len(table), skipped)
    return table, skipped


def write_power_csv(table: TimeSeriesTable, path: Union[str, Path], timestamp: str = "timestamp") -> Path:
    """Write a table in the load_power_csv layout with epoch-second timestamps"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({timestamp: table.timestamps, **table.channels})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def resample_mean(table: TimeSeriesTable, period_seconds: int) -> TimeSeriesTable:
    """Average every channel over [t, t + period) bins; empty bins are dropped"""
    if period_seconds < 1:
        raise DataError(f"resample period must be positive, got {period_seconds}")
    native = table.native_period
    if native is not None and period_seconds < native:
        raise DataError(f"resample period {period_seconds}s is shorter than the native spacing {native}s")
    bins = (table.timestamps // period_seconds) * period_seconds
    means = pd.DataFrame(table.channels).groupby(bins, sort=True).mean()
    return TimeSeriesTable(
        timestamps=means.index.to_numpy(np.int64),
        channels={c: means[c].to_numpy(np.float64) for c in table.channels},
        aggregate=table.aggregate,
    )


def derive_states(
    table: TimeSeriesTable,
    on_threshold_watts: Union[float, Mapping[str, float]] = DEFAULT_ON_THRESHOLD_WATTS,
) -> Dict[str, NDArray[np.float64]]:
    """Binary ON/OFF series per appliance channel (ON iff power >= threshold).

    A mapping sets per-appliance thresholds; appliances it leaves out use the
    10 W default.
    """
    names = table.appliance_names
    if isinstance(on_threshold_watts, Mapping):
        unknown = sorted(set(on_threshold_watts) - set(names))
        if unknown:
            raise DataError(f"unknown appliance names: {unknown}")
        thresholds = {n: float(on_threshold_watts.get(n, DEFAULT_ON_THRESHOLD_WATTS)) for n in names}
    else:
        thresholds = {n: float(on_threshold_watts) for n in names}
    states = {}
    for name, threshold in thresholds.items():
        if not threshold > 0:
            raise DataError(f"ON threshold for {name!r} must be positive, got {threshold}")
        states[name] = (table.channels[name] >= threshold).astype(np.float64)
    return states


# ============= WINDOWED DATASETS =============

@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Samples as columns: X is d x N aggregate windows, Y is L x N binary.

    ``power`` (optional, L x N) holds the true mean appliance power of every
    window and ``groups`` (optional, N) the house each window came from.
    ``on_energy`` and ``on_instants`` (optional, L x N) are the summed power
    over a window's ON readings and the number of those readings; they let
    mean ON power be re-estimated on any subset of windows.
    """

    X: NDArray[np.float64]
    Y: NDArray[np.float64]
    appliance_names: Tuple[str, ...]
    mean_on_power: NDArray[np.float64]
    window_seconds: int
    power: Optional[NDArray[np.float64]] = None
    groups: Optional[NDArray[np.str_]] = None
    on_energy: Optional[NDArray[np.float64]] = None
    on_instants: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        names = tuple(str(n) for n in self.appliance_names)
        mean_on = np.asarray(self.mean_on_power, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or Y.ndim != 2:
            raise DimensionError("X and Y must be 2-D")
        if X.shape[1] != Y.shape[1]:
            raise DimensionError(f"X has {X.shape[1]} windows but Y has {Y.shape[1]}")
        if not (len(names) == Y.shape[0] == mean_on.size):
            raise DimensionError(
                f"{Y.shape[0]} label rows, {len(names)} appliance names, {mean_on.size} mean ON powers"
            )
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite values")
        if not np.all((Y == 0.0) | (Y == 1.0)):
            raise DataError("Y must be binary (entries 0 or 1)")
        if np.any(mean_on < 0) or not np.all(np.isfinite(mean_on)):
            raise DataError("mean ON power must be finite and nonnegative")
        if self.window_seconds < 1:
            raise DataError(f"window_seconds must be positive, got {self.window_seconds}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "appliance_names", names)
        object.__setattr__(self, "mean_on_power", mean_on)
        if self.power is not None:
            power = np.asarray(self.power, dtype=np.float64)
            if power.shape != Y.shape:
                raise DimensionError(f"power has shape {power.shape}, expected {Y.shape}")
            object.__setattr__(self, "power", power)
        if self.groups is not None:
            groups = np.asarray(self.groups, dtype=str)
            if groups.shape != (Y.shape[1],):
                raise DimensionError(f"expected {Y.shape[1]} group ids, got {groups.shape}")
            object.__setattr__(self, "groups", groups)
        for name in ("on_energy", "on_instants"):
            stats = getattr(self, name)
            if stats is None:
                continue
            stats = np.asarray(stats, dtype=np.float64)
            if stats.shape != Y.shape:
                raise DimensionError(f"{name} has shape {stats.shape}, expected {Y.shape}")
            if np.any(stats < 0) or not np.all(np.isfinite(stats)):
                raise DataError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, stats)
        if (self.on_energy is None) != (self.on_instants is None):
            raise DataError("on_energy and on_instants must be given together")

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]

    @property
    def n_labels(self) -> int:
        return self.Y.shape[0]

    @property
    def window_length(self) -> int:
        return self.X.shape[0]

    def subset(self, index: ArrayLike) -> "WindowedDataset":
        """Dataset restricted to the given window columns"""
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            X=self.X[:, index],
            Y=self.Y[:, index],
            power=None if self.power is None else self.power[:, index],
            groups=None if self.groups is None else self.groups[index],
            on_energy=None if self.on_energy is None else self.on_energy[:, index],
            on_instants=None if self.on_instants is None else self.on_instants[:, index],
        )

    def refit_mean_on_power(self, estimator: str = "instants") -> "WindowedDataset":
        """Recompute mean ON power from this dataset's own windows.

        Args:
            estimator: "instants" averages appliance power over the ON readings
                of these windows (needs on_energy/on_instants, otherwise the
                current value is kept); "windows" divides total appliance
                energy by the number of ON windows, so that ON count times
                mean ON power reproduces the window energy

        Returns:
            Copy with the refitted mean_on_power
        """
        if estimator == "instants":
            if self.on_energy is None:
                return self
            totals = self.on_energy.sum(axis=1)
            counts = self.on_instants.sum(axis=1)
        elif estimator == "windows":
            if self.power is None:
                return self
            totals = self.power.sum(axis=1)
            counts = self.Y.sum(axis=1)
        else:
            raise DataError(f"unknown mean ON power estimator {estimator!r}")
        mean_on = np.divide(totals, counts, out=np.zeros_like(totals), where=counts > 0)
        return replace(self, mean_on_power=mean_on)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WindowedDataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (
            self.appliance_names == other.appliance_names
            and self.window_seconds == other.window_seconds
            and same(self.X, other.X)
            and same(self.Y, other.Y)
            and same(self.mean_on_power, other.mean_on_power)
            and same(self.power, other.power)
            and same(self.groups, other.groups)
            and same(self.on_energy, other.on_energy)
            and same(self.on_instants, other.on_instants)
        )

    __hash__ = None


def _segments(timestamps: NDArray[np.int64], period: int) -> List[Tuple[int, int]]:
    """[start, stop) index ranges of gap-free runs"""
    breaks = np.flatnonzero(np.diff(timestamps) != period) + 1
    starts = np.concatenate(([0], breaks))
    stops = np.concatenate((breaks, [timestamps.size]))
    return list(zip(starts.tolist(), stops.tolist()))


def windowize(
    table: TimeSeriesTable,
    states: Mapping[str, ArrayLike],
    window_len: int,
    on_fraction: float = DEFAULT_ON_FRACTION,
    stride: Optional[int] = None,
    group: Optional[str] = None,
) -> WindowedDataset:
    """Cut the aggregate channel into windows and label them.

    Args:
        table: Resampled readings; a gap in the timestamps ends a window run
        states: Output of derive_states
        window_len: Readings per window (60 one-minute readings by default)
        on_fraction: Share of ON instants that makes a window ON
        stride: Step between window starts; defaults to window_len (no overlap)
        group: Group id (house) recorded for every window

    Returns:
        WindowedDataset with per-window true power attached
    """
    if window_len < 1:
        raise DataError(f"window length must be positive, got {window_len}")
    stride = window_len if stride is None else stride
    if stride < 1:
        raise DataError(f"stride must be positive, got {stride}")
    if not 0.0 < on_fraction <= 1.0:
        raise DataError(f"on_fraction must lie in (0, 1], got {on_fraction}")
    names = tuple(states)
    unknown = [n for n in names if n not in table.channels or n == table.aggregate]
    if unknown:
        raise DataError(f"unknown appliance names: {unknown}")
    S = np.vstack([np.asarray(states[n], dtype=np.float64) for n in names]) if names else np.zeros((0, len(table)))
    if S.shape[1] != len(table):
        raise DimensionError("state series do not match the table length")
    P = np.vstack([table.channels[n] for n in names]) if names else np.zeros((0, len(table)))
    period = table.native_period or 1

    starts = []
    for lo, hi in _segments(table.timestamps, period):
        starts.extend(range(lo, hi - window_len + 1, stride))
    if not starts:
        raise DataError(f"no complete windows of {window_len} contiguous readings")

    agg = table.channels[table.aggregate]
    cols = np.asarray(starts)[:, None] + np.arange(window_len)
    X = agg[cols].T
    Y = (S[:, cols].sum(axis=2) >= on_fraction * window_len).astype(np.float64)
    power = P[:, cols].mean(axis=2)
    on_energy = (P * S)[:, cols].sum(axis=2)
    on_counts = S[:, cols].sum(axis=2)

    on_instants = S.sum(axis=1)
    mean_on = np.divide((P * S).sum(axis=1), on_instants, out=np.zeros(len(names)), where=on_instants > 0)
    return WindowedDataset(
        X=X,
        Y=Y,
        appliance_names=names,
        mean_on_power=mean_on,
        window_seconds=window_len * period,
        power=power,
        groups=None if group is None else np.full(len(starts), group),
        on_energy=on_energy,
        on_instants=on_counts,
    )


def concat_datasets(datasets: Sequence[WindowedDataset]) -> WindowedDataset:
    """Stack windows from several houses; names and window geometry must agree"""
    if not datasets:
        raise DataError("nothing to concatenate")
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.appliance_names != first.appliance_names:
            raise DataError(f"appliance names differ: {first.appliance_names} vs {ds.appliance_names}")
        if (ds.window_seconds, ds.window_length) != (first.window_seconds, first.window_length):
            raise DataError("window geometry differs between datasets")
    has_power = all(ds.power is not None for ds in datasets)
    has_groups = all(ds.groups is not None for ds in datasets)
    has_stats = all(ds.on_energy is not None for ds in datasets)
    on_counts = np.stack([ds.Y.sum(axis=1) for ds in datasets])
    weighted = np.stack([ds.mean_on_power for ds in datasets]) * on_counts
    total = on_counts.sum(axis=0)
    mean_on = np.divide(weighted.sum(axis=0), total, out=np.zeros_like(total), where=total > 0)
    return WindowedDataset(
        X=np.hstack([ds.X for ds in datasets]),
        Y=np.hstack([ds.Y for ds in datasets]),
        appliance_names=first.appliance_names,
        mean_on_power=mean_on,
        window_seconds=first.window_seconds,
        power=np.hstack([ds.power for ds in datasets]) if has_power else None,
        groups=np.concatenate([ds.groups for ds in datasets]) if has_groups else None,
        on_energy=np.hstack([ds.on_energy for ds in datasets]) if has_stats else None,
        on_instants=np.hstack([ds.on_instants for ds in datasets]) if has_stats else None,
    )


def sklearn_seed(seed: int) -> int:
    """Fold a 64-bit seed into the 32-bit range sklearn accepts"""
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def split_dataset(
    ds: WindowedDataset,
    train_fraction: float,
    group_keys: Optional[ArrayLike] = None,
    seed: int = 0,
) -> Tuple[WindowedDataset, WindowedDataset]:
    """Deterministic train/test split.

    With group_keys (e.g. house ids) whole groups land on one side; otherwise
    windows are shuffled individually.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must lie in (0, 1), got {train_fraction}")
    index = np.arange(ds.n_samples)
    try:
        if group_keys is not None:
            group_keys = np.asarray(group_keys)
            if group_keys.shape != (ds.n_samples,):
                raise DimensionError(f"expected {ds.n_samples} group keys, got {group_keys.shape}")
            n_groups = np.unique(group_keys).size
            if n_groups < 2:
                raise DataError(f"a grouped split needs at least 2 groups, got {n_groups}")
            splitter = GroupShuffleSplit(n_splits=1, train_size=train_fraction, random_state=sklearn_seed(seed))
            train, test = next(splitter.split(index, groups=group_keys))
        else:
            splitter = ShuffleSplit(n_splits=1, train_size=train_fraction, random_state=sklearn_seed(seed))
            train, test = next(splitter.split(index))
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"cannot split {ds.n_samples} windows at {train_fraction}: {exc}") from exc
    return ds.subset(np.sort(train)), ds.subset(np.sort(test))


def standardize_features(
    X: ArrayLike,
    shift: Optional[ArrayLike] = None,
    scale: Optional[ArrayLike] = None,
    center: bool = True,
) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Per-feature standardization of a d x N matrix.

    Fits shift/scale when they are not given (constant features keep scale 1).
    With ``center=False`` only the scale is fitted and the shift is zero.

    Returns:
        (standardized X, shift, scale)
    """
    X = np.asarray(X, dtype=np.float64)
    if shift is None or scale is None:
        scaler = StandardScaler(with_mean=center).fit(X.T)
        shift = scaler.mean_ if center else np.zeros(X.shape[0])
        scale = scaler.scale_
    shift = np.asarray(shift, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if shift.shape != (X.shape[0],) or scale.shape != (X.shape[0],):
        raise DimensionError(f"standardization expects {X.shape[0]} features")
    return (X - shift[:, None]) / scale[:, None], shift, scale


# ============= SYNTHETIC DATA =============

def synth_dataset(
    L: int,
    N: int,
    d: int = 60,
    snr_db: float = 20.0,
    seed: int = 0,
    activation_prob: float = 0.5,
) -> Tuple[WindowedDataset, NDArray[np.float64]]:
    """Seeded synthetic windows with known appliance states.

    Every appliance has a fixed signature: a constant plateau at its own
    wattage over its own stretch of the window. With L <= d the window is
    cut into L equal slots and each plateau stays inside its own slot, so
    signatures never overlap; otherwise plateaus are placed at random. A
    window's aggregate is the sum of the active signatures plus white noise
    at ``snr_db``.

    Returns:
        (dataset, L x N ground-truth mean appliance power per window)
    """
    if L < 1 or N < 1 or d < 1:
        raise DataError(f"synth needs L, N, d >= 1, got L={L}, N={N}, d={d}")
    rng = np.random.default_rng(seed)
    base = np.linspace(200.0, 2000.0, L) * rng.uniform(0.9, 1.1, L)

    if L <= d:
        width = d // L
        lengths = rng.integers(max(1, width // 2), width + 1, L)
        starts = np.arange(L) * width + rng.integers(0, width - lengths + 1)
    else:
        shortest = max(1, d // 4)
        longest = max(shortest, d // 2)
        lengths = rng.integers(shortest, longest + 1, L)
        slots = d - longest + 1
        starts = rng.choice(slots, size=L, replace=L > slots)
    signatures = np.zeros((L, d))
    for i in range(L):
        signatures[i, starts[i] : starts[i] + lengths[i]] = base[i]

    Y = (rng.random((L, N)) < activation_prob).astype(np.float64)
    clean = signatures.T @ Y
    noise = rng.standard_normal((d, N))
    if np.isinf(snr_db) and snr_db > 0:
        X = clean
    else:
        signal_power = float(np.mean(clean**2))
        X = clean + noise * np.sqrt(signal_power / 10.0 ** (snr_db / 10.0))

    mean_on = signatures.mean(axis=1)
    power = mean_on[:, None] * Y
    ds = WindowedDataset(
        X=X,
        Y=Y,
        appliance_names=tuple(f"appliance_{i + 1}" for i in range(L)),
        mean_on_power=mean_on,
        window_seconds=d * SYNTH_PERIOD_SECONDS,
        power=power,
    )
    logger.info("synthesized %d windows of %d readings for %d appliances (SNR %s dB)", N, d, L, snr_db)
    return ds, power


# ============= PERSISTENCE =============

def _write_matrix_csv(rows: NDArray, columns: Sequence[str], path: Path) -> None:
    pd.DataFrame(rows, columns=list(columns)).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def save_dataset(ds: WindowedDataset, directory: Union[str, Path]) -> Path:
    """Write X.csv, Y.csv, the optional per-window CSVs and dataset.json.

    Args:
        ds: Dataset to persist
        directory: Created if missing; existing files are overwritten

    Returns:
        The dataset directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(ds.appliance_names)
    _write_matrix_csv(ds.X.T, [f"x{i}" for i in range(ds.window_length)], directory / "X.csv")
    _write_matrix_csv(ds.Y.T.astype(np.int64), names, directory / "Y.csv")
    if ds.power is not None:
        _write_matrix_csv(ds.power.T, names, directory / "power.csv")
    if ds.groups is not None:
        pd.DataFrame({"group": ds.groups}).to_csv(directory / "groups.csv", index=False)
    if ds.on_energy is not None:
        _write_matrix_csv(ds.on_energy.T, names, directory / "on_energy.csv")
        _write_matrix_csv(ds.on_instants.T, names, directory / "on_instants.csv")
    sidecar = {
        "format_version": DATASET_FORMAT_VERSION,
        "appliance_names": names,
        "mean_on_power": ds.mean_on_power.tolist(),
        "window_seconds": int(ds.window_seconds),
        "window_length": int(ds.window_length),
        "n_samples": int(ds.n_samples),
    }
    with open(directory / "dataset.json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    return directory


def _read_matrix_csv(path: Path, columns: Sequence[str]) -> NDArray[np.float64]:
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != list(columns):
        raise ModelFormatError(f"{path}: expected columns {list(columns)}, got {list(frame.columns)}")
    return frame.to_numpy(np.float64).T


def load_dataset(directory: Union[str, Path]) -> WindowedDataset:
    """Inverse of save_dataset"""
    directory = Path(directory)
    sidecar_path = directory / "dataset.json"
    for required in (sidecar_path, directory / "X.csv", directory / "Y.csv"):
        if not required.is_file():
            raise ModelFormatError(f"dataset file not found: {required}")
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        if sidecar.get("format_version") != DATASET_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported dataset format_version {sidecar.get('format_version')!r}")
        names = [str(n) for n in sidecar["appliance_names"]]
        X = _read_matrix_csv(directory / "X.csv", [f"x{i}" for i in range(int(sidecar["window_length"]))])
        Y = _read_matrix_csv(directory / "Y.csv", names)
        power = None
        if (directory / "power.csv").is_file():
            power = _read_matrix_csv(directory / "power.csv", names)
        groups = None
        if (directory / "groups.csv").is_file():
            groups = pd.read_csv(directory / "groups.csv", dtype=str, keep_default_na=False)["group"].to_numpy()
        stats = {}
        for name in ("on_energy", "on_instants"):
            if (directory / f"{name}.csv").is_file():
                stats[name] = _read_matrix_csv(directory / f"{name}.csv", names)
        ds = WindowedDataset(
            X=X,
            Y=Y,
            appliance_names=tuple(names),
            mean_on_power=np.asarray(sidecar["mean_on_power"], dtype=np.float64),
            window_seconds=int(sidecar["window_seconds"]),
            power=power,
            groups=groups,
            **stats,
        )
    except (KeyError, TypeError, json.JSONDecodeError, pd.errors.ParserError) as exc:
        raise ModelFormatError(f"malformed dataset in {directory}: {exc}") from exc
    if ds.n_samples != int(sidecar.get("n_samples", ds.n_samples)):
        raise ModelFormatError(f"{directory}: sidecar says {sidecar['n_samples']} windows, files hold {ds.n_samples}")
    return ds


def build_csv_dataset(source) -> WindowedDataset:
    """Run the ingestion pipeline over every file of a CsvSource.

    Each file is one house; its windows carry the file stem (the full path
    when stems collide) as group id.
    """
    schema = CsvSchema(aggregate=source.aggregate, appliances=source.appliances, timestamp=source.timestamp)
    stems = [Path(p).stem for p in source.paths]
    unique_stems = len(set(stems)) == len(stems)
    per_house = []
    for path in source.paths:
        table, skipped = load_power_csv(path, schema)
        table = resample_mean(table, source.resample_seconds)
        states = derive_states(table, source.on_threshold_watts)
        per_house.append(
            windowize(
                table,
                states,
                source.window_length,
                on_fraction=source.on_fraction,
                stride=source.stride,
                group=Path(path).stem if unique_stems else str(path),
            )
        )
        logger.info("%s: %d windows (%d rows skipped)", path, per_house[-1].n_samples, skipped)
    return concat_datasets(per_house)
