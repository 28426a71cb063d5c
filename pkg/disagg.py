"""
Disaggregation experiment harness.

    python disagg.py synth --config experiment.json [--seed N] [--out DIR]
    python disagg.py train --config experiment.json [--seed N] [--out DIR]
    python disagg.py eval  --model RUN/model.json --data RUN/test [--out DIR] [--json] [--oracle]
    python disagg.py eval  --config RUN/manifest.json [--out DIR] [--json] [--oracle]

Exit codes: 0 success, 1 usage or configuration error (including missing
input files), 2 data, numerical or training failure.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import (
    RUN_MANIFEST_KIND,
    ExperimentConfig,
    TrainConfig,
    config_hash,
    layer_sizes_for_depth,
    load_experiment_config,
)
from dataio import (
    FLOAT_FORMAT,
    WindowedDataset,
    build_csv_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
    standardize_features,
    synth_dataset,
)
from errors import ConfigError, DataError, DimensionError, DisaggError, DivergenceError, ModelFormatError
from metrics import MetricsReport, calibrate_thresholds, evaluate_predictions
from mlcddl import DESCENT_SLACK, ddl_predict, train_mlcddl
from mlcdtl import dtl_predict, train_mlcdtl
from models import LayeredModel, load_model, save_model

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2
MANIFEST_VERSION = 1

TRAINERS: Dict[str, Callable[..., LayeredModel]] = {"mlcddl": train_mlcddl, "mlcdtl": train_mlcdtl}
PREDICTORS: Dict[str, Callable[..., Tuple[np.ndarray, np.ndarray]]] = {
    "mlcddl": ddl_predict,
    "mlcdtl": dtl_predict,
}


def predict(model: LayeredModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scores and thresholded labels for raw (unstandardized) windows"""
    if model.feature_shift is not None and model.feature_scale is not None:
        if X.shape[0] != model.feature_shift.size:
            raise DimensionError(f"model expects {model.feature_shift.size} features, got {X.shape[0]}")
        X, _, _ = standardize_features(X, model.feature_shift, model.feature_scale)
    return PREDICTORS[model.kind](X, model)


def write_json(data: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_report(report: MetricsReport, out_dir: Path) -> None:
    """report.json, a one-row report.csv and the per-appliance table"""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), out_dir / "report.json")
    pd.DataFrame([report.to_csv_row()], columns=report.csv_header()).to_csv(
        out_dir / "report.csv", index=False, float_format=FLOAT_FORMAT
    )
    pd.DataFrame(
        {
            "appliance": [a.name for a in report.per_appliance],
            "f1": [a.f1 for a in report.per_appliance],
            "energy_error": [a.energy_error for a in report.per_appliance],
            "signed_energy_error": [a.signed_energy_error for a in report.per_appliance],
            "vacuous": [a.vacuous for a in report.per_appliance],
        }
    ).to_csv(out_dir / "per_appliance.csv", index=False, float_format=FLOAT_FORMAT)


# ============= SYNTH =============

def cmd_synth(config: ExperimentConfig) -> Path:
    """Generate the configured synthetic dataset into config.output_dir"""
    if config.synth is None:
        raise ConfigError("synth needs a \"synth\" data source in the config")
    s = config.synth
    ds, _ = synth_dataset(s.appliances, s.windows, s.window_length, s.snr_db, s.seed, s.activation_prob)
    out_dir = save_dataset(ds, config.output_dir)
    print(f"✅ Synthetic dataset written to {out_dir}")
    print(f"   N={ds.n_samples} windows, L={ds.n_labels} appliances, d={ds.window_length}, SNR={s.snr_db} dB")
    return out_dir


# ============= TRAIN =============

def load_source(config: ExperimentConfig) -> WindowedDataset:
    if config.synth is not None:
        s = config.synth
        ds, _ = synth_dataset(s.appliances, s.windows, s.window_length, s.snr_db, s.seed, s.activation_prob)
        return ds
    if config.csv is not None:
        return build_csv_dataset(config.csv)
    return load_dataset(config.dataset)


def fit_model(
    kind: str,
    train: WindowedDataset,
    train_config: TrainConfig,
    config: ExperimentConfig,
) -> LayeredModel:
    """Train one model and attach thresholds and dataset metadata"""
    X = train.X
    shift = scale = None
    if config.standardize:
        X, shift, scale = standardize_features(X, center=config.standardize != "scale")
    prepared = replace(train, X=X, groups=None)

    policy = config.thresholds
    fit_set = val_set = prepared
    if policy.policy == "calibrate" and policy.validation_fraction > 0:
        fit_set, val_set = split_dataset(prepared, 1.0 - policy.validation_fraction, seed=config.split.seed)

    model = TRAINERS[kind](fit_set.X, fit_set.Y, train_config)
    if policy.policy == "calibrate":
        scores, _ = PREDICTORS[kind](val_set.X, model)
        thresholds = calibrate_thresholds(scores, val_set.Y)
    else:
        thresholds = np.full(train.n_labels, policy.value)
    return model.with_thresholds(thresholds).with_metadata(
        train.appliance_names, train.mean_on_power, shift, scale
    )


def evaluate_model(model: LayeredModel, ds: WindowedDataset, oracle: bool = False) -> MetricsReport:
    """Predict on ds and score against its labels (oracle: score the true labels)"""
    if model.n_labels != ds.n_labels:
        raise DimensionError(f"model predicts {model.n_labels} appliances, data has {ds.n_labels}")
    if model.appliance_names and model.appliance_names != ds.appliance_names:
        raise DataError(f"appliance names differ: model {model.appliance_names}, data {ds.appliance_names}")
    mean_on = model.mean_on_power
    if mean_on is None:
        logger.warning("model carries no mean ON power; using the evaluation data's own")
        mean_on = ds.mean_on_power
    if oracle:
        # true states scored against their own states-only energy reconstruction
        return evaluate_predictions(ds.Y, ds.Y, mean_on, None, ds.appliance_names)
    labels = predict(model, ds.X)[1]
    return evaluate_predictions(labels, ds.Y, mean_on, ds.power, ds.appliance_names)


def write_trace(trace: Sequence[float], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"iteration": np.arange(len(trace)), "objective": list(trace)})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def build_manifest(
    config: ExperimentConfig,
    model: Optional[LayeredModel] = None,
    failure: Optional[DivergenceError] = None,
) -> Dict[str, Any]:
    """Run record; its embedded config reproduces the run via train --config"""
    trace = model.objective_trace if model is not None else ()
    return {
        "kind": RUN_MANIFEST_KIND,
        "manifest_version": MANIFEST_VERSION,
        "config_hash": config_hash(config),
        "config": config.to_dict(),
        "model_kind": config.model,
        "seed": config.train.seed,
        "layer_sizes": list(config.train.resolved(config.model).layer_sizes),
        "status": "failed" if failure is not None else "ok",
        "iterations": len(trace) - 1 if trace else None,
        "final_objective": trace[-1] if trace else None,
        "max_ascent": model.max_ascent if model is not None else None,
        "failure_iteration": failure.iteration if failure is not None else None,
        "failure_message": str(failure) if failure is not None else None,
    }


def run_depth_sweep(
    config: ExperimentConfig,
    train: WindowedDataset,
    test: WindowedDataset,
    run_dir: Path,
) -> pd.DataFrame:
    """One model per configured depth, trained in worker threads; one table row each"""

    def train_depth(depth: int):
        train_config = replace(config.train, layer_sizes=layer_sizes_for_depth(config.model, depth))
        model = fit_model(config.model, train, train_config, config)
        return depth, model, evaluate_model(model, test)

    workers = min(len(config.depths), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(train_depth, config.depths))

    rows: List[List[Any]] = []
    for depth, model, report in results:
        depth_dir = run_dir / f"depth_{depth}"
        save_model(model, depth_dir / "model.json")
        write_trace(model.objective_trace, depth_dir / "objective_trace.csv")
        write_report(report, depth_dir)
        sizes = "-".join(str(k) for k in model.config.layer_sizes)
        rows.append([depth, sizes, len(model.objective_trace) - 1, model.objective_trace[-1]] + report.to_csv_row())
        print(f"   depth {depth} ({sizes}): macro F1 {report.macro_f1:.4f}, energy error {report.energy_error:.4f}")
    header = ["depth", "layer_sizes", "iterations", "final_objective"] + results[0][2].csv_header()
    table = pd.DataFrame(rows, columns=header)
    table.to_csv(run_dir / "depth_sweep.csv", index=False, float_format=FLOAT_FORMAT)
    return table


def cmd_train(config: ExperimentConfig) -> Path:
    """Train the configured model; writes model, trace, manifest and the test split"""
    config.validate_paths()
    run_dir = Path(config.output_dir)
    ds = load_source(config)

    group_keys = None
    if config.split.group_key == "house":
        if ds.groups is None:
            raise ConfigError("split.group_key \"house\" needs windows with house ids")
        group_keys = ds.groups
    train, test = split_dataset(ds, config.split.train_fraction, group_keys, config.split.seed)
    if config.synth is None:
        # energy predictions must rest on training-split statistics only
        estimator = config.csv.mean_on_estimator if config.csv is not None else "instants"
        train = train.refit_mean_on_power(estimator)
    print(f"📂 {train.n_samples} training windows, {test.n_samples} test windows, {ds.n_labels} appliances")

    try:
        model = fit_model(config.model, train, config.train, config)
    except DivergenceError as exc:
        write_json(build_manifest(config, failure=exc), run_dir / "manifest.json")
        print(f"❌ {config.model} training diverged at iteration {exc.iteration}")
        raise

    save_model(model, run_dir / "model.json")
    write_trace(model.objective_trace, run_dir / "objective_trace.csv")
    save_dataset(test, run_dir / "test")
    write_json(build_manifest(config, model), run_dir / "manifest.json")

    iterations = len(model.objective_trace) - 1
    print(f"✅ Trained {config.model} in {iterations} iterations (objective {model.objective_trace[-1]:.6g})")
    print(f"   Run directory: {run_dir}")
    if model.max_ascent > DESCENT_SLACK * max(1.0, abs(model.objective_trace[0])):
        print(f"⚠️  Objective rose by up to {model.max_ascent:.3g} in a cycle")
    report = evaluate_model(model, test)
    print(f"   Test macro F1 {report.macro_f1:.4f}, micro F1 {report.micro_f1:.4f}, energy error {report.energy_error:.4f}")

    if config.depths:
        print(f"📂 Depth sweep over {list(config.depths)}")
        run_depth_sweep(config, train, test, run_dir)
    return run_dir


# ============= EVAL =============

def resolve_eval_paths(
    config_path: Optional[str], model_path: Optional[str], data_path: Optional[str]
) -> Tuple[str, str]:
    """Model and dataset locations; --config points both into the run directory"""
    if config_path is not None:
        run_dir = Path(load_experiment_config(config_path).output_dir)
        model_path = model_path or str(run_dir / "model.json")
        data_path = data_path or str(run_dir / "test")
    if model_path is None or data_path is None:
        raise ConfigError("eval needs --config, or both --model and --data")
    return model_path, data_path


def cmd_eval(
    model_path: str,
    data_path: str,
    out_dir: Optional[str] = None,
    oracle: bool = False,
    as_json: bool = False,
) -> MetricsReport:
    """Score a saved model on a saved dataset and write the report files"""
    model = load_model(model_path)
    ds = load_dataset(data_path)
    report = evaluate_model(model, ds, oracle=oracle)
    target = Path(out_dir) if out_dir else Path(model_path).parent / "eval"
    write_report(report, target)
    if as_json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        source = "true labels" if oracle else model.kind
        print(f"✅ Evaluated {source} on {report.sample_count} windows")
        print(f"   Macro F1 {report.macro_f1:.4f} | Micro F1 {report.micro_f1:.4f} | Energy error {report.energy_error:.4f}")
        for a in report.per_appliance:
            flag = " (vacuous)" if a.vacuous else ""
            print(f"   {a.name}: F1 {a.f1:.4f}, error {a.energy_error:.4f}{flag}")
        print(f"📂 Reports written to {target}")
    return report


# ============= ENTRY POINT =============

class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"❌ {self.prog}: {message}\n")


def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = CliParser(prog="disagg", description="Multi-label deep dictionary / transform disaggregation")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("synth", "generate a synthetic dataset"), ("train", "train a model")):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("--config", required=True, help="experiment config JSON or run manifest")
        sub.add_argument("--seed", type=int, help="override the config seed")
        sub.add_argument("--out", help="override output_dir")

    sub = commands.add_parser("eval", parents=[common], help="evaluate a saved model")
    sub.add_argument("--config", help="run manifest or experiment config; locates RUN/model.json and RUN/test")
    sub.add_argument("--model", help="model.json written by train")
    sub.add_argument("--data", help="dataset directory (e.g. RUN/test)")
    sub.add_argument("--out", help="report directory (default: next to the model)")
    sub.add_argument("--json", action="store_true", help="print the report as JSON only")
    sub.add_argument("--oracle", action="store_true", help="score the true labels instead of predictions")
    return parser


def apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Command-line flags win over scalar config fields"""
    if args.seed is not None:
        if args.command == "synth":
            if config.synth is None:
                raise ConfigError("--seed for synth needs a \"synth\" data source")
            config = replace(config, synth=replace(config.synth, seed=args.seed))
        else:
            config = replace(config, train=replace(config.train, seed=args.seed))
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code"""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            model_path, data_path = resolve_eval_paths(args.config, args.model, args.data)
            cmd_eval(model_path, data_path, args.out, oracle=args.oracle, as_json=args.json)
        else:
            config = apply_overrides(load_experiment_config(args.config), args)
            if args.command == "synth":
                cmd_synth(config)
            else:
                cmd_train(config)
    except (ConfigError, ModelFormatError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DisaggError, OSError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
