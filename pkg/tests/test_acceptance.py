"""Synthetic end-to-end disaggregation runs with the default three-layer models."""

import pytest

from config import ExperimentConfig, SynthSource, TrainConfig
from dataio import split_dataset, synth_dataset
from disagg import evaluate_model, fit_model


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["mlcddl", "mlcdtl"])
def test_synthetic_disaggregation(kind):
    config = ExperimentConfig(
        model=kind,
        train=TrainConfig(seed=0),
        synth=SynthSource(appliances=4, windows=2000, window_length=60, snr_db=20.0, seed=0),
        standardize="scale",
    )
    ds, _ = synth_dataset(4, 2000, d=60, snr_db=20.0, seed=0)
    train, test = split_dataset(ds, 0.8, seed=config.split.seed)

    model = fit_model(kind, train, config.train, config)
    report = evaluate_model(model, test)

    assert report.macro_f1 >= 0.90
    assert report.energy_error <= 0.05
