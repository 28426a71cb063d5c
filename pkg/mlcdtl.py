"""
Multi-label consistent deep transform learning (MLCDTL).

Training minimizes

    ||Tn Z_{n-1} - Z||^2 + lam ||Y - M Z||^2
        + eps * sum_i (||T_i||^2 - logdet T_i)
        + mu * sum_j ||Z_j - tanh(T_j Z_{j-1})||^2        (Z_0 = X)

by cycling M, T1..Tn, Z, Z1..Z_{n-1}. Every transform candidate comes from
transform_core.transform_update after dividing its sub-problem by the data
weight; blocks are accepted with the same backtracking guard as MLCDDL.
Inference is a single forward pass Z = Tn tanh(... tanh(T1 X)).
"""

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike

from config import TrainConfig
from errors import DivergenceError
from mlcddl import (
    accept_block,
    accept_columns,
    check_input,
    check_sample_count,
    run_block_descent,
    threshold_scores,
    validate_training_data,
)
from models import DtlModel
from numerics import (
    ActivationSpec,
    Matrix,
    activation_forward,
    activation_inverse,
    ridge_solve_right,
    spd_solve,
)
from transform_core import logdet_barrier, transform_update

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DtlState:
    """One MLCDTL iterate; ``blocks`` is Z1..Z_{n-1} followed by Z"""

    X: Matrix
    Y: Matrix
    transforms: Tuple[Matrix, ...]
    blocks: Tuple[Matrix, ...]
    label_map: Matrix
    config: TrainConfig
    activation: ActivationSpec

    @property
    def Z(self) -> Matrix:
        return self.blocks[-1]

    def layer_input(self, j: int) -> Matrix:
        """Input of transform j (0-based): X for the first layer, Z_j otherwise"""
        return self.X if j == 0 else self.blocks[j - 1]

    def with_transform(self, j: int, T: Matrix) -> "DtlState":
        return replace(self, transforms=self.transforms[:j] + (T,) + self.transforms[j + 1 :])

    def with_block(self, j: int, C: Matrix) -> "DtlState":
        return replace(self, blocks=self.blocks[:j] + (C,) + self.blocks[j + 1 :])


def dtl_sample_objective(state: DtlState) -> np.ndarray:
    """Per-sample data terms; the transform regularizer is not column-separable"""
    cfg, phi = state.config, state.activation
    T = state.transforms
    n = len(T)
    value = np.sum((T[-1] @ state.layer_input(n - 1) - state.Z) ** 2, axis=0)
    value += cfg.lam * np.sum((state.Y - state.label_map @ state.Z) ** 2, axis=0)
    for j in range(n - 1):
        coupling = state.blocks[j] - activation_forward(T[j] @ state.layer_input(j), phi)
        value += cfg.mu * np.sum(coupling**2, axis=0)
    return value


def transform_penalty(state: DtlState) -> float:
    """eps * sum_i (||T_i||^2 - logdet T_i); +inf once a transform loses rank"""
    eps = state.config.eps
    return sum(eps * (float(np.sum(Ti * Ti)) - logdet_barrier(Ti)) for Ti in state.transforms)


def dtl_objective(state: DtlState) -> float:
    return float(np.sum(dtl_sample_objective(state))) + transform_penalty(state)


def weighted_transform_update(X: Matrix, target: Matrix, weight: float, eps: float) -> Matrix:
    """argmin_T weight*||T X - target||^2 + eps*(||T||^2 - logdet T)"""
    return transform_update(X, target, eps / weight, 1.0)


def dtl_label_map_candidate(state: DtlState) -> Matrix:
    return ridge_solve_right(state.Y, state.Z, state.config.ridge_delta)


def dtl_transform_candidate(state: DtlState, j: int) -> Matrix:
    """Inner transforms fit atanh(Z_{j+1}) with weight mu; the last one fits Z"""
    cfg = state.config
    if j < len(state.transforms) - 1:
        target = activation_inverse(state.blocks[j], state.activation)
        return weighted_transform_update(state.layer_input(j), target, cfg.mu, cfg.eps)
    return weighted_transform_update(state.layer_input(j), state.Z, 1.0, cfg.eps)


def dtl_code_candidate(state: DtlState) -> Matrix:
    """(I + lam M'M)^-1 (Tn Z_{n-1} + lam M'Y)"""
    cfg = state.config
    n = len(state.transforms)
    M = state.label_map
    G = np.eye(M.shape[1]) + cfg.lam * (M.T @ M)
    return spd_solve(G, state.transforms[-1] @ state.layer_input(n - 1) + cfg.lam * (M.T @ state.Y))


def dtl_intermediate_candidate(state: DtlState, j: int) -> Matrix:
    """Z_{j+1} between its own coupling and the layer that reads it"""
    cfg, phi = state.config, state.activation
    n = len(state.transforms)
    nxt = state.transforms[j + 1]
    if j + 1 == n - 1:
        target, w = state.Z, 1.0
    else:
        target, w = activation_inverse(state.blocks[j + 1], phi), cfg.mu
    G = w * (nxt.T @ nxt) + cfg.mu * np.eye(nxt.shape[1])
    R = w * (nxt.T @ target) + cfg.mu * activation_forward(state.transforms[j] @ state.layer_input(j), phi)
    return spd_solve(G, R)


def dtl_update_step(state: DtlState) -> DtlState:
    """One full cycle: M, T1..Tn, Z, then Z1..Z_{n-1}"""
    n = len(state.transforms)
    total = dtl_objective(state)

    M, total = accept_block(
        state.label_map,
        dtl_label_map_candidate(state),
        lambda trial: dtl_objective(replace(state, label_map=trial)),
        total,
    )
    state = replace(state, label_map=M)

    for j in range(n):
        T, total = accept_block(
            state.transforms[j],
            dtl_transform_candidate(state, j),
            lambda trial: dtl_objective(state.with_transform(j, trial)),
            total,
        )
        state = state.with_transform(j, T)

    values = dtl_sample_objective(state)
    for j in [n - 1] + list(range(n - 1)):
        candidate = dtl_code_candidate(state) if j == n - 1 else dtl_intermediate_candidate(state, j)
        C, values = accept_columns(
            state.blocks[j],
            candidate,
            lambda trial: dtl_sample_objective(state.with_block(j, trial)),
            values,
        )
        state = state.with_block(j, C)
    return state


def dtl_init_state(X: Matrix, Y: Matrix, config: TrainConfig) -> DtlState:
    """Random transforms; activated forward pass for Z1.., linear last layer for Z"""
    phi = ActivationSpec(clamp_delta=config.clamp_delta)
    sizes = (X.shape[0],) + tuple(config.layer_sizes)
    rng = np.random.default_rng(config.seed)
    T = [rng.standard_normal((rows, cols)) / np.sqrt(cols) for cols, rows in zip(sizes, sizes[1:])]
    h = X
    blocks = []
    for Ti in T[:-1]:
        h = activation_forward(Ti @ h, phi)
        blocks.append(h)
    blocks.append(T[-1] @ h)
    M = ridge_solve_right(Y, blocks[-1], config.ridge_delta)
    return DtlState(
        X=X, Y=Y, transforms=tuple(T), blocks=tuple(blocks), label_map=M, config=config, activation=phi
    )


def train_mlcdtl(X: ArrayLike, Y: ArrayLike, config: TrainConfig) -> DtlModel:
    """Train an MLCDTL model.

    Args:
        X: d x N aggregate windows, one sample per column
        Y: L x N binary appliance states
        config: Hyper-parameters; layer_sizes defaults to (120, 80, 40)

    Returns:
        DtlModel with 0.5 thresholds
    """
    X, Y = validate_training_data(X, Y)
    config = config.resolved("mlcdtl")
    check_sample_count(X.shape[1], config.layer_sizes)
    state = dtl_init_state(X, Y, config)
    if not np.isfinite(dtl_objective(state)):
        raise DivergenceError("initial MLCDTL objective is non-finite", 0)
    state, trace, max_ascent = run_block_descent(state, dtl_update_step, dtl_objective, config, "mlcdtl")
    return DtlModel(
        factors=state.transforms,
        label_map=state.label_map,
        thresholds=np.full(Y.shape[0], 0.5),
        activation=state.activation,
        config=config,
        objective_trace=tuple(trace),
        max_ascent=max_ascent,
    )


def dtl_infer(Xtest: ArrayLike, model: DtlModel) -> Matrix:
    h = check_input(Xtest, model)
    for Ti in model.transforms[:-1]:
        h = activation_forward(Ti @ h, model.activation)
    return model.transforms[-1] @ h


def dtl_predict(Xtest: ArrayLike, model: DtlModel) -> Tuple[Matrix, Matrix]:
    """Label scores M z and thresholded binary labels"""
    scores = model.label_map @ dtl_infer(Xtest, model)
    return scores, threshold_scores(scores, model.thresholds)
