"""
Multi-label consistent deep dictionary learning (MLCDDL).

Training minimizes the penalty (variable-splitting) objective

    ||X - D1 Z1||^2 + lam ||Y - M Z||^2
        + mu * sum_j ||Z_j - tanh(D_{j+1} Z_{j+1})||^2

by cycling block updates in the order M, D1..Dn, Z, Z1..Z_{n-1}. Every block
has a closed-form candidate: the least-squares minimizer of its sub-problem,
in the atanh ("inverted activation") form where the coupling sits inside tanh.
A candidate is accepted along the longest backtracking step that does not
raise the objective above; coefficient blocks are accepted sample by sample.
mu stays fixed; no multiplier updates take place.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Tuple

import numpy as np
from numpy.typing import ArrayLike

from config import TrainConfig
from errors import DataError, DimensionError, DivergenceError, NonFiniteError
from models import DdlModel
from numerics import (
    ActivationSpec,
    Matrix,
    activation_forward,
    activation_inverse,
    as_matrix,
    clamped_fraction,
    auto_ridge,
    ridge_solve,
    ridge_solve_right,
    spd_solve,
)

logger = logging.getLogger(__name__)

DESCENT_SLACK = 1e-9
# Share of intermediate entries the inverse activation may clamp before we warn
CLAMP_WARN_FRACTION = 0.01
# Fractions of (candidate - current) tried in order; none passing keeps the block
BACKTRACK_STEPS = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)


def validate_training_data(X: ArrayLike, Y: ArrayLike) -> Tuple[Matrix, Matrix]:
    """Shared argument checks for both trainers"""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"X has {X.shape[1]} samples but Y has {Y.shape[1]}")
    if not np.all((Y == 0.0) | (Y == 1.0)):
        raise DataError("Y must be binary (entries 0 or 1)")
    return X, Y


def check_sample_count(N: int, layer_sizes: Tuple[int, ...]) -> None:
    widest = max(layer_sizes)
    if N < widest:
        logger.warning(
            "only %d training samples for a layer of width %d; normal equations lean on the ridge",
            N,
            widest,
        )


# ============= GUARDED BLOCK ACCEPTANCE =============

def accept_block(
    current: Matrix,
    candidate: Matrix,
    total_of: Callable[[Matrix], float],
    baseline: float,
) -> Tuple[Matrix, float]:
    """Move a block toward its candidate without raising the objective.

    Args:
        current: Block value at which ``baseline`` was computed
        candidate: Closed-form minimizer of the block's sub-problem
        total_of: Full objective as a function of this block
        baseline: total_of(current)

    Returns:
        (accepted block, objective there); ``current`` when every step rises
    """
    direction = candidate - current
    for step in BACKTRACK_STEPS:
        trial = candidate if step == 1.0 else current + step * direction
        value = total_of(trial)
        if value <= baseline:
            return trial, value
    return current, baseline


def accept_columns(
    current: Matrix,
    candidate: Matrix,
    columns_of: Callable[[Matrix], np.ndarray],
    baseline: np.ndarray,
) -> Tuple[Matrix, np.ndarray]:
    """accept_block for objectives that are sums of per-sample terms.

    Each column keeps the longest step that does not raise its own term, so
    one badly conditioned sample cannot hold back the others.
    """
    block = current.copy()
    values = baseline.copy()
    pending = np.ones(current.shape[1], dtype=bool)
    direction = candidate - current
    for step in BACKTRACK_STEPS:
        trial = candidate if step == 1.0 else current + step * direction
        trial_values = columns_of(trial)
        ok = pending & (trial_values <= baseline)
        block[:, ok] = trial[:, ok]
        values[ok] = trial_values[ok]
        pending &= ~ok
        if not pending.any():
            break
    return block, values


# ============= STATE AND OBJECTIVE =============

@dataclass(frozen=True, eq=False)
class DdlState:
    """Everything one update cycle reads and writes.

    ``blocks`` holds Z1..Z_{n-1} followed by the deepest coefficients Z, so
    X ~ D1 blocks[0] and blocks[j-1] ~ tanh(D_{j+1} blocks[j]).
    """

    X: Matrix
    Y: Matrix
    dicts: Tuple[Matrix, ...]
    blocks: Tuple[Matrix, ...]
    label_map: Matrix
    config: TrainConfig
    activation: ActivationSpec

    @property
    def Z(self) -> Matrix:
        return self.blocks[-1]

    def with_dict(self, j: int, D: Matrix) -> "DdlState":
        return replace(self, dicts=self.dicts[:j] + (D,) + self.dicts[j + 1 :])

    def with_block(self, j: int, C: Matrix) -> "DdlState":
        return replace(self, blocks=self.blocks[:j] + (C,) + self.blocks[j + 1 :])


def ddl_sample_objective(state: DdlState) -> np.ndarray:
    """Per-sample terms of the penalty objective (one value per column)"""
    cfg, phi = state.config, state.activation
    D, C = state.dicts, state.blocks
    value = np.sum((state.X - D[0] @ C[0]) ** 2, axis=0)
    value += cfg.lam * np.sum((state.Y - state.label_map @ state.Z) ** 2, axis=0)
    for j in range(1, len(D)):
        value += cfg.mu * np.sum((C[j - 1] - activation_forward(D[j] @ C[j], phi)) ** 2, axis=0)
    return value


def ddl_objective(state: DdlState) -> float:
    """Value of the penalty objective at the current state"""
    return float(np.sum(ddl_sample_objective(state)))


# ============= SUB-PROBLEM MINIMIZERS =============

def _upper_target(X: Matrix, blocks: List[Matrix], j: int, weight: float, phi: ActivationSpec):
    """What block j reconstructs through D_{j+1}, and with which weight"""
    if j == 0:
        return X, 1.0
    return activation_inverse(blocks[j - 1], phi), weight


def solve_intermediate(
    X: Matrix, dicts, blocks, j: int, mu: float, phi: ActivationSpec
) -> Matrix:
    """Z_{j+1} between its reconstruction term and the coupling to the block below.

    (w D'D + mu I)^-1 (w D' U + mu tanh(D_{j+2} Z_{j+2})) with U = X for the
    first block and atanh of the block above otherwise.
    """
    D = dicts[j]
    U, w = _upper_target(X, blocks, j, mu, phi)
    G = w * (D.T @ D) + mu * np.eye(D.shape[1])
    R = w * (D.T @ U) + mu * activation_forward(dicts[j + 1] @ blocks[j + 1], phi)
    return spd_solve(G, R)


def ddl_label_map_candidate(state: DdlState) -> Matrix:
    return ridge_solve_right(state.Y, state.Z, state.config.ridge_delta)


def ddl_dictionary_candidate(state: DdlState, j: int) -> Matrix:
    """D_{j+1} regressing X (first layer) or atanh of the block above on block j"""
    target = state.X if j == 0 else activation_inverse(state.blocks[j - 1], state.activation)
    return ridge_solve_right(target, state.blocks[j], state.config.ridge_delta)


def ddl_code_candidate(state: DdlState) -> Matrix:
    """(lam M'M + w D'D + delta I)^-1 (lam M'Y + w D' U) for the deepest block"""
    cfg = state.config
    n = len(state.dicts)
    D, M = state.dicts[-1], state.label_map
    U, w = _upper_target(state.X, list(state.blocks), n - 1, cfg.mu, state.activation)
    G = cfg.lam * (M.T @ M) + w * (D.T @ D)
    R = cfg.lam * (M.T @ state.Y) + w * (D.T @ U)
    return spd_solve(G, R, auto_ridge(G, cfg.ridge_delta))


def ddl_intermediate_candidate(state: DdlState, j: int) -> Matrix:
    return solve_intermediate(state.X, state.dicts, state.blocks, j, state.config.mu, state.activation)


def ddl_update_step(state: DdlState) -> DdlState:
    """One full cycle: M, D1..Dn, Z, then Z1..Z_{n-1}"""
    n = len(state.dicts)
    total = ddl_objective(state)

    M, total = accept_block(
        state.label_map,
        ddl_label_map_candidate(state),
        lambda trial: ddl_objective(replace(state, label_map=trial)),
        total,
    )
    state = replace(state, label_map=M)

    for j in range(n):
        D, total = accept_block(
            state.dicts[j],
            ddl_dictionary_candidate(state, j),
            lambda trial: ddl_objective(state.with_dict(j, trial)),
            total,
        )
        state = state.with_dict(j, D)

    values = ddl_sample_objective(state)
    order = [n - 1] + list(range(n - 1))
    for j in order:
        candidate = ddl_code_candidate(state) if j == n - 1 else ddl_intermediate_candidate(state, j)
        C, values = accept_columns(
            state.blocks[j],
            candidate,
            lambda trial: ddl_sample_objective(state.with_block(j, trial)),
            values,
        )
        state = state.with_block(j, C)
    return state


# ============= REPRESENTATION =============

def inference_sample_objective(X: Matrix, dicts, blocks, phi: ActivationSpec) -> np.ndarray:
    """Per-sample unsupervised objective: reconstruction plus unit-weight couplings"""
    value = np.sum((X - dicts[0] @ blocks[0]) ** 2, axis=0)
    for j in range(1, len(dicts)):
        value += np.sum((blocks[j - 1] - activation_forward(dicts[j] @ blocks[j], phi)) ** 2, axis=0)
    return value


def infer_code_candidate(X: Matrix, dicts, blocks, phi: ActivationSpec, ridge_delta=None) -> Matrix:
    """Deepest block as the ridge fit of its target through the last dictionary"""
    U, _ = _upper_target(X, blocks, len(dicts) - 1, 1.0, phi)
    return ridge_solve(dicts[-1], U, ridge_delta)


def infer_blocks(
    X: Matrix,
    dicts,
    phi: ActivationSpec,
    max_iter: int,
    tol: float,
    ridge_delta=None,
) -> List[Matrix]:
    """Fit all coefficient blocks to X with the dictionaries frozen.

    Zero-initialized blocks are refined by cycling z1, z2, ..., z; every
    sub-problem carries unit weight and there is no label term.
    """
    n = len(dicts)
    N = X.shape[1]
    blocks = [np.zeros((D.shape[1], N)) for D in dicts]
    values = inference_sample_objective(X, dicts, blocks, phi)
    previous = float(values.sum())

    def columns_at(j: int):
        def columns_of(trial: Matrix) -> np.ndarray:
            return inference_sample_objective(X, dicts, blocks[:j] + [trial] + blocks[j + 1 :], phi)

        return columns_of

    for it in range(1, max_iter + 1):
        for j in range(n):
            if j < n - 1:
                candidate = solve_intermediate(X, dicts, blocks, j, 1.0, phi)
            else:
                candidate = infer_code_candidate(X, dicts, blocks, phi, ridge_delta)
            blocks[j], values = accept_columns(blocks[j], candidate, columns_at(j), values)
        current = float(values.sum())
        if previous - current <= tol * max(previous, 1e-300):
            logger.debug("representation converged after %d cycles", it)
            break
        previous = current
    return blocks


def ddl_init_state(X: Matrix, Y: Matrix, config: TrainConfig) -> DdlState:
    """Random dictionaries, unsupervised Z, activated upper blocks, fitted M"""
    phi = ActivationSpec(clamp_delta=config.clamp_delta)
    sizes = (X.shape[0],) + tuple(config.layer_sizes)
    rng = np.random.default_rng(config.seed)
    dicts = [rng.standard_normal((rows, cols)) / np.sqrt(rows) for rows, cols in zip(sizes, sizes[1:])]
    Z = infer_blocks(X, dicts, phi, config.infer_iter, config.tol, config.ridge_delta)[-1]
    blocks = [Z]
    for D in reversed(dicts[1:]):
        blocks.insert(0, activation_forward(D @ blocks[0], phi))
    M = ridge_solve_right(Y, Z, config.ridge_delta)
    return DdlState(
        X=X, Y=Y, dicts=tuple(dicts), blocks=tuple(blocks), label_map=M, config=config, activation=phi
    )


# ============= TRAINING LOOP =============

def _warn_on_clamping(state, label: str, it: int) -> bool:
    """Warn once when the atanh clamp bites on a noticeable share of entries"""
    intermediate = state.blocks[:-1]
    if not intermediate:
        return False
    worst = max(clamped_fraction(C, state.activation) for C in intermediate)
    if worst > CLAMP_WARN_FRACTION:
        logger.warning("%s: %.1f%% of coefficients clamped before atanh at iteration %d", label, 100 * worst, it)
        return True
    return False


def run_block_descent(state, update, objective, config: TrainConfig, label: str):
    """Cycle ``update`` until the relative objective change drops below tol.

    Returns:
        (final state, objective trace, largest per-cycle increase)
    """
    trace = [objective(state)]
    max_ascent = 0.0
    clamp_warned = False
    for it in range(1, config.max_iter + 1):
        try:
            state = update(state)
        except NonFiniteError as exc:
            raise DivergenceError(f"{label} update produced non-finite values", it) from exc
        value = objective(state)
        if not np.isfinite(value):
            raise DivergenceError(f"{label} objective became non-finite", it)
        ascent = value - trace[-1]
        if ascent > DESCENT_SLACK * max(1.0, abs(trace[-1])):
            logger.warning("%s objective rose by %.3g at iteration %d", label, ascent, it)
        max_ascent = max(max_ascent, ascent)
        if not clamp_warned:
            clamp_warned = _warn_on_clamping(state, label, it)
        trace.append(value)
        change = abs(ascent) / max(abs(trace[-2]), 1e-300)
        if it % config.log_every == 0:
            logger.info("%s iter %d objective %.6g rel change %.3g", label, it, value, change)
        if change < config.tol:
            logger.info("%s converged after %d iterations (objective %.6g)", label, it, value)
            break
    else:
        logger.info("%s stopped at max_iter=%d (objective %.6g)", label, config.max_iter, trace[-1])
    return state, trace, max_ascent


def train_mlcddl(X: ArrayLike, Y: ArrayLike, config: TrainConfig) -> DdlModel:
    """Train an MLCDDL model.

    Args:
        X: d x N aggregate windows, one sample per column
        Y: L x N binary appliance states
        config: Hyper-parameters; layer_sizes defaults to (120, 80, 50)

    Returns:
        DdlModel with 0.5 thresholds (calibration is a separate step)
    """
    X, Y = validate_training_data(X, Y)
    config = config.resolved("mlcddl")
    check_sample_count(X.shape[1], config.layer_sizes)
    state = ddl_init_state(X, Y, config)
    if not np.isfinite(ddl_objective(state)):
        raise DivergenceError("initial MLCDDL objective is non-finite", 0)
    state, trace, max_ascent = run_block_descent(state, ddl_update_step, ddl_objective, config, "mlcddl")
    return DdlModel(
        factors=state.dicts,
        label_map=state.label_map,
        thresholds=np.full(Y.shape[0], 0.5),
        activation=state.activation,
        config=config,
        objective_trace=tuple(trace),
        max_ascent=max_ascent,
    )


def check_input(Xtest: ArrayLike, model) -> Matrix:
    Xtest = as_matrix(Xtest, "Xtest")
    if Xtest.shape[0] != model.input_size:
        raise DimensionError(f"model expects {model.input_size} features, got {Xtest.shape[0]}")
    return Xtest


def ddl_infer_representation(Xtest: ArrayLike, model: DdlModel) -> Matrix:
    """Deepest-layer coefficients for unseen windows (no label term)"""
    Xtest = check_input(Xtest, model)
    cfg = model.config
    return infer_blocks(Xtest, model.dicts, model.activation, cfg.infer_iter, cfg.tol, cfg.ridge_delta)[-1]


def threshold_scores(scores: Matrix, thresholds) -> Matrix:
    """1 where the score reaches its label's threshold (>= convention)"""
    return (scores >= np.asarray(thresholds)[:, None]).astype(np.float64)


def ddl_predict(Xtest: ArrayLike, model: DdlModel) -> Tuple[Matrix, Matrix]:
    """Label scores M z and thresholded binary labels"""
    scores = model.label_map @ ddl_infer_representation(Xtest, model)
    return scores, threshold_scores(scores, model.thresholds)
