"""
Sparsifying transform learning.

transform_update is the closed-form minimizer of

    ||T X - Z||_F^2 + lam * (eps * ||T||_F^2 - sum_i log sigma_i(T))

which the deep transform trainer reuses for every layer. For square and tall
transforms the closed form is exact. For wide transforms (fewer rows than
columns) it is used as a warm start and polished with L-BFGS on the exact
objective.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize
from numpy.typing import ArrayLike

from errors import DimensionError
from numerics import Matrix, as_matrix, full_svd, hard_threshold, spd_cholesky

logger = logging.getLogger(__name__)

REFINE_MAXITER = 500


def logdet_barrier(T: Matrix) -> float:
    """sum_i log sigma_i(T) over the min(m, n) singular values; -inf if rank deficient"""
    s = scipy.linalg.svdvals(T, check_finite=False)
    if s.min() <= 0.0:
        return -np.inf
    return float(np.sum(np.log(s)))


def transform_objective(T: Matrix, X: Matrix, Z: Matrix, lam: float, eps: float) -> float:
    """||TX - Z||^2 + lam * (eps ||T||^2 - logdet T)"""
    fit = float(np.sum((T @ X - Z) ** 2))
    return fit + lam * (eps * float(np.sum(T * T)) - logdet_barrier(T))


def _closed_form(X: Matrix, Z: Matrix, lam: float, eps: float) -> Matrix:
    n, m = X.shape[0], Z.shape[0]
    # lam * eps > 0 keeps the shifted Gram matrix positive definite
    L = spd_cholesky(X @ X.T + lam * eps * np.eye(n))
    C = scipy.linalg.solve_triangular(L, X, lower=True, check_finite=False) @ Z.T
    U, s, V = full_svd(C)
    k = min(m, n)
    gain = 0.5 * (s[:k] + np.sqrt(s[:k] ** 2 + 2.0 * lam))
    B = (V[:, :k] * gain) @ U[:, :k].T
    # T = B L^-1, i.e. T' = L^-T B'
    return scipy.linalg.solve_triangular(L, B.T, lower=True, trans="T", check_finite=False).T


def _refine_wide(T0: Matrix, X: Matrix, Z: Matrix, lam: float, eps: float) -> Matrix:
    m, n = T0.shape
    G = X @ X.T + lam * eps * np.eye(n)
    C = Z @ X.T
    const = float(np.sum(Z * Z))

    def fun(flat):
        T = flat.reshape(m, n)
        TTt = T @ T.T
        sign, logdet = np.linalg.slogdet(TTt)
        if sign <= 0:
            return np.inf, np.zeros_like(flat)
        TG = T @ G
        value = float(np.sum(TG * T)) - 2.0 * float(np.sum(T * C)) + const - 0.5 * lam * logdet
        grad = 2.0 * TG - 2.0 * C - lam * np.linalg.solve(TTt, T)
        return value, grad.ravel()

    result = scipy.optimize.minimize(
        fun,
        T0.ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": REFINE_MAXITER, "gtol": 1e-12, "ftol": 1e-15},
    )
    T1 = result.x.reshape(m, n)
    if transform_objective(T1, X, Z, lam, eps) <= transform_objective(T0, X, Z, lam, eps):
        return T1
    return T0


def transform_update(X: ArrayLike, Z: ArrayLike, lam: float, eps: float) -> Matrix:
    """Closed-form transform update.

    Args:
        X: n x N data, samples as columns
        Z: m x N target coefficients
        lam: Regularizer weight (> 0)
        eps: Scale-balance weight (> 0)

    Returns:
        m x n transform with strictly positive singular values
    """
    X = as_matrix(X, "X")
    Z = as_matrix(Z, "Z")
    if X.shape[1] != Z.shape[1]:
        raise DimensionError(f"X has {X.shape[1]} samples but Z has {Z.shape[1]}")
    if not (lam > 0 and eps > 0):
        raise ValueError(f"lam and eps must be positive, got lam={lam}, eps={eps}")
    T = _closed_form(X, Z, lam, eps)
    if T.shape[0] < T.shape[1]:
        T = _refine_wide(T, X, Z, lam, eps)
    return T


@dataclass(frozen=True)
class TransformProblem:
    """Shallow transform learning instance.

    ``tau`` is the hard-thresholding cutoff; the sparsity penalty it minimizes
    exactly is tau**2 * ||Z||_0.
    """

    X: Matrix
    m: int
    tau: float
    lam: float = 1.0
    eps: float = 1.0
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "X", as_matrix(self.X, "X"))
        if self.m < 1:
            raise ValueError(f"m must be positive, got {self.m}")
        if not (self.lam > 0 and self.eps > 0 and self.tau > 0):
            raise ValueError("lam, eps and tau must be positive")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter and tol must be positive")


@dataclass(frozen=True)
class ShallowTransformResult:
    T: Matrix
    Z: Matrix
    objective_trace: Tuple[float, ...]
    sparsity: float


def shallow_objective(T: Matrix, X: Matrix, Z: Matrix, prob: TransformProblem) -> float:
    sparse_penalty = prob.tau**2 * float(np.count_nonzero(Z))
    return transform_objective(T, X, Z, prob.lam, prob.eps) + sparse_penalty


def train_shallow_transform(prob: TransformProblem) -> ShallowTransformResult:
    """Alternate hard thresholding and the closed-form transform update"""
    X = prob.X
    n = X.shape[0]
    rng = np.random.default_rng(prob.seed)
    T = rng.standard_normal((prob.m, n)) / np.sqrt(n)
    trace: List[float] = []
    for it in range(1, prob.max_iter + 1):
        Z = hard_threshold(T @ X, prob.tau)
        T = transform_update(X, Z, prob.lam, prob.eps)
        trace.append(shallow_objective(T, X, Z, prob))
        if it > 1:
            change = abs(trace[-2] - trace[-1]) / max(abs(trace[-1]), 1e-300)
            if change < prob.tol:
                logger.debug("shallow transform converged after %d iterations", it)
                break
    sparsity = 1.0 - np.count_nonzero(Z) / Z.size
    return ShallowTransformResult(T=T, Z=Z, objective_trace=tuple(trace), sparsity=float(sparsity))
