"""
Dense-matrix primitives shared by every solver module.

Matrices are plain float64 numpy arrays with samples stored as columns. The
decompositions are delegated to scipy.linalg; this module only adds the shape,
finiteness and conditioning contracts the solvers rely on.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from errors import (
    DimensionError,
    NonFiniteError,
    NotPositiveDefiniteError,
    SingularSystemError,
)

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]

# Relative ridge applied when no explicit delta is configured
AUTO_RIDGE_SCALE = 1e-8
# Absolute floor so an all-zero normal matrix still solves to zero
RIDGE_FLOOR = 1e-12
SYMMETRY_TOL = 1e-10


def as_matrix(a: ArrayLike, name: str = "matrix") -> Matrix:
    """Coerce to a 2-D float64 array, rejecting non-finite entries.

    Args:
        a: Anything numpy can turn into a 2-D array
        name: Used in error messages

    Returns:
        The array (no copy when it already is float64)
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or infinite entries")
    return arr


@dataclass(frozen=True)
class ActivationSpec:
    """Elementwise activation between layers.

    Only the hyperbolic tangent is supported. ``clamp_delta`` bounds how close
    to +-1 the inverse is allowed to look before it saturates.
    """

    kind: str = "tanh"
    clamp_delta: float = 1e-6

    def __post_init__(self):
        if self.kind != "tanh":
            raise ValueError(f"unsupported activation kind: {self.kind!r}")
        if not 0.0 < self.clamp_delta <= 0.1:
            raise ValueError(f"clamp_delta must lie in (0, 0.1], got {self.clamp_delta}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ActivationSpec":
        return cls(kind=data.get("kind", "tanh"), clamp_delta=float(data.get("clamp_delta", 1e-6)))


DEFAULT_ACTIVATION = ActivationSpec()


def activation_forward(X: ArrayLike, spec: ActivationSpec = DEFAULT_ACTIVATION) -> Matrix:
    """Elementwise tanh; outputs lie strictly inside (-1, 1) for finite input"""
    return np.tanh(np.asarray(X, dtype=np.float64))


def activation_inverse(Y: ArrayLike, spec: ActivationSpec = DEFAULT_ACTIVATION) -> Matrix:
    """Elementwise atanh after clamping to [-1 + delta, 1 - delta].

    Least-squares updates can push coefficient blocks outside (-1, 1); the
    clamp keeps the inverse total and finite.
    """
    bound = 1.0 - spec.clamp_delta
    return np.arctanh(np.clip(np.asarray(Y, dtype=np.float64), -bound, bound))


def clamped_fraction(Y: Matrix, spec: ActivationSpec = DEFAULT_ACTIVATION) -> float:
    """Fraction of entries that activation_inverse would clamp"""
    bound = 1.0 - spec.clamp_delta
    return float(np.mean(np.abs(Y) > bound)) if Y.size else 0.0


def hard_threshold(Z: ArrayLike, tau: float) -> Matrix:
    """Keep entries with |z| >= tau, zero the rest"""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    Z = as_matrix(Z, "Z")
    return np.where(np.abs(Z) >= tau, Z, 0.0)


def auto_ridge(G: Matrix, ridge_delta: Optional[float] = None) -> float:
    """Resolve the ridge added to a normal matrix.

    An explicit ``ridge_delta`` wins; otherwise the ridge is AUTO_RIDGE_SCALE
    times the mean diagonal of G, never below RIDGE_FLOOR.
    """
    if ridge_delta is not None:
        if ridge_delta < 0:
            raise ValueError(f"ridge delta must be nonnegative, got {ridge_delta}")
        return float(ridge_delta)
    mean_diag = float(np.trace(G)) / G.shape[0]
    return max(AUTO_RIDGE_SCALE * mean_diag, RIDGE_FLOOR)


def spd_solve(G: Matrix, R: Matrix, delta: float = 0.0) -> Matrix:
    """Solve (G + delta*I) W = R for symmetric positive (semi)definite G.

    Raises:
        SingularSystemError: when the shifted matrix is not numerically invertible
    """
    n = G.shape[0]
    if G.shape != (n, n):
        raise DimensionError(f"normal matrix must be square, got {G.shape}")
    if R.shape[0] != n:
        raise DimensionError(f"right-hand side has {R.shape[0]} rows, expected {n}")
    S = G + delta * np.eye(n) if delta else G
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError("singular system; supply delta > 0") from exc
    diag = np.abs(np.diag(factor[0]))
    if diag.min() ** 2 <= np.finfo(np.float64).eps * n * diag.max() ** 2:
        raise SingularSystemError("singular system; supply delta > 0")
    return scipy.linalg.cho_solve(factor, R, check_finite=False)


def ridge_solve(A: ArrayLike, B: ArrayLike, delta: Optional[float] = None) -> Matrix:
    """argmin_W ||A W - B||_F^2 + delta ||W||_F^2, i.e. (A'A + delta I)^-1 A'B.

    Args:
        A: p x q design matrix
        B: p x N targets
        delta: Ridge weight; None selects the auto policy (see auto_ridge)

    Returns:
        q x N solution
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"A has {A.shape[0]} rows but B has {B.shape[0]}")
    G = A.T @ A
    return spd_solve(G, A.T @ B, auto_ridge(G, delta))


def ridge_solve_right(B: ArrayLike, A: ArrayLike, delta: Optional[float] = None) -> Matrix:
    """argmin_W ||W A - B||_F^2 + delta ||W||_F^2 (W multiplies from the left)"""
    return ridge_solve(np.transpose(A), np.transpose(B), delta).T


def spd_cholesky(S: ArrayLike) -> Matrix:
    """Lower-triangular L with S = L L'.

    Raises:
        NotPositiveDefiniteError: S is not symmetric positive definite
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"S must be square, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")
    try:
        return scipy.linalg.cholesky(S, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "matrix is not positive definite; add a ridge lambda*eps to the Gram matrix"
        ) from exc


def full_svd(A: ArrayLike) -> Tuple[Matrix, NDArray[np.float64], Matrix]:
    """Full SVD A = U diag(s) V' with square orthogonal U, V and descending s"""
    A = as_matrix(A, "A")
    U, s, Vh = scipy.linalg.svd(A, full_matrices=True, check_finite=False, lapack_driver="gesvd")
    return U, s, Vh.T
