"""Dense linear algebra: jittered Cholesky, log-determinants, Jacobi eigensolver, PCA.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateInput, NoConvergence, NotPositiveDefinite, ShapeMismatch

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class JitterPolicy:
    initial_scale: float = 1e-6
    growth: float = 10.0
    max_retries: int = 3


DEFAULT_JITTER = JitterPolicy()


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    jitter_applied: float = 0.0

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``(A + jitter I) x = b``."""
        y = solve_triangular(self.lower, b, lower=True, check_finite=False)
        return solve_triangular(self.lower.T, y, lower=False, check_finite=False)

    def inverse(self) -> np.ndarray:
        n = self.lower.shape[0]
        inv = self.solve(np.eye(n))
        return 0.5 * (inv + inv.T)

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray


def _as_square(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def _check_symmetric(a: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ShapeMismatch("matrix is not symmetric")


def cholesky(a, jitter_policy: JitterPolicy = DEFAULT_JITTER) -> CholeskyFactor:
    """Lower Cholesky factor, adding diagonal jitter on failure.

    Jitter starts at ``initial_scale * mean(diag)`` and grows by ``growth`` for
    at most ``max_retries`` retries. The applied jitter is recorded on the
    returned factor.
    """
    a = _as_square(a)
    _check_symmetric(a)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return CholeskyFactor(np.linalg.cholesky(a), 0.0)
    except np.linalg.LinAlgError:
        pass
    base = abs(float(np.mean(np.diag(a)))) or 1.0
    jitter = jitter_policy.initial_scale * base
    eye = np.eye(a.shape[0])
    for attempt in range(jitter_policy.max_retries):
        try:
            lower = np.linalg.cholesky(a + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= jitter_policy.growth
            continue
        log.warning("cholesky needed jitter %.3g (retry %d)", jitter, attempt + 1)
        return CholeskyFactor(lower, jitter)
    raise NotPositiveDefinite(
        f"matrix of size {a.shape[0]} not positive definite after "
        f"{jitter_policy.max_retries} jitter retries (last jitter {jitter / jitter_policy.growth:.3g})"
    )


def log_det_spd(a, jitter_policy: JitterPolicy = DEFAULT_JITTER) -> float:
    return cholesky(a, jitter_policy).log_det()


def eigh(a, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||A||_F)``. Eigenvalues are returned in descending order.
    """
    a = _as_square(a)
    _check_symmetric(a)
    n = a.shape[0]
    A = 0.5 * (a + a.T)
    V = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(A)))

    off_mask = ~np.eye(n, dtype=bool)

    def off_norm() -> float:
        return math.sqrt(float(np.sum(A[off_mask] ** 2)))

    for _ in range(max_sweeps + 1):
        if off_norm() < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                v_p = V[:, p].copy()
                v_q = V[:, q].copy()
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
    else:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps (off={off_norm():.3g})")

    values = np.diag(A).copy()
    # stable sort keeps the original column order for exact ties
    order = np.argsort(-values, kind="stable")
    return EigenDecomposition(values[order], V[:, order])


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (n_components, n_features), unit-norm rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, y) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) @ self.components + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }


def pca_fit(x, n_components: int) -> PCAModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected samples x features, got shape {x.shape}")
    n, f = x.shape
    if n < n_components or f < n_components or n_components < 1:
        raise DegenerateInput(f"cannot extract {n_components} components from {n}x{f} data")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / max(n - 1, 1)
    cov = 0.5 * (cov + cov.T)
    dec = eigh(cov)
    values = np.clip(dec.values, 0.0, None)
    total = float(np.sum(values))
    if total <= 0.0 or values[n_components - 1] <= 1e-12 * values[0]:
        raise DegenerateInput(f"covariance rank below {n_components}")
    comps = dec.vectors[:, :n_components].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PCAModel(
        mean=mean,
        components=comps,
        explained_variance=values[:n_components].copy(),
        explained_variance_ratio=values[:n_components] / total,
    )
