"""Dense linear-algebra kernels shared by every other module.

Everything here works on plain complex numpy arrays (real inputs are
promoted); the toolkit deliberately stores complex throughout because the
Hamiltonian-combination step introduces i*H even for real problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "RangeError",
    "NotHurwitzError",
    "LyapunovMetric",
    "as_complex_matrix",
    "matrix_exp",
    "affine_exp_step",
    "log_norm_P",
    "lyapunov_solve",
    "p_norm_vec",
    "p_norm_mat",
    "p_norm_f2",
    "spectral_norm",
    "identity_metric",
]

# e^{growth * t} beyond this overflows float64 headroom; the accuracy
# contract (rel. 1e-12) is only promised for ||A t|| <= 50 anyway.
_EXP_GROWTH_CAP = 500.0


class RangeError(ValueError):
    """Input outside the supported numeric range."""


class NotHurwitzError(ValueError):
    """Matrix has an eigenvalue with nonnegative real part."""


def as_complex_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def spectral_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a), ord=2))


@dataclass
class LyapunovMetric:
    """Hermitian positive-definite metric P with cached square-root factors."""

    P: np.ndarray
    P_half: np.ndarray = field(init=False)
    P_half_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        P = as_complex_matrix(self.P)
        if P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if not np.allclose(P, P.conj().T, atol=1e-12):
            raise ValueError("P must be Hermitian")
        evals, evecs = np.linalg.eigh(P)
        if evals.min() <= 0:
            raise ValueError(f"P must be positive definite (min eig {evals.min():g})")
        self.P = P
        self.P_half = (evecs * np.sqrt(evals)) @ evecs.conj().T
        self.P_half_inv = (evecs / np.sqrt(evals)) @ evecs.conj().T
        if not np.allclose(self.P_half @ self.P_half, P, atol=1e-10):
            raise ValueError("square-root factor failed its reconstruction check")

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def tensor_power(self, j: int) -> "LyapunovMetric":
        """Metric P^{tensor j} on the j-th tensor-power space."""
        P = self.P
        for _ in range(j - 1):
            P = np.kron(P, self.P)
        return LyapunovMetric(P)

    def block_diag(self, order: int) -> "LyapunovMetric":
        """Lifted metric: direct sum of P^{tensor j}, j = 1..order."""
        blocks = []
        Pj = self.P
        for j in range(1, order + 1):
            blocks.append(Pj)
            if j < order:
                Pj = np.kron(Pj, self.P)
        return LyapunovMetric(scipy.linalg.block_diag(*blocks))


def identity_metric(n: int) -> LyapunovMetric:
    return LyapunovMetric(np.eye(n))


def matrix_exp(a, t: float = 1.0) -> np.ndarray:
    """e^{A t} for square A; relative accuracy 1e-12 for ||A t|| <= 50.

    Overflow is guarded by the growth rate (largest eigenvalue of the
    Hermitian part of A t), so strongly decaying matrices at long times
    stay in range.
    """
    m = as_complex_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix_exp needs a square matrix")
    scaled = m * t
    herm = (scaled + scaled.conj().T) / 2.0
    growth = float(np.linalg.eigvalsh(herm)[-1])
    if growth > _EXP_GROWTH_CAP:
        raise RangeError(
            f"growth rate {growth:g} exceeds the supported range {_EXP_GROWTH_CAP:g}")
    return scipy.linalg.expm(scaled)


def affine_exp_step(a, b, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact step map for y' = A y + b with A, b frozen.

    Returns (E, v) with y(t+h) = E @ y(t) + v, computed from the augmented
    exponential exp([[A, b], [0, 0]] h).
    """
    A = as_complex_matrix(a)
    bvec = np.asarray(b, dtype=complex).reshape(-1)
    d = A.shape[0]
    aug = np.zeros((d + 1, d + 1), dtype=complex)
    aug[:d, :d] = A
    aug[:d, d] = bvec
    E = matrix_exp(aug, h)
    return E[:d, :d], E[:d, d]


def log_norm_P(a, metric: LyapunovMetric) -> float:
    """Largest eigenvalue of the Hermitian part of P^{1/2} A P^{-1/2}."""
    A = as_complex_matrix(a)
    if A.shape != (metric.dim, metric.dim):
        raise ValueError("matrix dimension does not match the metric")
    B = metric.P_half @ A @ metric.P_half_inv
    H = (B + B.conj().T) / 2.0
    return float(np.linalg.eigvalsh(H)[-1])


def lyapunov_solve(f1, q) -> LyapunovMetric:
    """Solve F1^dag P + P F1 = -Q for Hermitian positive-definite P.

    Vectorized Kronecker route, fine at desk scale: the linear system is
    (I (x) F1^dag + F1^T (x) I) vec(P) = -vec(Q).
    """
    F1 = as_complex_matrix(f1)
    Q = as_complex_matrix(q)
    n = F1.shape[0]
    if F1.shape != (n, n) or Q.shape != (n, n):
        raise ValueError("F1 and Q must be square and same-sized")
    if np.max(np.linalg.eigvals(F1).real) >= 0:
        raise NotHurwitzError("F1 is not Hurwitz; the Lyapunov equation has no PD solution")
    eye = np.eye(n)
    K = np.kron(eye, F1.conj().T) + np.kron(F1.T, eye)
    vecP = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    P = vecP.reshape((n, n), order="F")
    P = (P + P.conj().T) / 2.0
    resid = np.linalg.norm(F1.conj().T @ P + P @ F1 + Q)
    if resid > 1e-10 * max(np.linalg.norm(Q), 1e-30):
        raise RangeError(f"Lyapunov residual {resid:g} above tolerance")
    return LyapunovMetric(P)


def p_norm_vec(x, metric: LyapunovMetric) -> float:
    """sqrt(x^dag P x)."""
    v = np.asarray(x, dtype=complex).reshape(-1)
    if v.size != metric.dim:
        raise ValueError("vector dimension does not match the metric")
    return float(np.sqrt(np.real(v.conj() @ (metric.P @ v))))


def p_norm_mat(a, metric: LyapunovMetric) -> float:
    """Operator norm of A in the P geometry: ||P^{1/2} A P^{-1/2}||."""
    A = as_complex_matrix(a)
    if A.shape != (metric.dim, metric.dim):
        raise ValueError("matrix dimension does not match the metric")
    return spectral_norm(metric.P_half @ A @ metric.P_half_inv)


def p_norm_f2(f2, metric: LyapunovMetric) -> float:
    """||P^{1/2} F2 (P^{-1/2} (x) P^{-1/2})|| for the n x n^2 quadratic map."""
    F2 = as_complex_matrix(f2)
    n = metric.dim
    if F2.shape != (n, n * n):
        raise ValueError("F2 must be n x n^2 with n matching the metric")
    half_inv2 = np.kron(metric.P_half_inv, metric.P_half_inv)
    return spectral_norm(metric.P_half @ F2 @ half_inv2)
