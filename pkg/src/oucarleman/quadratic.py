"""Ground-truth dynamics of the quadratic system dx/dt = F2 x^(2) + F1 x + F0(t).

Tensor convention is row-major throughout the project: (x (x) x)[i*n+j] = x_i x_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ou
from .numerics import (
    LyapunovMetric,
    log_norm_P,
    p_norm_f2,
    p_norm_mat,
    p_norm_vec,
    spectral_norm,
)

__all__ = [
    "DivergenceError",
    "QuadraticSystem",
    "StationaryData",
    "LyapunovData",
    "bilinear_B1",
    "integrate_reference",
    "integrate_reference_ensemble",
    "stationary_state",
    "perturbation_margin",
    "lyapunov_data",
    "stability_margin",
]

_BLOWUP = 1e6


class DivergenceError(RuntimeError):
    """State norm blew past the divergence guard."""


@dataclass
class QuadraticSystem:
    n: int
    F1: np.ndarray
    F2: np.ndarray
    x_init: np.ndarray
    ou: ou.OUProcess

    def __post_init__(self):
        self.F1 = np.asarray(self.F1, dtype=float).reshape(self.n, self.n)
        self.F2 = np.asarray(self.F2, dtype=float).reshape(self.n, self.n * self.n)
        self.x_init = np.asarray(self.x_init, dtype=float).reshape(self.n)
        if self.ou.dim != self.n:
            raise ValueError("forcing dimension must match the state dimension")

    def rhs(self, x: np.ndarray, f0: np.ndarray) -> np.ndarray:
        xx = np.kron(x, x)
        return self.F2 @ xx + self.F1 @ x + f0


def bilinear_B1(a) -> np.ndarray:
    """n^2 x n matrix with (a+b)^(2) = a^(2) + B1(a) b + b^(2) for all b."""
    a = np.asarray(a).reshape(-1)
    n = a.size
    eye = np.eye(n, dtype=a.dtype)
    # row (i, j): a_i b_j + a_j b_i
    return np.kron(a.reshape(n, 1), eye) + np.kron(eye, a.reshape(n, 1))


def _rk4_step(sys: QuadraticSystem, x, h, f0_t, f0_mid, f0_end):
    k1 = sys.rhs(x, f0_t)
    k2 = sys.rhs(x + 0.5 * h * k1, f0_mid)
    k3 = sys.rhs(x + 0.5 * h * k2, f0_mid)
    k4 = sys.rhs(x + h * k3, f0_end)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _refined_grid(t0: float, t1: float, dt_max: float) -> np.ndarray:
    steps = max(1, int(math.ceil((t1 - t0) / dt_max - 1e-12)))
    return np.linspace(t0, t1, steps + 1)


def integrate_reference(sys: QuadraticSystem, path: ou.OUPath, dt_max: float):
    """Pathwise RK4 solution with the forcing held at exact OU samples.

    The path is extended (exact bridge sampling) so every RK stage time
    carries an exact forcing value.  Returns (times, states).
    """
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    grid = [np.asarray(path.times[:1])]
    for a, b in zip(path.times[:-1], path.times[1:]):
        grid.append(_refined_grid(a, b, dt_max)[1:])
    times = np.unique(np.concatenate(grid))
    mids = (times[:-1] + times[1:]) / 2.0
    full = ou.extend_path(path, np.concatenate([times, mids]))
    lookup = {round(float(t), 12): v for t, v in zip(full.times, full.values)}

    def f0(t):
        return lookup[round(float(t), 12)]

    xs = np.empty((len(times), sys.n))
    xs[0] = sys.x_init
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        xs[i + 1] = _rk4_step(sys, xs[i], h, f0(times[i]), f0(mids[i]), f0(times[i + 1]))
        if np.linalg.norm(xs[i + 1]) > _BLOWUP:
            raise DivergenceError(f"state norm exceeded {_BLOWUP:g} at t={times[i+1]:g}")
    return times, xs


def integrate_reference_ensemble(sys: QuadraticSystem, times: np.ndarray,
                                 f0_stage: np.ndarray) -> np.ndarray:
    """Batched RK4 over many paths sharing one stage grid.

    f0_stage has shape (n_paths, 2*len(times)-1, n): forcing at the
    interleaved grid t_0, m_0, t_1, m_1, ..., t_end.  Returns
    (n_paths, len(times), n) states.
    """
    n_paths = f0_stage.shape[0]
    xs = np.empty((n_paths, len(times), sys.n))
    xs[:, 0, :] = sys.x_init

    def rhs(x, f0):
        xx = np.einsum("pi,pj->pij", x, x).reshape(n_paths, -1)
        return xx @ sys.F2.T + x @ sys.F1.T + f0

    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        x = xs[:, i, :]
        f_t, f_m, f_e = f0_stage[:, 2 * i, :], f0_stage[:, 2 * i + 1, :], f0_stage[:, 2 * i + 2, :]
        k1 = rhs(x, f_t)
        k2 = rhs(x + 0.5 * h * k1, f_m)
        k3 = rhs(x + 0.5 * h * k2, f_m)
        k4 = rhs(x + h * k3, f_e)
        xs[:, i + 1, :] = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if np.max(np.abs(xs[:, i + 1, :])) > _BLOWUP:
            raise DivergenceError("ensemble state exceeded the divergence guard")
    return xs


def integrate_reference_ensemble_frozen(sys: QuadraticSystem, times: np.ndarray,
                                        f0_mid: np.ndarray) -> np.ndarray:
    """Batched RK4 with the forcing frozen per step at its midpoint value.

    f0_mid has shape (n_paths, len(times)-1, n).  Freezing makes the forcing
    realization identical to the one the lifted exponential stepper sees, so
    differencing the two measures the pure truncation error of that
    realization with no forcing-quadrature mismatch.
    """
    n_paths = f0_mid.shape[0]
    xs = np.empty((n_paths, len(times), sys.n))
    xs[:, 0, :] = sys.x_init

    def rhs(x, f0):
        xx = np.einsum("pi,pj->pij", x, x).reshape(n_paths, -1)
        return xx @ sys.F2.T + x @ sys.F1.T + f0

    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        x = xs[:, i, :]
        f = f0_mid[:, i, :]
        k1 = rhs(x, f)
        k2 = rhs(x + 0.5 * h * k1, f)
        k3 = rhs(x + 0.5 * h * k2, f)
        k4 = rhs(x + h * k3, f)
        xs[:, i + 1, :] = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if np.max(np.abs(xs[:, i + 1, :])) > _BLOWUP:
            raise DivergenceError("ensemble state exceeded the divergence guard")
    return xs


@dataclass
class StationaryData:
    x_st: np.ndarray
    residual: float
    J: np.ndarray
    jac_max_real_eig: float


def stationary_state(sys: QuadraticSystem, f0_ref, x_guess, tol: float = 1e-12,
                     max_iter: int = 100) -> StationaryData:
    """Newton solve of F2 x^(2) + F1 x + F0_ref = 0 with analytic Jacobian."""
    f0_ref = np.asarray(f0_ref, dtype=float).reshape(sys.n)
    x = np.asarray(x_guess, dtype=float).reshape(sys.n).copy()
    for _ in range(max_iter):
        g = sys.F2 @ np.kron(x, x) + sys.F1 @ x + f0_ref
        if np.linalg.norm(g) <= tol:
            break
        J = sys.F1 + sys.F2 @ bilinear_B1(x)
        try:
            dx = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError as e:
            raise RuntimeError("singular Jacobian during Newton iteration") from e
        x = x + dx
    else:
        raise RuntimeError(f"Newton did not reach residual {tol:g} in {max_iter} iterations")
    J = sys.F1 + sys.F2 @ bilinear_B1(x)
    resid = float(np.linalg.norm(sys.F2 @ np.kron(x, x) + sys.F1 @ x + f0_ref))
    return StationaryData(x_st=x, residual=resid, J=J,
                          jac_max_real_eig=float(np.max(np.linalg.eigvals(J).real)))


def perturbation_margin(x_st_approx, x_true, alpha: float) -> dict:
    """Gershgorin stability loss from using an approximate fixed point."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    gap = float(np.linalg.norm(np.asarray(x_st_approx) - np.asarray(x_true), ord=1))
    shift = 2.0 * gap
    return {"gershgorin_shift": shift, "still_stable": bool(shift < alpha)}


@dataclass
class LyapunovData:
    metric: LyapunovMetric
    mu_P: float
    beta_P_estimate: float
    gamma: float
    kappa_P: float
    R_P: float
    f0_norm_P: float
    f0_norm_source: str
    beta_samples: int
    f2_norm_P: float = field(default=0.0)
    x0_norm_P: float = field(default=0.0)


def lyapunov_data(sys: QuadraticSystem, metric: LyapunovMetric, gamma: float | None = None,
                  beta_samples: int = 2000, f0_norm_P: float | None = None,
                  seed: int = 0) -> LyapunovData:
    """Stability quantities: log-norm, sampled quadratic gain, growth rate, R-number.

    beta_P is a sampled lower estimate of the supremum of
    Re<x, F2 x^(2)>_P over the unit P-sphere; the sample count is reported.
    gamma=None picks the borderline default |mu_P + beta_P|.
    """
    if gamma is not None and gamma <= 0:
        raise ValueError("gamma must be positive")
    if beta_samples < 10:
        raise ValueError("beta_samples too small to mean anything")
    mu = log_norm_P(sys.F1, metric)
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence([seed, 91]).generate_state(2, np.uint64)))
    best = 0.0
    P = metric.P.real
    for _ in range(beta_samples):
        x = rng.standard_normal(sys.n)
        x /= p_norm_vec(x, metric)
        val = float(np.real(x @ P @ (sys.F2 @ np.kron(x, x))))
        best = max(best, val)
    source = "supplied"
    if f0_norm_P is None:
        cov_inf = ou.stationary_covariance(sys.ou)
        f0_norm_P = 3.0 * math.sqrt(max(float(np.trace(cov_inf)), 0.0))
        source = "stationary-3sigma"
    f2_P = p_norm_f2(sys.F2, metric)
    x0_P = p_norm_vec(sys.x_init, metric)
    if x0_P == 0:
        raise ValueError("R-number needs a nonzero initial state")
    R_P = (f2_P * x0_P + f0_norm_P / x0_P) / (-mu)
    if gamma is None:
        gamma = abs(mu + best)
    kappa = 2.0 * mu + 2.0 * best + gamma
    return LyapunovData(metric=metric, mu_P=mu, beta_P_estimate=best, gamma=gamma,
                        kappa_P=kappa, R_P=R_P, f0_norm_P=f0_norm_P,
                        f0_norm_source=source, beta_samples=beta_samples,
                        f2_norm_P=f2_P, x0_norm_P=x0_P)


def stability_margin(sys: QuadraticSystem, t_grid, delta: float = 1.0) -> dict:
    """Spectral margin of F1 over the nonlinearity plus forcing-excursion bounds.

    Delta = min |lambda(F1)| - ||F2||; prob_bound(t) lower-bounds the chance
    the forcing stays inside the margin at time t; expectation_condition is
    the displayed mean-margin test (its delta parameter defaults to 1).
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    eigs = np.linalg.eigvals(sys.F1)
    Delta = float(np.min(np.abs(eigs)) - spectral_norm(sys.F2))
    lam = sys.ou.lambda_min
    sig_f2 = float(np.linalg.norm(sys.ou.Sigma, "fro") ** 2)
    if Delta <= 0:
        return {"Delta": Delta, "prob_bound": np.zeros_like(t_grid),
                "expectation_condition": False}
    probs = 1.0 - (1.0 - np.exp(-2 * lam * t_grid)) * sig_f2 / (2 * lam * Delta**2)
    probs = np.clip(probs, 0.0, 1.0)
    t_max = float(np.max(t_grid))
    threshold = math.sqrt(sig_f2) * math.sqrt((1.0 - math.exp(-2 * lam * t_max)) / (2 * lam * delta))
    return {"Delta": Delta, "prob_bound": probs,
            "expectation_condition": bool(Delta >= threshold)}
