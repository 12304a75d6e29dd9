"""Query-count and discretization-size calculators (scaling units, constants = 1).

These evaluate the resource formulas as written, with every soft-O constant
set to one and natural logarithms throughout; outputs are labeled scaling
units, not absolute gate counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import dyson, lchs

__all__ = ["ResourceParams", "alpha_bound", "query_count", "full_budget"]


@dataclass
class ResourceParams:
    n: int
    N: int
    T: float
    eps: float
    delta: float
    beta: float
    F1_norm: float
    F2_norm: float
    Sigma_F_norm: float
    lambda_min: float
    C_alpha: float = 1.0
    U_in_norm: float = 1.0
    U_T_norm: float = 1.0
    lambda_threshold: float | None = None  # default: analytic shape with unit constant

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        for name in ("T", "eps", "beta", "lambda_min", "C_alpha", "U_T_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def decay_scale(self) -> float:
        """(1 - e^{-2 lambda T}) / (2 lambda)."""
        return (1.0 - math.exp(-2.0 * self.lambda_min * self.T)) / (2.0 * self.lambda_min)

    def lambda_threshold_value(self) -> float:
        if self.lambda_threshold is not None:
            return self.lambda_threshold
        root = math.sqrt(self.decay_scale())
        mean_sup = self.Sigma_F_norm * root * (math.sqrt(self.n) + math.sqrt(1.0 + self.lambda_min * self.T))
        tail = math.sqrt(2.0 * self.decay_scale() * self.Sigma_F_norm**2 * math.log(1.0 / self.delta))
        return self.N * (self.F1_norm + self.F2_norm + mean_sup + tail)


def alpha_bound(params: ResourceParams) -> float:
    """High-probability cap on the block-encoding normalization of the lift."""
    inner = math.sqrt((3.0 / params.delta) * params.decay_scale() * params.Sigma_F_norm**2)
    return params.C_alpha * params.N * (params.F1_norm + params.F2_norm + inner)


def query_count(params: ResourceParams) -> dict:
    """Headline query-count scaling with its per-factor breakdown."""
    p = params
    noise_amp = math.sqrt(
        p.T * p.Sigma_F_norm**2 / (2.0 * p.lambda_min * p.delta)
        * (p.T - p.decay_scale()))
    prefactor = (p.U_in_norm + noise_amp) / p.U_T_norm
    alpha_factor = p.N * p.C_alpha * (
        p.F1_norm + p.F2_norm
        + math.sqrt(p.decay_scale() * p.Sigma_F_norm**2 / p.delta))
    log_factor = math.log(1.0 / p.eps) ** (1.0 + 1.0 / p.beta)
    n_q = prefactor * alpha_factor * p.T * log_factor
    return {
        "N_Q_scaling": n_q,
        "factors": {
            "prefactor": prefactor,
            "alpha_factor": alpha_factor,
            "T": p.T,
            "log_factor": log_factor,
        },
    }


def full_budget(params: ResourceParams) -> dict:
    """Chained parameter report: node counts, sample sizes, and the query scaling."""
    p = params
    lam_thresh = p.lambda_threshold_value()
    quad = lchs.choose_params(p.beta, p.eps, p.T, lam_thresh)
    V = lchs.v_ou_bound(p.Sigma_F_norm, p.lambda_min, p.T)
    M = lchs.m_choice(p.T, p.delta, p.eps, quad, V)
    order_K = dyson.choose_truncation(p.eps)
    N_k = dyson.choose_samples(order_K, p.T, p.eps, p.delta, lam_thresh)
    qc = query_count(params)
    return {
        "lambda_threshold": lam_thresh,
        "K": quad.K,
        "h1": quad.h1,
        "Q": quad.Q,
        "N_U": quad.node_count,
        "abs_weight_sum": quad.abs_weight_sum,
        "V": V,
        "M": M,
        "dyson_order": order_K,
        "N_k": N_k,
        "alpha_bound": alpha_bound(params),
        "N_Q": qc["N_Q_scaling"],
        "N_Q_factors": qc["factors"],
    }
