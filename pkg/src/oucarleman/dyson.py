"""Monte-Carlo and left-endpoint Riemann engines for time-ordered exponentials.

The MC engine draws ordered-simplex time tuples (sorted iid uniforms, density
k!/T^k), so no smoothness of t -> H(t) is needed; the Riemann engine is the
rate-limited alternative whose error scales with the Hoelder exponent of the
generator.  Both target short segments with sup||H|| * tau <= ln 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import spectral_norm

__all__ = [
    "SegmentTooLongError",
    "DysonConfig",
    "sample_simplex",
    "mc_dyson_term",
    "tds_propagator",
    "choose_truncation",
    "choose_samples",
    "compose_segments",
    "riemann_dyson",
    "tds_segment_batch",
]

SEGMENT_LOG2 = math.log(2.0)
_TRUNC_DOMAIN_CAP = 2.0 ** (-math.e)


class SegmentTooLongError(ValueError):
    """sup||H|| * tau exceeds ln 2; split the evolution first."""


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.random.SeedSequence(list(key)).generate_state(2, np.uint64)))


@dataclass
class DysonConfig:
    """Engine knobs: truncation order, per-order sample counts, segment length."""

    order_K: int
    N_k: list
    segment_tau: float
    seed: int = 0

    def __post_init__(self):
        if self.order_K < 0:
            raise ValueError("order_K must be nonnegative")
        if len(self.N_k) < self.order_K:
            raise ValueError("need a sample count for every order 1..order_K")
        if any(n < 1 for n in self.N_k):
            raise ValueError("sample counts must be >= 1")

    def samples(self, k: int) -> int:
        return int(self.N_k[k - 1])


def sample_simplex(k: int, T_len: float, count: int, seed: int) -> np.ndarray:
    """(count, k) ordered tuples: k iid Uniform(0, T) draws, sorted ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = _rng(seed, k)
    draws = rng.uniform(0.0, T_len, size=(count, k))
    draws.sort(axis=1)
    return draws


def mc_dyson_term(H_of_t, k: int, T_len: float, N_k: int, seed: int) -> np.ndarray:
    """Unbiased estimate of the ordered k-fold integral of H(t_k)...H(t_1)."""
    if k == 0:
        probe = np.asarray(H_of_t(0.0))
        return np.eye(probe.shape[0], dtype=complex)
    times = sample_simplex(k, T_len, N_k, seed)
    acc = None
    for row in times:
        prod = np.asarray(H_of_t(row[-1]), dtype=complex)
        for j in range(k - 2, -1, -1):
            prod = prod @ np.asarray(H_of_t(row[j]), dtype=complex)
        acc = prod if acc is None else acc + prod
    return (T_len**k / math.factorial(k)) * acc / N_k


def _sup_norm_on_grid(H_of_t, s: float, t: float, resolution: int = 65) -> float:
    return max(spectral_norm(np.asarray(H_of_t(u))) for u in np.linspace(s, t, resolution))


def tds_propagator(H_of_t, s: float, t: float, cfg: DysonConfig) -> np.ndarray:
    """Truncated-series MC propagator sum_k (-i)^k I_k over [s, t]."""
    tau = t - s
    if tau < 0:
        raise ValueError("need s <= t")
    lam = _sup_norm_on_grid(H_of_t, s, t)
    if tau * lam > SEGMENT_LOG2 + 1e-12:
        raise SegmentTooLongError(
            f"tau*sup||H|| = {tau * lam:.4f} > ln 2; split into shorter segments")
    probe = np.asarray(H_of_t(s))
    out = np.eye(probe.shape[0], dtype=complex)
    shifted = lambda u: H_of_t(s + u)
    for k in range(1, cfg.order_K + 1):
        term = mc_dyson_term(shifted, k, tau, cfg.samples(k), cfg.seed + 1009 * k)
        out = out + (-1j) ** k * term
    return out


def choose_truncation(eps1: float) -> int:
    """Series order from the target per-segment accuracy (>= 2 always)."""
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    eff = min(eps1, _TRUNC_DOMAIN_CAP)
    L = math.log(1.0 / eff)
    return max(2, math.ceil(-1.0 + 2.0 * L / (math.log(L) + 1.0)))


def choose_samples(order_K: int, T_len: float, eps: float, delta_mc: float,
                   L_moment: float) -> list:
    """Chebyshev-sufficient per-order sample counts N_1..N_K."""
    if min(order_K, T_len, eps, delta_mc, L_moment) <= 0:
        raise ValueError("all arguments must be positive")
    out = []
    for k in range(1, order_K + 1):
        val = (2.0 * order_K**2 * (T_len * L_moment) ** (2 * k)
               / (math.factorial(k) ** 2 * delta_mc * eps**2))
        out.append(max(1, math.ceil(val)))
    return out


def compose_segments(factors, lam: float, per_factor_errors=None) -> dict:
    """Ordered product of segment propagators with the telescoped error budget."""
    factors = list(factors)
    if not factors:
        raise ValueError("need at least one factor")
    prod = factors[0]
    for f in factors[1:]:
        prod = f @ prod
    errs = list(per_factor_errors) if per_factor_errors is not None else [0.0] * len(factors)
    budget = lam ** (len(factors) - 1) * float(np.sum(errs))
    return {"product": prod, "error_budget": budget}


def riemann_dyson(H_of_t, T_len: float, order_K: int, h: float) -> np.ndarray:
    """Left-endpoint ordered-sum series on a uniform grid.

    The k-fold ordered sums are accumulated with the prefix-product
    recursion C_k(m) = C_k(m-1) + h H(t_m) C_{k-1}(m), which costs
    O(M * order_K) products instead of the naive O(M^k) enumeration.
    """
    M = T_len / h
    if abs(M - round(M)) > 1e-9:
        raise ValueError("T_len / h must be an integer number of cells")
    M = int(round(M))
    probe = np.asarray(H_of_t(0.0), dtype=complex)
    d = probe.shape[0]
    eye = np.eye(d, dtype=complex)
    C = [eye] + [np.zeros((d, d), dtype=complex) for _ in range(order_K)]
    for m in range(M):
        Hm = np.asarray(H_of_t(m * h), dtype=complex)
        for k in range(1, order_K + 1):
            C[k] = C[k] + h * (Hm @ C[k - 1])
    out = eye.copy()
    for k in range(1, order_K + 1):
        out = out + (-1j) ** k * C[k]
    return out


def tds_segment_batch(H_batch, s: float, t: float, order_K: int, N_k: list,
                      times_by_order: dict) -> np.ndarray:
    """Series propagator for a batch of generators sharing the sample times.

    H_batch(u) returns the (B, d, d) generator stack at time u; the time
    tuples (one (N_k, k) array per order) were drawn independently of the
    driving noise, so sharing them across the batch keeps each batch entry
    an unbiased estimator.
    """
    tau = t - s
    probe = H_batch(s)
    B, d = probe.shape[0], probe.shape[1]
    out = np.broadcast_to(np.eye(d, dtype=complex), (B, d, d)).copy()
    cache: dict = {}

    def H_at(u: float) -> np.ndarray:
        key = round(float(u), 14)
        if key not in cache:
            cache[key] = H_batch(u)
        return cache[key]

    for k in range(1, order_K + 1):
        times = times_by_order[k]
        acc = np.zeros((B, d, d), dtype=complex)
        for row in times:
            prod = H_at(row[-1])
            for j in range(k - 2, -1, -1):
                prod = prod @ H_at(row[j])
            acc += prod
        out = out + (-1j) ** k * (tau**k / math.factorial(k)) * acc / len(times)
    return out
