"""Hamiltonian-combination emulation of the non-unitary lifted propagator.

The decaying propagator is written as an integral over unitary evolutions
weighted by the kernel g(k) = 1/(C_beta (1-ik) e^{(1+ik)^beta}); truncating to
[-K, K] and applying composite Gauss-Legendre panels gives a finite node set
{(k, c)}.  Each node's unitary is generated by k L(t) + H(t) from the
Cartesian split of the (negated) generator and is evaluated by one of three
engines: exact midpoint exponential products, Monte-Carlo truncated series,
or left-endpoint Riemann series.

Sign convention: the emulated evolution solves dy/dt = A_gen y, and the
kernel identity is applied to A := -A_gen, so a stable (A_gen < 0) system
gives the positive-semidefinite Hermitian part the method requires.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from . import dyson, ou
from .carleman import CarlemanLift, build_lift, stability_predicate, tensor_power_stack
from .numerics import as_complex_matrix, matrix_exp, spectral_norm
from .quadratic import QuadraticSystem

__all__ = [
    "KernelQuadrature",
    "CartesianPair",
    "c_beta",
    "kernel_eval",
    "kernel_tail_bound",
    "choose_params",
    "cartesian_split",
    "homogeneous_propagator",
    "duhamel_mc",
    "m_choice",
    "v_ou_bound",
    "v_init_decay",
    "h1_inhomogeneous",
    "solve_slchs",
]


def c_beta(beta: float) -> float:
    return 2.0 * math.pi * math.exp(-(2.0**beta))


def kernel_eval(beta: float, k: float) -> complex:
    """g(k) on the principal branch of (1 + ik)^beta."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    z = (1.0 + 1j * k) ** beta
    return 1.0 / (c_beta(beta) * (1.0 - 1j * k) * np.exp(z))


def kernel_tail_bound(beta: float, K: float) -> float:
    """Closed-form bound on the integral of |g| outside [-K, K]."""
    B = math.ceil(1.0 / beta)
    cosb = math.cos(beta * math.pi / 2.0)
    pref = 2.0 ** (B + 1) * math.factorial(B) / (c_beta(beta) * cosb**B)
    return pref * math.exp(-0.5 * K**beta * cosb) / K


@dataclass
class KernelQuadrature:
    beta: float
    K: float
    h1: float
    Q: int
    nodes: np.ndarray    # kernel-space points k
    weights: np.ndarray  # complex c = (panel Gauss weight) * g(k)
    C_beta: float

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def abs_weight_sum(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    @property
    def weight_sum(self) -> complex:
        return complex(np.sum(self.weights))


def choose_params(beta: float, eps: float, T: float, L_sup_bound: float) -> KernelQuadrature:
    """Node set sized for target accuracy eps at horizon T.

    K is the smallest truncation with closed-form tail <= eps/2 (bisection),
    rounded up to a whole number of panels of width h1 = 1/(e T Lambda);
    each panel carries Q Gauss-Legendre points.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if L_sup_bound <= 0 or T <= 0:
        raise ValueError("T and L_sup_bound must be positive")
    h1 = 1.0 / (math.e * T * L_sup_bound)
    lo, hi = 1e-3, 10.0
    while kernel_tail_bound(beta, hi) > eps / 2.0:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError("kernel truncation bound never reached the target")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kernel_tail_bound(beta, mid) <= eps / 2.0:
            hi = mid
        else:
            lo = mid
    half_panels = max(1, math.ceil(hi / h1 - 1e-12))
    K = half_panels * h1
    Q = math.ceil(math.log(8.0 * K / (3.0 * c_beta(beta) * eps)) / math.log(4.0))
    Q = max(Q, 1)
    gx, gw = np.polynomial.legendre.leggauss(Q)
    nodes, weights = [], []
    for m in range(-half_panels, half_panels):
        a = m * h1
        pts = 0.5 * h1 * gx + a + 0.5 * h1
        wts = 0.5 * h1 * gw
        for x, w in zip(pts, wts):
            nodes.append(x)
            weights.append(w * kernel_eval(beta, x))
    return KernelQuadrature(beta=beta, K=K, h1=h1, Q=Q,
                            nodes=np.array(nodes), weights=np.array(weights),
                            C_beta=c_beta(beta))


@dataclass
class CartesianPair:
    L: np.ndarray
    H: np.ndarray


def cartesian_split(a) -> CartesianPair:
    A = as_complex_matrix(a)
    L = (A + A.conj().T) / 2.0
    H = (A - A.conj().T) / 2.0j
    return CartesianPair(L=L, H=H)


def _exp_hermitian_batch(G: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i dt G) for a (B, d, d) Hermitian stack via batched eigh."""
    w, V = np.linalg.eigh(G)
    phase = np.exp(-1j * dt * w)
    return (V * phase[:, None, :]) @ V.conj().transpose(0, 2, 1)


class _NodeGenerators:
    """G_b(t) = k_b L(t) + H(t) for the whole node batch, with memoization."""

    def __init__(self, pair_at, ks: np.ndarray):
        self.pair_at = pair_at
        self.ks = np.asarray(ks, dtype=float)
        self._cache: dict = {}

    def __call__(self, t: float) -> np.ndarray:
        key = round(float(t), 14)
        if key not in self._cache:
            L, H = self.pair_at(float(t))
            self._cache[key] = self.ks[:, None, None] * L[None] + H[None]
        return self._cache[key]

    def clear(self):
        self._cache.clear()


def _tds_segment_poly(pair_at, order_K: int, times_by_order: dict, a: float,
                      b: float, d: int) -> np.ndarray:
    """MC series propagator for generators k L(t) + H(t), as a polynomial in k.

    Returns a (order_K + 1, d, d) coefficient stack D with the segment
    propagator for node parameter k equal to sum_m k^m D[m]; the node batch
    never enters, so the cost is independent of the node count.
    """
    tau = b - a
    eye = np.eye(d, dtype=complex)
    D = np.zeros((order_K + 1, d, d), dtype=complex)
    D[0] = eye
    for k in range(1, order_K + 1):
        times = times_by_order[k]
        csum = np.zeros((k + 1, d, d), dtype=complex)
        for row in times:
            L, H = pair_at(float(row[-1]))
            poly = np.zeros((k + 1, d, d), dtype=complex)
            poly[0], poly[1] = H, L
            deg = 1
            for j in range(k - 2, -1, -1):
                Lj, Hj = pair_at(float(row[j]))
                nxt = np.zeros_like(poly)
                nxt[: deg + 1] = poly[: deg + 1] @ Hj
                nxt[1: deg + 2] += poly[: deg + 1] @ Lj
                poly, deg = nxt, deg + 1
            csum += poly
        D[: k + 1] += (-1j) ** k * (tau**k / math.factorial(k)) * csum / len(times)
    return D


def _riemann_segment_poly(pair_at, a: float, b: float, order_K: int, cells: int,
                          d: int) -> np.ndarray:
    """Left-endpoint series propagator as a (order_K + 1, d, d) k-polynomial."""
    h = (b - a) / cells
    eye = np.eye(d, dtype=complex)
    R = [np.zeros((j + 1, d, d), dtype=complex) for j in range(order_K + 1)]
    R[0][0] = eye
    for m in range(cells):
        L, H = pair_at(a + m * h)
        # ascending j so repeated grid indices are admitted, matching the
        # non-decreasing ordered sums of the series definition
        for j in range(1, order_K + 1):
            upd = np.zeros_like(R[j])
            upd[: j] = h * (H @ R[j - 1])
            upd[1: j + 1] += h * (L @ R[j - 1])
            R[j] += upd
    D = np.zeros((order_K + 1, d, d), dtype=complex)
    D[0] = eye
    for j in range(1, order_K + 1):
        D[: j + 1] += (-1j) ** j * R[j]
    return D


def _poly_eval_nodes(D: np.ndarray, k_pows: np.ndarray) -> np.ndarray:
    """Evaluate the coefficient stack at every node: (B, d, d)."""
    return np.einsum("bm,mij->bij", k_pows[:, : D.shape[0]], D)


def _sweep_plan_dyson(T: float, n_segments: int, order_K: int, N_k: list,
                      duhamel_S: np.ndarray, seed: int):
    """Draw every MC time up front (independently of the noise path)."""
    bounds = np.linspace(0.0, T, n_segments + 1)
    seg_times = {}
    for m in range(n_segments):
        a, b = bounds[m], bounds[m + 1]
        per_order = {}
        for k in range(1, order_K + 1):
            rel = dyson.sample_simplex(k, b - a, N_k[k - 1], seed + 7919 * m + 13 * k)
            per_order[k] = a + rel
        seg_times[m] = per_order
    partial_times = {}
    for j, s in enumerate(duhamel_S):
        m = min(int(np.searchsorted(bounds, s, side="right")) - 1, n_segments - 1)
        b = bounds[m + 1]
        per_order = {}
        for k in range(1, order_K + 1):
            rel = dyson.sample_simplex(k, b - s, N_k[k - 1], seed + 104729 + 7919 * j + 13 * k)
            per_order[k] = s + rel
        partial_times[j] = (m, per_order)
    return bounds, seg_times, partial_times


def _sweep(pair_at, ks: np.ndarray, T: float, engine: str, opts: dict,
           duhamel_S: np.ndarray):
    """Backward suffix sweep producing U(T, 0) and U(T, S_j) per node.

    pair_at(t) must return the Cartesian pair (L(t), H(t)) exactly (the
    caller pre-extends the noise path at every time the plan will request).
    """
    gen = _NodeGenerators(pair_at, ks)
    d = pair_at(0.0)[0].shape[0]
    B = len(ks)
    suffix = np.broadcast_to(np.eye(d, dtype=complex), (B, d, d)).copy()
    partials = {}
    if engine == "reference":
        n_steps = opts["n_steps"]
        bounds = np.linspace(0.0, T, n_steps + 1)
        S_sorted = np.argsort(duhamel_S)[::-1]
        todo = list(S_sorted)
        for m in range(n_steps, 0, -1):
            a, b = bounds[m - 1], bounds[m]
            while todo and duhamel_S[todo[0]] >= a - 1e-15 and duhamel_S[todo[0]] < b - 1e-15:
                j = todo.pop(0)
                s = duhamel_S[j]
                Gm = gen(0.5 * (s + b))
                partials[j] = suffix @ _exp_hermitian_batch(Gm, b - s)
            step = _exp_hermitian_batch(gen(0.5 * (a + b)), b - a)
            suffix = suffix @ step
        for j in todo:  # S_j exactly at T
            partials[j] = np.broadcast_to(np.eye(d, dtype=complex), (B, d, d)).copy()
    elif engine in ("dyson_mc", "riemann"):
        bounds = opts["bounds"]
        order_K = opts["order_K"]
        n_segments = len(bounds) - 1
        k_pows = np.vander(np.asarray(ks, dtype=complex), order_K + 1, increasing=True)
        per_seg_partials: dict = {}
        for j, (m, per_order) in opts.get("partial_times", {}).items():
            per_seg_partials.setdefault(m, []).append((j, per_order))
        for m in range(n_segments, 0, -1):
            a, b = bounds[m - 1], bounds[m]
            for j, per_order in per_seg_partials.get(m - 1, []):
                s = float(duhamel_S[j])
                if engine == "dyson_mc":
                    D = _tds_segment_poly(pair_at, order_K, per_order, s, b, d)
                else:
                    cells = max(1, math.ceil((b - s) / opts["h_target"]))
                    D = _riemann_segment_poly(pair_at, s, b, order_K, cells, d)
                partials[j] = suffix @ _poly_eval_nodes(D, k_pows)
            if engine == "dyson_mc":
                D = _tds_segment_poly(pair_at, order_K, opts["seg_times"][m - 1], a, b, d)
            else:
                cells = max(1, math.ceil((b - a) / opts["h_target"]))
                D = _riemann_segment_poly(pair_at, a, b, order_K, cells, d)
            suffix = suffix @ _poly_eval_nodes(D, k_pows)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return suffix, partials


def _constant_pair(A: np.ndarray):
    pair = cartesian_split(A)
    return lambda t: (pair.L, pair.H)


def homogeneous_propagator(quad: KernelQuadrature, A_of_t, T: float,
                           engine: str = "reference", n_steps: int | None = None,
                           dyson_cfg: dyson.DysonConfig | None = None,
                           rtol: float | None = None) -> np.ndarray:
    """sum_b c_b U(T, 0, k_b): the node-weighted approximation of the decay map.

    A_of_t is the kernel-side generator (pass the negated dynamics matrix); a
    constant matrix may be given directly.  The reference engine refines its
    midpoint grid until the assembled sum stops moving.
    """
    A0 = as_complex_matrix(A_of_t if not callable(A_of_t) else A_of_t(0.0))
    constant = not callable(A_of_t)
    if callable(A_of_t):
        probes = [as_complex_matrix(A_of_t(u)) for u in (0.0, 0.37 * T, T)]
        constant = all(np.allclose(p, probes[0]) for p in probes)
        pair_at = lambda t: _pair_from(A_of_t, t)
    else:
        pair_at = _constant_pair(A0)
    ks = quad.nodes
    if engine == "reference":
        if constant:
            U, _ = _sweep(pair_at, ks, T, "reference", {"n_steps": 1}, np.array([]))
            return np.einsum("b,bij->ij", quad.weights, U)
        lam = max(spectral_norm(pair_at(u)[0]) * np.max(np.abs(ks)) +
                  spectral_norm(pair_at(u)[1]) for u in np.linspace(0, T, 9))
        steps = n_steps or max(16, math.ceil(4.0 * T * lam))
        tol = rtol if rtol is not None else 1e-6
        prev = None
        for _ in range(6):
            U, _ = _sweep(pair_at, ks, T, "reference", {"n_steps": steps}, np.array([]))
            cur = np.einsum("b,bij->ij", quad.weights, U)
            if prev is not None and spectral_norm(cur - prev) <= tol * max(1.0, spectral_norm(cur)):
                return cur
            prev, steps = cur, steps * 2
        return prev
    if engine == "dyson_mc":
        if dyson_cfg is None:
            raise ValueError("dyson_mc engine needs a DysonConfig")
        lam = _lambda_max(pair_at, ks, T)
        n_segments = max(1, math.ceil(T * lam / dyson.SEGMENT_LOG2))
        bounds, seg_times, _ = _sweep_plan_dyson(T, n_segments, dyson_cfg.order_K,
                                                 dyson_cfg.N_k, np.array([]), dyson_cfg.seed)
        opts = {"bounds": bounds, "seg_times": seg_times, "order_K": dyson_cfg.order_K,
                "N_k": dyson_cfg.N_k}
        U, _ = _sweep(pair_at, ks, T, "dyson_mc", opts, np.array([]))
        return np.einsum("b,bij->ij", quad.weights, U)
    raise ValueError(f"unknown engine {engine!r}")


def _pair_from(A_of_t, t: float):
    pair = cartesian_split(A_of_t(t))
    return pair.L, pair.H


def _lambda_max(pair_at, ks, T, resolution: int = 33) -> float:
    kmax = float(np.max(np.abs(ks))) if len(ks) else 0.0
    worst = 0.0
    for u in np.linspace(0.0, T, resolution):
        L, H = pair_at(u)
        worst = max(worst, kmax * spectral_norm(L) + spectral_norm(H))
    return worst


def duhamel_mc(quad: KernelQuadrature, A_of_t, b_of_t, T: float, M: int,
               seed: int, engine: str = "reference",
               dyson_cfg: dyson.DysonConfig | None = None,
               n_steps: int | None = None) -> np.ndarray:
    """Uniform-time MC estimate of the forced part of the solution.

    Draws S_1..S_M iid uniform on [0, T] (independent of the noise driving
    A and b) and averages (T/M) sum_j sum_b c_b U(T, S_j, k_b) b(S_j).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence([seed, 5]).generate_state(2, np.uint64)))
    S = np.sort(rng.uniform(0.0, T, size=M))
    if callable(A_of_t):
        pair_at = lambda t: _pair_from(A_of_t, t)
    else:
        pair_at = _constant_pair(as_complex_matrix(A_of_t))
    ks = quad.nodes
    if engine == "reference":
        lam = _lambda_max(pair_at, ks, T, 9)
        steps = n_steps or max(16, math.ceil(4.0 * T * max(lam, 1e-9)))
        _, partials = _sweep(pair_at, ks, T, "reference", {"n_steps": steps}, S)
    elif engine == "dyson_mc":
        if dyson_cfg is None:
            raise ValueError("dyson_mc engine needs a DysonConfig")
        lam = _lambda_max(pair_at, ks, T)
        n_segments = max(1, math.ceil(T * lam / dyson.SEGMENT_LOG2))
        bounds, seg_times, partial_times = _sweep_plan_dyson(
            T, n_segments, dyson_cfg.order_K, dyson_cfg.N_k, S, dyson_cfg.seed)
        opts = {"bounds": bounds, "seg_times": seg_times,
                "partial_times": partial_times, "order_K": dyson_cfg.order_K,
                "N_k": dyson_cfg.N_k}
        _, partials = _sweep(pair_at, ks, T, "dyson_mc", opts, S)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    d = pair_at(0.0)[0].shape[0]
    acc = np.zeros(d, dtype=complex)
    for j, s in enumerate(S):
        assembled = np.einsum("b,bij->ij", quad.weights, partials[j])
        acc += assembled @ np.asarray(b_of_t(float(s)), dtype=complex).reshape(d)
    return (T / M) * acc


def v_ou_bound(sigma_fro: float, lambda_min: float, T: float) -> float:
    """Mean-square forcing level (1/T) int E||b||^2 in closed form (zero start)."""
    lam = lambda_min
    return sigma_fro**2 / (2.0 * lam * T) * (T - (1.0 - math.exp(-2.0 * lam * T)) / (2.0 * lam))


def v_init_decay(process: ou.OUProcess, T: float, points: int = 64) -> float:
    """Deterministic addition to the mean energy from a nonzero forcing start."""
    if float(np.linalg.norm(process.f0_init)) == 0.0:
        return 0.0
    gx, gw = np.polynomial.legendre.leggauss(points)
    ts = 0.5 * T * (gx + 1.0)
    ws = 0.5 * T * gw
    total = 0.0
    for t, w in zip(ts, ws):
        m = np.real(matrix_exp(-process.Theta, t)) @ process.f0_init
        total += w * float(m @ m)
    return total / T


def m_choice(T: float, delta: float, eps: float, quad: KernelQuadrature, V: float) -> int:
    """Sufficient uniform-time sample count for the forced-part estimator."""
    if min(T, delta, eps) <= 0:
        raise ValueError("T, delta, eps must be positive")
    if V < 0:
        raise ValueError("V must be nonnegative")
    M = math.ceil(4.0 * T * quad.abs_weight_sum**2 * V / (delta * (eps / 2.0) ** 2))
    return max(1, M)


def h1_inhomogeneous(T: float, order: int, f1_norm: float, f2_norm: float,
                     sigma_fro: float, lambda_min: float) -> float:
    """Mean-norm panel width for the forced part (expected-norm normalization)."""
    root = math.sqrt((1.0 - math.exp(-2.0 * lambda_min * T)) / (2.0 * lambda_min))
    return 1.0 / (math.e * T * order * (f1_norm + f2_norm + sigma_fro * root))


def solve_slchs(sys: QuadraticSystem, N: int, T: float, eps: float, delta: float,
                seed: int, engine: str = "reference", beta: float = 0.8,
                mc_time_samples: int | None = None, mc_time_cap: int = 256,
                dyson_order: int | None = None, dyson_samples: list | None = None,
                sup_stats: ou.SupStatistics | None = None,
                lift: CarlemanLift | None = None,
                n_steps: int | None = None) -> dict:
    """Full pipeline: noise path -> lift -> node sum + forced-part MC estimate.

    Returns a dict with y_T (lifted endpoint), x_T (first block), and a
    diagnostics dict carrying every chosen parameter and bound evaluation.
    Deterministic given (arguments, seed).  On a stability-check failure the
    solution fields are withheld (None) and diagnostics are still returned.
    """
    lift = lift if lift is not None else build_lift(sys, N)
    f1n, f2n = spectral_norm(sys.F1), spectral_norm(sys.F2)
    if sup_stats is None:
        sup_stats = ou.sup_statistics(sys.ou, T, 400, 65, seed + 424243)
    lam_thresh = sup_stats.lambda_threshold(min(delta / 2.0, 0.5), N, f1n, f2n)
    quad = choose_params(beta, eps / 2.0, T, lam_thresh)

    base_grid = np.linspace(0.0, T, 33)
    path = ou.sample_exact(sys.ou, base_grid[1:], seed)
    f0_sup = max(path.sup_norm(), float(np.linalg.norm(sys.ou.f0_init)))
    stable = stability_predicate(lift, f0_sup)

    sigma_fro = float(np.linalg.norm(sys.ou.Sigma, "fro"))
    V = v_ou_bound(sigma_fro, sys.ou.lambda_min, T) + v_init_decay(sys.ou, T)
    M_suff = m_choice(T, delta / 2.0, eps / 2.0, quad, V)
    M = mc_time_samples if mc_time_samples is not None else min(M_suff, mc_time_cap)

    diagnostics = {
        "engine": engine, "beta": beta, "K": quad.K, "h1": quad.h1, "Q": quad.Q,
        "node_count": quad.node_count, "M": M, "M_sufficient": M_suff,
        "eps_split": {"kernel_trunc": eps / 4.0, "quadrature": eps / 2.0,
                      "duhamel_mc": eps / 2.0},
        "seed": seed, "stability": bool(stable),
        "lambda_threshold": lam_thresh,
        "h1_inhomogeneous_alt": h1_inhomogeneous(T, N, f1n, f2n, sigma_fro, sys.ou.lambda_min),
        "h1_choice": "homogeneous-threshold",
        "norms": {"F1": f1n, "F2": f2n, "abs_weight_sum": quad.abs_weight_sum,
                  "f0_path_sup": f0_sup},
        "bounds": {
            "kernel_trunc": kernel_tail_bound(beta, quad.K),
            "quadrature": 8.0 / (3.0 * quad.C_beta) * quad.K * 4.0 ** (-quad.Q),
            "duhamel_mc": T * quad.abs_weight_sum * math.sqrt(V / ((delta / 2.0) * M)),
        },
    }
    if not stable:
        return {"y_T": None, "x_T": None, "diagnostics": diagnostics}

    rng = np.random.Generator(np.random.Philox(key=np.random.SeedSequence([seed, 5]).generate_state(2, np.uint64)))
    S = np.sort(rng.uniform(0.0, T, size=M))

    ks = quad.nodes
    kmax = float(np.max(np.abs(ks)))
    a_norm_sup = N * (f0_sup + f1n + f2n)  # block-row estimate of sup ||A_N||
    lam_max = kmax * a_norm_sup + a_norm_sup

    if engine == "dyson_mc":
        order_K = dyson_order if dyson_order is not None else dyson.choose_truncation(max(eps / 2.0, 1e-9))
        order_K = min(order_K, 4)
        N_k = dyson_samples if dyson_samples is not None else [max(2, 2 ** (4 - k)) for k in range(1, order_K + 1)]
        n_segments = max(1, math.ceil(1.02 * T * lam_max / dyson.SEGMENT_LOG2))
        bounds, seg_times, partial_times = _sweep_plan_dyson(
            T, n_segments, order_K, N_k, S, seed + 31)
        plan_times = [t for per in seg_times.values() for arr in per.values() for t in arr.ravel()]
        plan_times += [t for (_, per) in partial_times.values() for arr in per.values() for t in arr.ravel()]
        plan_times += list(S)
        opts = {"bounds": bounds, "seg_times": seg_times, "partial_times": partial_times,
                "order_K": order_K, "N_k": N_k}
        tau = T / n_segments
        eps_seg_trunc = (tau * lam_max * math.e / (order_K + 1)) ** (order_K + 1)
        eps_seg_mc = sum(
            math.sqrt(2.0 * order_K**2 * (tau * lam_max) ** (2 * k)
                      / (math.factorial(k) ** 2 * 0.5 * N_k[k - 1]))
            for k in range(1, order_K + 1))
        diagnostics["dyson"] = {
            "order_K": order_K, "N_k": list(N_k), "n_segments": n_segments,
            "segment_tau": tau, "lambda_max": lam_max,
            "per_segment_trunc": eps_seg_trunc, "per_segment_mc_at_half": eps_seg_mc,
            "telescoped_budget": n_segments * (eps_seg_trunc + eps_seg_mc),
        }
    elif engine == "reference":
        steps = n_steps or max(32, math.ceil(4.0 * T * lam_max))
        bounds = np.linspace(0.0, T, steps + 1)
        plan_times = list((bounds[:-1] + bounds[1:]) / 2.0) + list(S)
        for j, s in enumerate(S):
            m = min(int(np.searchsorted(bounds, s, side="right")), steps)
            plan_times.append(0.5 * (s + bounds[m]))
        opts = {"n_steps": steps}
        diagnostics["reference_steps"] = steps
    else:
        raise ValueError(f"engine {engine!r} not supported by solve_slchs")

    full = ou.extend_path(path, np.array(plan_times))
    lookup = {round(float(t), 12): v for t, v in zip(full.times, full.values)}

    def pair_at(t: float):
        f0 = lookup[round(float(t), 12)]
        A = -lift.assemble(f0)
        L = (A + A.conj().T) / 2.0
        H = (A - A.conj().T) / 2.0j
        return L, H

    suffix, partials = _sweep(pair_at, ks, T, engine, opts, S)
    y0 = tensor_power_stack(sys.x_init, N).astype(complex)
    assembled = np.einsum("b,bij->ij", quad.weights, suffix)
    y_T = assembled @ y0
    duh = np.zeros(lift.d_N, dtype=complex)
    for j, s in enumerate(S):
        Aj = np.einsum("b,bij->ij", quad.weights, partials[j])
        duh += Aj @ lift.b_vector(lookup[round(float(s), 12)])
    y_T = y_T + (T / M) * duh
    x_T = y_T[: sys.n]
    diagnostics["norms"]["y_T"] = float(np.linalg.norm(y_T))
    diagnostics["norms"]["imag_y_T"] = float(np.linalg.norm(y_T.imag))
    return {"y_T": y_T, "x_T": x_T, "diagnostics": diagnostics, "path": full}
