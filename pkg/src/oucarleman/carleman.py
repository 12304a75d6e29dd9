"""Block-tridiagonal tensor-power lift of the quadratic system and its error tools.

Block j lives on the n^j-dimensional tensor-power space; the generator has
the degree-preserving block (built from F1), the degree-raising block (from
F2, mapping n^{j+1} -> n^j) and the degree-lowering block (from the forcing
vector, mapping n^{j-1} -> n^j).  Only the forcing blocks are time-dependent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import ou
from .numerics import LyapunovMetric, affine_exp_step, p_norm_vec, spectral_norm
from .quadratic import DivergenceError, LyapunovData, QuadraticSystem, integrate_reference

__all__ = [
    "SizeError",
    "CarlemanLift",
    "TruncationError",
    "build_lift",
    "residual",
    "integrate_truncated",
    "truncation_error",
    "stability_predicate",
    "deterministic_bounds",
    "tensor_power_stack",
    "dump_triplets_csv",
]

_DIM_CAP = 20_000
_BLOWUP = 1e6


class SizeError(ValueError):
    """Lift dimension exceeds the configured cap."""


def _kron_sum(op: np.ndarray, n: int, j: int) -> np.ndarray:
    """sum_p I^{(p-1)} (x) op (x) I^{(j-p)} with identity factors of size n."""
    total = None
    for p in range(1, j + 1):
        term = np.kron(np.eye(n ** (p - 1)), np.kron(op, np.eye(n ** (j - p))))
        total = term if total is None else total + term
    return total


def tensor_power_stack(x: np.ndarray, order: int) -> np.ndarray:
    """[x; x^(2); ...; x^(order)] stacked into one vector."""
    x = np.asarray(x).reshape(-1)
    parts, cur = [], x
    for j in range(1, order + 1):
        parts.append(cur)
        if j < order:
            cur = np.kron(cur, x)
    return np.concatenate(parts)


@dataclass
class CarlemanLift:
    sys: QuadraticSystem
    N: int
    d_N: int
    offsets: list
    diag_blocks: list     # j = 1..N, from F1
    raising_blocks: list  # j = 1..N, from F2 (index j-1 holds block n^{j+1} -> n^j)

    def lowering_block(self, j: int, f0: np.ndarray) -> np.ndarray:
        """Forcing block of row j (maps n^{j-1} -> n^j)."""
        return _kron_sum(np.asarray(f0, dtype=complex).reshape(-1, 1), self.sys.n, j)

    def assemble(self, f0) -> np.ndarray:
        """Dense generator with the forcing value frozen at f0."""
        f0 = np.asarray(f0, dtype=complex).reshape(self.sys.n)
        A = np.zeros((self.d_N, self.d_N), dtype=complex)
        off = self.offsets
        for j in range(1, self.N + 1):
            r0, r1 = off[j - 1], off[j]
            A[r0:r1, r0:r1] = self.diag_blocks[j - 1]
            if j < self.N:
                A[r0:r1, off[j]:off[j + 1]] = self.raising_blocks[j - 1]
            if j > 1:
                A[r0:r1, off[j - 2]:off[j - 1]] = self.lowering_block(j, f0)
        return A

    def b_vector(self, f0) -> np.ndarray:
        b = np.zeros(self.d_N, dtype=complex)
        b[: self.sys.n] = np.asarray(f0, dtype=complex).reshape(self.sys.n)
        return b

    def a_of_time(self, path: ou.OUPath):
        """Callable t -> A(t) reading the forcing from the (pre-extended) path."""
        return lambda t: self.assemble(path.value_at(t))

    def block_slices(self) -> list:
        return [slice(self.offsets[j - 1], self.offsets[j]) for j in range(1, self.N + 1)]

    def triplets(self, f0) -> list:
        """(block_row, row, col, value) entries of the assembled generator."""
        A = self.assemble(f0)
        rows, cols = np.nonzero(np.abs(A) > 0)
        out = []
        for r, c in zip(rows, cols):
            j = int(np.searchsorted(self.offsets, r, side="right"))
            out.append((j, int(r), int(c), complex(A[r, c])))
        return out


def build_lift(sys: QuadraticSystem, N: int, dim_cap: int = _DIM_CAP) -> CarlemanLift:
    if N < 1:
        raise ValueError("truncation order must be >= 1")
    n = sys.n
    d_N = sum(n**j for j in range(1, N + 1))
    if d_N > dim_cap:
        raise SizeError(f"lift dimension {d_N} exceeds the cap {dim_cap}")
    offsets = [0]
    for j in range(1, N + 1):
        offsets.append(offsets[-1] + n**j)
    diag = [_kron_sum(sys.F1.astype(complex), n, j) for j in range(1, N + 1)]
    raising = [_kron_sum(sys.F2.astype(complex), n, j) for j in range(1, N + 1)]
    return CarlemanLift(sys=sys, N=N, d_N=d_N, offsets=offsets,
                        diag_blocks=diag, raising_blocks=raising)


def residual(lift: CarlemanLift, x) -> dict:
    """Dropped top-coupling term: its vector, norm, and the N||F2|| ||x||^{N+1} bound."""
    x = np.asarray(x, dtype=float).reshape(lift.sys.n)
    f2xx = lift.sys.F2 @ np.kron(x, x)
    top = None
    for p in range(1, lift.N + 1):
        left = np.array([1.0])
        for _ in range(p - 1):
            left = np.kron(left, x)
        right = np.array([1.0])
        for _ in range(lift.N - p):
            right = np.kron(right, x)
        term = np.kron(np.kron(left, f2xx), right)
        top = term if top is None else top + term
    vec = np.zeros(lift.d_N)
    vec[lift.offsets[lift.N - 1]:] = top
    norm = float(np.linalg.norm(top))
    bound = lift.N * spectral_norm(lift.sys.F2) * np.linalg.norm(x) ** (lift.N + 1)
    return {"vector": vec, "norm": norm, "bound": float(bound)}


def integrate_truncated(lift: CarlemanLift, path: ou.OUPath, dt_max: float):
    """Truncated lifted dynamics by midpoint-frozen exact affine steps.

    On each step the generator and inhomogeneity are frozen at the midpoint
    forcing value and the step applies the exact affine update, so the
    linear case (F2 = 0, forcing = 0) is reproduced to exponential accuracy.
    Returns (times, states) with states of width d_N.
    """
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    grid = [np.asarray(path.times[:1])]
    for a, b in zip(path.times[:-1], path.times[1:]):
        steps = max(1, int(math.ceil((b - a) / dt_max - 1e-12)))
        grid.append(np.linspace(a, b, steps + 1)[1:])
    times = np.unique(np.concatenate(grid))
    mids = (times[:-1] + times[1:]) / 2.0
    full = ou.extend_path(path, mids)
    ys = np.empty((len(times), lift.d_N), dtype=complex)
    ys[0] = tensor_power_stack(lift.sys.x_init, lift.N)
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        f0 = full.value_at(mids[i])
        E, v = affine_exp_step(lift.assemble(f0), lift.b_vector(f0), h)
        ys[i + 1] = E @ ys[i] + v
        if np.linalg.norm(ys[i + 1]) > _BLOWUP:
            raise DivergenceError(f"lifted state exceeded {_BLOWUP:g} at t={times[i+1]:g}")
    return times, ys


@dataclass
class TruncationError:
    """Per-block gap between reference tensor powers and the truncated blocks."""

    times: np.ndarray
    blocks: list  # blocks[j-1] has shape (len(times), n^j)
    N: int
    n: int

    def block_norms(self, j: int) -> np.ndarray:
        return np.linalg.norm(self.blocks[j - 1], axis=1)

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.blocks, axis=1)

    def euclid_norms(self) -> np.ndarray:
        return np.linalg.norm(self.stacked(), axis=1)

    def p_norms(self, metric: LyapunovMetric) -> np.ndarray:
        """Norms in the lifted (direct-sum tensor-power) metric."""
        out = np.zeros(len(self.times))
        for j in range(1, self.N + 1):
            Pj = metric.tensor_power(j).P.real
            blk = self.blocks[j - 1]
            out += np.real(np.einsum("ti,ij,tj->t", blk.conj(), Pj, blk))
        return np.sqrt(np.maximum(out, 0.0))


def truncation_error(lift: CarlemanLift, path: ou.OUPath, dt_max: float) -> TruncationError:
    """eta_j(t) = x(t)^(j) - y_j(t) on a shared refined grid."""
    t_ref, xs = integrate_reference(lift.sys, path, dt_max)
    t_tr, ys = integrate_truncated(lift, path, dt_max)
    if len(t_ref) != len(t_tr) or not np.allclose(t_ref, t_tr):
        raise RuntimeError("reference and truncated integrators disagree on the grid")
    blocks = []
    for j in range(1, lift.N + 1):
        sl = lift.block_slices()[j - 1]
        pow_j = np.empty((len(t_ref), lift.sys.n**j))
        for i, x in enumerate(xs):
            cur = x
            for _ in range(j - 1):
                cur = np.kron(cur, x)
            pow_j[i] = cur
        blocks.append(pow_j - ys[:, sl])
    return TruncationError(times=t_ref, blocks=blocks, N=lift.N, n=lift.sys.n)


def stability_predicate(lift: CarlemanLift, f0_norm_bound: float) -> bool:
    """min |lambda(F1)| > ||F2|| + forcing bound, the block-circle condition."""
    eigs = np.linalg.eigvals(lift.sys.F1)
    return bool(np.min(np.abs(eigs)) > spectral_norm(lift.sys.F2) + f0_norm_bound)


def deterministic_bounds(lyap: LyapunovData, lift: CarlemanLift, t: float,
                         dx0_norm_P: float | None = None) -> dict:
    """Closed-form truncation-error bounds in the dissipative regime.

    eta_j_bound / eta_1_bound are the homogeneous-perturbation bounds;
    stable_bound is the Gershgorin-rate variant (flagged None when its rate
    xi_P is not negative); steady_decay(C_hat, e0_norm, t) reports the
    contraction to the truncated fixed point for a caller-supplied bound
    C_hat, flagged when the decay rate is not positive.
    """
    mu = lyap.mu_P
    if mu >= 0:
        raise ValueError("bounds require a negative generalized log-norm")
    f2_P = lyap.f2_norm_P
    f0_P = lyap.f0_norm_P
    N = lift.N
    dx0 = lyap.x0_norm_P if dx0_norm_P is None else dx0_norm_P
    ratio = f2_P / abs(mu)

    def eta_j_bound(j: int) -> float:
        return dx0 ** (N + 1) * ratio ** (N + 1 - j)

    def eta_1_bound(tt: float = t) -> float:
        return dx0 * ratio**N * (1.0 - math.exp(mu * tt)) ** N

    xi_P = 4.0 * mu + 5.0 * f0_P + 3.0 * f2_P
    p_inv_norm = spectral_norm(np.linalg.inv(lyap.metric.P))

    def stable_bound(j: int):
        if xi_P >= 0:
            return None
        return (2.0 / (-xi_P)) * N * f2_P * p_inv_norm ** (j / 2.0) * lyap.x0_norm_P ** (N + 1)

    D_N = N * (N + 1) * spectral_norm(lift.sys.F2)
    alpha = -float(np.max(np.linalg.eigvals(lift.assemble(np.zeros(lift.sys.n))).real))

    def steady_decay(C_hat: float, e0_norm: float, tt: float = t):
        rate = alpha - D_N * C_hat ** (N + 1)
        if rate <= 0:
            return None
        return C_hat * math.exp(-rate * tt) * e0_norm

    return {
        "eta_j_bound": eta_j_bound,
        "eta_1_bound": eta_1_bound,
        "stable_bound": stable_bound,
        "steady_decay": steady_decay,
        "xi_P": xi_P,
        "xi_P_stable": bool(xi_P < 0),
        "alpha": alpha,
        "D_N": D_N,
    }


def dump_triplets_csv(lift: CarlemanLift, f0, fname: str) -> None:
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "row", "col", "value"])
        for j, r, c, v in lift.triplets(f0):
            w.writerow([j, r, c, repr(v)])
