"""Experiment driver: config in, seeded runs out (CSV + summary.json + PNG)."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys as _sys

import numpy as np

from . import complexity, dyson, lchs, ou, tail_bounds
from .carleman import build_lift
from .config import ConfigError, config_hash, load_config
from .numerics import identity_metric, matrix_exp, spectral_norm
from .quadratic import integrate_reference
from .report import RunMeta, line_figure, write_csv, write_summary

_SUBCOMMANDS = ("ou-stats", "carleman-convergence", "tail-experiment",
                "lchs-solve", "dyson-bench", "resources")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oucarleman",
                                description="Seeded experiments for the OU-forced "
                                            "quadratic-ODE emulation toolkit")
    p.add_argument("subcommand", choices=_SUBCOMMANDS)
    p.add_argument("--config", required=True, help="path to the JSON config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="path-worker count; 1 guarantees bit-reproducibility")
    p.add_argument("--engine", choices=("reference", "dyson_mc", "riemann"),
                   default=None, help="override the config engine")
    return p


def _fail(code: int, kind: str, message: str, fieldname: str | None = None) -> int:
    err = {"error": kind, "message": message}
    if fieldname is not None:
        err["field"] = fieldname
    print(json.dumps(err), file=_sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        return _fail(2, "config", str(e), e.fieldname)
    except OSError as e:
        return _fail(2, "config", f"cannot read config: {e}")
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if args.out is not None:
        cfg.raw["output_dir"] = args.out
    if args.engine is not None:
        cfg.raw["engine"] = args.engine
    os.makedirs(cfg.output_dir, exist_ok=True)
    meta = RunMeta(args.subcommand, config_hash(cfg), cfg.seed)
    runner = {
        "ou-stats": _run_ou_stats,
        "carleman-convergence": _run_convergence,
        "tail-experiment": _run_tail,
        "lchs-solve": _run_lchs,
        "dyson-bench": _run_dyson_bench,
        "resources": _run_resources,
    }[args.subcommand]
    try:
        runner(cfg, meta, args.threads)
    except Exception as e:  # noqa: BLE001 - surfaced as machine-readable error
        return _fail(1, type(e).__name__, str(e))
    return 0


def _out(cfg, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


def _summary(cfg, meta, name: str, payload: dict) -> None:
    payload = dict(payload)
    payload["resolved_config"] = cfg.raw
    write_summary(_out(cfg, name), meta, payload)


def _run_ou_stats(cfg, meta, threads: int) -> None:
    system = cfg.build_system()
    proc = system.ou
    T = cfg.horizon
    n_paths = max(cfg.paths, 200)
    grid = np.linspace(0.0, T, 9)
    ens = ou.sample_ensemble(proc, grid[1:], n_paths, cfg.seed)
    emp_sq = (ens**2).sum(axis=2).mean(axis=0)
    ana_sq = np.array([np.trace(ou.covariance(proc, t)) for t in grid[1:]])
    stats = ou.sup_statistics(proc, T, n_paths, 129, cfg.seed + 1)
    x_star = 3.0 * math.sqrt(max(float(np.trace(ou.stationary_covariance(proc))), 1e-30))
    tails = ou.norm_tail_bounds(proc, T, x_star)
    write_csv(_out(cfg, "ou_stats.csv"), meta, {
        "t": grid[1:], "empirical_mean_sq_norm": emp_sq, "analytic_mean_sq_norm": ana_sq,
    })
    _summary(cfg, meta, "summary.json", {
        "sup_statistics": {
            "sigma_star_sq_bound": stats.sigma_star_sq_bound,
            "mean_sup_estimate": stats.mean_sup_estimate,
            "m_compact_diag": stats.m_compact_diag,
        },
        "norm_tail_bounds": {"x_star": x_star, **tails},
        "ito_isometry": {
            "empirical": float(emp_sq[-1]),
            "analytic": float(ana_sq[-1]),
        },
    })
    line_figure(_out(cfg, "ou_stats.png"), meta, [
        (grid[1:], emp_sq, "empirical E||F0||^2", "o-"),
        (grid[1:], ana_sq, "analytic trace Cov", "k--"),
    ], "t", "mean squared norm", "forcing second moments")


def _run_convergence(cfg, meta, threads: int) -> None:
    system = cfg.build_system()
    orders = cfg.orders()
    if len(orders) == 1:
        orders = list(range(1, orders[0] + 1))
    res = tail_bounds.ensemble_truncation_errors(
        system, orders, cfg.horizon, cfg.paths, cfg.seed, threads=threads)
    med = [float(np.nanmedian(res["per_order"][N]["eta1_norm"])) for N in orders]
    q25 = [float(np.nanpercentile(res["per_order"][N]["eta1_norm"], 25)) for N in orders]
    q75 = [float(np.nanpercentile(res["per_order"][N]["eta1_norm"], 75)) for N in orders]
    div = [res["per_order"][N]["diverged"] for N in orders]
    write_csv(_out(cfg, "carleman_convergence.csv"), meta, {
        "N": orders, "median_eta1": med, "q25_eta1": q25, "q75_eta1": q75,
        "diverged": div,
    })
    _summary(cfg, meta, "summary.json", {
        "orders": orders, "median_eta1": med, "paths": cfg.paths,
        "monotone_decreasing": bool(all(b < a for a, b in zip(med, med[1:]))),
    })
    line_figure(_out(cfg, "carleman_convergence.png"), meta, [
        (orders, med, "median ||eta_1(T)||", "o-"),
        (orders, q75, "75th pct", ":"),
    ], "truncation order N", "first-block error", "lift convergence", logy=True)


def _run_tail(cfg, meta, threads: int) -> None:
    system = cfg.build_system()
    N = cfg.orders()[-1]
    metric = identity_metric(system.n)
    lift = build_lift(system, N)
    params = tail_bounds.TailBoundParams.from_system(
        system, metric, N, cfg.horizon, gamma=cfg.raw.get("gamma"),
        seed=cfg.seed + 1, lift=lift)
    norm_A = tail_bounds.lift_raising_norm_P(lift, metric)
    grid = tail_bounds.default_delta_grid(params, norm_A, cfg.paths)
    res = tail_bounds.empirical_tail(system, N, cfg.horizon, grid, cfg.paths,
                                     cfg.seed, metric=metric, params=params,
                                     threads=threads)
    write_csv(_out(cfg, "tail.csv"), meta, {
        "Delta": res["Delta_grid"], "empirical_survival": res["survival_curve"],
        "cp_upper": res["cp_upper"], "bound": res["bound_curve"],
    })
    _summary(cfg, meta, "summary.json", {
        "dominated": res["dominated"], "Delta_0": res["Delta_0"],
        "n_paths": res["n_paths"], "n_diverged": res["n_diverged"],
        "gamma": params.lyap.gamma, "chi_P": params.chi_P,
        "Q_star_P": params.Q_star_P, "E_S_tP": params.E_S_tP,
    })
    positive = res["bound_curve"] > 0
    line_figure(_out(cfg, "tail.png"), meta, [
        (res["Delta_grid"], np.maximum(res["survival_curve"], 1e-6), "empirical survival", "o-"),
        (res["Delta_grid"], np.maximum(res["cp_upper"], 1e-6), "CP 95% upper", "s--"),
        (res["Delta_grid"][positive], res["bound_curve"][positive], "tail bound", "k-"),
    ], "Delta", "P(||eta||^2 >= Delta)", "tail domination", logx=True, logy=True)


def _run_lchs(cfg, meta, threads: int) -> None:
    system = cfg.build_system()
    N = cfg.orders()[-1]
    mc = cfg.raw["mc"]
    res = lchs.solve_slchs(system, N, cfg.horizon, cfg.raw["lchs"]["eps"],
                           cfg.raw["lchs"]["delta"], cfg.seed,
                           engine=cfg.engine if cfg.engine != "riemann" else "reference",
                           beta=cfg.raw["lchs"]["beta"],
                           mc_time_samples=mc["duhamel_samples"],
                           dyson_order=mc["dyson_order"],
                           dyson_samples=mc["dyson_samples"])
    diag = res["diagnostics"]
    if res["y_T"] is None:
        _summary(cfg, meta, "summary.json", {"diagnostics": diag,
                                             "error": "stability predicate failed"})
        raise RuntimeError("stability predicate failed for the sampled path")
    t_ref, xs = integrate_reference(system, res["path"], dt_max=cfg.horizon / 400.0)
    err = float(np.linalg.norm(res["x_T"].real - xs[-1]))
    write_csv(_out(cfg, "solution.csv"), meta, {
        "index": np.arange(len(res["y_T"])),
        "y_real": res["y_T"].real, "y_imag": res["y_T"].imag,
    })
    _summary(cfg, meta, "summary.json", {
        "diagnostics": diag, "x_T": res["x_T"].real,
        "reference_x_T": xs[-1], "first_block_error": err,
    })
    line_figure(_out(cfg, "lchs_solve.png"), meta, [
        (t_ref, np.linalg.norm(xs, axis=1), "reference ||x(t)||", "-"),
        ([t_ref[-1]], [float(np.linalg.norm(res["x_T"].real))], "node-sum endpoint", "o"),
    ], "t", "state norm", "solve vs reference")


def _run_dyson_bench(cfg, meta, threads: int) -> None:
    system = cfg.build_system()
    T = min(cfg.horizon, 1.0)
    seed = cfg.seed
    pauli_x = np.array([[0.0, 1.0], [1.0, 0.0]])
    grid_fine = np.linspace(0.0, T, 4097)
    path = ou.sample_exact(system.ou, grid_fine[1:], seed)
    vals = np.concatenate([[system.ou.f0_init], path.values])[:, 0]
    scale = 0.5 / max(np.max(np.abs(vals)), 1e-12)
    lookup = dict(zip(np.round(grid_fine, 12), scale * vals))

    def H_ou(t):
        return lookup[round(t, 12)] * pauli_x

    def H_smooth(t):
        return math.sin(t) * pauli_x

    hs = T / np.array([16, 32, 64, 128, 256])
    rows = []
    for label, H in (("ou", H_ou), ("smooth", H_smooth)):
        ref = dyson.riemann_dyson(H, T, 6, T / 4096)
        errs = [spectral_norm(dyson.riemann_dyson(H, T, 6, h) - ref) for h in hs]
        slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
        rows.append((label, errs, slope))
    H0 = 0.5 * pauli_x
    exact = matrix_exp(-1j * H0, T)
    counts = [8, 32, 128, 512]
    rms = []
    for n_k in counts:
        errs = []
        for rep in range(64):
            cfg_d = dyson.DysonConfig(order_K=6, N_k=[n_k] * 6, segment_tau=T,
                                      seed=seed + 999 + rep * 131 + n_k)
            approx = dyson.tds_propagator(lambda t: math.cos(t) * H0, 0.0, T, cfg_d)
            ref_c = dyson.riemann_dyson(lambda t: math.cos(t) * H0, T, 6, T / 4096)
            errs.append(spectral_norm(approx - ref_c) ** 2)
        rms.append(math.sqrt(np.mean(errs)))
    mc_slope = float(np.polyfit(np.log(counts), np.log(rms), 1)[0])
    write_csv(_out(cfg, "dyson_bench.csv"), meta, {
        "h": hs, "riemann_err_ou": rows[0][1], "riemann_err_smooth": rows[1][1],
    })
    write_csv(_out(cfg, "dyson_bench_mc.csv"), meta, {
        "N_k": counts, "rms_error": rms,
    })
    _summary(cfg, meta, "summary.json", {
        "riemann_slope_ou": rows[0][2], "riemann_slope_smooth": rows[1][2],
        "mc_rms_slope": mc_slope,
    })
    line_figure(_out(cfg, "dyson_bench.png"), meta, [
        (hs, rows[0][1], f"OU-driven (slope {rows[0][2]:.2f})", "o-"),
        (hs, rows[1][1], f"smooth (slope {rows[1][2]:.2f})", "s-"),
    ], "h", "propagator error", "series discretization rates", logx=True, logy=True)


def _run_resources(cfg, meta, threads: int) -> None:
    system = cfg.build_system()
    l = cfg.raw["lchs"]
    params = complexity.ResourceParams(
        n=system.n, N=cfg.orders()[-1], T=cfg.horizon, eps=l["eps"],
        delta=l["delta"], beta=l["beta"],
        F1_norm=spectral_norm(system.F1), F2_norm=spectral_norm(system.F2),
        Sigma_F_norm=float(np.linalg.norm(system.ou.Sigma, "fro")),
        lambda_min=system.ou.lambda_min)
    report = complexity.full_budget(params)
    _summary(cfg, meta, "resources.json", {"budget": report})
    eps_grid = np.geomspace(1e-8, 1e-2, 13)
    nq = []
    for e in eps_grid:
        p2 = complexity.ResourceParams(**{**params.__dict__, "eps": float(e)})
        nq.append(complexity.query_count(p2)["N_Q_scaling"])
    write_csv(_out(cfg, "resources_sweep.csv"), meta, {
        "eps": eps_grid, "N_Q_scaling": nq,
    })
    _summary(cfg, meta, "summary.json", {"budget": report})
    line_figure(_out(cfg, "resources.png"), meta, [
        (eps_grid, nq, "N_Q scaling", "o-"),
    ], "eps", "query scaling units", "query count vs accuracy", logx=True, logy=True)


if __name__ == "__main__":
    raise SystemExit(main())
