"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, design, harness, lti, stability
from .errors import (
    AdaptiveDesignError,
    Assumption1Violation,
    BudgetExceeded,
    DegenerateOrder,
    DomainViolation,
    NotPSDSpectrum,
    OdeExitedDomain,
    OrderError,
    StructureError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CONFIG_ERRORS = (
    ValueError,
    KeyError,
    TypeError,
    OSError,
    Assumption1Violation,
    StructureError,
    OrderError,
    NotPSDSpectrum,
    DegenerateOrder,
    BudgetExceeded,
)
NUMERICAL_ERRORS = (ArithmeticError, OdeExitedDomain, DomainViolation, AdaptiveDesignError)


def _floats(text: str) -> list[float]:
    text = text.strip()
    return [float(v) for v in text.split(",")] if text else []


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    overrides = {k: getattr(args, k) for k in ("seed", "N", "runs") if getattr(args, k, None) is not None}
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = harness.ExperimentConfig.from_dict(d)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.seed)
    u = np.sqrt(cfg.white_power) * rng.standard_normal(cfg.N + 1)
    e = np.sqrt(cfg.sigma2_true) * rng.standard_normal(cfg.N + 1)
    y = lti.simulate_system(cfg.params, u, e)
    out = _out_dir(args)
    np.savetxt(out / "simulation.csv", np.column_stack([np.arange(cfg.N + 1), u, e, y]),
               delimiter=",", header="n,u,e,y", comments="")
    print(f"wrote {out / 'simulation.csv'}")
    return EXIT_OK


def cmd_design(args) -> int:
    cfg = _load_config(args)
    params = cfg.params if args.theta is None else cfg.params.with_theta(_floats(args.theta))
    sigma2 = cfg.sigma2_true if args.sigma2 is None else args.sigma2
    res = design.design_input(params, sigma2, cfg.design)
    r = design.Autocorrelation(res.r)
    out = _out_dir(args)
    design.write_autocorrelation_csv(out / "autocorrelation.csv", r)
    print(json.dumps({"r": np.asarray(res.r).tolist(), "status": str(res.status), "fallback": bool(res.fallback)}))
    return EXIT_OK


def cmd_factorize(args) -> int:
    r = design.Autocorrelation(np.array(_floats(args.r)))
    filt = design.spectral_factorize(r)
    out = _out_dir(args)
    design.write_filter_csv(out / "filter.csv", filt)
    roots = design.filter_roots(filt)
    print(json.dumps({"f": filt.f.tolist(), "m_tau": int(filt.m_tau),
                      "max_root_modulus": float(np.max(np.abs(roots))) if roots.size else 0.0}))
    return EXIT_OK


def _run(args, runner) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    try:
        tr = runner(cfg)
    except harness.RunAborted as exc:
        harness.write_figure_csvs(out, exc.trace, cfg.params)
        print(f"numerical abort: {exc}; partial trace written to {out}", file=sys.stderr)
        return EXIT_NUMERICAL
    harness.write_figure_csvs(out, tr, cfg.params)
    summary = tr.summary(cfg.params)
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("mode", "runs", "N", "resets", "wall_time_s")}))
    return EXIT_OK


def cmd_run_adaptive(args) -> int:
    return _run(args, harness.run_adaptive)


def cmd_run_baseline(args) -> int:
    return _run(args, harness.run_optimal_baseline)


def cmd_monte_carlo(args) -> int:
    cfg = _load_config(args)
    if args.mode:
        d = cfg.to_dict()
        d["mode"] = args.mode
        cfg = harness.ExperimentConfig.from_dict(d)
    out = _out_dir(args)
    runs = args.runs or cfg.runs
    if args.grid:
        grid = sorted(set(int(v) for v in _floats(args.grid)))
    else:
        grid = sorted(set(np.unique(np.logspace(2, np.log10(cfg.N), 7).astype(int)).tolist()))
    d = cfg.to_dict()
    d["N"] = max(grid[-1], cfg.N)
    tr = harness.simulate_experiment(harness.ExperimentConfig.from_dict(d), runs)
    rows = []
    for n in grid:
        gains = analysis.l2_gain_sq(cfg.params.with_theta(tr.theta[n]).b)
        rows.append({"mode": cfg.mode, "runs": runs, "N": n, "variance": float(np.var(gains, ddof=1))})
    harness.write_variance_csv(out / "fig6_variance.csv", rows)
    d["N"] = cfg.N
    cfg_N = harness.ExperimentConfig.from_dict(d)
    cut = harness.RunTrace(tr.theta[: cfg.N + 1], tr.eps[: cfg.N + 1], tr.r0[: cfg.N + 1], tr.reset[: cfg.N + 1],
                           tr.sigma2_hat[: cfg.N + 1], tr.u[: cfg.N + 1], tr.resets_final, tr.wall_time, tr.mode)
    summary = harness.monte_carlo(cfg_N, runs, trace=cut).to_dict()
    _write_json(out / "monte_carlo.json", summary)
    print(json.dumps({k: summary[k] for k in ("mode", "runs", "N", "variance_l2_gain_sq", "wall_time_s")}))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    params = cfg.params
    out = _out_dir(args)
    if cfg.mode == "fixed-white":
        r = design.Autocorrelation.white(cfg.white_power, cfg.design.m)
    else:
        r = design.Autocorrelation(design.design_input(params, cfg.sigma2_true, cfg.design).r)
    G = analysis.information_matrix(params, r, cfg.sigma2_true, gradient=cfg.gradient)
    P = analysis.asymptotic_covariance(params, r, cfg.sigma2_true, gradient=cfg.gradient)
    analysis.write_matrix_csv(out / "information_matrix.csv", G)
    analysis.write_matrix_csv(out / "P_star.csv", P)
    result = {"r": r.r.tolist(), "G_min_eig": float(np.linalg.eigvalsh(G)[0]), "P_star_diag": np.diag(P).tolist()}
    if args.ode_horizon:
        start = params.with_theta(np.zeros(params.p) if cfg.theta0 is None else cfg.theta0)
        path = analysis.ode_trajectory(start, cfg.R0_scale * np.eye(params.p), args.ode_horizon, args.ode_step,
                                       r_map=r, true_params=params, sigma2=cfg.sigma2_true, gradient=cfg.gradient,
                                       record_every=max(1, int(round(0.1 / args.ode_step))))
        path.write_csv(out / "ode.csv")
        result["ode_final_theta"] = path.theta[-1].tolist()
        result["ode_final_W"] = float(path.W[-1])
    _write_json(out / "analysis.json", result)
    print(json.dumps(result))
    return EXIT_OK


def cmd_check_stability(args) -> int:
    if args.matrices:
        with open(args.matrices) as fh:
            members = json.load(fh)
    elif args.poly:
        members = [stability.companion(np.array(_floats(p))) for p in args.poly]
    else:
        raise ValueError("give --poly (repeatable) or --matrices")
    family = stability.MatrixFamily(members)
    result = {"jsr_upper_bound": stability.jsr_upper_bound(family, args.depth)}
    cert = stability.common_lyapunov(family)
    result["common_lyapunov"] = bool(cert)
    if cert:
        result["lambda"] = cert.lam
        result["V"] = cert.V.tolist()
    print(json.dumps(result))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-design", description="Adaptive optimal input design toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, config=True, out=True):
        p = sub.add_parser(name, help=help_)
        if config:
            p.add_argument("--config", help="experiment config JSON (defaults to the ARARX example)")
            p.add_argument("--seed", type=int)
            p.add_argument("--N", type=int, help="number of steps")
        if out:
            p.add_argument("--out", default=".", help="output directory")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "simulate the true system under white input")
    p = add("design", cmd_design, "solve the input design program")
    p.add_argument("--theta", help="comma-separated parameter vector (default: true parameters)")
    p.add_argument("--sigma2", type=float, help="noise variance estimate")
    p = add("factorize", cmd_factorize, "minimum-phase factor of an autocorrelation", config=False)
    p.add_argument("--r", required=True, help="comma-separated r_0..r_m")
    for name, func in (("run-adaptive", cmd_run_adaptive), ("run-baseline", cmd_run_baseline)):
        p = add(name, func, f"{name.split('-')[1]} closed-loop experiment with figure CSVs")
        p.add_argument("--runs", type=int)
    p = add("monte-carlo", cmd_monte_carlo, "variance of the L2-gain estimate over seeded runs")
    p.add_argument("--runs", type=int)
    p.add_argument("--mode", choices=harness.MODES)
    p.add_argument("--grid", help="comma-separated experiment lengths for fig6_variance.csv")
    p = add("analyze", cmd_analyze, "information matrix, P* and the associated ODE")
    p.add_argument("--ode-horizon", type=float, default=0.0)
    p.add_argument("--ode-step", type=float, default=0.01)
    p = add("check-stability", cmd_check_stability, "JSR bound and common Lyapunov test", config=False, out=False)
    p.add_argument("--poly", action="append", help="comma-separated monic coefficients c_1..c_p (repeatable)")
    p.add_argument("--matrices", help="JSON file with a list of square matrices")
    p.add_argument("--depth", type=int, default=6)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
