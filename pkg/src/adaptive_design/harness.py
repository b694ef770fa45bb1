"""Closed-loop adaptive design experiments and Monte Carlo studies.

Runs of one experiment advance in lockstep: the true system, the input
generator and the estimator all carry a leading run axis, and the design
programs of all runs are solved as one batched SDP per step.

Random streams: ``SeedSequence(seed).spawn(runs)`` gives one child per
run index, and each child spawns two grandchildren driving the noise e_n
and the generator excitation s_n.  Run i is therefore reproducible on its
own regardless of how many runs are requested.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import design as dsg
from .analysis import asymptotic_covariance, l2_gain_sq
from .errors import NumericalError, ShapeError
from .estimator import EstimatorOptions, EstimatorState, StepRecord, TruncationDomains, rpem_step
from .lti import ModelParams, to_state_space

MODES = ("adaptive", "optimal-baseline", "fixed-white")

DEFAULT_MODEL = {"a": [], "b": [0.9, 0.6, 0.2, 0.3], "f": [], "c": [], "d": [-1.2, 0.75, -0.2]}


class RunAborted(NumericalError):
    """Numerical overflow during a run; ``trace`` holds the steps completed."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: dict(DEFAULT_MODEL))
    sigma2_true: float = 0.1
    design: dsg.DesignConfig = field(default_factory=dsg.DesignConfig)
    K_theta: float = 10.0
    expanding: bool = True
    kappa1: float = 1e-6
    kappa2: float = 1e10
    theta0: list | None = None
    R0_scale: float = 1.0
    gradient: str = "pem"
    clear_on_reset: bool = True
    seed: int = 0
    N: int = 4000
    redesign_every: int = 1
    mode: str = "adaptive"
    white_power: float = 1.0
    runs: int = 1

    def __post_init__(self):
        if isinstance(self.design, dict):
            self.design = dsg.DesignConfig(**self.design)
        if self.N < 1 or self.redesign_every < 1 or self.runs < 1:
            raise ValueError("N, redesign_every and runs must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.sigma2_true < 0 or self.white_power <= 0:
            raise ValueError("sigma2_true must be >= 0 and white_power > 0")
        params = self.params
        if self.theta0 is not None and len(self.theta0) != params.p:
            raise ShapeError("theta0 length does not match the model")

    @property
    def params(self) -> ModelParams:
        m = self.model
        return ModelParams.from_polys(*(m.get(k, []) for k in "abfcd"))

    @property
    def domains(self) -> TruncationDomains:
        return TruncationDomains(self.K_theta, self.expanding, self.kappa1, self.kappa2)

    @property
    def estimator_options(self) -> EstimatorOptions:
        p = self.params.p
        theta0 = np.zeros(p) if self.theta0 is None else np.asarray(self.theta0, float)
        return EstimatorOptions(theta0, self.R0_scale * np.eye(p), self.gradient, self.clear_on_reset)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["design"] = asdict(self.design)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class RunTrace:
    """Per-step data of a batch of runs; arrays are (steps, runs, ...)."""

    theta: np.ndarray
    eps: np.ndarray
    r0: np.ndarray
    reset: np.ndarray
    sigma2_hat: np.ndarray
    u: np.ndarray
    resets_final: np.ndarray
    wall_time: float
    mode: str

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.theta.shape[0])

    @property
    def theta_N(self) -> np.ndarray:
        return self.theta[-1]

    def summary(self, params: ModelParams) -> dict:
        th = params.with_theta(self.theta_N)
        return {
            "mode": self.mode,
            "runs": int(self.theta.shape[1]),
            "N": int(self.theta.shape[0] - 1),
            "theta_N": self.theta_N.tolist(),
            "l2_gain_sq": np.atleast_1d(l2_gain_sq(th.b)).tolist(),
            "resets": self.resets_final.tolist(),
            "wall_time_s": self.wall_time,
        }


def _streams(seed: int, runs: int, N: int, sigma2: float):
    e = np.empty((N + 1, runs))
    s = np.empty((N + 1, runs))
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(runs)):
        se, ss = child.spawn(2)
        e[:, i] = np.sqrt(sigma2) * np.random.default_rng(se).standard_normal(N + 1)
        s[:, i] = np.random.default_rng(ss).standard_normal(N + 1)
    return e, s


def _generator(r: np.ndarray, m: int):
    f, mt, _ = dsg.factorize_batch(r)
    return dsg.realize_filter(dsg.InputFilter(f, mt), m)


def simulate_experiment(cfg: ExperimentConfig, runs: int | None = None, trace_hook=None) -> RunTrace:
    """Algorithm loop for ``runs`` seeded runs of ``cfg`` (default cfg.runs)."""
    runs = cfg.runs if runs is None else runs
    params = cfg.params
    m = cfg.design.m
    N = cfg.N
    plant = to_state_space(params)
    e, s = _streams(cfg.seed, runs, N, cfg.sigma2_true)
    domains = cfg.domains

    if cfg.mode == "fixed-white":
        r_fixed = dsg.Autocorrelation.white(cfg.white_power, m).r
    elif cfg.mode == "optimal-baseline":
        res = dsg.design_input(params, cfg.sigma2_true, cfg.design)
        r_fixed = np.asarray(res.r)
    else:
        r_fixed = None

    def redesign(state: EstimatorState | None):
        if r_fixed is not None:
            return np.tile(r_fixed, (runs, 1))
        theta = params.with_theta(np.tile(cfg.estimator_options.theta0, (runs, 1))) if state is None else state.theta
        sigma2 = np.zeros(runs) if state is None else state.sigma2_hat
        return dsg.design_input(theta, sigma2, cfg.design).r

    start = time.perf_counter()
    r = redesign(None)
    gen = _generator(r, m)
    xi = np.zeros((runs, plant.n_states))
    z = np.zeros((runs, m))
    p = params.p
    thetas = np.empty((N + 1, runs, p))
    eps_tr = np.zeros((N + 1, runs))
    r0_tr = np.empty((N + 1, runs))
    reset_tr = np.zeros((N + 1, runs), bool)
    s2_tr = np.zeros((N + 1, runs))
    u_tr = np.empty((N + 1, runs))
    state = None
    records: list[StepRecord] = []

    def keep(rec: StepRecord):
        records.append(rec)
        if trace_hook is not None:
            trace_hook(rec)

    def partial(n_done):
        return RunTrace(thetas[:n_done], eps_tr[:n_done], r0_tr[:n_done], reset_tr[:n_done], s2_tr[:n_done],
                        u_tr[:n_done], np.zeros(runs, int) if state is None else state.resets,
                        time.perf_counter() - start, cfg.mode)

    for n in range(N + 1):
        # z holds (s_{n-1}, ..., s_{n-m}), so a new filter reuses the past excitation
        u = np.einsum("bj,bj->b", gen.C[:, 0, :], z) + gen.D[:, 0, 0] * s[n]
        y = (xi @ plant.C[0]) + e[n]
        if not (np.isfinite(u).all() and np.isfinite(y).all()):
            raise RunAborted(f"non-finite signal at step {n}", partial(n))
        xi = xi @ plant.A.T + np.outer(u, plant.B[:, 0]) + np.outer(e[n], plant.B[:, 1])
        if m:
            z = np.concatenate([s[n][:, None], z[:, :-1]], axis=1)
        u_tr[n] = u
        r0_tr[n] = r[:, 0]
        if state is None:
            state = EstimatorState.initial(params.orders, cfg.estimator_options, runs, y, u)
        else:
            records.clear()
            state = rpem_step(state, y, u, domains, keep)
            eps_tr[n] = records[-1].eps
            reset_tr[n] = records[-1].reset
            if not np.isfinite(state.sigma2_hat).all():
                raise RunAborted(f"noise variance estimate overflowed at step {n}", partial(n))
        thetas[n] = state.theta.theta
        s2_tr[n] = state.sigma2_hat
        if n < N and r_fixed is None and n % cfg.redesign_every == 0:
            r = redesign(state)
            gen = _generator(r, m)
    return RunTrace(thetas, eps_tr, r0_tr, reset_tr, s2_tr, u_tr, state.resets.copy(),
                    time.perf_counter() - start, cfg.mode)


def run_adaptive(cfg: ExperimentConfig, runs: int | None = None, trace_hook=None) -> RunTrace:
    return simulate_experiment(_with_mode(cfg, "adaptive"), runs, trace_hook)


def run_optimal_baseline(cfg: ExperimentConfig, runs: int | None = None, trace_hook=None) -> RunTrace:
    return simulate_experiment(_with_mode(cfg, "optimal-baseline"), runs, trace_hook)


def run_fixed_white(cfg: ExperimentConfig, runs: int | None = None, trace_hook=None) -> RunTrace:
    return simulate_experiment(_with_mode(cfg, "fixed-white"), runs, trace_hook)


def _with_mode(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    d = cfg.to_dict()
    d["mode"] = mode
    return ExperimentConfig.from_dict(d)


@dataclass
class MonteCarloSummary:
    mode: str
    runs: int
    N: int
    l2_gain_sq: np.ndarray
    variance: float
    theta_N: np.ndarray
    sqrtN_cov: np.ndarray
    P_star: np.ndarray | None
    sup_error: np.ndarray
    trace: RunTrace = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "runs": self.runs,
            "N": self.N,
            "variance_l2_gain_sq": self.variance,
            "mean_l2_gain_sq": float(np.mean(self.l2_gain_sq)),
            "fraction_sup_error_below_0.1": float(np.mean(self.sup_error < 0.1)),
            "sqrtN_cov": self.sqrtN_cov.tolist(),
            "P_star": None if self.P_star is None else self.P_star.tolist(),
            "wall_time_s": self.trace.wall_time,
        }


def monte_carlo(cfg: ExperimentConfig, runs: int, trace: RunTrace | None = None) -> MonteCarloSummary:
    """Final-estimate statistics across ``runs`` independently seeded runs."""
    if runs < 2:
        raise ValueError("monte_carlo needs at least two runs")
    params = cfg.params
    tr = trace if trace is not None else simulate_experiment(cfg, runs)
    thN = tr.theta_N
    gains = np.atleast_1d(l2_gain_sq(params.with_theta(thN).b))
    err = thN - params.theta
    cov = cfg.N * np.atleast_2d(np.cov(err.T, ddof=1))
    P = None
    if cfg.sigma2_true > 0 and not (params.orders.pa or params.orders.pf or params.orders.pc):
        r_star = dsg.design_input(params, cfg.sigma2_true, cfg.design).r if cfg.mode != "fixed-white" \
            else dsg.Autocorrelation.white(cfg.white_power, cfg.design.m).r
        P = asymptotic_covariance(params, dsg.Autocorrelation(r_star), cfg.sigma2_true, gradient=cfg.gradient)
    return MonteCarloSummary(
        mode=cfg.mode,
        runs=runs,
        N=cfg.N,
        l2_gain_sq=gains,
        variance=float(np.var(gains, ddof=1)),
        theta_N=thN,
        sqrtN_cov=cov,
        P_star=P,
        sup_error=np.max(np.abs(err), axis=-1),
        trace=tr,
    )


# --------------------------------------------------------------------------
# figure data


def write_figure_csvs(out_dir, trace: RunTrace, params: ModelParams, run: int = 0) -> list[Path]:
    """fig1_thetaB.csv, fig2_thetaD_sigma.csv and fig5_r0.csv for one run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sl = params.orders.slices()
    th = trace.theta[:, run]
    files = []

    def write(name, header, rows):
        path = out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        files.append(path)

    pb, pd = params.orders.pb, params.orders.pd
    write("fig1_thetaB.csv", ["n"] + [f"b{i + 1}" for i in range(pb)],
          ([n, *th[n, sl["b"]]] for n in range(len(th))))
    write("fig2_thetaD_sigma.csv", ["n"] + [f"d{i + 1}" for i in range(pd)] + ["sigma2_hat"],
          ([n, *th[n, sl["d"]], trace.sigma2_hat[n, run]] for n in range(len(th))))
    write("fig5_r0.csv", ["n", "r0"], ([n, trace.r0[n, run]] for n in range(len(th))))
    return files


def variance_vs_N(cfg: ExperimentConfig, runs: int, grid_N) -> list[dict]:
    """Var |G_N|_2^2 across runs at each N of ``grid_N`` (one simulation of max N)."""
    grid_N = sorted(int(n) for n in grid_N)
    d = cfg.to_dict()
    d["N"] = grid_N[-1]
    tr = simulate_experiment(ExperimentConfig.from_dict(d), runs)
    params = cfg.params
    rows = []
    for n in grid_N:
        gains = np.atleast_1d(l2_gain_sq(params.with_theta(tr.theta[n]).b))
        rows.append({"mode": cfg.mode, "runs": runs, "N": n, "variance": float(np.var(gains, ddof=1))})
    return rows


def write_variance_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["mode", "runs", "N", "variance"])
        w.writeheader()
        w.writerows(rows)


__all__ = [
    "ExperimentConfig",
    "RunTrace",
    "RunAborted",
    "MonteCarloSummary",
    "simulate_experiment",
    "run_adaptive",
    "run_optimal_baseline",
    "run_fixed_white",
    "monte_carlo",
    "write_figure_csvs",
    "variance_vs_N",
    "write_variance_csv",
    "MODES",
]
