"""Recursive prediction-error estimation with resetting.

The Newton-type recursion

    theta_- = theta_n - R_n^{-1} psi_{n+1} eps_{n+1} / (n+1)
    R_-     = R_n + (psi_{n+1} psi_{n+1}^T - R_n) / (n+1)

is accepted when (theta_-, R_-) stays inside the truncation domains and
otherwise reset to (theta_0, R_0).  ``psi`` is either the exact gradient of
the prediction error (``gradient="pem"``) or the negative pseudo-linear
regressor ``[y~; -u~; w~; -eps~; v~]`` (``gradient="regressor"``).

All state arrays carry a leading run axis so that independent Monte Carlo
runs advance together; a single run uses a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .errors import NumericalError, ShapeError
from .lti import ModelParams, Orders, PredictorLags, _dot, _push

GRADIENTS = ("pem", "regressor")


def squared_norm(theta: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(theta) ** 2, axis=-1)


@dataclass
class TruncationDomains:
    """D_theta = {g(theta) <= K, theta_C in D_C, theta_F in D_F} and D_R = [kappa1, kappa2].

    ``D_C``/``D_F`` are vertex arrays of shape (n_vertices, p).  When left
    as None for a nonzero order, the domain is the set of stable
    polynomials instead.  With ``expanding`` the level is K_j = K_theta + j.
    """

    K_theta: float = 10.0
    expanding: bool = True
    kappa1: float = 1e-6
    kappa2: float = 1e10
    g: Callable[[np.ndarray], np.ndarray] = squared_norm
    D_C: np.ndarray | None = None
    D_F: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.kappa1 < self.kappa2:
            raise ValueError("need 0 < kappa1 < kappa2")

    def K(self, level) -> np.ndarray:
        level = np.asarray(level, dtype=float)
        return self.K_theta + level if self.expanding else np.full(level.shape, self.K_theta)


def _in_polytope(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    nv = vertices.shape[0]
    A_eq = np.vstack([vertices.T, np.ones((1, nv))])
    out = np.empty(points.shape[0], bool)
    for i, p in enumerate(points):
        res = linprog(np.zeros(nv), A_eq=A_eq, b_eq=np.append(p, 1.0), bounds=(0, None), method="highs")
        out[i] = res.status == 0
    return out


def _stable_batch(coeffs: np.ndarray) -> np.ndarray:
    if coeffs.shape[-1] == 0:
        return np.ones(coeffs.shape[:-1], bool)
    p = coeffs.shape[-1]
    comp = np.zeros(coeffs.shape[:-1] + (p, p))
    comp[..., 0, :] = -coeffs
    comp[..., 1:, :-1] = np.eye(p - 1)
    return np.max(np.abs(np.linalg.eigvals(comp)), axis=-1) < 1.0


def in_domain(theta: ModelParams, R, domains: TruncationDomains, K_level=0):
    """Membership of (theta, R) in D_theta x D_R with a reason per run.

    Returns ``(ok, reasons)``; both are scalars for unbatched input.
    """
    th = np.atleast_2d(theta.theta)
    Rm = np.asarray(R, dtype=float).reshape((-1,) + np.shape(R)[-2:])
    params = theta.with_theta(th)
    K = np.broadcast_to(domains.K(K_level), th.shape[:1])
    checks = [(domains.g(th) > K, "g exceeds K")]
    for name, vertices in (("c", domains.D_C), ("f", domains.D_F)):
        part = getattr(params, name)
        if part.shape[-1] == 0:
            continue
        inside = _stable_batch(part) if vertices is None else _in_polytope(part, vertices)
        checks.append((~inside, f"theta_{name.upper()} outside D_{name.upper()}"))
    with np.errstate(invalid="ignore"):
        ev = np.linalg.eigvalsh(0.5 * (Rm + np.swapaxes(Rm, -1, -2)))
    checks.append((~(ev[:, 0] >= domains.kappa1), "R below kappa1"))
    checks.append((~(ev[:, -1] <= domains.kappa2), "R above kappa2"))
    reasons = np.full(th.shape[0], "ok", dtype=object)
    for bad, why in reversed(checks):
        reasons[bad] = why
    ok = reasons == "ok"
    if theta.theta.ndim == 1:
        return bool(ok[0]), str(reasons[0])
    return ok, reasons


# --------------------------------------------------------------------------
# gradient filters


def _polymul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = np.zeros(p.shape[:-1] + (p.shape[-1] + q.shape[-1] - 1,))
    for j in range(q.shape[-1]):
        out[..., j : j + p.shape[-1]] += p * q[..., j : j + 1]
    return out


def _monic(c: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ones(c.shape[:-1] + (1,)), c], axis=-1)


@dataclass
class _Filter:
    """Time-varying filter xf = num/den x with input and output histories."""

    x_hist: np.ndarray
    y_hist: np.ndarray
    window: int

    def step(self, x, num, den):
        """Absorb x_n; ``num``/``den`` are full coefficient arrays (den monic)."""
        acc = num[..., 0] * x
        if num.shape[-1] > 1:
            acc = acc + _dot(num[..., 1:], self.x_hist[..., : num.shape[-1] - 1])
        if den.shape[-1] > 1:
            acc = acc - _dot(den[..., 1:], self.y_hist[..., : den.shape[-1] - 1])
        return _Filter(_push(self.x_hist, x), _push(self.y_hist, acc), self.window)

    @property
    def lags(self):
        return self.y_hist[..., : self.window]


@dataclass
class GradientFilters:
    """Filters turning y, u, w, eps, v into the exact prediction-error gradient."""

    y: _Filter
    u: _Filter
    w: _Filter
    eps: _Filter
    v: _Filter

    @classmethod
    def zeros(cls, orders: Orders, batch: int) -> "GradientFilters":
        o = Orders(*orders)
        n_cf = o.pc + o.pf
        z = lambda k: np.zeros((batch, k))
        mk = lambda nin, nout, win: _Filter(z(nin), z(max(nout, win)), win)
        return cls(
            y=mk(o.pd, o.pc, o.pa),
            u=mk(o.pd, n_cf, o.pb),
            w=mk(o.pd, n_cf, o.pf),
            eps=mk(0, o.pc, o.pc),
            v=mk(0, o.pc, o.pd),
        )

    def step(self, theta: ModelParams, y, u, w, v, eps) -> "GradientFilters":
        C, F, D = _monic(theta.c), _monic(theta.f), _monic(theta.d)
        CF = _polymul(C, F)
        one = np.ones(C.shape[:-1] + (1,))
        return GradientFilters(
            y=self.y.step(y, D, C),
            u=self.u.step(u, D, CF),
            w=self.w.step(w, D, CF),
            eps=self.eps.step(eps, one, C),
            v=self.v.step(v, one, C),
        )

    def copy(self) -> "GradientFilters":
        return GradientFilters(
            *(_Filter(f.x_hist.copy(), f.y_hist.copy(), f.window) for f in (self.y, self.u, self.w, self.eps, self.v))
        )

    def psi(self) -> np.ndarray:
        return np.concatenate([self.y.lags, -self.u.lags, self.w.lags, -self.eps.lags, self.v.lags], axis=-1)


# --------------------------------------------------------------------------
# estimator state


@dataclass
class EstimatorOptions:
    theta0: np.ndarray
    R0: np.ndarray
    gradient: str = "pem"
    clear_on_reset: bool = True

    def __post_init__(self):
        if self.gradient not in GRADIENTS:
            raise ValueError(f"gradient must be one of {GRADIENTS}")
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.R0 = np.asarray(self.R0, dtype=float)


@dataclass
class EstimatorState:
    """(theta_n, R_n, sigma2_n, K level, reset count) for a batch of runs.

    ``lags`` (and ``grad`` in PEM mode) hold the regressor history through
    time n-1; the samples (y_n, u_n) wait in ``y_pending``/``u_pending``
    until the next step absorbs them with theta_n.
    """

    theta: ModelParams
    R: np.ndarray
    sigma2_hat: np.ndarray
    n: int
    K_level: np.ndarray
    resets: np.ndarray
    lags: PredictorLags
    grad: GradientFilters | None
    y_pending: np.ndarray
    u_pending: np.ndarray
    options: EstimatorOptions
    expansion_due: np.ndarray = field(default=None)
    last_reason: np.ndarray = field(default=None)

    @classmethod
    def initial(cls, orders: Orders, options: EstimatorOptions, batch: int = 1, y0=0.0, u0=0.0):
        o = Orders(*orders)
        p = o.total
        if options.theta0.shape != (p,) or options.R0.shape != (p, p):
            raise ShapeError("theta0/R0 do not match the model orders")
        return cls(
            theta=ModelParams(o, np.tile(options.theta0, (batch, 1))),
            R=np.tile(options.R0, (batch, 1, 1)),
            sigma2_hat=np.zeros(batch),
            n=0,
            K_level=np.zeros(batch, int),
            resets=np.zeros(batch, int),
            lags=PredictorLags.zeros(o, (batch,)),
            grad=GradientFilters.zeros(o, batch) if options.gradient == "pem" else None,
            y_pending=np.broadcast_to(np.asarray(y0, float), (batch,)).copy(),
            u_pending=np.broadcast_to(np.asarray(u0, float), (batch,)).copy(),
            options=options,
            expansion_due=np.zeros(batch, bool),
            last_reason=np.full(batch, "ok", dtype=object),
        )

    @property
    def batch(self) -> int:
        return self.R.shape[0]

    def copy(self) -> "EstimatorState":
        return replace(
            self,
            theta=ModelParams(self.theta.orders, self.theta.theta.copy()),
            R=self.R.copy(),
            lags=self.lags.copy(),
            grad=None if self.grad is None else self.grad.copy(),
            sigma2_hat=self.sigma2_hat.copy(),
            K_level=self.K_level.copy(),
            resets=self.resets.copy(),
            y_pending=self.y_pending.copy(),
            u_pending=self.u_pending.copy(),
            expansion_due=self.expansion_due.copy(),
            last_reason=self.last_reason.copy(),
        )


def _reset_rows(state: EstimatorState, mask: np.ndarray) -> None:
    if not mask.any():
        return
    opts = state.options
    state.theta.theta[mask] = opts.theta0
    state.R[mask] = opts.R0
    if opts.clear_on_reset:
        for name in ("u", "y", "w", "v", "eps"):
            getattr(state.lags, name)[mask] = 0.0
        if state.grad is not None:
            for name in ("y", "u", "w", "eps", "v"):
                filt = getattr(state.grad, name)
                filt.x_hist[mask] = 0.0
                filt.y_hist[mask] = 0.0


def expand_truncation(state: EstimatorState, mask=None) -> EstimatorState:
    """Raise K_j -> K_{j+1} and reset the runs whose last reset came from g.

    Runs without a pending g-reset are left untouched.
    """
    due = state.expansion_due if mask is None else np.asarray(mask, bool) & state.expansion_due
    if not due.any():
        return state
    state = state.copy()
    state.K_level[due] += 1
    _reset_rows(state, due)
    state.expansion_due[due] = False
    return state


@dataclass
class StepRecord:
    n: int
    theta: np.ndarray
    R_diag: np.ndarray
    eps: np.ndarray
    reset: np.ndarray
    reason: np.ndarray
    sigma2_hat: np.ndarray


def rpem_step(
    state: EstimatorState,
    y_next,
    u_next,
    domains: TruncationDomains,
    trace: Callable[[StepRecord], None] | None = None,
) -> EstimatorState:
    """Advance every run from n to n+1 using the new samples (y_{n+1}, u_{n+1})."""
    y_next = np.broadcast_to(np.asarray(y_next, float), (state.batch,))
    u_next = np.broadcast_to(np.asarray(u_next, float), (state.batch,))
    theta = state.theta
    opts = state.options
    n = state.n

    lags, (w, v, eps_n) = state.lags.push(theta, state.y_pending, state.u_pending)
    grad = None
    if state.grad is not None:
        grad = state.grad.step(theta, state.y_pending, state.u_pending, w, v, eps_n)
    eps_theta = lags.eps_theta()
    eps = y_next + _dot(theta.theta, eps_theta)
    psi = grad.psi() if grad is not None else eps_theta

    numerical = np.zeros(state.batch, bool)
    try:
        step = np.linalg.solve(state.R, (psi * eps[:, None])[..., None])[..., 0]
    except np.linalg.LinAlgError:
        step = np.zeros_like(psi)
        for i in range(state.batch):
            try:
                step[i] = np.linalg.solve(state.R[i], psi[i] * eps[i])
            except np.linalg.LinAlgError:
                numerical[i] = True
    theta_minus = theta.theta - step / (n + 1)
    R_minus = state.R + (np.einsum("bi,bj->bij", psi, psi) - state.R) / (n + 1)
    numerical |= ~np.isfinite(theta_minus).all(-1) | ~np.isfinite(R_minus).all((-1, -2))

    ok, reasons = in_domain(theta.with_theta(np.nan_to_num(theta_minus)), np.nan_to_num(R_minus), domains, state.K_level)
    reasons = np.where(numerical, "numerical", reasons)
    ok = ok & ~numerical
    reset = ~ok

    new = EstimatorState(
        theta=theta.with_theta(np.where(ok[:, None], theta_minus, opts.theta0)),
        R=np.where(ok[:, None, None], R_minus, opts.R0),
        sigma2_hat=state.sigma2_hat + (eps**2 - state.sigma2_hat) / (n + 1),
        n=n + 1,
        K_level=state.K_level.copy(),
        resets=state.resets + reset,
        lags=lags,
        grad=grad,
        y_pending=y_next.copy(),
        u_pending=u_next.copy(),
        options=opts,
        expansion_due=reset & (reasons == "g exceeds K") & domains.expanding,
        last_reason=reasons,
    )
    _reset_rows(new, reset)
    new = expand_truncation(new)
    if trace is not None:
        trace(StepRecord(n + 1, new.theta.theta, np.diagonal(new.R, axis1=-2, axis2=-1), eps, reset, reasons, new.sigma2_hat))
    return new


def run_estimator(
    orders: Orders,
    y,
    u,
    domains: TruncationDomains,
    options: EstimatorOptions,
    trace: Callable[[StepRecord], None] | None = None,
) -> EstimatorState:
    """Run the recursion over recorded data of shape (N+1,) or (N+1, batch)."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.shape != u.shape:
        raise ShapeError("y and u must have equal shapes")
    if y.ndim == 1:
        y, u = y[:, None], u[:, None]
    state = EstimatorState.initial(orders, options, y.shape[1], y[0], u[0])
    for k in range(1, y.shape[0]):
        state = rpem_step(state, y[k], u[k], domains, trace)
    return state


__all__ = [
    "TruncationDomains",
    "EstimatorOptions",
    "EstimatorState",
    "GradientFilters",
    "StepRecord",
    "in_domain",
    "rpem_step",
    "expand_truncation",
    "run_estimator",
    "squared_norm",
    "NumericalError",
]
