"""Optimal input design over FIR autocorrelations.

The decision vector is x = (r_0, ..., r_m, vech(Q)) where r is the input
autocorrelation and Q the auxiliary matrix of the positive-real lemma
certifying that the spectrum is nonnegative.  Optimal spectra are
converted to minimum-phase FIR filters and realized as shift-register
generators u_n = D_z s_n + C_z z_n.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import sdp
from .errors import NotPSDSpectrum, OrderError, ShapeError, BoundarySpectrum, OrderMismatchWarning
from .lti import ModelParams, PolynomialCoeffs, StateSpace

EPS_R = 1e-9
ACCURACY_CORNER_CAP = 1e12


@dataclass(frozen=True)
class Autocorrelation:
    """Lags r_0..r_m; may carry leading batch dimensions."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim == 0 or r.shape[-1] < 1:
            raise ShapeError("autocorrelation needs at least r_0")
        object.__setattr__(self, "r", r)

    @property
    def m(self) -> int:
        return self.r.shape[-1] - 1

    def lag(self, tau) -> np.ndarray:
        """r_tau with r_{-tau} = r_tau and zero beyond m."""
        tau = abs(int(tau))
        return self.r[..., tau] if tau <= self.m else np.zeros(self.r.shape[:-1])

    @classmethod
    def white(cls, power: float, m: int) -> "Autocorrelation":
        r = np.zeros(m + 1)
        r[0] = power
        return cls(r)


@dataclass(frozen=True)
class DesignConfig:
    gamma: float = 1e-4
    N: int = 4000
    r_min: float = 1e-3
    r_max: float = 5.0
    beta_K: float = 1e-3
    beta_R: float = 1e-3
    beta_D: float = 1e-6
    m: int = 3
    information: str = "toeplitz"

    def __post_init__(self):
        if not 0 < self.r_min <= self.r_max:
            raise ValueError("need 0 < r_min <= r_max")
        if min(self.gamma, self.N, self.beta_K, self.beta_R, self.beta_D) <= 0:
            raise ValueError("gamma, N and the margins must be positive")
        if self.m < 0:
            raise ValueError("filter order m must be nonnegative")
        if self.information not in ("toeplitz", "filtered"):
            raise ValueError("information must be 'toeplitz' or 'filtered'")


@dataclass(frozen=True)
class InputFilter:
    """FIR coefficients f_0..f_m (batchable) and effective order m_tau."""

    f: np.ndarray
    m_tau: np.ndarray | int

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))

    def autocorrelation(self) -> Autocorrelation:
        f = self.f
        m = f.shape[-1] - 1
        r = np.stack([np.einsum("...k,...k->...", f[..., : m + 1 - t], f[..., t:]) for t in range(m + 1)], -1)
        return Autocorrelation(r)


# --------------------------------------------------------------------------
# matrix building blocks


def _toeplitz_basis(size: int, m: int) -> np.ndarray:
    """T[tau] is the symmetric Toeplitz pattern of lag tau (tau = 0..m)."""
    T = np.zeros((m + 1, size, size))
    for tau in range(min(m, size - 1) + 1):
        T[tau] = np.eye(size, k=tau) + (np.eye(size, k=-tau) if tau else 0)
    return T


def toeplitz(r: Autocorrelation, size: int | None = None) -> np.ndarray:
    """Symmetric Toeplitz matrix with first row r (zero-padded or truncated to ``size``)."""
    size = r.m + 1 if size is None else size
    return np.einsum("...t,tij->...ij", r.r, _toeplitz_basis(size, r.m))


def _shift(m: int) -> np.ndarray:
    A = np.zeros((m, m))
    if m > 1:
        A[1:, :-1] = np.eye(m - 1)
    return A


def kyp_block(r: Autocorrelation, Q) -> np.ndarray:
    """Positive-real-lemma block for the FIR spectrum with lags r.

    Uses A_u the down-shift, B_u = e_1, C_u = (r_1..r_m), D_u = r_0 / 2.
    """
    Q = np.asarray(Q, dtype=float)
    m = r.m
    if Q.shape[-2:] != (m, m):
        raise ShapeError(f"Q must be {m}x{m}")
    A = _shift(m)
    B = np.zeros((m, 1))
    if m:
        B[0, 0] = 1.0
    Cu = r.r[..., None, 1:]
    Du = r.r[..., None, None, 0] / 2
    top_left = Q - A.T @ Q @ A
    top_right = -A.T @ Q @ B + np.swapaxes(Cu, -1, -2)
    bottom = -B.T @ Q @ B + 2 * Du
    return np.concatenate(
        [
            np.concatenate([top_left, top_right], axis=-1),
            np.concatenate([np.swapaxes(top_right, -1, -2), bottom], axis=-1),
        ],
        axis=-2,
    )


def rd_matrix(theta_D: PolynomialCoeffs | np.ndarray, r: Autocorrelation, p_b: int) -> np.ndarray:
    """(R_D)_{k,l} = sum_j d_j r_{j+l-k} with k, l = 1..p_b."""
    d = theta_D.coeffs if isinstance(theta_D, PolynomialCoeffs) else np.asarray(theta_D, dtype=float)
    return np.einsum("...t,...tkl->...kl", r.r, _rd_basis(d, p_b, r.m))


def _rd_basis(d: np.ndarray, p_b: int, m: int) -> np.ndarray:
    """Coefficient of r_tau in R_D, shape (..., m+1, p_b, p_b)."""
    out = np.zeros(d.shape[:-1] + (m + 1, p_b, p_b))
    for j in range(1, d.shape[-1] + 1):
        for k in range(p_b):
            for l in range(p_b):
                tau = abs(j + l - k)
                if tau <= m:
                    out[..., tau, k, l] += d[..., j - 1]
    return out


def _filtered_basis(d: np.ndarray, p_b: int, m: int) -> np.ndarray:
    """Toeplitz basis of the D(q)-filtered autocorrelation, shape (..., m+1, p_b, p_b).

    The filtered lag k is sum_{i,j} d_i d_j r_{k+i-j} with d_0 = 1.
    """
    dd = np.concatenate([np.ones(d.shape[:-1] + (1,)), d], axis=-1)
    P = dd.shape[-1]
    coef = np.zeros(d.shape[:-1] + (p_b, m + 1))
    for k in range(p_b):
        for i in range(P):
            for j in range(P):
                tau = abs(k + i - j)
                if tau <= m:
                    coef[..., k, tau] += dd[..., i] * dd[..., j]
    T = _toeplitz_basis(p_b, p_b - 1)
    return np.einsum("...kt,kij->...tij", coef, T)


def spectrum_eval(r: Autocorrelation, omega) -> np.ndarray:
    """Psi_u(e^{i omega}) = r_0 + 2 sum_tau r_tau cos(omega tau)."""
    omega = np.asarray(omega, dtype=float)
    tau = np.arange(r.m + 1)
    weights = np.where(tau == 0, 1.0, 2.0)
    cos = np.cos(omega.reshape(-1, 1) * tau)
    out = np.einsum("...t,wt->...w", r.r * weights, cos)
    return out.reshape(r.r.shape[:-1] + omega.shape)


# --------------------------------------------------------------------------
# design problem


def _vech_basis(m: int) -> np.ndarray:
    basis = []
    for i in range(m):
        for j in range(i, m):
            E = np.zeros((m, m))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return np.array(basis).reshape(-1, m, m)


def num_design_vars(m: int) -> int:
    return m + 1 + m * (m + 1) // 2


def unpack(x, m: int):
    """Split x into (Autocorrelation, Q)."""
    x = np.asarray(x, dtype=float)
    r = Autocorrelation(x[..., : m + 1])
    Q = np.einsum("...q,qij->...ij", x[..., m + 1 :], _vech_basis(m))
    return r, Q


DesignBuilder = Callable[[ModelParams, np.ndarray, DesignConfig], sdp.SdpProblem]


def ararx_design_problem(theta: ModelParams, sigma2_hat, cfg: DesignConfig) -> sdp.SdpProblem:
    """L2-gain accuracy design for A = F = C = 1 models (batchable over theta)."""
    o = theta.orders
    if o.pa or o.pf or o.pc:
        raise ShapeError("the L2-gain design needs p_a = p_f = p_c = 0")
    pb, m = o.pb, cfg.m
    if m != pb - 1:
        warnings.warn(
            f"filter order m={m} differs from p_b-1={pb - 1}; Toeplitz blocks use size p_b",
            OrderMismatchWarning,
            stacklevel=2,
        )
    bshape = theta.theta.shape[:-1]
    sigma2_hat = np.broadcast_to(np.asarray(sigma2_hat, dtype=float), bshape)
    nr = m + 1
    nq = m * (m + 1) // 2
    k = nr + nq
    thB, thD = theta.b, theta.d
    Tb = _toeplitz_basis(pb, m)

    def zeros(d):
        return np.zeros(bshape + (k + 1, d, d))

    # (i) accuracy: [[R_B(r), 2 theta_B], [2 theta_B^T, gamma N / sigma2]] >= 0
    if cfg.information == "filtered":
        info_basis = _filtered_basis(thD, pb, m)
    else:
        info_basis = np.broadcast_to(Tb, bshape + Tb.shape)
    acc = zeros(pb + 1)
    acc[..., 1 : nr + 1, :pb, :pb] = info_basis
    acc[..., 0, :pb, pb] = 2 * thB
    acc[..., 0, pb, :pb] = 2 * thB
    with np.errstate(divide="ignore"):
        corner = np.where(sigma2_hat > 0, cfg.gamma * cfg.N / np.where(sigma2_hat > 0, sigma2_hat, 1.0), np.inf)
    acc[..., 0, pb, pb] = np.minimum(corner, ACCURACY_CORNER_CAP)

    # (ii) KYP block >= beta_K I
    kyp = zeros(m + 1)
    kyp[..., 0, :, :] = -cfg.beta_K * np.eye(m + 1)
    kyp[..., 1, m, m] = 1.0
    for tau in range(1, m + 1):
        kyp[..., 1 + tau, tau - 1, m] = 1.0
        kyp[..., 1 + tau, m, tau - 1] = 1.0
    A = _shift(m)
    Bu = np.zeros((m, 1))
    if m:
        Bu[0, 0] = 1.0
    for q, E in enumerate(_vech_basis(m)):
        blk = np.zeros((m + 1, m + 1))
        blk[:m, :m] = E - A.T @ E @ A
        blk[:m, m:] = -A.T @ E @ Bu
        blk[m:, :m] = blk[:m, m:].T
        blk[m:, m:] = -Bu.T @ E @ Bu
        kyp[..., 1 + nr + q, :, :] = blk

    # (iii) Q >= 0
    qpos = zeros(m)
    qpos[..., 1 + nr :, :, :] = _vech_basis(m)

    # (iv) R_u(r) >= beta_R I
    rpos = zeros(pb)
    rpos[..., 0, :, :] = -cfg.beta_R * np.eye(pb)
    rpos[..., 1 : nr + 1, :, :] = Tb

    # (vi) R_u + (R_D + R_D^T)/2 >= beta_D I
    Rd = _rd_basis(thD, pb, m)
    uniq = zeros(pb)
    uniq[..., 0, :, :] = -cfg.beta_D * np.eye(pb)
    uniq[..., 1 : nr + 1, :, :] = Tb + 0.5 * (Rd + np.swapaxes(Rd, -1, -2))

    c = np.zeros(bshape + (k,))
    c[..., 0] = 1.0
    lower = np.full(bshape + (k,), -np.inf)
    upper = np.full(bshape + (k,), np.inf)
    lower[..., 0] = cfg.r_min
    upper[..., 0] = cfg.r_max
    return sdp.SdpProblem(
        c,
        [acc, kyp, qpos, rpos, uniq],
        lower=lower,
        upper=upper,
        names=["accuracy", "kyp", "q_psd", "toeplitz", "uniqueness"],
    )


def build_design_problem(
    theta: ModelParams,
    sigma2_hat,
    cfg: DesignConfig,
    builder: DesignBuilder | None = None,
) -> sdp.SdpProblem:
    """Design program at the estimate ``theta``; ``builder`` swaps in another cost."""
    return (builder or ararx_design_problem)(theta, sigma2_hat, cfg)


def fallback_autocorrelation(cfg: DesignConfig, batch_shape=()) -> np.ndarray:
    r = np.zeros(tuple(batch_shape) + (cfg.m + 1,))
    r[..., 0] = cfg.r_max
    return r


def white_start(cfg: DesignConfig, batch_shape=(), r0=None) -> np.ndarray:
    """White spectrum with a diagonal KYP multiplier, interior for all but the data-dependent blocks."""
    m = cfg.m
    x = np.zeros(tuple(batch_shape) + (num_design_vars(m),))
    if r0 is None:
        r0 = 0.5 * (cfg.r_min + cfg.r_max)
    r0 = np.broadcast_to(np.asarray(r0, dtype=float), tuple(batch_shape))[..., None]
    x[..., :1] = r0
    # Q = delta diag(m, ..., 1) gives Q - A^T Q A = delta I and corner r0 - m delta
    delta = r0 / (2 * max(m, 1))
    diag_pos = [i * m - i * (i - 1) // 2 for i in range(m)]
    for i, pos in enumerate(diag_pos):
        x[..., m + 1 + pos : m + 2 + pos] = delta * (m - i)
    return x


def feasible_white_start(prob: sdp.SdpProblem, cfg: DesignConfig, levels: int = 12) -> np.ndarray:
    """White start at the second-smallest strictly feasible power on a geometric grid.

    Problems with no feasible white level keep the mid-range start and go
    through Phase I.
    """
    bshape = prob.batch_shape
    grid = np.geomspace(max(cfg.r_min, 2 * max(cfg.m, 1) * cfg.beta_K) * 1.01, 0.99 * cfg.r_max, levels)
    ok = []
    for r0 in grid:
        x = white_start(cfg, bshape, r0)
        slack = np.min([np.linalg.eigvalsh(F)[..., 0] for F in prob.evaluate(x)], axis=0)
        inside = (x > prob.lower) & (x < prob.upper)
        ok.append((slack > 0) & inside.all(-1))
    ok = np.stack(ok, -1)
    first = np.argmax(ok, -1)
    choice = np.where(ok.any(-1), np.minimum(first + 1, levels - 1), -1)
    # step back to the first feasible level when the next one is not feasible
    nxt_ok = np.take_along_axis(ok, np.maximum(choice, 0)[..., None], -1)[..., 0]
    choice = np.where((choice >= 0) & ~nxt_ok, first, choice)
    r0 = np.where(choice >= 0, grid[np.maximum(choice, 0)], 0.5 * (cfg.r_min + cfg.r_max))
    return white_start(cfg, bshape, r0)


@dataclass
class DesignResult:
    r: np.ndarray
    x: np.ndarray
    status: np.ndarray | str
    fallback: np.ndarray | bool


def design_input(
    theta: ModelParams,
    sigma2_hat,
    cfg: DesignConfig,
    builder: DesignBuilder | None = None,
    opts: sdp.SdpOptions | None = None,
    x0=None,
) -> DesignResult:
    """Solve the design program, substituting (r_max, 0, ..., 0) when it fails."""
    prob = build_design_problem(theta, sigma2_hat, cfg, builder)
    if x0 is None:
        x0 = feasible_white_start(prob, cfg)
    sol = sdp.solve(prob, opts, x0=x0)
    ok = np.asarray(sol.status) == sdp.OPTIMAL
    fb = fallback_autocorrelation(cfg, prob.batch_shape)
    r = np.where(np.asarray(ok)[..., None], np.asarray(sol.x)[..., : cfg.m + 1], fb)
    if not prob.batch_shape:
        return DesignResult(r, sol.x, sol.status, not bool(ok))
    return DesignResult(r, sol.x, sol.status, ~ok)


# --------------------------------------------------------------------------
# spectral factorization and realization


def effective_order(r: np.ndarray, eps_r: float = EPS_R) -> np.ndarray:
    big = np.abs(r[..., 1:]) > eps_r
    idx = np.arange(1, r.shape[-1])
    return np.max(np.where(big, idx, 0), axis=-1, initial=0)


def _factor_fixed_order(r: np.ndarray, mt: int) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-phase factor of lags r_0..r_mt for a batch of shape (B, mt+1).

    Returns (f of shape (B, mt+1), selected roots of shape (B, mt)).
    """
    B = r.shape[0]
    if mt == 0:
        return np.sqrt(np.maximum(r[:, :1], 0.0)), np.zeros((B, 0))
    # z^mt Psi(z) as polynomial in descending powers: [r_mt .. r_1, r_0, r_1 .. r_mt]
    coeffs = np.concatenate([r[:, :0:-1], r], axis=-1)
    comp = np.zeros((B, 2 * mt, 2 * mt))
    comp[:, 0, :] = -coeffs[:, 1:] / coeffs[:, :1]
    comp[:, 1:, :-1] = np.eye(2 * mt - 1)
    roots = np.linalg.eigvals(comp)
    order = np.argsort(np.abs(roots), axis=-1, kind="stable")
    inside = np.take_along_axis(roots, order[:, :mt], axis=-1)
    g = np.ones((B, 1), dtype=complex)
    for j in range(mt):
        g = np.concatenate([g, np.zeros((B, 1))], axis=-1) - inside[:, j : j + 1] * np.concatenate(
            [np.zeros((B, 1)), g], axis=-1
        )
    g = g.real
    rho0 = np.sum(g * g, axis=-1)
    f = g * np.sqrt(np.maximum(r[:, 0], 0.0) / rho0)[:, None]
    return f, inside


def _refine(f: np.ndarray, r: np.ndarray, iters: int = 3) -> np.ndarray:
    """Newton polish of conv(f, reverse f) = r (Wilson's iteration)."""
    n = f.shape[-1]
    for _ in range(iters):
        res = np.stack([np.sum(f[:, : n - t] * f[:, t:], -1) for t in range(n)], -1) - r
        if np.max(np.abs(res)) < 1e-15 * max(1.0, np.max(np.abs(r))):
            break
        J = np.zeros(f.shape[:1] + (n, n))
        for t in range(n):
            for k in range(n - t):
                J[:, t, k] += f[:, k + t]
                J[:, t, k + t] += f[:, k]
        try:
            step = np.linalg.solve(J, res[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        cand = f - step
        new_res = np.stack([np.sum(cand[:, : n - t] * cand[:, t:], -1) for t in range(n)], -1) - r
        better = np.max(np.abs(new_res), -1) < np.max(np.abs(res), -1)
        f = np.where(better[:, None], cand, f)
    return f


def factorize_batch(r: np.ndarray, eps_r: float = EPS_R) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched minimum-phase factorization without validation.

    Returns (f of shape (B, m+1), m_tau (B,), max root modulus (B,)).
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    B, m1 = r.shape
    mt = effective_order(r, eps_r)
    f = np.zeros_like(r)
    rad = np.zeros(B)
    for order in np.unique(mt):
        idx = np.flatnonzero(mt == order)
        fi, roots = _factor_fixed_order(r[idx, : order + 1], int(order))
        if order:
            fi = _refine(fi, r[idx, : order + 1])
            rad[idx] = np.max(np.abs(roots), axis=-1)
        f[idx, : order + 1] = fi
    return f, mt, rad


def spectral_factorize(r: Autocorrelation, tol: float = 1e-9, grid_points: int = 1024) -> InputFilter:
    """Minimum-phase f with sum_k f_k f_{k+tau} = r_tau and f_0 > 0."""
    if r.r.ndim != 1:
        raise ShapeError("spectral_factorize takes a single autocorrelation")
    omega = np.linspace(-np.pi, np.pi, grid_points, endpoint=False)
    psi_min = float(np.min(spectrum_eval(r, omega)))
    if psi_min < -tol or r.r[0] < -tol:
        raise NotPSDSpectrum(f"spectrum minimum {psi_min:.3g} is negative")
    f, mt, rad = factorize_batch(r.r[None])
    if rad[0] > 1.0 - 1e-8 and mt[0] > 0:
        warnings.warn("spectrum has zeros on the unit circle", BoundarySpectrum, stacklevel=2)
    return InputFilter(f[0], int(mt[0]))


def filter_roots(filt: InputFilter) -> np.ndarray:
    mt = int(filt.m_tau)
    return np.roots(filt.f[: mt + 1]) if mt else np.array([])


def realize_filter(filt: InputFilter, m: int) -> StateSpace:
    """Shift-register generator with transfer function sum_tau f_tau q^-tau.

    Batched filters produce batched matrices.  For m_tau = 0 the A, B, C
    matrices are zero and D = f_0.
    """
    f = np.asarray(filt.f, dtype=float)
    mt = np.asarray(filt.m_tau)
    if np.any(mt > m) or f.shape[-1] - 1 > m and np.any(np.abs(f[..., m + 1 :]) > 0):
        raise OrderError(f"generator order m={m} is below the filter order")
    bshape = f.shape[:-1]
    fpad = np.zeros(bshape + (m + 1,))
    n = min(m + 1, f.shape[-1])
    fpad[..., :n] = f[..., :n]
    active = (mt > 0)[..., None, None]
    A = np.where(active, _shift(m), 0.0)
    Bz = np.zeros(bshape + (m, 1))
    if m:
        Bz[..., 0, 0] = 1.0
    Bz = np.where(active, Bz, 0.0)
    C = np.where(active, fpad[..., None, 1:], 0.0)
    D = fpad[..., None, :1]
    return StateSpace(A, Bz, C, D)


# --------------------------------------------------------------------------
# export


def write_autocorrelation_csv(path, r: Autocorrelation) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "r_tau"])
        for tau, v in enumerate(np.asarray(r.r)):
            w.writerow([tau, repr(float(v))])


def write_filter_csv(path, filt: InputFilter) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "f_tau"])
        for tau, v in enumerate(np.asarray(filt.f)):
            w.writerow([tau, repr(float(v))])


__all__ = [
    "Autocorrelation",
    "DesignConfig",
    "InputFilter",
    "DesignResult",
    "toeplitz",
    "kyp_block",
    "rd_matrix",
    "build_design_problem",
    "ararx_design_problem",
    "design_input",
    "fallback_autocorrelation",
    "white_start",
    "spectral_factorize",
    "factorize_batch",
    "realize_filter",
    "spectrum_eval",
    "effective_order",
    "unpack",
    "num_design_vars",
    "write_autocorrelation_csv",
    "write_filter_csv",
]
