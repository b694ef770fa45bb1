"""Asymptotic quantities computed in the frequency domain.

Every signal of the prediction-error recursion is a linear filter of the
input u and the noise e.  On a uniform frequency grid we evaluate those
transfer functions and integrate spectra (trapezoid rule, which is
spectrally accurate for smooth periodic integrands) to obtain the
information matrix G(theta), the cost W(theta) = E[eps^2] / 2, its gradient,
and the associated ODE.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .design import Autocorrelation, spectrum_eval
from .errors import DomainViolation, OdeExitedDomain, SingularInformation, StructureError
from .lti import ModelParams, PolynomialCoeffs


@dataclass(frozen=True)
class FrequencyGrid:
    points: int = 1024

    def __post_init__(self):
        if self.points < 64:
            raise ValueError("frequency grid needs at least 64 points")

    @property
    def omegas(self) -> np.ndarray:
        return -np.pi + 2 * np.pi * np.arange(self.points) / self.points


def _poly_on_grid(full: np.ndarray, z: np.ndarray) -> np.ndarray:
    """P(z) = sum_j full_j z^j with z = e^{-i omega} (powers of q^-1)."""
    return np.polynomial.polynomial.polyval(z, full)


def _transfer_functions(theta: ModelParams, true_params: ModelParams, grid: FrequencyGrid, gradient: str):
    """(F_u, F_e, E_u, E_e): gradient and prediction-error responses to u and e."""
    theta.check_stable("cf", error=DomainViolation)
    true_params.check_stable()
    if theta.orders != true_params.orders:
        raise StructureError("model and true system must share orders")
    z = np.exp(-1j * grid.omegas)
    A, B, F, C, D = (_poly_on_grid(theta.poly(k).full(), z) for k in "abfcd")
    As, Bs, Fs, Cs, Ds = (_poly_on_grid(true_params.poly(k).full(), z) for k in "abfcd")
    G0 = Bs / (As * Fs)
    H0 = Cs / (As * Ds)
    one = np.ones_like(z)
    zero = np.zeros_like(z)
    # (from u, from e) for the base signals
    y = (G0, H0)
    u = (one, zero)
    w = (B / F, zero)
    v = (A * G0 - B / F, A * H0)
    eps = (D / C * v[0], D / C * v[1])
    if gradient == "pem":
        filt = {"a": D / C, "b": D / (C * F), "f": D / (C * F), "c": 1 / C, "d": 1 / C}
    elif gradient == "regressor":
        filt = dict.fromkeys("abfcd", one)
    else:
        raise ValueError("gradient must be 'pem' or 'regressor'")
    blocks = [("a", y, 1.0), ("b", u, -1.0), ("f", w, 1.0), ("c", eps, -1.0), ("d", v, 1.0)]
    Fu, Fe = [], []
    for name, sig, sign in blocks:
        for k in range(1, getattr(theta.orders, "p" + name) + 1):
            lag = z**k * sign * filt[name]
            Fu.append(lag * sig[0])
            Fe.append(lag * sig[1])
    p = theta.p
    Fu = np.array(Fu).reshape(p, -1)
    Fe = np.array(Fe).reshape(p, -1)
    return Fu, Fe, eps[0], eps[1]


def information_matrix(
    theta: ModelParams,
    r: Autocorrelation,
    sigma2: float,
    grid: FrequencyGrid | None = None,
    true_params: ModelParams | None = None,
    gradient: str = "pem",
) -> np.ndarray:
    """G(theta) = lim E[psi psi^T] for data from ``true_params`` (default theta itself)."""
    grid = grid or FrequencyGrid()
    Fu, Fe, _, _ = _transfer_functions(theta, true_params or theta, grid, gradient)
    psi_u = spectrum_eval(r, grid.omegas)
    G = ((Fu * psi_u) @ Fu.conj().T + sigma2 * Fe @ Fe.conj().T).real / grid.points
    return 0.5 * (G + G.T)


def cost_and_gradient(
    theta: ModelParams,
    r: Autocorrelation,
    sigma2: float,
    true_params: ModelParams,
    grid: FrequencyGrid | None = None,
    gradient: str = "pem",
):
    """(W(theta), W_theta(theta), G(theta)) with W = E[eps^2] / 2 and W_theta = E[psi eps]."""
    grid = grid or FrequencyGrid()
    Fu, Fe, Eu, Ee = _transfer_functions(theta, true_params, grid, gradient)
    psi_u = spectrum_eval(r, grid.omegas)
    W = 0.5 * np.mean(np.abs(Eu) ** 2 * psi_u + sigma2 * np.abs(Ee) ** 2)
    Wt = ((Fu * psi_u) @ Eu.conj() + sigma2 * Fe @ Ee.conj()).real / grid.points
    G = ((Fu * psi_u) @ Fu.conj().T + sigma2 * Fe @ Fe.conj().T).real / grid.points
    return float(W), Wt, 0.5 * (G + G.T)


def asymptotic_covariance(
    theta_star: ModelParams,
    r_star: Autocorrelation,
    sigma2: float,
    grid: FrequencyGrid | None = None,
    gradient: str = "pem",
    cond_limit: float = 1e12,
) -> np.ndarray:
    """P* = sigma2 G(theta*)^{-1}."""
    G = information_matrix(theta_star, r_star, sigma2, grid, gradient=gradient)
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0 or ev[-1] / ev[0] > cond_limit:
        raise SingularInformation(f"information matrix eigenvalues span [{ev[0]:.3g}, {ev[-1]:.3g}]")
    P = sigma2 * np.linalg.inv(G)
    return 0.5 * (P + P.T)


@dataclass
class OdePath:
    t: np.ndarray
    theta: np.ndarray
    R_min_eig: np.ndarray
    R_max_eig: np.ndarray
    W: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            p = self.theta.shape[1]
            w.writerow(["t"] + [f"theta{i + 1}" for i in range(p)] + ["R_min_eig", "R_max_eig", "W"])
            for k in range(len(self.t)):
                w.writerow([self.t[k], *self.theta[k], self.R_min_eig[k], self.R_max_eig[k], self.W[k]])


def ode_trajectory(
    theta0: ModelParams,
    R0,
    horizon: float,
    step: float = 1e-2,
    r_map: Callable[[ModelParams], Autocorrelation] | Autocorrelation | None = None,
    true_params: ModelParams | None = None,
    sigma2: float = 1.0,
    grid: FrequencyGrid | None = None,
    gradient: str = "pem",
    in_domain: Callable[[ModelParams], bool] | None = None,
    record_every: int = 1,
) -> OdePath:
    """RK4 integration of d theta/dt = -R^{-1} W_theta(theta), dR/dt = G(theta) - R.

    ``r_map`` gives the input spectrum as a function of theta (a fixed
    Autocorrelation is accepted too).  Leaving C or F stable, or failing
    ``in_domain``, raises :class:`OdeExitedDomain` with the exit time.
    """
    grid = grid or FrequencyGrid(256)
    true_params = true_params or theta0
    if r_map is None:
        raise ValueError("r_map is required")
    spectrum = r_map if callable(r_map) else (lambda _th, _r=r_map: _r)

    def field(th_vec, R, t):
        th = theta0.with_theta(th_vec)
        if in_domain is not None and not in_domain(th):
            raise OdeExitedDomain(f"left the domain at t={t:.4g}", t)
        try:
            W, Wt, G = cost_and_gradient(th, spectrum(th), sigma2, true_params, grid, gradient)
        except DomainViolation as exc:
            raise OdeExitedDomain(f"left the domain at t={t:.4g}: {exc}", t) from exc
        return -np.linalg.solve(R, Wt), G - R, W

    th = np.array(theta0.theta, dtype=float)
    R = np.array(R0, dtype=float)
    n_steps = int(round(horizon / step))
    ts, ths, lo, hi, Ws = [], [], [], [], []
    for k in range(n_steps + 1):
        t = k * step
        k1t, k1R, W = field(th, R, t)
        if k % record_every == 0 or k == n_steps:
            ev = np.linalg.eigvalsh(R)
            ts.append(t)
            ths.append(th.copy())
            lo.append(ev[0])
            hi.append(ev[-1])
            Ws.append(W)
        if k == n_steps:
            break
        k2t, k2R, _ = field(th + 0.5 * step * k1t, R + 0.5 * step * k1R, t + 0.5 * step)
        k3t, k3R, _ = field(th + 0.5 * step * k2t, R + 0.5 * step * k2R, t + 0.5 * step)
        k4t, k4R, _ = field(th + step * k3t, R + step * k3R, t + step)
        th = th + step / 6 * (k1t + 2 * k2t + 2 * k3t + k4t)
        R = R + step / 6 * (k1R + 2 * k2R + 2 * k3R + k4R)
        R = 0.5 * (R + R.T)
    return OdePath(np.array(ts), np.array(ths), np.array(lo), np.array(hi), np.array(Ws))


def _theta_b(theta_B) -> np.ndarray:
    if isinstance(theta_B, ModelParams):
        if theta_B.orders.pa or theta_B.orders.pf:
            raise StructureError("the L2 gain formula needs p_a = p_f = 0")
        return theta_B.b
    if isinstance(theta_B, PolynomialCoeffs):
        if theta_B.monic:
            raise StructureError("expected a B-type polynomial without constant term")
        return theta_B.coeffs
    return np.asarray(theta_B, dtype=float)


def l2_gain_sq(theta_B) -> np.ndarray | float:
    """|G|_2^2 = theta_B^T theta_B for a pure FIR transfer function."""
    b = _theta_b(theta_B)
    out = np.sum(b * b, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def l2_gain_sq_frequency(theta_B, grid: FrequencyGrid | None = None) -> float:
    """(1/2pi) int |G(e^{i w})|^2 dw on the grid (Parseval cross-check)."""
    grid = grid or FrequencyGrid()
    b = _theta_b(theta_B)
    z = np.exp(-1j * grid.omegas)
    G = _poly_on_grid(np.concatenate([[0.0], b]), z)
    return float(np.mean(np.abs(G) ** 2))


def variance_check(theta_B, Ru_star, sigma2: float, N: int) -> float:
    """4 theta_B^T (sigma2 / N) Ru^{-1} theta_B."""
    b = _theta_b(theta_B)
    Ru = np.asarray(Ru_star, dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (Ru + Ru.T))
    if ev[0] <= 0:
        raise SingularInformation("Ru is not positive definite")
    return float(4 * sigma2 / N * b @ np.linalg.solve(Ru, b))


def write_matrix_csv(path, M) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(M):
            w.writerow([repr(float(v)) for v in row])


__all__ = [
    "FrequencyGrid",
    "information_matrix",
    "cost_and_gradient",
    "asymptotic_covariance",
    "ode_trajectory",
    "OdePath",
    "l2_gain_sq",
    "l2_gain_sq_frequency",
    "variance_check",
    "write_matrix_csv",
]
