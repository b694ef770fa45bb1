"""SISO LTI models in the general (A, B, F, C, D) form.

The model is

    A(q) y_n = B(q)/F(q) u_n + C(q)/D(q) e_n

with A, F, C, D monic polynomials in the backward shift q^{-1} and B
without a constant term.  Parameter vectors are always stacked in the
order [A | B | F | C | D].

Most routines here accept a leading batch axis on parameter vectors and
recursion states so that independent Monte Carlo runs can be advanced
together.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from .errors import Assumption1Violation, DomainViolation, ShapeError

STABILITY_MARGIN = 1e-12


class Orders(NamedTuple):
    pa: int = 0
    pb: int = 0
    pf: int = 0
    pc: int = 0
    pd: int = 0

    @property
    def total(self) -> int:
        return self.pa + self.pb + self.pf + self.pc + self.pd

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, p in zip("abfcd", self):
            out[name] = slice(start, start + p)
            start += p
        return out


@dataclass(frozen=True)
class PolynomialCoeffs:
    """Coefficients c_1..c_p of 1 + sum c_j q^-j (monic) or sum c_j q^-j."""

    coeffs: np.ndarray
    monic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    @property
    def order(self) -> int:
        return self.coeffs.shape[-1]

    def full(self) -> np.ndarray:
        """Coefficients in powers of q^-1 including the constant term.

        These are also the descending-power coefficients of z^p P(z).
        """
        lead = 1.0 if self.monic else 0.0
        return np.concatenate([[lead], self.coeffs])

    def roots(self) -> np.ndarray:
        return np.roots(np.trim_zeros(self.full(), "f")) if self.order else np.array([])

    def spectral_radius(self) -> float:
        r = self.roots()
        return float(np.max(np.abs(r))) if r.size else 0.0

    def is_stable(self) -> bool:
        return self.spectral_radius() < 1.0 - STABILITY_MARGIN


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector theta = [theta_A, theta_B, theta_F, theta_C, theta_D].

    ``theta`` may carry leading batch dimensions.
    """

    orders: Orders
    theta: np.ndarray

    def __post_init__(self):
        orders = Orders(*self.orders)
        theta = np.asarray(self.theta, dtype=float)
        if orders.total < 1:
            raise ShapeError("model needs at least one parameter")
        if theta.shape[-1:] != (orders.total,):
            raise ShapeError(f"theta has shape {theta.shape}, expected (..., {orders.total})")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_polys(cls, a=(), b=(), f=(), c=(), d=()) -> "ModelParams":
        parts = [np.atleast_1d(np.asarray(x, dtype=float)) for x in (a, b, f, c, d)]
        orders = Orders(*(len(x) for x in parts))
        return cls(orders, np.concatenate(parts))

    @property
    def p(self) -> int:
        return self.orders.total

    def _part(self, name: str) -> np.ndarray:
        return self.theta[..., self.orders.slices()[name]]

    a = property(lambda self: self._part("a"))
    b = property(lambda self: self._part("b"))
    f = property(lambda self: self._part("f"))
    c = property(lambda self: self._part("c"))
    d = property(lambda self: self._part("d"))

    def poly(self, name: str) -> PolynomialCoeffs:
        name = name.lower()
        return PolynomialCoeffs(self._part(name), monic=(name != "b"))

    def with_theta(self, theta) -> "ModelParams":
        return ModelParams(self.orders, theta)

    def check_stable(self, names="afcd", error=Assumption1Violation) -> None:
        for name in names:
            poly = self.poly(name)
            if poly.order and not poly.is_stable():
                raise error(
                    f"{name.upper()}(q) has spectral radius {poly.spectral_radius():.6g} >= 1"
                )


@dataclass(frozen=True)
class StateSpace:
    """x_{n+1} = A x_n + B v_n,  y_n = C x_n + D v_n.

    Arrays may carry matching leading batch dimensions.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.A.shape[-1]
        if self.A.shape[-2] != n or self.B.shape[-2] != n or self.C.shape[-1] != n:
            raise ShapeError("inconsistent state dimension")
        if self.D.shape[-2:] != (self.C.shape[-2], self.B.shape[-1]):
            raise ShapeError("D must be (outputs x inputs)")

    @property
    def n_states(self) -> int:
        return self.A.shape[-1]

    def spectral_radius(self) -> float:
        if self.n_states == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def impulse_response(self, n_steps: int, input_index: int = 0) -> np.ndarray:
        """Markov parameters D, CB, CAB, ... for one input (unbatched, first output)."""
        out = np.empty(n_steps)
        out[0] = self.D[0, input_index]
        x = self.B[:, input_index].copy()
        for k in range(1, n_steps):
            out[k] = self.C[0] @ x
            x = self.A @ x
        return out


# --------------------------------------------------------------------------
# simulation and realization


def _poly_mul(p, q):
    return np.convolve(p, q)


def simulate_system(params: ModelParams, u, e) -> np.ndarray:
    """Output of the true system from rest, driven by input ``u`` and noise ``e``."""
    u = np.asarray(u, dtype=float)
    e = np.asarray(e, dtype=float)
    if u.shape != e.shape or u.ndim != 1:
        raise ShapeError("u and e must be 1-D sequences of equal length")
    params.check_stable()
    A, B, F, C, D = (params.poly(k).full() for k in "abfcd")
    w = lfilter(B, F, u) if params.orders.pb else np.zeros_like(u)
    noise = lfilter(C, D, e)
    return lfilter([1.0], A, w + noise)


def to_state_space(params: ModelParams) -> StateSpace:
    """Innovations-form realization  xi' = A xi + B_xi u + K_xi e,  y = C xi + e.

    Returned as one StateSpace with inputs (u, e): ``B = [B_xi K_xi]`` and
    ``D = [[0, 1]]``.  Built in observer-canonical form from the common
    denominator A F D.
    """
    params.check_stable()
    A, B, F, C, D = (params.poly(k).full() for k in "abfcd")
    den = _poly_mul(_poly_mul(A, F), D)
    num_u = _poly_mul(B, D)
    num_e = _poly_mul(C, F)
    n = max(len(den), len(num_u), len(num_e)) - 1

    def pad(p):
        return np.concatenate([p, np.zeros(n + 1 - len(p))])

    den, num_u, num_e = pad(den), pad(num_u), pad(num_e)
    Axi = np.zeros((n, n))
    if n:
        Axi[:, 0] = -den[1:]
        Axi[:-1, 1:] = np.eye(n - 1)
    Bxi = num_u[1:].reshape(n, 1)
    Kxi = (num_e[1:] - den[1:]).reshape(n, 1)
    Cxi = np.zeros((1, n))
    if n:
        Cxi[0, 0] = 1.0
    ss = StateSpace(Axi, np.hstack([Bxi, Kxi]), Cxi, np.array([[0.0, 1.0]]))
    if ss.spectral_radius() >= 1.0:
        raise Assumption1Violation("A_xi is not stable")
    if n and np.max(np.abs(np.linalg.eigvals(Axi - Kxi @ Cxi))) >= 1.0:
        raise Assumption1Violation("A_xi - K_xi C_xi is not stable")
    return ss


# --------------------------------------------------------------------------
# one-step predictor


def predict_one_step(theta: ModelParams, y, u) -> np.ndarray:
    """One-step-ahead predictor  C F yhat = F (C - D A) y + D B u  from rest."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.shape != u.shape or y.ndim != 1:
        raise ShapeError("y and u must be 1-D sequences of equal length")
    theta.check_stable("cf", error=DomainViolation)
    A, B, F, C, D = (theta.poly(k).full() for k in "abfcd")
    den = _poly_mul(C, F)
    c_minus_da = np.zeros(max(len(C), len(D) + len(A) - 1))
    c_minus_da[: len(C)] += C
    c_minus_da[: len(D) + len(A) - 1] -= _poly_mul(D, A)
    yhat = lfilter(_poly_mul(F, c_minus_da), den, y)
    if theta.orders.pb:
        yhat = yhat + lfilter(_poly_mul(D, B), den, u)
    return yhat


# --------------------------------------------------------------------------
# regressor recursion


def _push(window: np.ndarray, value: np.ndarray) -> np.ndarray:
    """Shift ``value`` into the front of a lag window (last axis)."""
    if window.shape[-1] == 0:
        return window
    return np.concatenate([np.expand_dims(value, -1), window[..., :-1]], axis=-1)


def _dot(coeffs: np.ndarray, window: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", coeffs, window)


@dataclass
class PredictorLags:
    """Lag windows u~, y~, w~, v~, eps~ of the prediction-error recursion.

    Each window holds the most recent sample first.  These are the
    parameter-dependent blocks of the regressor state.
    """

    u: np.ndarray
    y: np.ndarray
    w: np.ndarray
    v: np.ndarray
    eps: np.ndarray

    @classmethod
    def zeros(cls, orders: Orders, batch_shape=()) -> "PredictorLags":
        o = Orders(*orders)
        z = lambda k: np.zeros(tuple(batch_shape) + (k,))
        return cls(u=z(o.pb), y=z(o.pa), w=z(o.pf), v=z(o.pd), eps=z(o.pc))

    def copy(self) -> "PredictorLags":
        return PredictorLags(*(x.copy() for x in (self.u, self.y, self.w, self.v, self.eps)))

    def eps_theta(self) -> np.ndarray:
        """Negative regressor  [y~; -u~; w~; -eps~; v~]."""
        return np.concatenate([self.y, -self.u, self.w, -self.eps, self.v], axis=-1)

    def push(self, theta: ModelParams, y_n, u_n):
        """Absorb the samples (y_n, u_n) using parameters ``theta``.

        Returns the updated lags and the auxiliary signals (w_n, v_n, eps_n)
        computed from the previous windows.
        """
        w = _dot(theta.b, self.u) - _dot(theta.f, self.w)
        v = y_n + _dot(theta.a, self.y) - w
        eps = v + _dot(theta.d, self.v) - _dot(theta.c, self.eps)
        new = PredictorLags(
            u=_push(self.u, u_n),
            y=_push(self.y, y_n),
            w=_push(self.w, w),
            v=_push(self.v, v),
            eps=_push(self.eps, eps),
        )
        return new, (w, v, eps)


class RegressorLayout(NamedTuple):
    """Partition sizes of Phi = (z, u~, e, xi, y~, w~, v~, eps~)."""

    m: int
    pb: int
    n_xi: int
    pa: int
    pf: int
    pd: int
    pc: int

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.m, self.pb, 1, self.n_xi, self.pa, self.pf, self.pd, self.pc)

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def split(self, phi: np.ndarray) -> list[np.ndarray]:
        return np.split(phi, np.cumsum(self.sizes)[:-1], axis=-1)


@dataclass
class RegressorState:
    """Augmented state Phi_n driving the closed-loop recursion.

    ``plant`` is the true-system realization from :func:`to_state_space`.
    """

    phi: np.ndarray
    layout: RegressorLayout
    plant: StateSpace

    @classmethod
    def zeros(cls, orders: Orders, plant: StateSpace, m: int, batch_shape=()) -> "RegressorState":
        o = Orders(*orders)
        layout = RegressorLayout(m, o.pb, plant.n_states, o.pa, o.pf, o.pd, o.pc)
        return cls(np.zeros(tuple(batch_shape) + (layout.dim,)), layout, plant)

    def parts(self):
        return self.layout.split(self.phi)

    def lags(self) -> PredictorLags:
        _, u, _, _, y, w, v, eps = self.parts()
        return PredictorLags(u=u, y=y, w=w, v=v, eps=eps)

    def eps_theta(self) -> np.ndarray:
        return self.lags().eps_theta()


def _matvec(M, x):
    return np.einsum("...ij,...j->...i", M, x)


def regressor_step(state: RegressorState, theta: ModelParams, gen: StateSpace, eta):
    """Advance Phi_n -> Phi_{n+1} with eta_n = (e_{n+1}, s_n).

    Returns ``(state', eps_theta, eps)`` where ``eps_theta`` is read off
    Phi_{n+1} and ``eps = y_{n+1} + theta . eps_theta``.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] != 2:
        raise ShapeError("eta must be (e_next, s)")
    lay = state.layout
    if Orders(lay.pa, lay.pb, lay.pf, lay.pc, lay.pd) != theta.orders:
        raise ShapeError("regressor layout does not match model orders")
    if gen.n_states != lay.m:
        raise ShapeError(f"generator has {gen.n_states} states, layout expects {lay.m}")
    if state.phi.shape[-1] != lay.dim:
        raise ShapeError("Phi has wrong length")
    e_next, s = eta[..., 0], eta[..., 1]
    z, _, e, xi, *_ = state.parts()
    e = e[..., 0]
    plant = state.plant

    u = _matvec(gen.C, z)[..., 0] + gen.D[..., 0, 0] * s
    z_new = _matvec(gen.A, z) + gen.B[..., :, 0] * s[..., None]
    y = _matvec(plant.C, xi)[..., 0] + e
    xi_new = (
        _matvec(plant.A, xi)
        + plant.B[..., :, 0] * u[..., None]
        + plant.B[..., :, 1] * e[..., None]
    )
    lags, _ = state.lags().push(theta, y, u)
    phi = np.concatenate(
        [z_new, lags.u, e_next[..., None], xi_new, lags.y, lags.w, lags.v, lags.eps], axis=-1
    )
    new_state = RegressorState(phi, lay, plant)
    eps_theta = lags.eps_theta()
    y_next = _matvec(plant.C, xi_new)[..., 0] + e_next
    eps = y_next + _dot(theta.theta, eps_theta)
    return new_state, eps_theta, eps


def _shift_matrix(k: int) -> np.ndarray:
    M = np.zeros((k, k))
    if k > 1:
        M[1:, :-1] = np.eye(k - 1)
    return M


def _first_row(row: np.ndarray, k: int) -> np.ndarray:
    M = np.zeros((k, np.size(row)))
    if k:
        M[0] = row
    return M


def phi_matrices(theta: ModelParams, gen: StateSpace, plant: StateSpace):
    """Explicit (A_Phi, B_Phi) with Phi_{n+1} = A_Phi Phi_n + B_Phi eta_n (unbatched)."""
    o = theta.orders
    m, nx = gen.n_states, plant.n_states
    lay = RegressorLayout(m, o.pb, nx, o.pa, o.pf, o.pd, o.pc)
    idx = np.cumsum((0,) + lay.sizes)
    blk = lambda i: slice(idx[i], idx[i + 1])
    Z, U, E, X, Y, W, V, EPS = (blk(i) for i in range(8))
    A = np.zeros((lay.dim, lay.dim))
    B = np.zeros((lay.dim, 2))
    Cz, Dz = gen.C[0], gen.D[0, 0]
    Bxi, Kxi, Cxi = plant.B[:, 0], plant.B[:, 1], plant.C[0]

    # rows expressing the scalar signals u_n, y_n, w_n, v_n, eps_n as
    # combinations of Phi_n (and s_n for u_n)
    u_row = np.zeros(lay.dim)
    u_row[Z] = Cz
    y_row = np.zeros(lay.dim)
    y_row[X] = Cxi
    y_row[E] = 1.0
    w_row = np.zeros(lay.dim)
    w_row[U] = theta.b
    w_row[W] = -theta.f
    v_row = y_row.copy()
    v_row[Y] += theta.a
    v_row -= w_row
    eps_row = v_row.copy()
    eps_row[V] += theta.d
    eps_row[EPS] -= theta.c

    A[Z, Z] = gen.A
    B[Z, 1] = gen.B[:, 0]
    if o.pb:
        A[U, :] += _first_row(u_row, o.pb)
        A[U, U] += _shift_matrix(o.pb)
        B[U.start, 1] = Dz
    B[E, 0] = 1.0
    A[X, X] = plant.A
    A[X, Z] += np.outer(Bxi, Cz)
    A[X, E] = Kxi[:, None]
    B[X, 1] = Bxi * Dz
    for sl, row, k in ((Y, y_row, o.pa), (W, w_row, o.pf), (V, v_row, o.pd), (EPS, eps_row, o.pc)):
        if k:
            A[sl, :] += _first_row(row, k)
            A[sl, sl] += _shift_matrix(k)
    return A, B


# --------------------------------------------------------------------------
# identifiability


def _conv_matrix(p: np.ndarray, n_out: int) -> np.ndarray:
    """Matrix of x -> p * x for x of length n_out - len(p) + 1."""
    k = n_out - len(p) + 1
    M = np.zeros((n_out, k))
    for j in range(k):
        M[j : j + len(p), j] = p
    return M


def common_factor_measure(polys) -> float:
    """Smallest singular value of the generalized Sylvester matrix.

    Zero (up to rounding) iff the polynomials (descending-power coefficient
    arrays) share a nonconstant factor.  Zero polynomials are ignored.
    """
    ps = []
    for p in polys:
        p = np.trim_zeros(np.asarray(p, dtype=float), "f")
        if p.size and np.any(p != 0):
            ps.append(p / np.linalg.norm(p))
    if not ps:
        return 0.0
    degrees = [len(p) - 1 for p in ps]
    if min(degrees) == 0:
        return float("inf")
    if len(ps) == 1:
        return 0.0
    ps = sorted(ps, key=len)
    n_out = len(ps[0]) - 1 + len(ps[-1]) - 1
    M = np.hstack([_conv_matrix(p, n_out) for p in ps])
    return float(np.linalg.svd(M, compute_uv=False)[n_out - 1])


@dataclass
class IdentifiabilityReport:
    clauses: dict[str, float | None]
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(v is None or v > self.tol for v in self.clauses.values())

    def clause_passed(self, name: str) -> bool | None:
        v = self.clauses[name]
        return None if v is None else v > self.tol


def check_identifiability(params: ModelParams, tol: float = 1e-8) -> IdentifiabilityReport:
    """Coprimality conditions (i)-(vi) for global identifiability at ``params``."""
    A, B, F, C, D = (params.poly(k).full() for k in "abfcd")
    o = params.orders
    clauses = {
        "i": common_factor_measure([A, B, C]),
        "ii": common_factor_measure([B, F]),
        "iii": common_factor_measure([C, D]),
        "iv": common_factor_measure([F, D]) if o.pa >= 1 else None,
        "v": common_factor_measure([A, B]) if o.pd >= 1 else None,
        "vi": common_factor_measure([A, C]) if o.pf >= 1 else None,
    }
    return IdentifiabilityReport(clauses, tol)


__all__ = [
    "Orders",
    "PolynomialCoeffs",
    "ModelParams",
    "StateSpace",
    "PredictorLags",
    "RegressorLayout",
    "RegressorState",
    "simulate_system",
    "to_state_space",
    "predict_one_step",
    "regressor_step",
    "phi_matrices",
    "check_identifiability",
    "common_factor_measure",
    "IdentifiabilityReport",
]

