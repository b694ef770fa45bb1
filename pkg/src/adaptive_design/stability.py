"""Stability certificates for matrix families.

Companion matrices of monic polynomials, norm-of-products upper bounds on
the joint spectral radius, and common quadratic Lyapunov functions found
by bisection over SDP feasibility problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sdp
from .errors import BudgetExceeded, DegenerateOrder, ShapeError
from .lti import PolynomialCoeffs


def companion(poly: PolynomialCoeffs | np.ndarray, strict: bool = True) -> np.ndarray:
    """Companion matrix with first row (-c_1, ..., -c_p) and ones below the diagonal.

    Order 0 raises :class:`DegenerateOrder` unless ``strict`` is False, in
    which case an empty (0, 0) matrix is returned.
    """
    coeffs = poly.coeffs if isinstance(poly, PolynomialCoeffs) else np.asarray(poly, dtype=float)
    if isinstance(poly, PolynomialCoeffs) and not poly.monic:
        raise ShapeError("companion form needs a monic polynomial")
    p = coeffs.shape[-1]
    if p == 0:
        if strict:
            raise DegenerateOrder("polynomial of order 0 has no companion matrix")
        return np.zeros((0, 0))
    M = np.zeros((p, p))
    M[0] = -coeffs
    M[1:, :-1] = np.eye(p - 1)
    return M


@dataclass(frozen=True)
class MatrixFamily:
    members: tuple[np.ndarray, ...]

    def __init__(self, members):
        mats = tuple(np.atleast_2d(np.asarray(M, dtype=float)) for M in members)
        if not mats:
            raise ShapeError("matrix family must be nonempty")
        n = mats[0].shape[0]
        if any(M.shape != (n, n) for M in mats):
            raise ShapeError("family members must be square with equal dimension")
        object.__setattr__(self, "members", mats)

    @property
    def dim(self) -> int:
        return self.members[0].shape[0]

    def stacked(self) -> np.ndarray:
        return np.stack(self.members)


def jsr_upper_bound(family: MatrixFamily, depth: int, budget: int = 2_000_000) -> float:
    """min_{k<=depth} max_{|Pi|=k} ||Pi||_2^{1/k}, an upper bound on the JSR."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    mats = family.stacked()
    count = len(mats)
    total = sum(count**k for k in range(1, depth + 1))
    if total > budget:
        raise BudgetExceeded(f"{total} products exceed the budget of {budget}")
    best = np.inf
    products = mats
    for k in range(1, depth + 1):
        if k > 1:
            products = np.einsum("aij,bjk->abik", mats, products).reshape(-1, family.dim, family.dim)
        norms = np.linalg.norm(products, ord=2, axis=(-2, -1))
        best = min(best, float(norms.max()) ** (1.0 / k))
    return best


@dataclass
class LyapunovCertificate:
    V: np.ndarray
    lam: float

    def residual(self, family: MatrixFamily) -> float:
        """Largest eigenvalue of A^T V A - lam V over the vertices."""
        return max(
            float(np.linalg.eigvalsh(A.T @ self.V @ A - self.lam * self.V)[-1]) for A in family.members
        )


class Infeasible:
    """No common quadratic Lyapunov function was found (sufficient test only)."""

    def __bool__(self):
        return False

    def __repr__(self):
        return "Infeasible()"


def _sym_basis(n: int) -> np.ndarray:
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return np.array(basis)


def _lyapunov_slack(mats: np.ndarray, lam: float, v_max: float, opts: sdp.SdpOptions):
    """max s  s.t.  lam V - A^T V A >= s I at every vertex,  I <= V <= v_max I,  s <= 1."""
    n = mats.shape[-1]
    E = _sym_basis(n)
    k = len(E) + 1
    I = np.eye(n)
    blocks = []
    for A in mats:
        F = np.zeros((k + 1, n, n))
        F[1:-1] = lam * E - np.einsum("ji,ajk,kl->ail", A, E, A)
        F[-1] = -I
        blocks.append(F)
    lower = np.zeros((k + 1, n, n))
    lower[0] = -I
    lower[1:-1] = E
    upper = np.zeros((k + 1, n, n))
    upper[0] = v_max * I
    upper[1:-1] = -E
    c = np.zeros(k)
    c[-1] = -1.0
    hi = np.full(k, np.inf)
    hi[-1] = 1.0
    x0 = np.concatenate([np.eye(n)[np.triu_indices(n)] * 2.0, [-1e3]])
    prob = sdp.SdpProblem(c, blocks + [lower, upper], upper=hi)
    sol = sdp.solve(prob, opts, x0=x0)
    V = np.zeros((n, n))
    V[np.triu_indices(n)] = sol.x[:-1]
    V = V + np.triu(V, 1).T
    return float(sol.x[-1]), V, sol.status


def common_lyapunov(
    family: MatrixFamily,
    margin: float = 1e-6,
    tol: float = 1e-7,
    v_max: float = 1e6,
) -> LyapunovCertificate | Infeasible:
    """Smallest lam in (0, 1) with A^T V A <= lam V for all members, V >= I.

    The strict inequality is enforced with slack ``margin`` (scaled by
    ``v_max``); lam is located by bisection to ``tol``.
    """
    mats = family.stacked()
    opts = sdp.SdpOptions(tol_gap=1e-9)
    eps = margin

    def feasible(lam):
        # barrier iterates are strictly feasible, so any point with s >= eps
        # certifies lam even if the solver stopped early
        s, V, status = _lyapunov_slack(mats, lam, v_max, opts)
        ok = status != sdp.INFEASIBLE and s >= eps and np.linalg.eigvalsh(V)[0] >= 1.0 - 1e-9
        return ok, V

    ok, V = feasible(1.0)
    if not ok:
        return Infeasible()
    lo, hi, V_hi = 0.0, 1.0, V
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, V = feasible(mid)
        if ok:
            hi, V_hi = mid, V
        else:
            lo = mid
    if hi >= 1.0:
        return Infeasible()
    return LyapunovCertificate(V_hi, hi)


__all__ = ["companion", "MatrixFamily", "jsr_upper_bound", "common_lyapunov", "LyapunovCertificate", "Infeasible"]
