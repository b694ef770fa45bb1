"""Small dense SDP solver: primal log-det barrier with Phase I.

Problems have the form

    minimize c^T x  s.t.  F0_b + sum_i x_i F_{i,b}  >= 0  for every block b,
                          lo <= x <= hi.

All blocks (and finite box bounds) are assembled into a single
block-diagonal affine map, so one Cholesky/eigendecomposition per Newton
step suffices.  Arrays may carry a leading batch axis, in which case
independent problems of identical structure are solved in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class SdpOptions:
    tol_gap: float = 1e-6
    tol_feas: float = 1e-7
    max_newton: int = 200
    mu: float = 20.0
    t0: float = 1.0
    phase1_bound: float = 1e6
    newton_tol: float = 1e-10


@dataclass
class SdpProblem:
    """Linear objective with affine matrix-inequality blocks.

    ``blocks[b]`` has shape (..., num_vars + 1, d_b, d_b); index 0 along the
    variable axis is F0.  ``c``, ``lower`` and ``upper`` have shape
    (..., num_vars).  Leading batch dimensions must agree across fields.
    """

    c: np.ndarray
    blocks: list[np.ndarray]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        k = self.c.shape[-1]
        self.blocks = [np.asarray(F, dtype=float) for F in self.blocks]
        for F in self.blocks:
            if F.ndim < 3 or F.shape[-3] != k + 1 or F.shape[-1] != F.shape[-2]:
                raise ShapeError(f"block of shape {F.shape} does not match {k} variables")
            if not np.allclose(F, np.swapaxes(F, -1, -2), atol=1e-12):
                raise ShapeError("block coefficient matrices must be symmetric")
        lo = np.full(self.c.shape, -np.inf) if self.lower is None else self.lower
        hi = np.full(self.c.shape, np.inf) if self.upper is None else self.upper
        self.lower = np.broadcast_to(np.asarray(lo, dtype=float), self.c.shape).copy()
        self.upper = np.broadcast_to(np.asarray(hi, dtype=float), self.c.shape).copy()
        if len(self.names) < len(self.blocks):
            self.names = list(self.names) + [f"block{i}" for i in range(len(self.names), len(self.blocks))]

    @property
    def num_vars(self) -> int:
        return self.c.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.c.shape[:-1]

    def evaluate(self, x) -> list[np.ndarray]:
        """Block matrices F_b(x)."""
        x = np.asarray(x, dtype=float)
        xx = np.concatenate([np.ones(x.shape[:-1] + (1,)), x], axis=-1)
        return [np.einsum("...i,...ijk->...jk", xx, F) for F in self.blocks]

    def dump(self) -> str:
        """Plain-text block format: dimensions, then dense matrices row-major."""
        if self.batch_shape:
            raise ShapeError("dump supports unbatched problems only")
        lines = [f"vars {self.num_vars}", f"blocks {len(self.blocks)}"]
        lines.append("c " + " ".join(repr(float(v)) for v in self.c))
        lines.append("lower " + " ".join(repr(float(v)) for v in self.lower))
        lines.append("upper " + " ".join(repr(float(v)) for v in self.upper))
        for name, F in zip(self.names, self.blocks):
            lines.append(f"block {name} {F.shape[-1]}")
            for i, Fi in enumerate(F):
                lines.append(f"F{i} " + " ".join(repr(float(v)) for v in Fi.ravel()))
        return "\n".join(lines) + "\n"


@dataclass
class SdpSolution:
    x: np.ndarray
    objective_value: np.ndarray | float
    status: np.ndarray | str
    max_constraint_violation: np.ndarray | float
    iterations: int = 0

    @property
    def ok(self):
        return np.asarray(self.status) == OPTIMAL


@dataclass
class CheckReport:
    block_min_eig: dict[str, np.ndarray]
    box_violation: np.ndarray
    objective: np.ndarray
    max_violation: np.ndarray
    feasible: np.ndarray


def check_solution(problem: SdpProblem, x, tol: float = 1e-7) -> CheckReport:
    """Constraint report computed directly from the problem data."""
    x = np.asarray(x, dtype=float)
    mats = problem.evaluate(x)
    mins = {n: np.linalg.eigvalsh(M)[..., 0] for n, M in zip(problem.names, mats)}
    box = np.maximum(
        np.nan_to_num(problem.lower - x, neginf=0.0),
        np.nan_to_num(x - problem.upper, neginf=0.0),
    ).clip(min=0.0)
    worst = np.zeros(x.shape[:-1])
    for v in mins.values():
        worst = np.maximum(worst, -v)
    worst = np.maximum(worst, box.max(axis=-1) if box.shape[-1] else 0.0)
    obj = np.einsum("...i,...i->...", problem.c, x)
    return CheckReport(mins, box, obj, worst, worst <= tol)


# --------------------------------------------------------------------------
# internal representation


class _Constraints:
    """Matrix blocks (B, k+1, d, d) plus scalar linear rows (B, k+1, n)."""

    def __init__(self, mats: list[np.ndarray], lin: np.ndarray):
        self.mats = mats
        self.lin = lin

    @classmethod
    def from_problem(cls, problem: SdpProblem, batch: int) -> "_Constraints":
        k = problem.num_vars
        mats, rows = [], []
        for F in problem.blocks:
            F = F.reshape((-1,) + F.shape[-3:])
            F = np.broadcast_to(F, (batch,) + F.shape[1:])
            if F.shape[-1] == 1:
                rows.append(F[..., 0, 0])
            else:
                mats.append(np.ascontiguousarray(F))
        lo = problem.lower.reshape(batch, k)
        hi = problem.upper.reshape(batch, k)
        # a bound enters when finite for any problem of the batch; the
        # others get the constant row 1 >= 0
        for bounds, sign in ((lo, 1.0), (hi, -1.0)):
            for i in np.flatnonzero(np.isfinite(bounds).any(axis=0)):
                finite = np.isfinite(bounds[:, i])
                row = np.zeros((batch, k + 1))
                row[:, 0] = np.where(finite, -sign * np.where(finite, bounds[:, i], 0.0), 1.0)
                row[:, i + 1] = np.where(finite, sign, 0.0)
                rows.append(row)
        lin = np.stack(rows, -1) if rows else np.zeros((batch, k + 1, 0))
        return cls(mats, lin)

    @property
    def dim(self) -> int:
        return sum(F.shape[-1] for F in self.mats) + self.lin.shape[-1]

    def take(self, idx) -> "_Constraints":
        return _Constraints([F[idx] for F in self.mats], self.lin[idx])

    def with_slack(self, bound: float) -> "_Constraints":
        """Append variable s entering every block as + s I, with |x_i| <= bound and s >= -1."""
        batch, k1, _ = self.lin.shape
        k = k1 - 1
        mats = []
        for F in self.mats:
            d = F.shape[-1]
            mats.append(np.concatenate([F, np.broadcast_to(np.eye(d), (batch, 1, d, d))], axis=1))
        lin = np.concatenate([self.lin, np.ones((batch, 1, self.lin.shape[-1]))], axis=1)
        extra = np.zeros((batch, k + 2, 2 * k + 1))
        extra[:, 0, : 2 * k] = bound
        extra[:, 1 : k + 1, :k] = np.eye(k)
        extra[:, 1 : k + 1, k : 2 * k] = -np.eye(k)
        extra[:, 0, -1] = 1.0
        extra[:, -1, -1] = 1.0
        return _Constraints(mats, np.concatenate([lin, extra], axis=-1))

    def min_slack(self, x) -> np.ndarray:
        out = np.full(x.shape[0], np.inf)
        for F in self.mats:
            out = np.minimum(out, np.linalg.eigvalsh(_affine(F, x))[:, 0])
        if self.lin.shape[-1]:
            out = np.minimum(out, _affine_lin(self.lin, x).min(-1))
        return out

    def newton_terms(self, x):
        """Gradient and Hessian of -log det, and a closure giving step eigenvalues."""
        batch, k1, _ = self.lin.shape
        grad = np.zeros((batch, k1 - 1))
        H = np.zeros((batch, k1 - 1, k1 - 1))
        factors = []
        for F in self.mats:
            L = np.linalg.cholesky(_affine(F, x))
            Linv = np.linalg.inv(L)
            W = Linv[:, None] @ F[:, 1:] @ np.swapaxes(Linv, -1, -2)[:, None]
            Wf = W.reshape(batch, k1 - 1, -1)
            grad -= np.trace(W, axis1=-2, axis2=-1)
            H += Wf @ np.swapaxes(Wf, -1, -2)
            factors.append(Linv)
        if self.lin.shape[-1]:
            sl = _affine_lin(self.lin, x)
            G = self.lin[:, 1:] / sl[:, None, :]
            grad -= G.sum(-1)
            H += G @ np.swapaxes(G, -1, -2)

        def step_eigs(dx):
            parts = []
            for F, Linv in zip(self.mats, factors):
                dS = np.einsum("bi,bijk->bjk", dx, F[:, 1:])
                parts.append(np.linalg.eigvalsh(Linv @ dS @ np.swapaxes(Linv, -1, -2)))
            if self.lin.shape[-1]:
                parts.append(np.einsum("bi,bin->bn", dx, self.lin[:, 1:]) / sl)
            return np.concatenate(parts, -1)

        return grad, H, step_eigs


def _affine(F, x):
    return F[:, 0] + np.einsum("bi,bijk->bjk", x, F[:, 1:])


def _affine_lin(G, x):
    return G[:, 0] + np.einsum("bi,bin->bn", x, G[:, 1:])


def _barrier_method(cons: _Constraints, c, x, t, opts: SdpOptions, stop_below=None):
    """Path-following on t c^T x - log det F(x) from strictly feasible x.

    ``stop_below`` (index, value): problems whose variable ``index`` drops
    below ``value`` are frozen immediately (Phase I early exit); at a
    centered point, those whose lower bound on that variable already
    exceeds ``-value`` stop as well (infeasibility certified).
    Returns (x, status array, iterations).
    """
    batch, k = c.shape
    d = cons.dim
    x = x.copy()
    t = np.array(t, dtype=float)
    done = np.zeros(batch, bool)
    status = np.full(batch, MAX_ITER, dtype=object)
    it = 0
    for it in range(1, opts.max_newton + 1):
        if stop_below is not None:
            hit = (~done) & (x[:, stop_below[0]] < stop_below[1])
            status[hit] = OPTIMAL
            done |= hit
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        sub = cons if act.size == batch else cons.take(act)
        xa = x[act]
        gb, H, step_eigs = sub.newton_terms(xa)
        grad = t[act, None] * c[act] + gb
        H = H + 1e-14 * np.eye(k) * np.trace(H, axis1=-2, axis2=-1)[:, None, None]
        dx = -np.linalg.solve(H, grad[..., None])[..., 0]
        dec = -np.einsum("bi,bi->b", grad, dx)
        # along the ray, -log det changes by -sum log(1 + a lam_j), so the
        # backtracking line search is exact and cheap
        lam = step_eigs(dx)
        lam_min = lam.min(-1)
        step = np.where(lam_min < 0, np.minimum(1.0, -0.99 / np.minimum(lam_min, -1e-300)), 1.0)
        slope = np.einsum("bi,bi->b", t[act, None] * c[act], dx)
        for _ in range(60):
            with np.errstate(invalid="ignore", divide="ignore"):
                df = step * slope - np.log1p(step[:, None] * lam).sum(-1)
            accept = df <= -0.25 * step * dec
            if accept.all():
                break
            step = np.where(accept, step, 0.5 * step)
        x[act] = xa + step[:, None] * dx
        centered = dec / 2 < opts.newton_tol
        if centered.any():
            idx = act[centered]
            # d / t bounds the duality gap at a centered point
            fin = d / t[idx] <= opts.tol_gap
            if stop_below is not None:
                fin |= x[idx, stop_below[0]] - d / t[idx] > -stop_below[1]
            status[idx[fin]] = OPTIMAL
            done[idx[fin]] = True
            t[idx[~fin]] *= opts.mu
    return x, status, it


def _phase1(cons: _Constraints, x0, opts: SdpOptions):
    """Find strictly feasible points by minimizing s with F(x) + s I >= 0."""
    batch, k = x0.shape
    bound = opts.phase1_bound
    aux = cons.with_slack(bound)
    c = np.zeros((batch, k + 1))
    c[:, -1] = 1.0
    x0 = np.clip(x0, -0.5 * bound, 0.5 * bound)
    s0 = np.maximum(0.0, -cons.min_slack(x0)) + 1.0
    z0 = np.concatenate([x0, s0[:, None]], axis=-1)
    p1 = SdpOptions(**{**opts.__dict__, "tol_gap": 1e-9})
    z, status, it = _barrier_method(aux, c, z0, np.full(batch, 1.0), p1, stop_below=(k, -1e-9))
    s = z[:, -1]
    feasible = (status == OPTIMAL) & (s < 0)
    return z[:, :k], feasible, it


def solve(problem: SdpProblem, opts: SdpOptions | None = None, x0=None) -> SdpSolution:
    """Solve ``problem`` (possibly batched).

    ``x0`` is an optional starting point; Phase I runs wherever it is not
    strictly feasible.
    """
    opts = opts or SdpOptions()
    bshape = problem.batch_shape
    batch = int(np.prod(bshape)) if bshape else 1
    k = problem.num_vars
    cons = _Constraints.from_problem(problem, batch)
    c = problem.c.reshape(batch, k)
    x = np.zeros((batch, k)) if x0 is None else np.broadcast_to(np.asarray(x0, float), (batch, k)).copy()
    feas = cons.min_slack(x) > 0
    iters = 0
    if not feas.all():
        idx = np.flatnonzero(~feas)
        xs, ok, iters = _phase1(cons.take(idx), x[idx], opts)
        x[idx] = xs
        feas[idx] = ok
    status = np.full(batch, INFEASIBLE, dtype=object)
    if feas.any():
        idx = np.flatnonzero(feas)
        # start t so that the barrier and objective terms are balanced
        scale = np.maximum(np.abs(np.einsum("bi,bi->b", c[idx], x[idx])), 1.0)
        t0 = opts.t0 * cons.dim / scale
        xs, st, it2 = _barrier_method(cons.take(idx), c[idx], x[idx], t0, opts)
        x[idx] = xs
        status[idx] = st
        iters += it2
    report = check_solution(problem, x.reshape(bshape + (k,)), opts.tol_feas)
    status = status.reshape(bshape) if bshape else status[0]
    obj = report.objective if bshape else float(report.objective)
    viol = report.max_violation if bshape else float(report.max_violation)
    return SdpSolution(
        x=x.reshape(bshape + (k,)) if bshape else x[0],
        objective_value=obj,
        status=status,
        max_constraint_violation=viol,
        iterations=iters,
    )


def solve_batch(problems: list[SdpProblem], opts: SdpOptions | None = None) -> list[SdpSolution]:
    """Solve structurally identical problems together."""
    if not problems:
        return []
    stacked = SdpProblem(
        c=np.stack([p.c for p in problems]),
        blocks=[np.stack([p.blocks[b] for p in problems]) for b in range(len(problems[0].blocks))],
        lower=np.stack([p.lower for p in problems]),
        upper=np.stack([p.upper for p in problems]),
        names=problems[0].names,
    )
    sol = solve(stacked, opts)
    return [
        SdpSolution(sol.x[i], float(sol.objective_value[i]), str(sol.status[i]),
                    float(sol.max_constraint_violation[i]), sol.iterations)
        for i in range(len(problems))
    ]


__all__ = ["SdpProblem", "SdpSolution", "SdpOptions", "CheckReport", "solve", "solve_batch",
           "check_solution", "OPTIMAL", "INFEASIBLE", "MAX_ITER"]
