"""Dense small quadratic programs.

Problems have the form::

    minimize    1/2 z^T H z + c^T z
    subject to  A z >= b          (row-wise)
                lb <= z <= ub     (optional, compiled into rows)

``solve_active_set`` enumerates candidate active sets in order of size and
then lexicographically. For a strictly convex QP the KKT point is unique,
so the first candidate that is primal feasible with nonnegative duals is
the optimum. Only subsets of size <= d are tried: larger sets are linearly
dependent and some independent subset carries the same KKT point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InfeasiblePointwise, InvalidArgument

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
DEGENERATE = "Degenerate"

MAX_DIM = 8
MAX_ROWS = 8

DUAL_TOL = 1e-10
PRIMAL_TOL = 1e-9
KKT_TOL = 1e-8
NEAR_FEASIBLE_TOL = 1e-7


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = H.shape[0]
        if H.shape != (d, d):
            raise InvalidArgument("H must be square")
        if d > MAX_DIM:
            raise InvalidArgument(f"decision dimension {d} exceeds {MAX_DIM}")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise InvalidArgument("H must be symmetric")
        c = np.asarray(self.c, dtype=float).reshape(d)
        A = np.zeros((0, d)) if self.A is None else np.asarray(self.A, dtype=float).reshape(-1, d)
        b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise InvalidArgument("A and b row counts differ")
        if A.shape[0] > MAX_ROWS:
            raise InvalidArgument(f"{A.shape[0]} constraint rows exceed {MAX_ROWS}")
        for name in ("lb", "ub"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(d))
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def rows(self):
        """All inequality rows, box bounds appended after the general rows."""
        A, b = [self.A], [self.b]
        eye = np.eye(self.dim)
        if self.lb is not None:
            keep = np.isfinite(self.lb)
            A.append(eye[keep])
            b.append(self.lb[keep])
        if self.ub is not None:
            keep = np.isfinite(self.ub)
            A.append(-eye[keep])
            b.append(-self.ub[keep])
        return np.vstack(A), np.concatenate(b)

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.c @ z)


@dataclass
class QpSolution:
    z_star: np.ndarray
    active_set: tuple
    duals: np.ndarray
    kkt_residual: float
    status: str
    condition: float = field(default=float("nan"))

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def has_solution(self) -> bool:
        return bool(np.all(np.isfinite(self.z_star)))


def kkt_residual(p: QpProblem, z, duals) -> float:
    """Scaled max violation of stationarity, feasibility and complementarity."""
    A, b = p.rows()
    z = np.asarray(z, dtype=float)
    lam = np.asarray(duals, dtype=float)
    slack = A @ z - b
    stat = p.H @ z + p.c - A.T @ lam
    scale = 1.0 + max(np.abs(p.H @ z).max(), np.abs(p.c).max(), np.abs(A.T @ lam).max(initial=0.0))
    bscale = 1.0 + np.abs(b).max(initial=0.0)
    parts = [
        np.abs(stat).max() / scale,
        np.maximum(-slack, 0.0).max(initial=0.0) / bscale,
        np.maximum(-lam, 0.0).max(initial=0.0) / scale,
        np.abs(lam * slack).max(initial=0.0) / (scale * bscale),
    ]
    return float(max(parts))


def solve_active_set(p: QpProblem) -> QpSolution:
    A_raw, b_raw = p.rows()
    d, k = p.dim, b_raw.size
    try:
        chol = cho_factor(p.H)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgument("H is not positive definite") from exc

    # unit-norm rows: same feasible set, better conditioned KKT blocks
    norms = np.linalg.norm(A_raw, axis=1) if k else np.zeros(0)
    null = norms <= 1e-14
    if np.any(b_raw[null] > PRIMAL_TOL):
        return _failed(d, k, INFEASIBLE)
    keep = np.flatnonzero(~null)
    A = A_raw[keep] / norms[keep, None]
    b = b_raw[keep] / norms[keep]
    kk = keep.size

    z0 = -cho_solve(chol, p.c)
    HinvAt = cho_solve(chol, A.T) if kk else np.zeros((d, 0))
    row_tol = PRIMAL_TOL * np.maximum(1.0, np.abs(b))
    worst_cond = 1.0
    fallback = None  # (violation, z, lam, S) of the least-violating dual-feasible candidate

    Az0 = A @ z0
    for size in range(0, min(kk, d) + 1):
        for S in combinations(range(kk), size):
            lam = np.zeros(kk)
            if size:
                idx = list(S)
                M = A[idx] @ HinvAt[:, idx]
                if size > 1:
                    cond = np.linalg.cond(M)
                    if not cond <= 1e12:
                        worst_cond = max(worst_cond, cond)
                        continue
                    lam_S = np.linalg.solve(M, b[idx] - Az0[idx])
                else:
                    lam_S = (b[idx] - Az0[idx]) / M[0, 0]
                if lam_S.min() < -DUAL_TOL * max(1.0, float(np.abs(lam_S).max())):
                    continue
                lam[idx] = np.maximum(lam_S, 0.0)
                z = z0 + HinvAt[:, idx] @ lam_S
            else:
                z = z0
            if kk:
                viol = b - A @ z
                tol = row_tol * max(1.0, float(np.sqrt(z @ z)))
                if (viol > tol).any():
                    worst = float((viol / tol).max()) * PRIMAL_TOL
                    if fallback is None or worst < fallback[0]:
                        fallback = (worst, z, lam, S)
                    continue
            return _finish(p, z, lam, S, keep, norms, k, OPTIMAL)

    if fallback is not None and fallback[0] <= NEAR_FEASIBLE_TOL:
        _, z, lam, S = fallback
        return _finish(p, z, lam, S, keep, norms, k, DEGENERATE)
    status = INFEASIBLE if not _rows_feasible(A, b) else DEGENERATE
    return _failed(d, k, status, worst_cond)


def _finish(p, z, lam, S, keep, norms, k, status):
    duals = np.zeros(k)
    duals[keep] = lam / norms[keep]
    res = kkt_residual(p, z, duals)
    if status == OPTIMAL and res > KKT_TOL:
        status = DEGENERATE
    return QpSolution(z, tuple(int(keep[i]) for i in S), duals, res, status)


def _failed(d, k, status, cond=float("nan")):
    return QpSolution(np.full(d, np.nan), (), np.full(k, np.nan), np.inf, status, condition=cond)


def _rows_feasible(A, b) -> bool:
    """Phase-one check of ``A z >= b`` via an LP."""
    from scipy.optimize import linprog

    d = A.shape[1]
    res = linprog(np.zeros(d), A_ub=-A, b_ub=-b, bounds=[(None, None)] * d, method="highs")
    return res.status == 0


def solve_minnorm_single(nominal, a, b_rhs):
    """Closed-form ``argmin 1/2 ||u - nominal||^2  s.t.  a . u >= b_rhs`` over ``R^m``.

    Returns ``nominal`` itself (same values, fresh array) when it already
    satisfies the constraint.
    """
    nominal = np.asarray(nominal, dtype=float)
    a = np.asarray(a, dtype=float).reshape(nominal.shape)
    slack = float(a @ nominal) - float(b_rhs)
    if slack >= 0.0:
        return nominal.copy()
    aa = float(a @ a)
    if np.sqrt(aa) <= 1e-12:
        raise InfeasiblePointwise(
            f"constraint gradient vanishes while violated by {-slack:.3e}"
        )
    return nominal + ((float(b_rhs) - float(a @ nominal)) / aa) * a
