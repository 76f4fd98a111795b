"""Controller synthesis from CLFs and CBFs.

Any object with a ``constraint_row(sys, x) -> (a, b)`` method can act as a
safety constraint here: plain :class:`~cbfsynth.core.BarrierSpec` objects
and :class:`~cbfsynth.ecbf.EcbfDesign` objects both qualify. Rows are
always read as ``a . u >= b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import BarrierSpec, ControlAffineSystem, LyapunovSpec, lie_derivatives
from .errors import InfeasiblePointwise, InvalidArgument, NotACLFHere, NumericalFailure
from .qp import INFEASIBLE, OPTIMAL, QpProblem, solve_active_set, solve_minnorm_single

MEMBERSHIP_TOL = 1e-9


def _as_list(barrier):
    if barrier is None:
        return []
    if isinstance(barrier, (list, tuple)):
        return list(barrier)
    return [barrier]


@dataclass(frozen=True)
class SafetyFilter:
    """Minimally invasive filter around a nominal controller ``k(x)``."""

    sys: ControlAffineSystem
    barrier: object
    nominal: Callable[[np.ndarray], np.ndarray]

    @property
    def barriers(self) -> list:
        return _as_list(self.barrier)


@dataclass(frozen=True)
class UnifiedController:
    """CLF-CBF QP data: ``min 1/2 u^T H u + p delta^2`` over the CLF and CBF rows."""

    sys: ControlAffineSystem
    lyapunov: LyapunovSpec
    barrier: object
    H_cost: Optional[Callable[[np.ndarray], np.ndarray]] = None
    p_relax: float = 100.0

    def __post_init__(self):
        if not self.p_relax > 0:
            raise InvalidArgument("p_relax must be positive")

    @property
    def barriers(self) -> list:
        return _as_list(self.barrier)

    def cost_matrix(self, x) -> np.ndarray:
        if self.H_cost is None:
            return np.eye(self.sys.m)
        return np.asarray(self.H_cost(x), dtype=float).reshape(self.sys.m, self.sys.m)


@dataclass
class Diagnostics:
    """Per-solve record consumed by the simulator log."""

    u_des: np.ndarray
    active: tuple = ()
    perturbation: float = 0.0
    status: str = OPTIMAL
    delta: float = 0.0
    path: str = "closed_form"
    rows: list = field(default_factory=list)


def cbf_constraint_row(sys: ControlAffineSystem, barrier: BarrierSpec, x):
    """``a = L_g h(x)``, ``b = -L_f h(x) - alpha(h(x))``."""
    return barrier.constraint_row(sys, x)


def in_K_cbf(sys, barrier, x, u) -> bool:
    a, b = barrier.constraint_row(sys, x)
    return bool(a @ np.asarray(u, dtype=float) - b >= -MEMBERSHIP_TOL)


def clf_row(sys: ControlAffineSystem, lyapunov: LyapunovSpec, x):
    """CLF condition ``L_f V + L_g V u <= -gamma(V)/eps`` as ``(LgV, rhs)`` with ``LgV . u <= rhs``."""
    lf, lg = lie_derivatives(sys, lyapunov.grad_V(x), x)
    return lg, -lyapunov.decay(x) - lf


def in_K_clf(sys, lyapunov, x, u) -> bool:
    lg, rhs = clf_row(sys, lyapunov, x)
    return bool(lg @ np.asarray(u, dtype=float) - rhs <= MEMBERSHIP_TOL)


def _input_rows(sys):
    if sys.input_box is None:
        return None, None
    return sys.input_box


def safety_filter(filt: SafetyFilter, x):
    """Return ``(u_act, Diagnostics)`` for the CBF-QP around ``filt.nominal``.

    With a single row and no input box the closed form is used; otherwise
    the QP goes through :func:`solve_active_set`. A nominal input that
    already satisfies every row (and the input box) is returned unchanged.
    """
    sys = filt.sys
    x = np.asarray(x, dtype=float)
    u_des = np.asarray(filt.nominal(x), dtype=float).reshape(sys.m)
    rows = [bar.constraint_row(sys, x) for bar in filt.barriers]
    if all(a @ u_des >= b for a, b in rows) and sys.in_inputs(u_des, tol=0.0):
        return u_des.copy(), Diagnostics(u_des, (), 0.0, OPTIMAL, 0.0, "passthrough", rows)

    if len(rows) == 1 and sys.input_box is None:
        a, b = rows[0]
        try:
            u = solve_minnorm_single(u_des, a, b)
        except InfeasiblePointwise as exc:
            raise InfeasiblePointwise(str(exc), state=x) from None
        return u, Diagnostics(u_des, (0,), float(np.linalg.norm(u - u_des)), OPTIMAL, 0.0,
                              "closed_form", rows)

    lb, ub = _input_rows(sys)
    A = np.array([a for a, _ in rows]).reshape(len(rows), sys.m)
    bvec = np.array([b for _, b in rows], dtype=float)
    sol = solve_active_set(QpProblem(np.eye(sys.m), -u_des, A, bvec, lb, ub))
    _check_solution(sol, x, "safety QP infeasible")
    u = sol.z_star
    return u, Diagnostics(u_des, sol.active_set, float(np.linalg.norm(u - u_des)), sol.status,
                          0.0, "active_set", rows)


def _check_solution(sol, x, infeasible_msg):
    if sol.status == INFEASIBLE:
        raise InfeasiblePointwise(infeasible_msg, state=x)
    if not sol.has_solution:
        raise NumericalFailure(f"QP returned no finite solution (status {sol.status}, "
                               f"condition {sol.condition:.3g})", state=x)


def min_norm_clf(sys: ControlAffineSystem, lyapunov: LyapunovSpec, x):
    """Pointwise min-norm input in ``K_clf(x)`` (input box ignored)."""
    lg, rhs = clf_row(sys, lyapunov, x)
    try:
        # LgV u <= rhs  <=>  (-LgV) u >= -rhs
        return solve_minnorm_single(np.zeros(sys.m), -lg, -rhs)
    except InfeasiblePointwise as exc:
        raise NotACLFHere(str(exc), state=x) from None


def clf_cbf_qp(ctrl: UnifiedController, x):
    """Solve the unified QP over ``(u, delta)``.

    Rows: ``-L_gV u + delta >= L_fV + gamma(V)/eps`` (relaxed CLF) and
    ``L_gh u >= -L_fh - alpha(h)`` per barrier (never relaxed). Returns
    ``(u, delta, Diagnostics)``.
    """
    x = np.asarray(x, dtype=float)
    rows = [bar.constraint_row(ctrl.sys, x) for bar in ctrl.barriers]
    return _solve_unified(ctrl.sys, ctrl.lyapunov, rows, ctrl.cost_matrix(x), ctrl.p_relax, x)


def _solve_unified(sys, lyapunov, rows, H_u, p_relax, x):
    m = sys.m
    lg_v, clf_rhs = clf_row(sys, lyapunov, x)
    H = np.zeros((m + 1, m + 1))
    H[:m, :m] = H_u
    H[m, m] = 2.0 * p_relax
    A = [np.concatenate([-lg_v, [1.0]])]
    b = [-clf_rhs]
    for a, bb in rows:
        A.append(np.concatenate([a, [0.0]]))
        b.append(bb)
    lb = ub = None
    if sys.input_box is not None:
        lb = np.concatenate([sys.input_box[0], [-np.inf]])
        ub = np.concatenate([sys.input_box[1], [np.inf]])
    sol = solve_active_set(QpProblem(H, np.zeros(m + 1), np.array(A), np.array(b), lb, ub))
    _check_solution(sol, x, "CBF rows infeasible; relaxation cannot restore safety")
    u, delta = sol.z_star[:m], float(sol.z_star[m])
    # active-set indices: 0 is the CLF row, then safety rows, then box rows
    diag = Diagnostics(np.zeros(m), sol.active_set, float(np.linalg.norm(u)), sol.status, delta,
                       "active_set", rows)
    return u, delta, diag
