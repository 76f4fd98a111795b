"""Independent reference computations used by the tests.

None of these share code with the package: the QP oracle is accelerated
projected gradient on the dual, the gain oracle expands the characteristic
polynomial with ``numpy.poly``, and the unified-QP oracle calls cvxpy.
"""

import numpy as np


def random_qp(rng, d, k):
    """Strictly convex QP with ``k`` general rows, usually feasible."""
    B = rng.standard_normal((d, d))
    H = B @ B.T + 0.5 * np.eye(d)
    c = rng.standard_normal(d)
    A = rng.standard_normal((k, d))
    z_feas = rng.standard_normal(d)
    b = A @ z_feas - np.abs(rng.standard_normal(k)) * rng.choice([0.0, 1.0], size=k)
    return H, c, A, b


def dual_pg_batch(H, c, A, b, iters=40000):
    """Solve ``min 1/2 z'Hz + c'z  s.t.  Az >= b`` by FISTA on the dual.

    Dual: ``max_{lam >= 0} -1/2 (A'lam - c)' H^-1 (A'lam - c) + b'lam``;
    primal recovery ``z = H^-1 (A'lam - c)``. Arrays carry a leading batch
    axis so many problems run together.
    """
    scale = np.linalg.norm(A, axis=2)
    scale = np.where(scale > 0, scale, 1.0)
    A, b = A / scale[..., None], b / scale
    Hinv = np.linalg.inv(H)
    Q = A @ Hinv @ np.swapaxes(A, 1, 2)
    q = b + np.einsum("nkd,nd->nk", A @ Hinv, c)
    L = np.linalg.eigvalsh(Q)[:, -1] + 1e-12
    lam = np.zeros(b.shape)
    y = lam.copy()
    t = 1.0
    for _ in range(iters):
        grad = q - np.einsum("nij,nj->ni", Q, y)
        lam_new = np.maximum(y + grad / L[:, None], 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        mom = (t - 1) / t_new
        # gradient-based adaptive restart, per problem
        restart = np.einsum("ni,ni->n", grad, lam_new - lam) < 0
        mom = np.where(restart, 0.0, mom)[:, None]
        y = lam_new + mom * (lam_new - lam)
        lam, t = lam_new, t_new
    z = np.einsum("nij,nj->ni", Hinv, np.einsum("nkd,nk->nd", A, lam) - c)
    return z, lam


def gains_by_poly(poles):
    """``(alpha_1, ..., alpha_r)`` from ``numpy.poly`` of the roots ``-p_i``."""
    coeffs = np.real(np.poly(-np.asarray(poles, dtype=float)))
    return coeffs[1:][::-1]


def unified_qp_cvxpy(H_u, p_relax, clf_a, clf_b, rows, lb=None, ub=None):
    """cvxpy solve of ``min 1/2 u'H u + p delta^2`` s.t. ``clf_a . u - delta <= clf_b`` and CBF rows."""
    import cvxpy as cp

    m = H_u.shape[0]
    u = cp.Variable(m)
    delta = cp.Variable()
    cons = [clf_a @ u - delta <= clf_b]
    cons += [a @ u >= bb for a, bb in rows]
    if lb is not None:
        cons += [u >= lb, u <= ub]
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(u, cp.psd_wrap(H_u)) + p_relax * cp.square(delta)),
                      cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return np.asarray(u.value, dtype=float), float(delta.value)


def pendulum_energy(x, w0_sq=9.81):
    """Energy of the undamped hanging pendulum ``thetaddot = -w0^2 sin(theta)``."""
    return 0.5 * x[1] ** 2 + w0_sq * (1.0 - np.cos(x[0]))
