"""Barrier functions induced by a backup controller.

Given a performance function ``rho`` (allowable set ``{rho >= 0}``) and a
backup law ``beta``, the induced barrier is the worst ``rho`` seen along the
backup flow::

    h(x) = min_{tau in [0, T]} rho(phi_beta(tau, x))

evaluated on the RK4 grid of the flow. An interior grid minimum is refined
by the vertex of the parabola through it and its two neighbours, which is
exact when ``rho`` is quadratic in ``tau`` near the minimum and removes the
sawtooth a raw grid minimum shows along the flow. Gradients are central
finite differences of that finite-horizon minimum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import BarrierSpec, ControlAffineSystem, ExtendedClassK
from .errors import DivergedFlow, InvalidArgument, NumericalFailure

DIVERGENCE_NORM = 1e6


class HorizonWarning(UserWarning):
    """The flow minimum sits at the horizon; the true infimum may lie beyond it."""


@dataclass(frozen=True)
class BackupCbf:
    sys: ControlAffineSystem
    rho: Callable[[np.ndarray], float]
    beta: Callable[[np.ndarray], np.ndarray]
    horizon_T: float
    flow_dt: float
    fd_step: float = 1e-4
    alpha: ExtendedClassK = field(default_factory=ExtendedClassK.linear)
    grad_rho: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "h_backup"
    refine: bool = True

    def __post_init__(self):
        steps = self.horizon_T / self.flow_dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps) or round(steps) < 10:
            raise InvalidArgument(
                f"horizon_T / flow_dt must be an integer >= 10 (got {steps:.6g})"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_T / self.flow_dt))

    def beta_in_inputs(self, samples) -> bool:
        return all(self.sys.in_inputs(self.beta(np.asarray(x, dtype=float)), tol=1e-12)
                   for x in samples)


def _closed_loop_rhs(b: BackupCbf, X):
    """``f + g beta`` for a single state ``(n,)`` or a batch ``(N, n)``."""
    sys = b.sys
    if X.ndim == 1:
        return sys.f(X) + sys.g(X) @ np.asarray(b.beta(X), dtype=float)
    if sys.vectorized:
        U = np.asarray(b.beta(X), dtype=float).reshape(X.shape[0], sys.m)
        return np.asarray(sys.f(X)) + np.einsum("nij,nj->ni", np.asarray(sys.g(X)), U)
    return np.array([_closed_loop_rhs(b, x) for x in X])


def _rk4(b, X, dt):
    k1 = _closed_loop_rhs(b, X)
    k2 = _closed_loop_rhs(b, X + 0.5 * dt * k1)
    k3 = _closed_loop_rhs(b, X + 0.5 * dt * k2)
    k4 = _closed_loop_rhs(b, X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(b: BackupCbf, X, until):
    """RK4 trajectory of one state or a batch, sampled every ``flow_dt``.

    Returns ``(taus, states)`` with ``states`` shaped ``(len(taus), ...)``.
    The last step is shortened so ``until`` itself is a sample.
    """
    n_full = int(np.floor(until / b.flow_dt + 1e-9))
    taus = [0.0]
    states = [X]
    for k in range(n_full):
        X = _rk4(b, X, b.flow_dt)
        _check_flow(X)
        taus.append((k + 1) * b.flow_dt)
        states.append(X)
    rest = until - n_full * b.flow_dt
    if rest > 1e-12 * max(1.0, until):
        X = _rk4(b, X, rest)
        _check_flow(X)
        taus.append(until)
        states.append(X)
    return np.array(taus), np.array(states)


def _check_flow(X):
    if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > DIVERGENCE_NORM:
        raise DivergedFlow("backup flow left the bounded region (|x| > 1e6 or non-finite)")


def backup_flow(b: BackupCbf, x, until: float):
    """Trajectory of ``xdot = f + g beta`` from ``x``: ``(taus, states)`` including both endpoints."""
    x = np.asarray(x, dtype=float).reshape(b.sys.n)
    return _integrate(b, x, float(until))


def _rho_along(b, states):
    """Apply rho to ``(K, n)`` or ``(K, N, n)`` state arrays.

    For a vectorized system ``rho`` must also accept a batch of states.
    """
    flat = states.reshape(-1, states.shape[-1])
    if b.sys.vectorized:
        vals = np.asarray(b.rho(flat), dtype=float).reshape(-1)
    else:
        vals = np.array([b.rho(s) for s in flat])
    return vals.reshape(states.shape[:-1])


def _grid_min(b, taus, vals):
    """Minimum over axis 0 of ``vals`` with parabolic refinement: ``(h, k)``.

    The parabola uses the grid minimum and its neighbours (shifted inward at
    the ends of the uniform grid); its vertex is accepted when it lies
    inside the three-point stencil and improves on the grid value.
    """
    k = np.argmin(vals, axis=0)
    h = np.take_along_axis(vals, k[None, ...], axis=0)[0]
    last_uniform = len(taus) - 1 if abs(taus[-1] - taus[-2] - b.flow_dt) < 1e-12 else len(taus) - 2
    if not b.refine or last_uniform < 2:
        return h, k
    kc = np.clip(k, 1, last_uniform - 1)
    lo = np.take_along_axis(vals, (kc - 1)[None, ...], axis=0)[0]
    mid = np.take_along_axis(vals, kc[None, ...], axis=0)[0]
    hi = np.take_along_axis(vals, (kc + 1)[None, ...], axis=0)[0]
    curv = lo - 2.0 * mid + hi
    safe = np.where(curv > 0, curv, 1.0)
    shift = 0.5 * (lo - hi) / safe
    vertex = mid - 0.25 * (lo - hi) * shift
    ok = (curv > 0) & (np.abs(shift) <= 1.0)
    return np.where(ok, np.minimum(h, vertex), h), k


def backup_h_details(b: BackupCbf, x):
    """``(h, tau_argmin, at_horizon)`` for one state."""
    taus, states = backup_flow(b, x, b.horizon_T)
    vals = _rho_along(b, states)
    h, k = _grid_min(b, taus, vals)
    k = int(k)
    return float(h), float(taus[k]), k == len(taus) - 1 and k > 0


def backup_h(b: BackupCbf, x) -> float:
    h, _, at_horizon = backup_h_details(b, x)
    if at_horizon:
        warnings.warn("backup flow minimum at the horizon; consider a longer horizon_T",
                      HorizonWarning, stacklevel=2)
    return h


def backup_h_batch(b: BackupCbf, X) -> np.ndarray:
    """Finite-horizon barrier for every row of ``X`` (integrated together)."""
    X = np.asarray(X, dtype=float).reshape(-1, b.sys.n)
    taus, states = _integrate(b, X, b.horizon_T)
    return _grid_min(b, taus, _rho_along(b, states))[0]


def _fd_points(x, fd_step):
    n = x.size
    steps = fd_step * np.maximum(1.0, np.abs(x))
    pts = np.empty((2 * n + 1, n))
    pts[0] = x
    for i in range(n):
        pts[1 + 2 * i] = x
        pts[1 + 2 * i, i] += steps[i]
        pts[2 + 2 * i] = x
        pts[2 + 2 * i, i] -= steps[i]
    return pts, steps


def backup_value_and_gradient(b: BackupCbf, x, fd_step=None):
    """``(h(x), grad h(x))`` from one batched integration of ``2n + 1`` flows."""
    x = np.asarray(x, dtype=float).reshape(b.sys.n)
    pts, steps = _fd_points(x, b.fd_step if fd_step is None else fd_step)
    vals = backup_h_batch(b, pts)
    grad = (vals[1::2] - vals[2::2]) / (2.0 * steps)
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericalFailure(f"non-finite backup gradient at coordinate {bad}", coordinate=bad,
                               state=x.tolist())
    return float(vals[0]), grad


def backup_h_gradient(b: BackupCbf, x, fd_step=None) -> np.ndarray:
    return backup_value_and_gradient(b, x, fd_step)[1]


class _LastState:
    """One-entry memo of ``(h, grad)``: a filter step and the logger query the same state."""

    def __init__(self, b: BackupCbf):
        self.b = b
        self.key = None
        self.val = None

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float).reshape(self.b.sys.n)
        key = x.tobytes()
        if key != self.key:
            self.val = backup_value_and_gradient(self.b, x)
            self.key = key
        return self.val[0], self.val[1].copy()

    def h(self, x):
        x = np.asarray(x, dtype=float).reshape(self.b.sys.n)
        if x.tobytes() == self.key:
            return self.val[0]
        return backup_h(self.b, x)

    def grad(self, x):
        return self.value_and_grad(x)[1]


def as_barrier_spec(b: BackupCbf) -> BarrierSpec:
    memo = _LastState(b)
    return BarrierSpec(
        h=memo.h,
        grad_h=memo.grad,
        alpha=b.alpha,
        name=b.name,
        value_and_grad=memo.value_and_grad,
    )
