"""Closed-loop simulation: fixed-step RK4 with zero-order-hold control."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ControlAffineSystem
from .errors import DivergedState, InfeasiblePointwise, InvalidArgument, NumericalFailure
from .filters import SafetyFilter, UnifiedController, clf_cbf_qp, safety_filter

STATE_LIMIT = 1e8

FAIL_INFEASIBLE = "infeasible"
FAIL_NUMERICAL = "numerical"


@dataclass(frozen=True)
class RunConfig:
    ctrl_dt: float = 1e-3
    sim_substeps: int = 1
    duration: float = 10.0
    x0: Optional[tuple] = None
    seed: int = 0
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.ctrl_dt > 0:
            raise InvalidArgument("ctrl_dt must be positive")
        if self.sim_substeps < 1:
            raise InvalidArgument("sim_substeps must be >= 1")
        if self.duration < self.ctrl_dt:
            raise InvalidArgument("duration must be at least one control period")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.ctrl_dt))


@dataclass
class StepOutput:
    u_des: np.ndarray
    u_act: np.ndarray
    delta: float = 0.0
    status: str = "Optimal"
    active: tuple = ()
    perturbation: float = 0.0


@dataclass
class Scenario:
    """A plant, its monitored barriers, and the controllers it supports.

    ``monitors`` maps names to scalar functions logged every step (the
    barrier values ``h_i``); ``controllers`` maps controller names to
    zero-argument factories returning ``x -> StepOutput`` callables.
    """

    name: str
    sys: ControlAffineSystem
    x0: np.ndarray
    monitors: dict
    controllers: dict
    lyapunov: object = None
    disturbances: tuple = ()
    ecbf_designs: tuple = ()
    run: RunConfig = field(default_factory=RunConfig)
    params: object = None
    barrier_specs: tuple = ()
    backup: object = None
    safety_filter: object = None  # the SafetyFilter behind "safety_filter"/"backup_filter"

    def controller(self, name: str):
        if name not in self.controllers:
            raise InvalidArgument(
                f"scenario {self.name!r} has no controller {name!r}; "
                f"available: {sorted(self.controllers)}"
            )
        return self.controllers[name]()


# controller adapters ---------------------------------------------------------

def passthrough(nominal: Callable, m: int):
    def step(x):
        u = np.asarray(nominal(x), dtype=float).reshape(m)
        return StepOutput(u, u.copy(), status="Nominal")
    return step


def filtered(filt: SafetyFilter):
    def step(x):
        u, diag = safety_filter(filt, x)
        return StepOutput(diag.u_des, u, 0.0, diag.status, diag.active, diag.perturbation)
    return step


def unified(ctrl: UnifiedController):
    def step(x):
        u, delta, diag = clf_cbf_qp(ctrl, x)
        return StepOutput(np.zeros_like(u), u, delta, diag.status, diag.active, diag.perturbation)
    return step


def ecbf_unified(ctrl):
    def step(x):
        u, _mu, delta, diag = ctrl(x)
        return StepOutput(np.zeros_like(u), u, delta, diag.status, diag.active, diag.perturbation)
    return step


# integration -------------------------------------------------------------------

def rk4_step(sys: ControlAffineSystem, x, u, dt: float) -> np.ndarray:
    """One classical RK4 step with ``u`` held constant."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    try:
        k1 = sys.xdot(x, u)
        k2 = sys.xdot(x + 0.5 * dt * k1, u)
        k3 = sys.xdot(x + 0.5 * dt * k2, u)
        k4 = sys.xdot(x + dt * k3, u)
    except NumericalFailure as exc:
        raise DivergedState(str(exc), coordinate=exc.coordinate, state=x.tolist()) from None
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > STATE_LIMIT:
        raise DivergedState("state diverged during RK4 step", state=x.tolist())
    return out


# logging -----------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    t: np.ndarray
    x: np.ndarray
    u_des: np.ndarray
    u_act: np.ndarray
    h: np.ndarray
    V: np.ndarray
    delta: np.ndarray
    qp_status: list
    active_set: list
    barrier_names: tuple = ()
    failure: Optional[str] = None
    failure_time: Optional[float] = None
    failure_message: str = ""

    def __len__(self):
        return len(self.t)

    @property
    def perturbation(self) -> np.ndarray:
        return np.linalg.norm(self.u_act - self.u_des, axis=1) if len(self) else np.zeros(0)

    def header(self) -> list:
        n, m, k = self.x.shape[1], self.u_act.shape[1], self.h.shape[1]
        return (["t"] + [f"x{i}" for i in range(n)] + [f"u_des{i}" for i in range(m)]
                + [f"u_act{i}" for i in range(m)] + [f"h_{i}" for i in range(k)]
                + ["V", "delta", "qp_status", "active_set"])

    def to_csv(self, path) -> None:
        fmt = "%.17g".__mod__
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for i in range(len(self)):
                nums = [self.t[i], *self.x[i], *self.u_des[i], *self.u_act[i], *self.h[i],
                        self.V[i], self.delta[i]]
                w.writerow([fmt(float(v)) for v in nums]
                           + [self.qp_status[i], ";".join(str(a) for a in self.active_set[i])])
            if self.failure is not None:
                tail = [self.failure_time] + [math.nan] * (len(self.header()) - 3)
                w.writerow([fmt(float(v)) for v in tail] + [f"failure:{self.failure}", ""])


def read_csv(path) -> TrajectoryLog:
    """Reload a log written by :meth:`TrajectoryLog.to_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for c in header if c.startswith("x"))
    m = sum(1 for c in header if c.startswith("u_des"))
    k = sum(1 for c in header if c.startswith("h_"))
    failure = failure_time = None
    if body and body[-1][-2].startswith("failure:"):
        failure = body[-1][-2].split(":", 1)[1]
        failure_time = float(body[-1][0])
        body = body[:-1]
    nums = np.array([[float(v) for v in r[:-2]] for r in body]).reshape(len(body), -1)
    c = 0

    def take(w):
        nonlocal c
        out = nums[:, c:c + w]
        c += w
        return out

    t = take(1)[:, 0]
    x, u_des, u_act, h = take(n), take(m), take(m), take(k)
    V, delta = take(1)[:, 0], take(1)[:, 0]
    status = [r[-2] for r in body]
    active = [tuple(int(a) for a in r[-1].split(";")) if r[-1] else () for r in body]
    return TrajectoryLog(t, x, u_des, u_act, h, V, delta, status, active,
                         failure=failure, failure_time=failure_time)


def run_closed_loop(scenario: Scenario, controller, cfg: Optional[RunConfig] = None) -> TrajectoryLog:
    """Simulate ``scenario`` under ``controller`` (a name or a callable).

    The controller is evaluated every ``ctrl_dt`` and its input held over
    ``sim_substeps`` RK4 substeps. Disturbances ``(t, dx)`` are added to the
    state at the first control instant at or after ``t``. An infeasible QP
    or a diverging state stops the run and sets ``failure`` on the log.
    """
    cfg = scenario.run if cfg is None else cfg
    ctrl = scenario.controller(controller) if isinstance(controller, str) else controller
    sys = scenario.sys
    x = np.asarray(scenario.x0 if cfg.x0 is None else cfg.x0, dtype=float).copy()
    rng = np.random.default_rng(cfg.seed)
    names = tuple(scenario.monitors)
    monitors = [scenario.monitors[k] for k in names]
    V = scenario.lyapunov.V if scenario.lyapunov is not None else None
    pending = sorted(scenario.disturbances, key=lambda d: d[0])
    h_sub = cfg.ctrl_dt / cfg.sim_substeps

    T, X, UD, UA, HH, VV, DD, ST, AS = [], [], [], [], [], [], [], [], []
    failure = failure_time = None
    message = ""
    for k in range(cfg.n_steps + 1):
        t = k * cfg.ctrl_dt
        while pending and pending[0][0] <= t + 1e-12:
            x = x + np.asarray(pending.pop(0)[1], dtype=float)
        try:
            out = ctrl(x)
        except InfeasiblePointwise as exc:
            failure, failure_time, message = FAIL_INFEASIBLE, t, str(exc)
            break
        except NumericalFailure as exc:
            failure, failure_time, message = FAIL_NUMERICAL, t, str(exc)
            break
        T.append(t)
        X.append(x.copy())
        UD.append(np.asarray(out.u_des, dtype=float))
        UA.append(np.asarray(out.u_act, dtype=float))
        HH.append([float(mon(x)) for mon in monitors])
        VV.append(float(V(x)) if V is not None else math.nan)
        DD.append(float(out.delta))
        ST.append(str(out.status))
        AS.append(tuple(int(a) for a in out.active))
        if k == cfg.n_steps:
            break
        try:
            for _ in range(cfg.sim_substeps):
                x = rk4_step(sys, x, out.u_act, h_sub)
            if cfg.noise_std > 0:
                x = x + rng.normal(0.0, cfg.noise_std, size=x.shape)
        except NumericalFailure as exc:
            failure, failure_time, message = FAIL_NUMERICAL, t + cfg.ctrl_dt, str(exc)
            break

    n, m = sys.n, sys.m
    return TrajectoryLog(
        t=np.array(T), x=np.array(X).reshape(-1, n), u_des=np.array(UD).reshape(-1, m),
        u_act=np.array(UA).reshape(-1, m), h=np.array(HH).reshape(-1, len(names)),
        V=np.array(VV), delta=np.array(DD), qp_status=ST, active_set=AS,
        barrier_names=names, failure=failure, failure_time=failure_time, failure_message=message,
    )


@dataclass
class InvarianceReport:
    tol: float
    barrier_names: tuple
    min_h: list
    initial_h: list
    safe: bool
    first_violation_time: Optional[float]
    recovery_time: Optional[float]
    min_after_recovery: Optional[list]
    max_perturbation: float
    mean_active_size: float
    failure: Optional[str]
    note: str = "sampled-data run; continuous-time invariance checked to tolerance"

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def invariance_report(log: TrajectoryLog, tol: float = 1e-3) -> InvarianceReport:
    """Summarize forward invariance of every monitored barrier in ``log``.

    When every ``h(x0) >= 0`` the verdict is safe iff all logged values stay
    above ``-tol``. When some start negative, the report gives the first
    time all barriers are nonnegative and the minimum from then on, and the
    verdict is safe iff the run recovers and then stays above ``-tol``.
    """
    names = log.barrier_names or tuple(f"h_{i}" for i in range(log.h.shape[1]))
    if len(log) == 0:
        return InvarianceReport(tol, names, [], [], False, None, None, None, 0.0, 0.0, log.failure)
    H = log.h
    min_h = H.min(axis=0).tolist()
    initial = H[0].tolist()
    violated = np.flatnonzero(np.any(H < -tol, axis=1))
    first_violation = float(log.t[violated[0]]) if violated.size else None
    recovery = None
    after = None
    if min(initial) >= 0:
        safe = violated.size == 0
    else:
        ok = np.flatnonzero(np.all(H >= 0, axis=1))
        if ok.size:
            recovery = float(log.t[ok[0]])
            after = H[ok[0]:].min(axis=0).tolist()
            safe = min(after) >= -tol
        else:
            safe = False
        if recovery is not None:
            later = violated[violated > ok[0]]
            first_violation = float(log.t[later[0]]) if later.size else None
    if log.failure is not None:
        safe = False
    active_sizes = [len(a) for a in log.active_set]
    return InvarianceReport(
        tol=tol, barrier_names=names, min_h=min_h, initial_h=initial, safe=bool(safe),
        first_violation_time=first_violation, recovery_time=recovery, min_after_recovery=after,
        max_perturbation=float(np.max(log.perturbation)) if len(log) else 0.0,
        mean_active_size=float(np.mean(active_sizes)) if active_sizes else 0.0,
        failure=log.failure,
    )


def recovery_after(log: TrajectoryLog, t_from: float, tol: float = 1e-3):
    """Recovery from a violation that starts at or after ``t_from``.

    Returns ``(violation_time, recovery_time, min_after)``: the first time
    some ``h < -tol``, the first later time all ``h >= 0``, and the per
    barrier minimum from recovery to the end. Missing pieces are ``None``.
    """
    H = log.h
    idx = np.flatnonzero((log.t >= t_from) & np.any(H < -tol, axis=1))
    if idx.size == 0:
        return None, None, None
    ok = np.flatnonzero((np.arange(len(log)) > idx[0]) & np.all(H >= 0, axis=1))
    if ok.size == 0:
        return float(log.t[idx[0]]), None, None
    return float(log.t[idx[0]]), float(log.t[ok[0]]), H[ok[0]:].min(axis=0).tolist()


def exponential_bound_check(log: TrajectoryLog, designs, tol: float = 1e-3):
    """Check ``h(x(t)) >= C_out exp((F - G K) t) eta_b(x0) - tol`` for each design.

    Returns ``{name: worst margin}`` (negative below ``-tol`` means the bound
    was broken).
    """
    from .ecbf import eta_b

    out = {}
    if len(log) == 0:
        return out
    for d in designs:
        eta0 = eta_b(d.chain, log.x[0])
        margins = [d.value(x) - d.lower_bound(eta0, t - log.t[0]) for t, x in zip(log.t, log.x)]
        out[d.name] = float(min(margins))
    return out


def nu_minima(log: TrajectoryLog, designs) -> dict:
    """Minimum over the run of ``nu_i`` for ``i = 0..r-1`` per design."""
    from .ecbf import nu_chain

    out = {}
    for d in designs:
        vals = np.array([nu_chain(d, x)[: d.r] for x in log.x])
        out[d.name] = vals.min(axis=0).tolist()
    return out
