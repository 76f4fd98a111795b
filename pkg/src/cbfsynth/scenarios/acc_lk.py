"""Adaptive cruise control with lane keeping on a unicycle.

State ``(p_x, p_y, v, psi, omega, x_lead, v_lead, s, y_lat, v_lat)``;
inputs ``(u_l, u_a, u_lat)``. The first five coordinates are the unicycle
with point of interest offset ``a`` ahead of the axle. ``x_lead, v_lead``
is a lead vehicle on the lane axis whose speed follows a first-order lag
toward ``lead_v`` before ``slow_time`` and ``lead_v_final`` after it
(``s`` is a clock). Lane keeping runs on a separate lateral double
integrator ``(y_lat, v_lat)`` driven by ``u_lat`` with ``|u_lat| <= a_max``.

Safety:

* ``h_asr = (x_lead - p_x) - tau_hw * v``  (time headway)
* ``h_lk = d_max - sign(v_lat) y_lat - v_lat^2 / (2 a_max)``  with sign(0) = 0

A quadratic CLF asks for cruise speed ``v_desired`` (faster than the
lead), zero yaw rate and a lane change to ``y_ref``. The lateral PD gains
are underdamped so the unfiltered lane change overshoots the lane edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from ..core import BarrierSpec, ControlAffineSystem, ExtendedClassK, LyapunovSpec
from ..errors import InvalidArgument
from ..filters import SafetyFilter, UnifiedController
from ..sim import RunConfig, Scenario, filtered, passthrough, unified

PX, PY, V, PSI, OMEGA, XL, VL, CLOCK, YLAT, VLAT = range(10)
N_STATE = 10


@dataclass(frozen=True)
class UnicycleParams:
    m: float = 1.0
    I_z: float = 1.0
    a: float = 0.1

    def __post_init__(self):
        if min(self.m, self.I_z, self.a) <= 0:
            raise InvalidArgument("unicycle m, I_z and a must be positive")


@dataclass(frozen=True)
class AccParams:
    tau_hw: float = 1.8
    lead_v: float = 20.0
    lead_x0: float = 60.0
    lead_v_final: float = 12.0
    slow_time: float = 10.0
    lead_lag: float = 0.5

    def __post_init__(self):
        if self.tau_hw <= 0 or self.lead_v < 0 or self.lead_v_final < 0:
            raise InvalidArgument("need tau_hw > 0 and nonnegative lead speeds")
        if self.lead_lag <= 0:
            raise InvalidArgument("lead_lag must be positive")


@dataclass(frozen=True)
class LaneKeepParams:
    d_max: float = 1.5
    a_max: float = 2.0

    def __post_init__(self):
        if self.d_max <= 0 or self.a_max <= 0:
            raise InvalidArgument("d_max and a_max must be positive")


@dataclass(frozen=True)
class AccLkParams:
    unicycle: UnicycleParams = field(default_factory=UnicycleParams)
    acc: AccParams = field(default_factory=AccParams)
    lk: LaneKeepParams = field(default_factory=LaneKeepParams)
    v_desired: float = 25.0
    v0: float = 20.0
    y0: float = 0.0
    y_ref: float = 1.2
    alpha_asr: float = 5.0
    alpha_lk: float = 1.0
    clf_rate: float = 0.5
    lat_kp: float = 4.0
    lat_kd: float = 1.0
    p_relax: float = 100.0


def unicycle_system(params: UnicycleParams) -> ControlAffineSystem:
    """Bare five-state unicycle (used for the kinematic consistency checks)."""
    a, m, I_z = params.a, params.m, params.I_z

    def f(x):
        v, psi, w = x[2], x[3], x[4]
        return np.array([v * np.cos(psi) - a * w * np.sin(psi),
                         v * np.sin(psi) + a * w * np.cos(psi),
                         -a * w * w, w, 0.0])

    def g(x):
        G = np.zeros((5, 2))
        G[2, 0] = 1.0 / m
        G[4, 1] = 1.0 / I_z
        return G

    return ControlAffineSystem(5, 2, f, g, name="unicycle")


def make_system(p: AccLkParams) -> ControlAffineSystem:
    a, m, I_z = p.unicycle.a, p.unicycle.m, p.unicycle.I_z
    acc = p.acc

    def f(x):
        v, psi, w = x[V], x[PSI], x[OMEGA]
        target = acc.lead_v if x[CLOCK] < acc.slow_time else acc.lead_v_final
        return np.array([
            v * np.cos(psi) - a * w * np.sin(psi),
            v * np.sin(psi) + a * w * np.cos(psi),
            -a * w * w,
            w,
            0.0,
            x[VL],
            acc.lead_lag * (target - x[VL]),
            1.0,
            x[VLAT],
            0.0,
        ])

    def g(x):
        G = np.zeros((N_STATE, 3))
        G[V, 0] = 1.0 / m
        G[OMEGA, 1] = 1.0 / I_z
        G[VLAT, 2] = 1.0
        return G

    a_max = p.lk.a_max
    box = ([-np.inf, -np.inf, -a_max], [np.inf, np.inf, a_max])
    return ControlAffineSystem(N_STATE, 3, f, g, input_box=box, name="acc_lk")


def h_asr(x, tau_hw: float) -> float:
    return float((x[XL] - x[PX]) - tau_hw * x[V])


def h_lk(x, d_max: float, a_max: float) -> float:
    v = x[VLAT]
    return float(d_max - np.sign(v) * x[YLAT] - 0.5 * v * v / a_max)


def asr_barrier(p: AccLkParams) -> BarrierSpec:
    tau = p.acc.tau_hw

    def grad(x):
        gr = np.zeros(N_STATE)
        gr[PX], gr[V], gr[XL] = -1.0, -tau, 1.0
        return gr

    return BarrierSpec(lambda x: h_asr(x, tau), grad, ExtendedClassK.linear(p.alpha_asr), "h_asr")


def lk_barrier(p: AccLkParams) -> BarrierSpec:
    d_max, a_max = p.lk.d_max, p.lk.a_max

    def grad(x):
        # sign(v_lat) is treated as locally constant; it jumps at v_lat = 0
        gr = np.zeros(N_STATE)
        gr[YLAT] = -np.sign(x[VLAT])
        gr[VLAT] = -x[VLAT] / a_max
        return gr

    return BarrierSpec(lambda x: h_lk(x, d_max, a_max), grad, ExtendedClassK.linear(p.alpha_lk), "h_lk")


def lateral_P(kp: float, kd: float) -> np.ndarray:
    A = np.array([[0.0, 1.0], [-kp, -kd]])
    return solve_continuous_lyapunov(A.T, -np.eye(2))


def tracking_clf(p: AccLkParams) -> LyapunovSpec:
    P = lateral_P(p.lat_kp, p.lat_kd)
    vd, yref = p.v_desired, p.y_ref

    def V_fun(x):
        z = np.array([x[YLAT] - yref, x[VLAT]])
        return float(0.5 * (x[V] - vd) ** 2 + 0.5 * x[OMEGA] ** 2 + z @ P @ z)

    def grad(x):
        z = np.array([x[YLAT] - yref, x[VLAT]])
        gr = np.zeros(N_STATE)
        gr[V] = x[V] - vd
        gr[OMEGA] = x[OMEGA]
        gr[[YLAT, VLAT]] = 2.0 * P @ z
        return gr

    x_eq = np.zeros(N_STATE)
    x_eq[V], x_eq[YLAT] = vd, yref
    return LyapunovSpec(V_fun, grad, ExtendedClassK.linear(p.clf_rate), None, tuple(x_eq), "V")


def nominal_controller(p: AccLkParams):
    """Cruise + drift-toward-``y_ref`` law with no safety awareness."""
    kv, kw = 1.0, 2.0

    def k(x):
        return np.array([
            -kv * p.unicycle.m * (x[V] - p.v_desired),
            -kw * p.unicycle.I_z * x[OMEGA],
            -p.lat_kp * (x[YLAT] - p.y_ref) - p.lat_kd * x[VLAT],
        ])

    return k


def build(p: AccLkParams | None = None, run: RunConfig | None = None) -> Scenario:
    p = AccLkParams() if p is None else p
    sys = make_system(p)
    barriers = (asr_barrier(p), lk_barrier(p))
    clf = tracking_clf(p)
    nominal = nominal_controller(p)
    x0 = np.zeros(N_STATE)
    x0[V] = p.v0
    x0[XL], x0[VL] = p.acc.lead_x0, p.acc.lead_v
    x0[YLAT] = p.y0
    ctrl = UnifiedController(sys, clf, list(barriers), None, p.p_relax)
    filt = SafetyFilter(sys, list(barriers), nominal)
    controllers = {
        "nominal": lambda: passthrough(nominal, sys.m),
        "safety_filter": lambda: filtered(filt),
        "clf_cbf_qp": lambda: unified(ctrl),
    }
    monitors = {b.name: b.h for b in barriers}
    return Scenario("acc_lk", sys, x0, monitors, controllers, lyapunov=clf,
                    run=run or RunConfig(ctrl_dt=2e-3, duration=24.0), params=p, barrier_specs=barriers,
                    safety_filter=filt)
