"""Planar swing-foot analog of walking on stepping stones.

The swing foot ``F`` is a planar double integrator with acceleration input.
State ``(F_x, F_y, V_x, V_y, s)`` where ``s`` is a clock (``sdot = 1``) that
drives the tracking reference. The foot must stay inside the circle
``(O1, R1)`` and outside ``(O2, R2)``::

    h1 = R1 - |F - O1|,    h2 = |F - O2| - R2

Both have relative degree 2. With ``n = (F - O)/|F - O|``::

    d/dt |F - O|   = n . V
    d2/dt2 |F - O| = n . u + (|V|^2 - (n . V)^2) / |F - O|
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from ..core import BarrierSpec, ControlAffineSystem, ExtendedClassK, LyapunovSpec
from ..ecbf import EcbfController, EcbfDesign, LieChain
from ..errors import InvalidArgument, SingularBarrierPoint
from ..filters import SafetyFilter
from ..sim import RunConfig, Scenario, ecbf_unified, filtered, passthrough

SINGULAR_DIST = 1e-9


@dataclass(frozen=True)
class StonesParams:
    O1: tuple = (0.0, 0.0)
    R1: float = 1.0
    O2: tuple = (0.0, 0.0)
    R2: float = 0.6
    poles: tuple = (2.0, 4.0)
    ref_radius: float = 0.8
    ref_amplitude: float = 0.35
    ref_radial_freq: float = 1.5
    ref_angular_rate: float = 0.6
    clf_kp: float = 16.0
    clf_kd: float = 8.0
    clf_rate: float = 0.5
    p_relax: float = 100.0

    def __post_init__(self):
        # R1 > R2 already keeps part of the outer disk outside the inner one
        if not self.R1 > self.R2 >= 0:
            raise InvalidArgument("need R1 > R2 >= 0")


def make_system() -> ControlAffineSystem:
    def f(x):
        return np.array([x[2], x[3], 0.0, 0.0, 1.0])

    G = np.zeros((5, 2))
    G[2, 0] = G[3, 1] = 1.0
    return ControlAffineSystem(5, 2, f, lambda x: G, name="stones")


def _radial(x, center):
    r = np.asarray(x[:2], dtype=float) - np.asarray(center, dtype=float)
    d = float(np.hypot(r[0], r[1]))
    if d < SINGULAR_DIST:
        raise SingularBarrierPoint(f"foot within {SINGULAR_DIST} of circle center {tuple(center)}")
    return r / d, d


def circle_chain(center, radius, inside: bool, name: str) -> LieChain:
    """Relative-degree-2 chain for ``R - |F - O|`` (inside) or ``|F - O| - R``."""
    sgn = -1.0 if inside else 1.0

    def h(x):
        _, d = _radial(x, center)
        return sgn * d + (radius if inside else -radius)

    def lf(x):
        n, _ = _radial(x, center)
        return sgn * float(n @ x[2:4])

    def lf2(x):
        n, d = _radial(x, center)
        vel = x[2:4]
        return sgn * float(vel @ vel - (n @ vel) ** 2) / d

    def lglf(x):
        n, _ = _radial(x, center)
        return sgn * n

    return LieChain(2, (h, lf, lf2), lglf, name)


def stones_barriers(x, p: StonesParams):
    """``(h1, h2, (chain1, chain2))`` at ``x``."""
    d1, d2 = designs(p)
    return d1.value(x), d2.value(x), (d1.chain, d2.chain)


def barrier_spec(chain: LieChain, center, inside: bool) -> BarrierSpec:
    sgn = -1.0 if inside else 1.0

    def grad(x):
        n, _ = _radial(x, center)
        gr = np.zeros(5)
        gr[:2] = sgn * n
        return gr

    return BarrierSpec(chain.h, grad, ExtendedClassK.linear(1.0), chain.name)


class Reference:
    """Foot reference weaving radially across both circles while sweeping in angle."""

    def __init__(self, p: StonesParams):
        self.c = np.asarray(p.O1, dtype=float)
        self.r0, self.amp = p.ref_radius, p.ref_amplitude
        self.wr, self.wt = p.ref_radial_freq, p.ref_angular_rate

    def __call__(self, s):
        rho = self.r0 + self.amp * np.sin(self.wr * s)
        drho = self.amp * self.wr * np.cos(self.wr * s)
        ddrho = -self.amp * self.wr ** 2 * np.sin(self.wr * s)
        th = self.wt * s
        er = np.array([np.cos(th), np.sin(th)])
        et = np.array([-np.sin(th), np.cos(th)])
        pos = self.c + rho * er
        vel = drho * er + rho * self.wt * et
        acc = ddrho * er + 2 * drho * self.wt * et - rho * self.wt ** 2 * er
        return pos, vel, acc


def tracking_clf(p: StonesParams) -> LyapunovSpec:
    ref = Reference(p)
    A = np.array([[0.0, 1.0], [-p.clf_kp, -p.clf_kd]])
    P = np.kron(solve_continuous_lyapunov(A.T, -np.eye(2)), np.eye(2))

    def zeta(x):
        pos, vel, acc = ref(x[4])
        return np.concatenate([x[:2] - pos, x[2:4] - vel]), vel, acc

    def V_fun(x):
        z, _, _ = zeta(x)
        return float(z @ P @ z)

    def grad(x):
        z, vel, acc = zeta(x)
        J = np.zeros((4, 5))
        J[0:2, 0:2] = np.eye(2)
        J[2:4, 2:4] = np.eye(2)
        J[0:2, 4] = -vel
        J[2:4, 4] = -acc
        return 2.0 * J.T @ (P @ z)

    pos0, vel0, _ = ref(0.0)
    x_eq = (pos0[0], pos0[1], vel0[0], vel0[1], 0.0)
    return LyapunovSpec(V_fun, grad, ExtendedClassK.linear(p.clf_rate), None, x_eq, "V")


def nominal_controller(p: StonesParams):
    """PD tracking of the reference with acceleration feedforward."""
    ref = Reference(p)

    def k(x):
        pos, vel, acc = ref(x[4])
        return acc - p.clf_kp * (x[:2] - pos) - p.clf_kd * (x[2:4] - vel)

    return k


def designs(p: StonesParams):
    c1 = circle_chain(p.O1, p.R1, True, "h1")
    c2 = circle_chain(p.O2, p.R2, False, "h2")
    return EcbfDesign(c1, p.poles), EcbfDesign(c2, p.poles)


def start_state(p: StonesParams) -> np.ndarray:
    pos, _, _ = Reference(p)(0.0)
    return np.array([pos[0], pos[1], 0.0, 0.0, 0.0])


def build(p: StonesParams | None = None, run: RunConfig | None = None) -> Scenario:
    p = StonesParams() if p is None else p
    sys = make_system()
    d1, d2 = designs(p)
    clf = tracking_clf(p)
    nominal = nominal_controller(p)
    ctrl = EcbfController(sys, clf, (d1, d2), None, p.p_relax)
    filt = SafetyFilter(sys, [d1, d2], nominal)
    controllers = {
        "nominal": lambda: passthrough(nominal, sys.m),
        "safety_filter": lambda: filtered(filt),
        "clf_ecbf_qp": lambda: ecbf_unified(ctrl),
    }
    monitors = {"h1": d1.value, "h2": d2.value}
    specs = (barrier_spec(d1.chain, p.O1, True), barrier_spec(d2.chain, p.O2, False))
    return Scenario("stones", sys, start_state(p), monitors, controllers, lyapunov=clf,
                    ecbf_designs=(d1, d2), run=run or RunConfig(duration=10.0), params=p,
                    barrier_specs=specs, safety_filter=filt)
