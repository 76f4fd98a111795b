"""Braking double integrator: the textbook backup-CBF example.

State ``(p, v)``, ``pdot = v``, ``vdot = u`` with ``|u| <= u_max``. The
allowable set is ``p <= wall`` (``rho = wall - p``) and the backup law is
full braking ``beta = -u_max``. For ``v > 0`` the induced barrier has the
closed form ``wall - p - v^2 / (2 u_max)``; for ``v <= 0`` it is ``rho``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..backup import BackupCbf, as_barrier_spec
from ..core import ControlAffineSystem, ExtendedClassK
from ..filters import SafetyFilter
from ..sim import RunConfig, Scenario, filtered, passthrough


@dataclass(frozen=True)
class BrakingParams:
    u_max: float = 1.0
    wall: float = 1.0
    horizon: float = 5.0
    flow_dt: float = 0.05
    alpha: float = 2.0
    push: float = 0.5
    p0: float = -1.0
    v0: float = 0.0


def make_system(u_max: float = 1.0) -> ControlAffineSystem:
    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1]
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        G = np.zeros(x.shape[:-1] + (2, 1))
        G[..., 1, 0] = 1.0
        return G

    return ControlAffineSystem(2, 1, f, g, input_box=([-u_max], [u_max]), vectorized=True,
                               name="braking")


def closed_form_h(x, u_max: float = 1.0, wall: float = 1.0):
    x = np.asarray(x, dtype=float)
    v = np.maximum(x[..., 1], 0.0)
    return wall - x[..., 0] - v * v / (2.0 * u_max)


def backup_cbf(p: BrakingParams | None = None) -> BackupCbf:
    p = BrakingParams() if p is None else p
    wall, u_max = p.wall, p.u_max

    def rho(x):
        return wall - np.asarray(x, dtype=float)[..., 0]

    def beta(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1] + (1,), -u_max)

    def grad_rho(x):
        return np.array([-1.0, 0.0])

    return BackupCbf(make_system(u_max), rho, beta, p.horizon, p.flow_dt,
                     alpha=ExtendedClassK.linear(p.alpha), grad_rho=grad_rho, name="h_backup")


def build(p: BrakingParams | None = None, run: RunConfig | None = None) -> Scenario:
    p = BrakingParams() if p is None else p
    b = backup_cbf(p)
    spec = as_barrier_spec(b)
    nominal = lambda x: np.array([p.push])
    filt = SafetyFilter(b.sys, spec, nominal)
    controllers = {
        "nominal": lambda: passthrough(nominal, 1),
        "backup_filter": lambda: filtered(filt),
        "safety_filter": lambda: filtered(filt),
    }
    monitors = {"rho": lambda x: float(b.rho(x)), "h_backup": spec.h}
    return Scenario("braking", b.sys, np.array([p.p0, p.v0]), monitors, controllers,
                    run=run or RunConfig(ctrl_dt=0.01, duration=10.0), params=p, backup=b, safety_filter=filt)
