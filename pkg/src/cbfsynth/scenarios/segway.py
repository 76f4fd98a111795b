"""Segway-lite: a linearized, damped inverted pendulum on wheels.

State ``(v, phi, phidot, s)`` with ``s`` a clock (``sdot = 1``) feeding the
nominal controller's reference. Input ``u`` is motor voltage in
``[-15, 15]``. Dynamics (SI units, coefficients chosen for a plausible
desk-scale model, not identified from hardware)::

    vdot      = -b_v v + c_v phi + k_v u
    phiddot   = w0^2 phi - c_phi phidot - k_phi u

Positive voltage drives the wheels forward and tips the body backward.

Two safety layers are provided:

* ``segway_lite``: the naive angle barriers ``pi/12 -/+ phi`` enforced as
  relative-degree-2 ECBFs through the input-constrained safety filter.
* ``segway_backup``: a backup-controller CBF built from a saturated
  stabilizing law and the box margins of ``(v, phi, phidot)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..backup import BackupCbf, as_barrier_spec
from ..core import BarrierSpec, ControlAffineSystem, ExtendedClassK
from ..ecbf import EcbfDesign, LieChain
from ..filters import SafetyFilter
from ..sim import RunConfig, Scenario, filtered, passthrough

PHI_MAX = math.pi / 12
PHIDOT_MAX = 2 * math.pi
V_MAX = 5.0
U_MAX = 15.0


@dataclass(frozen=True)
class SegwayLiteParams:
    b_v: float = 1.0
    c_v: float = 0.5
    k_v: float = 0.4
    w0_sq: float = 18.0
    c_phi: float = 1.5
    k_phi: float = 3.0
    ref_amplitude: float = 0.35
    ref_freq: float = 0.25
    kp: float = 30.0
    kd: float = 8.0
    poles: tuple = (3.0, 6.0)
    phi0: float = 0.0
    phidot0: float = 0.0
    kick_time: float = -1.0
    kick_rate: float = 0.0
    # backup variant
    backup_kp: float = 40.0
    backup_kd: float = 12.0
    backup_horizon: float = 2.0
    backup_dt: float = 0.02
    backup_alpha: float = 5.0


def make_system(p: SegwayLiteParams) -> ControlAffineSystem:
    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = -p.b_v * x[..., 0] + p.c_v * x[..., 1]
        out[..., 1] = x[..., 2]
        out[..., 2] = p.w0_sq * x[..., 1] - p.c_phi * x[..., 2]
        out[..., 3] = 1.0
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        G = np.zeros(x.shape[:-1] + (4, 1))
        G[..., 0, 0] = p.k_v
        G[..., 2, 0] = -p.k_phi
        return G

    return ControlAffineSystem(
        4, 1, f, g,
        domain_box=([-V_MAX, -math.pi / 2, -4 * math.pi, -np.inf], [V_MAX, math.pi / 2, 4 * math.pi, np.inf]),
        input_box=([-U_MAX], [U_MAX]),
        vectorized=True,
        name="segway_lite",
    )


def reference(p: SegwayLiteParams, s):
    w = 2 * math.pi * p.ref_freq
    return p.ref_amplitude * math.sin(w * s), p.ref_amplitude * w * math.cos(w * s)


def nominal_controller(p: SegwayLiteParams):
    """Gravity-compensating PD on the pendulum angle, saturated to the voltage range."""

    def k(x):
        ref, dref = reference(p, x[3])
        u = (p.w0_sq * x[1] - p.c_phi * x[2] + p.kp * (x[1] - ref) + p.kd * (x[2] - dref)) / p.k_phi
        return np.array([min(max(u, -U_MAX), U_MAX)])

    return k


def angle_chains(p: SegwayLiteParams):
    """Chains for ``pi/12 - phi`` (upper) and ``pi/12 + phi`` (lower)."""
    chains = []
    for sgn, name in ((-1.0, "h_upper"), (1.0, "h_lower")):
        def h(x, sgn=sgn):
            return PHI_MAX + sgn * x[1]

        def lf(x, sgn=sgn):
            return sgn * x[2]

        def lf2(x, sgn=sgn):
            return sgn * (p.w0_sq * x[1] - p.c_phi * x[2])

        def lglf(x, sgn=sgn):
            return np.array([-sgn * p.k_phi])

        chains.append(LieChain(2, (h, lf, lf2), lglf, name))
    return tuple(chains)


def angle_barriers(p: SegwayLiteParams):
    """Plain ``BarrierSpec`` views of the angle limits (value and gradient only)."""
    out = []
    for chain, sgn in zip(angle_chains(p), (-1.0, 1.0)):
        grad = np.array([0.0, sgn, 0.0, 0.0])
        out.append(BarrierSpec(chain.h, lambda x, grad=grad: grad.copy(), name=chain.name))
    return tuple(out)


def _disturbances(p):
    if p.kick_time >= 0 and p.kick_rate != 0:
        return ((p.kick_time, np.array([0.0, 0.0, p.kick_rate, 0.0])),)
    return ()


def _x0(p):
    return np.array([0.0, p.phi0, p.phidot0, 0.0])


def build(p: SegwayLiteParams | None = None, run: RunConfig | None = None) -> Scenario:
    p = SegwayLiteParams() if p is None else p
    sys = make_system(p)
    designs = tuple(EcbfDesign(c, p.poles) for c in angle_chains(p))
    nominal = nominal_controller(p)
    filt = SafetyFilter(sys, list(designs), nominal)
    controllers = {
        "nominal": lambda: passthrough(nominal, sys.m),
        "safety_filter": lambda: filtered(filt),
    }
    monitors = {d.name: d.value for d in designs}
    return Scenario("segway_lite", sys, _x0(p), monitors, controllers,
                    disturbances=_disturbances(p), ecbf_designs=designs,
                    run=run or RunConfig(duration=12.0), params=p,
                    barrier_specs=angle_barriers(p), safety_filter=filt)


def box_margin(x):
    """Normalized distance to the nearest face of the ``(v, phi, phidot)`` box (batched)."""
    x = np.asarray(x, dtype=float)
    return np.minimum.reduce([
        (V_MAX - np.abs(x[..., 0])) / V_MAX,
        (PHI_MAX - np.abs(x[..., 1])) / PHI_MAX,
        (PHIDOT_MAX - np.abs(x[..., 2])) / PHIDOT_MAX,
    ])


def backup_law(p: SegwayLiteParams):
    """Saturated stabilizing law driving ``phi`` to upright (batched)."""

    def beta(x):
        x = np.asarray(x, dtype=float)
        u = ((p.w0_sq + p.backup_kp) * x[..., 1] + (p.backup_kd - p.c_phi) * x[..., 2]) / p.k_phi
        return np.clip(u, -U_MAX, U_MAX)[..., None]

    return beta


def backup_cbf(p: SegwayLiteParams) -> BackupCbf:
    return BackupCbf(
        sys=make_system(p), rho=box_margin, beta=backup_law(p),
        horizon_T=p.backup_horizon, flow_dt=p.backup_dt,
        alpha=ExtendedClassK.linear(p.backup_alpha), name="h_backup",
    )


def build_backup(p: SegwayLiteParams | None = None, run: RunConfig | None = None) -> Scenario:
    p = SegwayLiteParams() if p is None else p
    b = backup_cbf(p)
    sys = b.sys
    spec = as_barrier_spec(b)
    nominal = nominal_controller(p)
    filt = SafetyFilter(sys, spec, nominal)
    controllers = {
        "nominal": lambda: passthrough(nominal, sys.m),
        "backup_filter": lambda: filtered(filt),
        "safety_filter": lambda: filtered(filt),
    }
    monitors = {"rho": lambda x: float(box_margin(x)), "h_backup": spec.h}
    return Scenario("segway_backup", sys, _x0(p), monitors, controllers,
                    disturbances=_disturbances(p),
                    run=run or RunConfig(ctrl_dt=0.01, duration=10.0), params=p, backup=b, safety_filter=filt)
