"""Exponential control barrier functions for relative degree ``r >= 1``.

The barrier's derivative chain ``eta_b = (h, hdot, ..., h^(r-1))`` obeys
the companion-form system ``eta_b' = F eta_b + G mu`` with
``mu = L_f^r h + L_g L_f^{r-1} h u``. Enforcing ``mu >= -K_alpha eta_b``
with ``F - G K_alpha`` having eigenvalues ``-p_i`` (all ``p_i > 0``) keeps
``h(x(t)) >= C_out exp((F - G K_alpha) t) eta_b(x0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .core import ControlAffineSystem, LyapunovSpec
from .errors import InvalidArgument, InvalidPoles, OutsideSafeSet, RelativeDegreeViolation
from .filters import Diagnostics, _solve_unified

LGLF_TOL = 1e-12
NU_TOL = 1e-12


def companion_matrices(r: int):
    """Return ``(F, G, C_out)`` for the length-``r`` integrator chain."""
    if int(r) != r or r < 1:
        raise InvalidArgument(f"relative degree must be a positive integer, got {r!r}")
    r = int(r)
    F = np.eye(r, k=1)
    G = np.zeros((r, 1))
    G[-1, 0] = 1.0
    C_out = np.zeros((1, r))
    C_out[0, 0] = 1.0
    return F, G, C_out


def poly_from_poles(poles) -> np.ndarray:
    """Monic coefficients (highest power first) of ``prod_i (s + p_i)``."""
    coeffs = np.array([1.0])
    for p in poles:
        coeffs = np.convolve(coeffs, [1.0, float(p)])
    return coeffs


def gains_from_poles(poles) -> np.ndarray:
    """``K_alpha = (alpha_1, ..., alpha_r)`` with ``prod (s + p_i) = s^r + alpha_r s^{r-1} + ... + alpha_1``."""
    poles = np.atleast_1d(np.asarray(poles, dtype=float))
    if poles.size == 0:
        raise InvalidPoles("need at least one pole")
    if not np.all(np.isfinite(poles)) or np.any(poles <= 0):
        raise InvalidPoles(f"poles must be positive reals, got {poles.tolist()}")
    coeffs = poly_from_poles(poles)
    # coeffs = [1, alpha_r, ..., alpha_1]
    return coeffs[:0:-1].copy()


@dataclass(frozen=True)
class LieChain:
    """Analytic Lie-derivative chain of a barrier.

    ``lf_powers[k]`` evaluates ``L_f^k h`` for ``k = 0..r`` and ``lglf``
    evaluates ``L_g L_f^{r-1} h`` (an ``m``-vector).
    """

    r: int
    lf_powers: tuple
    lglf: Callable[[np.ndarray], np.ndarray]
    name: str = "h"

    def __post_init__(self):
        if self.r < 1:
            raise InvalidArgument("relative degree must be >= 1")
        if len(self.lf_powers) != self.r + 1:
            raise InvalidArgument(f"need r+1 = {self.r + 1} Lie powers, got {len(self.lf_powers)}")
        object.__setattr__(self, "lf_powers", tuple(self.lf_powers))

    def h(self, x) -> float:
        return float(self.lf_powers[0](x))

    def check_consistency(self, sys: ControlAffineSystem, samples, flow_step=1e-5, rel_tol=1e-3):
        """Compare each ``L_f^{k+1} h`` with the time derivative of ``L_f^k h`` along ``xdot = f(x)``.

        Also checks ``L_g L_f^k h = 0`` for ``k < r-1`` implicitly through the
        drift-only flow, and ``L_g L_f^{r-1} h != 0``. Returns the worst
        relative deviation and a pass flag.
        """
        worst = 0.0
        lglf_ok = True
        for x in samples:
            x = np.asarray(x, dtype=float)
            fx = sys.drift(x)
            for k in range(self.r):
                fd = (self.lf_powers[k](x + flow_step * fx) - self.lf_powers[k](x - flow_step * fx)) / (2 * flow_step)
                exact = float(self.lf_powers[k + 1](x))
                worst = max(worst, abs(fd - exact) / max(1.0, abs(exact)))
            if np.linalg.norm(self.lglf(x)) <= LGLF_TOL:
                lglf_ok = False
        return worst, bool(worst <= rel_tol and lglf_ok)


@dataclass(frozen=True)
class EcbfDesign:
    chain: LieChain
    poles: tuple
    K_alpha: np.ndarray = field(init=False)
    F: np.ndarray = field(init=False)
    G: np.ndarray = field(init=False)
    C_out: np.ndarray = field(init=False)

    def __post_init__(self):
        poles = tuple(float(p) for p in np.atleast_1d(self.poles))
        if len(poles) != self.chain.r:
            raise InvalidPoles(f"need {self.chain.r} poles, got {len(poles)}")
        object.__setattr__(self, "poles", poles)
        object.__setattr__(self, "K_alpha", gains_from_poles(poles))
        F, G, C_out = companion_matrices(self.chain.r)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "C_out", C_out)

    @property
    def r(self) -> int:
        return self.chain.r

    @property
    def name(self) -> str:
        return self.chain.name

    @property
    def closed_loop(self) -> np.ndarray:
        return self.F - self.G @ self.K_alpha[None, :]

    def value(self, x) -> float:
        return self.chain.h(x)

    def constraint_row(self, sys, x):
        return ecbf_constraint_row(self, x)

    def lower_bound(self, eta0, t) -> float:
        """``C_out exp((F - G K_alpha) t) eta0``."""
        return float((self.C_out @ expm(self.closed_loop * t) @ np.asarray(eta0, dtype=float))[0])


def eta_b(chain: LieChain, x) -> np.ndarray:
    return np.array([float(chain.lf_powers[k](x)) for k in range(chain.r)])


def nu_coefficients(poles) -> list:
    """Row ``i`` holds the weights of ``nu_i`` on ``(h, hdot, ..., h^(i))``.

    ``nu_i = (d/dt + p_i) nu_{i-1}``, so the weights are the coefficients of
    ``prod_{k<=i} (s + p_k)`` in ascending powers.
    """
    rows = [np.array([1.0])]
    for i in range(1, len(poles) + 1):
        rows.append(poly_from_poles(poles[:i])[::-1])
    return rows


def nu_chain(design: EcbfDesign, x) -> np.ndarray:
    """``(nu_0, ..., nu_r)`` at ``x``.

    ``nu_r`` is reported without its input-dependent term; the matching row
    is the ECBF constraint.
    """
    derivs = np.array([float(design.chain.lf_powers[k](x)) for k in range(design.r + 1)])
    return np.array([w @ derivs[: w.size] for w in nu_coefficients(design.poles)])


@dataclass(frozen=True)
class Validity:
    valid: bool
    witness: int | None = None

    def __bool__(self):
        return self.valid


def validate_initial_state(design: EcbfDesign, x0) -> Validity:
    """Check ``x0`` lies in every nested set ``{nu_i >= 0}``, ``i = 0..r-1``."""
    h0 = design.value(x0)
    if h0 < 0:
        raise OutsideSafeSet(f"h(x0) = {h0:.6g} < 0")
    nus = nu_chain(design, x0)
    for i in range(design.r):
        if nus[i] < -NU_TOL:
            return Validity(False, i)
    return Validity(True)


def ecbf_constraint_row(design: EcbfDesign, x):
    """``a = L_g L_f^{r-1} h(x)``, ``b = -L_f^r h(x) - K_alpha . eta_b(x)``."""
    chain = design.chain
    a = np.atleast_1d(np.asarray(chain.lglf(x), dtype=float))
    if np.linalg.norm(a) <= LGLF_TOL:
        raise RelativeDegreeViolation(f"L_g L_f^(r-1) {chain.name} vanishes at x = {np.asarray(x).tolist()}")
    b = -float(chain.lf_powers[chain.r](x)) - float(design.K_alpha @ eta_b(chain, x))
    return a, b


def clf_ecbf_qp(sys: ControlAffineSystem, lyapunov: LyapunovSpec, designs, H_cost=None,
                p_relax: float = 100.0, x=None):
    """CLF-ECBF QP with ``mu`` eliminated through its defining equality.

    ``designs`` may be one design or a list (rows are stacked). Returns
    ``(u, mu, delta, Diagnostics)`` where ``mu`` has one entry per design.
    """
    if x is None:
        raise InvalidArgument("state x is required")
    x = np.asarray(x, dtype=float)
    designs = list(designs) if isinstance(designs, (list, tuple)) else [designs]
    H_u = np.eye(sys.m) if H_cost is None else np.asarray(H_cost(x), dtype=float)
    rows = [ecbf_constraint_row(d, x) for d in designs]
    u, delta, diag = _solve_unified(sys, lyapunov, rows, H_u, p_relax, x)
    mu = np.array([float(d.chain.lf_powers[d.r](x)) + float(np.asarray(d.chain.lglf(x)) @ u)
                   for d in designs])
    return u, mu, delta, diag


@dataclass(frozen=True)
class EcbfController:
    """Callable bundle for :func:`clf_ecbf_qp`, mirroring ``UnifiedController``."""

    sys: ControlAffineSystem
    lyapunov: LyapunovSpec
    designs: Sequence[EcbfDesign]
    H_cost: Callable | None = None
    p_relax: float = 100.0

    def __call__(self, x):
        return clf_ecbf_qp(self.sys, self.lyapunov, list(self.designs), self.H_cost, self.p_relax, x)
