"""Control-affine systems, class-K function families and certificate specs.

Everything here is immutable and pure. States and inputs are 1-D float
arrays; ``f(x)`` has shape ``(n,)`` and ``g(x)`` shape ``(n, m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure

Array = np.ndarray


def _as_box(box, dim, name):
    if box is None:
        return None
    lo, hi = (np.asarray(b, dtype=float).reshape(dim) for b in box)
    if np.any(lo > hi):
        raise InvalidArgument(f"{name}: lower bound exceeds upper bound")
    return lo, hi


@dataclass(frozen=True)
class ControlAffineSystem:
    """Plant ``xdot = f(x) + g(x) u``.

    ``domain_box`` and ``input_box`` are ``(lo, hi)`` pairs; a missing
    input box means ``U = R^m``. ``vectorized`` declares that ``f`` and ``g``
    also accept a stacked ``(N, n)`` batch and return ``(N, n)`` and
    ``(N, n, m)``; the backup-CBF code uses this to integrate many flows at once.
    """

    n: int
    m: int
    f: Callable[[Array], Array]
    g: Callable[[Array], Array]
    domain_box: Optional[tuple] = None
    input_box: Optional[tuple] = None
    vectorized: bool = False
    name: str = "system"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvalidArgument("state and input dimensions must be positive")
        object.__setattr__(self, "domain_box", _as_box(self.domain_box, self.n, "domain_box"))
        object.__setattr__(self, "input_box", _as_box(self.input_box, self.m, "input_box"))

    def drift(self, x) -> Array:
        fx = np.asarray(self.f(x), dtype=float).reshape(self.n)
        _require_finite(fx, "f", x)
        return fx

    def actuation(self, x) -> Array:
        gx = np.asarray(self.g(x), dtype=float).reshape(self.n, self.m)
        _require_finite(gx, "g", x)
        return gx

    def xdot(self, x, u) -> Array:
        return self.drift(x) + self.actuation(x) @ np.asarray(u, dtype=float)

    def in_domain(self, x, tol: float = 0.0) -> bool:
        if self.domain_box is None:
            return True
        lo, hi = self.domain_box
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

    def in_inputs(self, u, tol: float = 1e-12) -> bool:
        if self.input_box is None:
            return True
        lo, hi = self.input_box
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= lo - tol) and np.all(u <= hi + tol))


def _require_finite(arr, what, x):
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(np.ravel(arr)))[0])
        raise NumericalFailure(
            f"{what}(x) is not finite at flat index {bad}", coordinate=bad,
            state=None if x is None else np.asarray(x, dtype=float).tolist(),
        )


_KINDS = ("linear", "cubic", "tanh_linear")


@dataclass(frozen=True)
class ExtendedClassK:
    """Extended class-K-infinity function from a closed parametric family.

    * ``linear``: ``c * r``
    * ``cubic``: ``c * r**3``
    * ``tanh_linear``: ``c1 * tanh(r) + c2 * r``

    All parameters must be positive, which makes every member strictly
    increasing on the whole real line with ``alpha(0) == 0``.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidArgument(f"unknown class-K kind {self.kind!r}; expected one of {_KINDS}")
        expected = 2 if self.kind == "tanh_linear" else 1
        params = tuple(float(p) for p in self.params)
        if len(params) != expected:
            raise InvalidArgument(f"{self.kind} takes {expected} parameter(s), got {len(params)}")
        if not all(p > 0 and math.isfinite(p) for p in params):
            raise InvalidArgument("class-K parameters must be positive and finite")
        object.__setattr__(self, "params", params)

    @classmethod
    def linear(cls, c: float = 1.0) -> "ExtendedClassK":
        return cls("linear", (c,))

    @classmethod
    def cubic(cls, c: float = 1.0) -> "ExtendedClassK":
        return cls("cubic", (c,))

    @classmethod
    def tanh_linear(cls, c1: float = 1.0, c2: float = 1.0) -> "ExtendedClassK":
        return cls("tanh_linear", (c1, c2))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "linear":
            out = self.params[0] * r
        elif self.kind == "cubic":
            out = self.params[0] * r ** 3
        else:
            c1, c2 = self.params
            out = c1 * np.tanh(r) + c2 * r
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BarrierSpec:
    """Barrier ``h`` with gradient; the safe set is ``{h >= 0}``.

    ``value_and_grad`` is an optional fused evaluator used when computing
    ``h`` and its gradient together is cheaper than separately.
    """

    h: Callable[[Array], float]
    grad_h: Callable[[Array], Array]
    alpha: ExtendedClassK = field(default_factory=ExtendedClassK.linear)
    name: str = "h"
    value_and_grad: Optional[Callable[[Array], tuple]] = None

    def evaluate(self, x):
        if self.value_and_grad is not None:
            value, grad = self.value_and_grad(x)
        else:
            value, grad = self.h(x), self.grad_h(x)
        return float(value), np.asarray(grad, dtype=float)

    def value(self, x) -> float:
        return float(self.h(x))

    def constraint_row(self, sys: ControlAffineSystem, x):
        """Row ``(a, b)`` with ``a . u >= b`` equivalent to ``u in K_cbf(x)``."""
        hx, grad = self.evaluate(x)
        lf, lg = lie_derivatives(sys, grad, x)
        return lg, -lf - self.alpha(hx)


@dataclass(frozen=True)
class LyapunovSpec:
    """CLF ``V`` with gradient, decay function ``gamma`` and optional rapidity ``epsilon``.

    The enforced decay is ``Vdot <= -gamma(V) / epsilon``; ``epsilon=None``
    means 1.
    """

    V: Callable[[Array], float]
    grad_V: Callable[[Array], Array]
    gamma: ExtendedClassK = field(default_factory=ExtendedClassK.linear)
    epsilon: Optional[float] = None
    x_eq: Optional[Sequence[float]] = None
    name: str = "V"

    def __post_init__(self):
        if self.epsilon is not None and not 0.0 < self.epsilon <= 1.0:
            raise InvalidArgument("epsilon must lie in (0, 1]")

    def decay(self, x) -> float:
        eps = 1.0 if self.epsilon is None else self.epsilon
        return self.gamma(max(float(self.V(x)), 0.0)) / eps

    def check_positive_definite(self, samples, tol: float = 1e-12) -> bool:
        """Spot check: ``V(x_eq) == 0`` and ``V > 0`` on samples away from ``x_eq``."""
        if self.x_eq is None:
            raise InvalidArgument("no equilibrium declared")
        x_eq = np.asarray(self.x_eq, dtype=float)
        if abs(self.V(x_eq)) > tol:
            return False
        for x in samples:
            x = np.asarray(x, dtype=float)
            if np.linalg.norm(x - x_eq) > 1e-6 and not self.V(x) > 0:
                return False
        return True


def lie_derivatives(sys: ControlAffineSystem, grad, x):
    """Return ``(L_f, L_g)`` of a scalar field with gradient ``grad`` at ``x``."""
    grad = np.asarray(grad, dtype=float).reshape(sys.n)
    _require_finite(grad, "gradient", x)
    fx = sys.drift(x)
    gx = sys.actuation(x)
    return float(grad @ fx), grad @ gx


def fd_gradient(fun, x, rel_step: float = 1e-4) -> Array:
    """Five-point central finite-difference gradient of a scalar function.

    Step per coordinate is ``rel_step * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        s = rel_step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = s
        out[i] = (-fun(x + 2 * e) + 8 * fun(x + e) - 8 * fun(x - e) + fun(x - 2 * e)) / (12 * s)
    return out


@dataclass
class GradientReport:
    deviations: np.ndarray
    tolerances: np.ndarray
    passed: bool

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviations)) if self.deviations.size else 0.0

    @property
    def failing(self) -> list:
        return [int(i) for i in np.flatnonzero(self.deviations > self.tolerances)]


def check_gradient_consistency(spec, samples) -> GradientReport:
    """Compare an analytic gradient field against finite differences.

    Works on a :class:`BarrierSpec` or :class:`LyapunovSpec`. A sample passes
    when the max-abs deviation is at most ``max(1e-5, 1e-4 * ||grad||)``.
    Nonsmooth points show up as large deviations; nothing is raised.
    """
    if isinstance(spec, BarrierSpec):
        fun, grad = spec.h, spec.grad_h
    elif isinstance(spec, LyapunovSpec):
        fun, grad = spec.V, spec.grad_V
    else:
        raise InvalidArgument("expected a BarrierSpec or LyapunovSpec")
    devs, tols = [], []
    for x in samples:
        x = np.asarray(x, dtype=float)
        analytic = np.asarray(grad(x), dtype=float)
        numeric = fd_gradient(lambda y: float(fun(y)), x)
        devs.append(float(np.max(np.abs(analytic - numeric))))
        tols.append(max(1e-5, 1e-4 * float(np.linalg.norm(analytic))))
    devs, tols = np.array(devs), np.array(tols)
    return GradientReport(devs, tols, bool(np.all(devs <= tols)))
