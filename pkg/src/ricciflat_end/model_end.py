"""Radial model end near the divisor.

Everything is written in the coordinate ``t = -log|S|^2`` on the region
``t >= t0``.  On this region the reference form splits as

    omega = a(t) * omega(0) + b(t) * i dt ^ dtbar,
    a(t) = t**(1/n),  b(t) = (1/n) * t**(1/n - 1),

with ``omega(0)`` pulled back from the divisor (rank ``n - 1``), so every
radial quantity reduces to an ODE in ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize

GRADINGS = ("uniform_t", "uniform_quasi", "geometric")
PROFILES = ("zero", "power", "damped")

MIN_NODES = 16


class DomainError(ValueError):
    """Raised when a radial quantity is requested outside ``t >= t0``."""


@dataclass(frozen=True)
class Forcing:
    """Forcing profile ``f = log(Omega ^ Omegabar / omega^n)`` as a function of t.

    ``kind`` is one of ``zero``, ``power`` (``A t^-N``) or ``damped``
    (``A t^-N cos(kappa log t)``).
    """

    kind: str = "zero"
    amplitude: float = 0.0
    exponent: float = 3.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise ValueError(f"unknown forcing profile {self.kind!r}; expected one of {PROFILES}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros_like(t)
        val = self.amplitude * t ** (-self.exponent)
        if self.kind == "damped":
            val = val * np.cos(self.kappa * np.log(t))
        return val

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros_like(t)
        A, N = self.amplitude, self.exponent
        if self.kind == "power":
            return -N * A * t ** (-N - 1.0)
        lt = self.kappa * np.log(t)
        return -A * t ** (-N - 1.0) * (N * np.cos(lt) + self.kappa * np.sin(lt))

    def sup_abs(self, t0: float) -> float:
        """sup of |f| over [t0, inf)."""
        if self.is_zero:
            return 0.0
        # |cos| <= 1 and t^-N is decreasing; the power bound is attained at t0
        # for the power profile and is an upper envelope for the damped one.
        return abs(self.amplitude) * t0 ** (-self.exponent)


@dataclass(frozen=True)
class ModelEnd:
    n: int
    t0: float
    forcing: Forcing = field(default_factory=Forcing)
    c0: float = 0.0

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"complex dimension n must be an integer >= 1, got {self.n!r}")
        if not self.t0 > 1.0:
            raise ValueError(f"inner cut t0 must exceed 1 (|S| <= 1/e), got {self.t0}")
        if not self.forcing.is_zero:
            threshold = 1.0 + 1.0 / self.n
            if not self.forcing.exponent > threshold:
                raise ValueError(
                    f"forcing exponent N={self.forcing.exponent} must exceed 1 + 1/n = {threshold:g}; "
                    "otherwise the mass integral or the potential diverges"
                )

    def f(self, t):
        return self.forcing(t)

    def f_prime(self, t):
        return self.forcing.derivative(t)


def _check_domain(model: ModelEnd, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    # allow roundoff at the inner cut
    if np.any(t < model.t0 * (1.0 - 1e-14)):
        raise DomainError(f"t must satisfy t >= t0 = {model.t0}; got min {np.min(t)}")
    return t


def reference_coefficients(model: ModelEnd, t):
    """Return ``(a, b)``: the base and fiber coefficients of the reference form."""
    t = _check_domain(model, t)
    q = 1.0 / model.n
    return t**q, q * t ** (q - 1.0)


def eval_f(model: ModelEnd, t):
    t = _check_domain(model, t)
    return model.forcing(t)


# ---------------------------------------------------------------------------
# mass normalization
# ---------------------------------------------------------------------------

def _tail_cut(forcing: Forcing, t: float) -> float:
    """Point beyond which the tail of int expm1(f) is handled analytically."""
    N = forcing.exponent
    cut = max(t, 1.0) * 1e3
    # second-order remainder of expm1 beyond `cut`, relative to the linear tail
    while abs(forcing.amplitude) * cut ** (-N) > 1e-9:
        cut *= 10.0
    return cut


def _linear_tail(forcing: Forcing, cut: float) -> float:
    """int_cut^inf f(s) ds in closed form."""
    A, N = forcing.amplitude, forcing.exponent
    if forcing.kind == "power":
        return A * cut ** (1.0 - N) / (N - 1.0)
    # int e^{-(N-1)x} cos(kx) dx from X to inf, x = log s
    k, X, m = forcing.kappa, math.log(cut), N - 1.0
    return A * math.exp(-m * X) * (m * math.cos(k * X) - k * math.sin(k * X)) / (m * m + k * k)


def _nonlinear_tail(forcing: Forcing, cut: float) -> float:
    """int_cut^inf (expm1(f) - f) ds."""
    A, N = forcing.amplitude, forcing.exponent
    if forcing.kind == "power":
        # exact series sum_k>=2 A^k/k! * cut^(1-kN)/(kN-1)
        total, k, term = 0.0, 2, 1.0
        while True:
            c = A**k / math.factorial(k) * cut ** (1.0 - k * N) / (k * N - 1.0)
            total += c
            if abs(c) <= 1e-18 * max(abs(total), 1e-300) or k > 60:
                return total
            k += 1
    # damped: remainder is bounded by A^2/2 e^{|A| cut^-N} cut^(1-2N)/(2N-1);
    # integrate it numerically in x = log s, written so that nothing overflows
    k = forcing.kappa

    def integrand(x):
        c = math.cos(k * x)
        F = A * math.exp(-N * x) * c
        if F == 0.0:
            return 0.0
        ratio = (math.expm1(F) - F) / (F * F) if abs(F) > 1e-4 else 0.5 + F / 6.0 + F * F / 24.0
        return ratio * A * A * c * c * math.exp((1.0 - 2.0 * N) * x)

    val, _ = integrate.quad(integrand, math.log(cut), math.inf, epsabs=0.0, epsrel=1e-10, limit=200)
    return val


def forcing_tail(model: ModelEnd, t: float) -> float:
    """``int_t^inf (e^{f(s)} - 1) ds`` to ~1e-13 relative accuracy."""
    fr = model.forcing
    if fr.is_zero:
        return 0.0
    cut = _tail_cut(fr, t)
    body, err = integrate.quad(
        lambda x: math.expm1(float(fr(math.exp(x)))) * math.exp(x),
        math.log(t), math.log(cut), epsabs=0.0, epsrel=1e-13, limit=400,
    )
    tail = _linear_tail(fr, cut) + _nonlinear_tail(fr, cut)
    total = body + tail
    if not math.isfinite(total) or err > 1e-10 * max(abs(total), 1e-300):
        raise ValueError(f"mass quadrature did not converge (estimate {total}, error {err})")
    return total


def normalize_mass(model: ModelEnd) -> ModelEnd:
    """Return a copy with ``c0 = -int_{t0}^inf (e^f - 1) ds``."""
    fr = model.forcing
    if not fr.is_zero and fr.exponent <= 1.0 + 1.0 / model.n:
        raise ValueError("forcing profile is not integrable against the model end")
    return replace(model, c0=-forcing_tail(model, model.t0))


# ---------------------------------------------------------------------------
# grids and sampled fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    grading: str = "uniform_t"

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < MIN_NODES + 1:
            raise ValueError(f"a radial grid needs at least {MIN_NODES + 1} nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.grading not in GRADINGS:
            raise ValueError(f"unknown grading {self.grading!r}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def M(self) -> int:
        return self.nodes.size - 1

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    def __len__(self):
        return self.nodes.size


def quasi_exponent(n: int) -> float:
    """Exponent p with sigma = t**p the quasi-coordinate radius."""
    return (n + 1.0) / (2.0 * n)


def quasi_grid(model: ModelEnd, T: float, M: int) -> RadialGrid:
    """Nodes uniform in ``sigma = t**((n+1)/(2n))``."""
    return make_grid(model, T, M, "uniform_quasi")


def make_grid(model: ModelEnd, T: float, M: int, grading: str = "geometric") -> RadialGrid:
    if not T > model.t0:
        raise ValueError(f"outer truncation T={T} must exceed t0={model.t0}")
    if M < MIN_NODES:
        raise ValueError(f"M must be >= {MIN_NODES}, got {M}")
    s = np.linspace(0.0, 1.0, M + 1)
    if grading == "uniform_t":
        nodes = model.t0 + (T - model.t0) * s
    elif grading == "uniform_quasi":
        p = quasi_exponent(model.n)
        lo, hi = model.t0**p, T**p
        nodes = (lo + (hi - lo) * s) ** (1.0 / p)
    elif grading == "geometric":
        nodes = model.t0 * (T / model.t0) ** s
    else:
        raise ValueError(f"unknown grading {grading!r}")
    nodes[0], nodes[-1] = model.t0, T
    return RadialGrid(nodes, grading)


def _fd_weights(x0: float, x: np.ndarray, order: int) -> np.ndarray:
    """Lagrange differentiation weights (Fornberg) at ``x0`` on stencil ``x``."""
    m = x.size
    c = np.zeros((m, order + 1))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, m):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _stencil_derivative(x: np.ndarray, y: np.ndarray, order: int) -> np.ndarray:
    """Second-order accurate derivative on a non-uniform grid.

    Centered three-point stencils inside; one-sided stencils at the ends
    (three points for the first derivative, four for the second).
    """
    m = x.size
    out = np.empty(m)
    # interior, vectorized three-point formulas
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    if order == 1:
        out[1:-1] = (-h1 / (h0 * (h0 + h1)) * y[:-2]
                     + (h1 - h0) / (h0 * h1) * y[1:-1]
                     + h0 / (h1 * (h0 + h1)) * y[2:])
        end = 3
    else:
        out[1:-1] = 2.0 * (y[:-2] / (h0 * (h0 + h1)) - y[1:-1] / (h0 * h1) + y[2:] / (h1 * (h0 + h1)))
        end = 4
    out[0] = _fd_weights(x[0], x[:end], order) @ y[:end]
    out[-1] = _fd_weights(x[-1], x[-end:], order) @ y[-end:]
    return out


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise ValueError("field values must match the grid node count")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def sample(cls, grid: RadialGrid, func) -> "RadialField":
        return cls(grid, func(grid.nodes))

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def d1(self) -> np.ndarray:
        return _stencil_derivative(self.grid.nodes, self.values, 1)

    def d2(self) -> np.ndarray:
        return _stencil_derivative(self.grid.nodes, self.values, 2)


def laplacian_radial(model: ModelEnd, psi: RadialField) -> RadialField:
    """``Delta_omega psi = (n-1) psi' t^(-1/n) + n psi'' t^(1-1/n)``."""
    t = _check_domain(model, psi.t)
    if t.size < 4:
        raise ValueError("grid too short for second differences")
    n = model.n
    lap = (n - 1) * psi.d1() * t ** (-1.0 / n) + n * psi.d2() * t ** (1.0 - 1.0 / n)
    return RadialField(psi.grid, lap)


# ---------------------------------------------------------------------------
# bounded geometry in quasi-coordinates
# ---------------------------------------------------------------------------

class GeometryFactor(NamedTuple):
    value: float
    in_range: bool


def _pullback_exponent(n: int) -> float:
    return 2.0 * n / (n + 1.0)


def c_min(beta: float, delta: float, n: int = 1) -> float:
    """Smallest C from which the bounded-geometry bound holds for all |w| <= pi.

    For |w| <= pi, |w + C| >= C - pi and |arg(w + C)| <= arcsin(pi / C), so
    Re((w + C)^p) >= (C - pi)^p * (1 - 2 pi^2 / C^2) for p = 2n/(n+1) <= 2.
    C_min is the root of (2 * that lower bound)^(-delta) = beta.
    """
    if beta <= 0 or delta <= 0:
        raise ValueError("beta and delta must be positive")
    p = _pullback_exponent(n)

    def excess(C):
        lower = 2.0 * (C - math.pi) ** p * (1.0 - 2.0 * math.pi**2 / C**2)
        return -delta * math.log(lower) - math.log(beta)

    lo = math.sqrt(2.0) * math.pi * (1.0 + 1e-12) + 1e-9
    lo = max(lo, math.pi + 1e-9)
    if excess(lo) <= 0:
        return lo
    hi = 2.0 * lo
    while excess(hi) > 0:
        hi *= 2.0
    return optimize.brentq(excess, lo, hi, xtol=1e-12, rtol=1e-14)


def bounded_geometry_factor(beta: float, delta: float, C: float, w: complex, n: int = 1) -> GeometryFactor:
    """Pull-back of ``(beta + t^-delta)^-1`` in the quasi-coordinate chart.

    Returns the value together with a flag telling whether ``C >= C_min`` and
    the value lies in ``[1/(2 beta), 3/(2 beta)]``.
    """
    if abs(w) > math.pi * (1.0 + 1e-12):
        raise ValueError("quasi-coordinate chart requires |w| <= pi")
    val = geometry_factor_raw(beta, delta, C, w, n)
    ok = C >= c_min(beta, delta, n) and 0.5 / beta <= val <= 1.5 / beta
    return GeometryFactor(val, bool(ok))


def geometry_factor_raw(beta, delta, C, w, n=1):
    """Vectorized ``(beta + (2 Re((w + C)^p))^-delta)^-1`` without range checks."""
    p = _pullback_exponent(n)
    z = np.asarray(w, dtype=complex) + C
    re = 2.0 * np.real(z**p)
    return 1.0 / (beta + re ** (-np.asarray(delta, dtype=float)))


def geometry_factor_slope(beta, delta, C, w, n=1, step=1e-5):
    """``|grad_w h|`` by centered differences along Re w and Im w."""
    w = np.asarray(w, dtype=complex)
    dx = (geometry_factor_raw(beta, delta, C, w + step, n) - geometry_factor_raw(beta, delta, C, w - step, n)) / (2 * step)
    dy = (geometry_factor_raw(beta, delta, C, w + 1j * step, n)
          - geometry_factor_raw(beta, delta, C, w - 1j * step, n)) / (2 * step)
    return np.hypot(dx, dy)
