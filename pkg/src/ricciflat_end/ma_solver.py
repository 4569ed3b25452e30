"""Radial Monge-Ampere solver.

Under the radial ansatz the equation ``(omega + i ddbar u)^n / omega^n =
e^{f + eps u}`` becomes the first-order system

    h' = e^{f + eps u},   u' = h^{1/n} - t^{1/n},   h = (t^{1/n} + u')^n,

with boundary data ``h(t0) = t0 + c0`` and ``u(T) = 0``.  We solve for the
deviation ``g = h - t`` instead of ``h`` so that far-field quantities of
size 1e-14 are not lost to cancellation against ``t``.

The discrete system is the trapezoidal two-point scheme with the
Euler-Maclaurin end-slope correction (fourth order, ``scheme="hermite"``)
or without it (second order, ``scheme="trapezoid"``).  Each cell couples
only its two end nodes, so the Jacobian is banded with two sub- and two
super-diagonals in the interleaved ordering ``(u_0, g_0, u_1, g_1, ...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.linalg import lapack
from scipy.special import roots_legendre

from .model_end import ModelEnd, RadialField, RadialGrid, forcing_tail

SCHEMES = ("hermite", "trapezoid")
KL = KU = 2


class SolverError(RuntimeError):
    pass


class PositivityError(SolverError):
    """The iterate left the cone ``h > 0`` and step halving could not restore it."""

    def __init__(self, msg, eps=None, last=None):
        super().__init__(msg)
        self.eps = eps
        self.last = last


class ConvergenceError(SolverError):
    """Newton did not reach the residual tolerance.

    Carries the last iterate and the residual history.
    """

    def __init__(self, msg, eps=None, last=None, history=()):
        super().__init__(msg)
        self.eps = eps
        self.last = last
        self.history = list(history)


class SingularJacobianError(SolverError):
    def __init__(self, msg, pivot):
        super().__init__(msg)
        self.pivot = pivot


@dataclass(frozen=True)
class SolverConfig:
    eps_start: float = 1.0
    eps_ratio: float = 0.5
    eps_floor: float = 1e-10
    newton_tol: float = 1e-11
    newton_max_iter: int = 50
    line_search_halvings: int = 30
    scheme: str = "hermite"

    def __post_init__(self):
        for name in ("eps_start", "eps_floor", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.eps_ratio < 1.0:
            raise ValueError("eps_ratio must lie in (0, 1)")
        if self.newton_max_iter < 1 or self.line_search_halvings < 1:
            raise ValueError("iteration limits must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class NewtonReport:
    iterations: int = 0
    final_residual: float = 0.0
    residual_history: tuple = ()
    damping: tuple = ()

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "residual_history": list(self.residual_history),
            "damping": list(self.damping),
        }


@dataclass(frozen=True, eq=False)
class Solution:
    """Discrete radial solution.

    ``dev`` holds ``h - t``; ``h`` is reconstructed on demand.  The node
    derivatives ``u'`` and ``u''`` are the ones the collocation scheme uses,
    i.e. the discrete solution is read as a piecewise cubic Hermite
    interpolant with slopes given by the equation at the nodes.
    """

    grid: RadialGrid
    u: RadialField
    dev: np.ndarray
    eps: float
    n: int
    f: np.ndarray
    report: NewtonReport = field(default_factory=NewtonReport)

    @property
    def t(self):
        return self.grid.nodes

    @property
    def h(self) -> RadialField:
        return RadialField(self.grid, self.t + self.dev)

    @property
    def log_ratio(self):
        """log(h / t)."""
        return np.log1p(self.dev / self.t)

    def lambda_minus_one(self):
        """``(lambda_base - 1, lambda_fiber - 1)`` without cancellation."""
        q = 1.0 / self.n
        L = self.log_ratio
        base = np.expm1(q * L)
        fiber = np.expm1((q - 1.0) * L + self.f + self.eps * self.u.values)
        return base, fiber

    @property
    def lambda_base(self) -> RadialField:
        return RadialField(self.grid, 1.0 + self.lambda_minus_one()[0])

    @property
    def lambda_fiber(self) -> RadialField:
        return RadialField(self.grid, 1.0 + self.lambda_minus_one()[1])

    def laplacian_u(self) -> np.ndarray:
        """``Delta_omega u = (n-1)(lambda_base - 1) + (lambda_fiber - 1)``."""
        base, fiber = self.lambda_minus_one()
        return (self.n - 1) * base + fiber

    def du(self) -> np.ndarray:
        q = 1.0 / self.n
        return self.t**q * np.expm1(q * self.log_ratio)


def make_state(model: ModelEnd, grid: RadialGrid, u, h, eps: float = 0.0) -> Solution:
    """Wrap arbitrary node values ``(u, h)`` as a Solution (no solve)."""
    u = np.asarray(u, dtype=float)
    dev = np.asarray(h, dtype=float) - grid.nodes
    return _state(model, grid, u, dev, eps)


def _state(model, grid, u, dev, eps, report=None):
    dev = np.array(dev, dtype=float)
    dev.setflags(write=False)
    return Solution(
        grid=grid, u=RadialField(grid, u), dev=dev, eps=float(eps), n=model.n,
        f=np.asarray(model.f(grid.nodes)), report=report or NewtonReport(),
    )


# ---------------------------------------------------------------------------
# node functions
# ---------------------------------------------------------------------------

def _node_terms(model, t, u, dev, eps, f, fp):
    """Right-hand sides, their total t-derivatives, and partials at the nodes."""
    q = 1.0 / model.n
    L = np.log1p(dev / t)
    tq = t**q
    E = np.exp(f + eps * u)
    Fg = np.expm1(f + eps * u)
    Fu = tq * np.expm1(q * L)
    DFg = E * (fp + eps * Fu)
    eL1 = np.exp((q - 1.0) * L)
    DFu = q * tq / t * np.expm1((q - 1.0) * L + f + eps * u)

    dFu_dg = q * tq / t * eL1
    d = {
        "Fg_u": eps * E,
        "Fu_g": dFu_dg,
        "DFg_u": eps * E * (fp + eps * Fu),
        "DFg_g": eps * E * dFu_dg,
        "DFu_u": eps * q * tq / t * eL1 * E,
        "DFu_g": q * (q - 1.0) * tq / t * eL1 * E / (t + dev),
    }
    return Fg, Fu, DFg, DFu, d


def _check_positive(t, dev):
    return bool(np.all(t + dev > 0.0)) and bool(np.all(np.isfinite(dev)))


def _cell_rule(t, F, DF, scheme):
    """Cell integrals of a node function under the chosen two-point rule."""
    kap = 1.0 if scheme == "hermite" else 0.0
    dt = np.diff(t)
    return 0.5 * dt * (F[:-1] + F[1:]) - kap * dt * dt / 12.0 * (DF[1:] - DF[:-1])


@lru_cache(maxsize=32)
def forcing_defect(model: ModelEnd, grid: RadialGrid, scheme: str) -> np.ndarray:
    """Exact cell integral of ``e^f - 1`` minus its two-point rule value.

    Added to the h-rows, it makes the discrete mass flux exact.  Without it
    a 1e-9 flux error near t0 persists as a constant offset in ``h - t``
    and integrates into a ``T``-proportional error in ``u``.
    """
    t = grid.nodes
    fr = model.forcing
    if fr.is_zero:
        return np.zeros(t.size - 1)
    exact = np.array([
        integrate.quad(lambda s: math.expm1(float(fr(s))), a, b, epsabs=0.0, epsrel=1e-13, limit=200)[0]
        for a, b in zip(t[:-1], t[1:])
    ])
    f, fp = fr(t), fr.derivative(t)
    rule = _cell_rule(t, np.expm1(f), np.exp(f) * fp, scheme)
    out = exact - rule
    out.setflags(write=False)
    return out


def _residual_arrays(model, grid, u, dev, eps, scheme, f, fp):
    t = grid.nodes
    if not _check_positive(t, dev):
        raise PositivityError("residual undefined: h <= 0 at some node", eps=eps)
    Fg, Fu, DFg, DFu, _ = _node_terms(model, t, u, dev, eps, f, fp)
    rg = np.diff(dev) - _cell_rule(t, Fg, DFg, scheme) - forcing_defect(model, grid, scheme)
    ru = np.diff(u) - _cell_rule(t, Fu, DFu, scheme)
    M = t.size - 1
    r = np.empty(2 * M + 2)
    r[0] = dev[0] - model.c0
    r[1:-1:2] = rg
    r[2:-1:2] = ru
    r[-1] = u[-1]
    return r


def residual_eps(model: ModelEnd, sol: Solution, eps: float, scheme: str = "hermite") -> np.ndarray:
    """Residual vector of the discrete system.

    Ordering: ``[g_0 - c0, R_g(cell 0), R_u(cell 0), ..., R_g(cell M-1),
    R_u(cell M-1), u_M]``.
    """
    t = sol.grid.nodes
    return _residual_arrays(model, sol.grid, sol.u.values, sol.dev, eps, scheme,
                            model.f(t), model.f_prime(t))


def _jacobian_banded(model, grid, u, dev, eps, scheme, f, fp):
    """Jacobian in LAPACK general-band storage (with KL extra rows for pivoting)."""
    t = grid.nodes
    M = t.size - 1
    nvar = 2 * M + 2
    kap = 1.0 if scheme == "hermite" else 0.0
    _, _, _, _, d = _node_terms(model, t, u, dev, eps, f, fp)
    dt = np.diff(t)
    c = kap * dt * dt / 12.0
    a = 0.5 * dt

    ab = np.zeros((2 * KL + KU + 1, nvar))

    def put(row, col, val):
        ab[KL + KU + row - col, col] = val

    put(0, 1, 1.0)
    for i in range(M):
        rg, ru = 2 * i + 1, 2 * i + 2
        ui, gi, uj, gj = 2 * i, 2 * i + 1, 2 * i + 2, 2 * i + 3
        # R_g row
        put(rg, ui, -a[i] * d["Fg_u"][i] - c[i] * d["DFg_u"][i])
        put(rg, gi, -1.0 - c[i] * d["DFg_g"][i])
        put(rg, uj, -a[i] * d["Fg_u"][i + 1] + c[i] * d["DFg_u"][i + 1])
        put(rg, gj, 1.0 + c[i] * d["DFg_g"][i + 1])
        # R_u row
        put(ru, ui, -1.0 - c[i] * d["DFu_u"][i])
        put(ru, gi, -a[i] * d["Fu_g"][i] - c[i] * d["DFu_g"][i])
        put(ru, uj, 1.0 + c[i] * d["DFu_u"][i + 1])
        put(ru, gj, -a[i] * d["Fu_g"][i + 1] + c[i] * d["DFu_g"][i + 1])
    put(nvar - 1, nvar - 2, 1.0)
    return ab


def band_to_dense(ab: np.ndarray) -> np.ndarray:
    nvar = ab.shape[1]
    dense = np.zeros((nvar, nvar))
    for col in range(nvar):
        for row in range(max(0, col - KU), min(nvar, col + KL + 1)):
            dense[row, col] = ab[KL + KU + row - col, col]
    return dense


def assemble_jacobian(model: ModelEnd, sol: Solution, eps: float, scheme: str = "hermite") -> np.ndarray:
    """Exact Jacobian of :func:`residual_eps` with respect to ``(u_i, h_i)``.

    Returned in LAPACK band storage, shape ``(2*KL + KU + 1, 2M + 2)``; the
    unknowns are interleaved ``(u_0, h_0, u_1, h_1, ...)``.  Use
    :func:`band_to_dense` to inspect it.
    """
    t = sol.grid.nodes
    if not _check_positive(t, sol.dev):
        raise PositivityError("Jacobian undefined: h <= 0 at some node", eps=eps)
    return _jacobian_banded(model, sol.grid, sol.u.values, sol.dev, eps, scheme,
                            model.f(t), model.f_prime(t))


def _band_solve(ab, rhs):
    lub, piv, x, info = lapack.dgbsv(KL, KU, ab, rhs)
    if info > 0:
        raise SingularJacobianError(f"Jacobian is singular at pivot {info}", pivot=int(info))
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dgbsv")
    return x


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

def _norm(r):
    return float(np.max(np.abs(r)))


def solve_eps(model: ModelEnd, grid: RadialGrid, eps: float, config: SolverConfig = SolverConfig(),
              warm_start: Solution | None = None) -> Solution:
    """Damped Newton solve of the eps-equation on ``grid``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    t = grid.nodes
    if not np.isclose(grid.t0, model.t0, rtol=1e-14, atol=0.0):
        raise ValueError("grid must start at the model's inner cut t0")
    f, fp = model.f(t), model.f_prime(t)

    if warm_start is not None:
        if warm_start.grid.M != grid.M or not np.allclose(warm_start.grid.nodes, t, rtol=1e-14):
            raise ValueError("warm start lives on a different grid")
        u, dev = np.array(warm_start.u.values), np.array(warm_start.dev)
    else:
        u, dev = np.zeros_like(t), np.zeros_like(t)
        dev[0] = model.c0

    r = _residual_arrays(model, grid, u, dev, eps, config.scheme, f, fp)
    rn = _norm(r)
    history, damping = [rn], []
    it = 0
    # A residual just under tol still leaves a large error in u, since flux
    # defects are integrated twice over [t0, T]; so the last step is always
    # taken from below tol (a quadratic polish) unless the residual is exact.
    polished = False
    while rn > config.newton_tol or (not polished and rn > 0.0):
        polished = rn <= config.newton_tol
        if it >= config.newton_max_iter:
            raise ConvergenceError(
                f"Newton did not converge at eps={eps:g}: residual {rn:.3e} after {it} iterations",
                eps=eps, last=_state(model, grid, u, dev, eps), history=history,
            )
        ab = _jacobian_banded(model, grid, u, dev, eps, config.scheme, f, fp)
        step = _band_solve(ab, -r)
        du, dg = step[0::2], step[1::2]

        alpha, accepted, saw_positive = 1.0, False, False
        for _ in range(config.line_search_halvings + 1):
            un, devn = u + alpha * du, dev + alpha * dg
            if _check_positive(t, devn):
                saw_positive = True
                rn_new = _residual_arrays(model, grid, un, devn, eps, config.scheme, f, fp)
                nn = _norm(rn_new)
                if nn < (1.0 - 1e-4 * alpha) * rn or nn <= config.newton_tol:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if not saw_positive:
                raise PositivityError(
                    f"positivity guard: h <= 0 for every damped step at eps={eps:g}",
                    eps=eps, last=_state(model, grid, u, dev, eps),
                )
            raise ConvergenceError(
                f"line search failed to reduce the residual at eps={eps:g} (residual {rn:.3e})",
                eps=eps, last=_state(model, grid, u, dev, eps), history=history,
            )
        u, dev, r, rn = un, devn, rn_new, nn
        it += 1
        history.append(rn)
        damping.append(alpha)

    report = NewtonReport(it, rn, tuple(history), tuple(damping))
    return _state(model, grid, u, dev, eps, report)


def eps_schedule(config: SolverConfig) -> list:
    out, k = [], 0
    while True:
        e = config.eps_start * config.eps_ratio**k
        if e < config.eps_floor * (1.0 - 1e-12):
            return out
        out.append(e)
        k += 1


def continue_to_limit(model: ModelEnd, grid: RadialGrid, config: SolverConfig = SolverConfig()):
    """Geometric eps-continuation down to ``eps_floor`` and a final eps=0 solve.

    Returns ``(limit_solution, trace)`` where ``trace`` holds the eps > 0
    solutions in schedule order.
    """
    trace = []
    prev = None
    for eps in eps_schedule(config) + [0.0]:
        try:
            sol = solve_eps(model, grid, eps, config, warm_start=prev)
        except SolverError as exc:
            exc.eps = eps
            raise
        if eps > 0:
            trace.append(sol)
        prev = sol
    return prev, trace


# ---------------------------------------------------------------------------
# eps = 0 quadrature oracle
# ---------------------------------------------------------------------------

_GL_X, _GL_W = roots_legendre(24)


def _panels(a, b):
    """Split [a, b] so that each panel is short compared with its distance to 0."""
    k = max(1, int(math.ceil((b - a) / (0.25 * a))))
    return np.linspace(a, b, k + 1)


def _gl_nodes(a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * _GL_X, half * _GL_W


def closed_form_eps0(model: ModelEnd, grid: RadialGrid) -> Solution:
    """Independent eps=0 solution built by quadrature.

    ``h(t) = t - int_t^inf (e^f - 1) ds`` and
    ``u(t) = -int_t^T (h^{1/n} - s^{1/n}) ds``, with composite
    Gauss-Legendre panels for both integrals.
    """
    t = grid.nodes
    M = grid.M
    q = 1.0 / model.n
    fr = model.forcing

    def expm1f(s):
        return np.expm1(fr(s))

    def u_prime(s, dev):
        return s**q * np.expm1(q * np.log1p(dev / s))

    dev = np.empty_like(t)
    u = np.empty_like(t)
    dev[-1] = -forcing_tail(model, grid.T)
    u[-1] = 0.0
    for i in range(M - 1, -1, -1):
        a, b = t[i], t[i + 1]
        g_int = 0.0
        u_int = 0.0
        edges = _panels(a, b)
        # walk panels from the right so that g(s) = g(b) - int_s^b expm1 f
        g_right = dev[i + 1]
        for j in range(edges.size - 2, -1, -1):
            pa, pb = edges[j], edges[j + 1]
            s, w = _gl_nodes(pa, pb)
            # inner integrals int_s^pb expm1 f for every outer node s
            inner = np.empty_like(s)
            for k, sk in enumerate(s):
                ss, ww = _gl_nodes(sk, pb)
                inner[k] = ww @ expm1f(ss)
            g_s = g_right - inner
            u_int += w @ u_prime(s, g_s)
            panel = w @ expm1f(s)
            g_int += panel
            g_right -= panel
        dev[i] = dev[i + 1] - g_int
        u[i] = u[i + 1] - u_int
    return _state(model, grid, u, dev, 0.0)


def eigenvalue_ratios(model: ModelEnd, sol: Solution):
    """Eigenvalues of ``omega + i ddbar u`` relative to ``omega``.

    ``lambda_base = (t^{1/n} + u') / t^{1/n}`` (multiplicity n-1) and
    ``lambda_fiber = (b + u'') / b`` with ``b = t^{1/n-1}/n``.
    """
    if not _check_positive(sol.t, sol.dev):
        raise PositivityError("eigenvalues undefined: h <= 0", eps=sol.eps)
    lb, lf = sol.lambda_base, sol.lambda_fiber
    if np.any(lb.values <= 0) or np.any(lf.values <= 0):
        raise PositivityError("metric eigenvalue ratio is not positive", eps=sol.eps)
    return lb, lf


def with_report(sol: Solution, report: NewtonReport) -> Solution:
    return replace(sol, report=report)
