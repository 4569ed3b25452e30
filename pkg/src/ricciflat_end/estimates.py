"""Decay-rate fits and the two envelope checks on computed solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ma_solver import Solution
from .model_end import ModelEnd, RadialField, reference_coefficients

WINDOW_FACTOR = 4.0
MIN_WINDOW_NODES = 8


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    constant: float
    window: tuple
    r_squared: float
    nodes: int = 0
    skipped: str | None = None

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError("fit window must satisfy t_lo < t_hi")

    def as_dict(self):
        return {
            "exponent": _finite_or_none(self.exponent),
            "constant": _finite_or_none(self.constant),
            "window": list(self.window),
            "r_squared": _finite_or_none(self.r_squared),
            "nodes": self.nodes,
            "skipped": self.skipped,
        }


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def loglog_fit(x, y):
    """Least-squares line through ``(log x, log |y|)``: (slope, constant, r^2)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    A = np.c_[lx, np.ones_like(lx)]
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ np.r_[slope, icpt]
    sst = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if sst == 0.0 else max(0.0, 1.0 - float(resid @ resid) / sst)
    return float(slope), float(math.exp(icpt)), r2


def dyadic_windows(t_lo: float, t_hi: float, factor: float = WINDOW_FACTOR):
    out, a = [], t_lo
    while a * factor <= t_hi * (1.0 + 1e-12):
        out.append((a, a * factor))
        a *= factor
    return out


def fit_decay(field, windows=None, min_nodes: int = MIN_WINDOW_NODES) -> list:
    """Per-window power-law fits of ``|field|`` against ``t``.

    ``field`` is a RadialField or a ``(t, values)`` pair; ``windows`` defaults
    to the full ``[t, 4t]`` partition starting at the first node.  Windows
    where the field vanishes or changes sign, or with fewer than
    ``min_nodes`` nodes, come back with ``skipped`` set.
    """
    if isinstance(field, RadialField):
        t, v = field.t, field.values
    else:
        t, v = (np.asarray(a, float) for a in field)
    if windows is None:
        windows = dyadic_windows(float(t[0]), float(t[-1]))
    fits = []
    for lo, hi in windows:
        sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
        tv, vv = t[sel], v[sel]
        reason = None
        if tv.size < min_nodes:
            reason = "too few nodes"
        elif np.any(vv == 0.0) or not np.all(np.isfinite(vv)):
            reason = "field vanishes"
        elif np.any(np.sign(vv) != np.sign(vv[0])):
            reason = "sign change"
        if reason:
            fits.append(DecayFit(math.nan, math.nan, (lo, hi), math.nan, int(tv.size), reason))
            continue
        slope, const, r2 = loglog_fit(tv, vv)
        fits.append(DecayFit(slope, const, (lo, hi), r2, int(tv.size)))
    return fits


def asymptotic_fit(fits) -> DecayFit | None:
    """Fit from the last window that was not skipped."""
    good = [f for f in fits if f.skipped is None]
    return good[-1] if good else None


def asymptotic_exponent(fits) -> float | None:
    fit = asymptotic_fit(fits)
    return None if fit is None else fit.exponent


# ---------------------------------------------------------------------------
# main theorem: eigenvalue pinch of the limit metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PinchReport:
    delta_used: float
    sup_scaled_laplacian: float
    pinch_constant: float
    fitted_pinch_exponent: float | None
    envelope_exponent: float
    base_exponent: float | None = None
    fiber_exponent: float | None = None
    laplacian_exponent: float | None = None
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        finite = all(math.isfinite(x) for x in (self.sup_scaled_laplacian, self.pinch_constant))
        if self.fitted_pinch_exponent is None:
            return finite
        return finite and self.fitted_pinch_exponent <= self.envelope_exponent + self.tolerance

    def as_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["pass"] = self.passed
        return d


def verify_main_theorem(model: ModelEnd, sol: Solution, tolerance: float = 0.0,
                        newton_tol: float | None = None) -> PinchReport:
    """Measure ``|lambda - 1|`` against the ``t^(-1/(6n))`` envelope.

    With ``delta = 1/(3n)`` reports ``sup_t (Delta u) t^delta``,
    ``sup_t |lambda - 1| t^(delta/2)`` over both eigenvalue fields, and the
    slower of the two asymptotic decay exponents.  Faster decay than the
    envelope passes.
    """
    if sol.eps != 0.0:
        raise ValueError("the pinch check applies to the eps = 0 limit solution")
    if newton_tol is not None and not sol.report.final_residual <= newton_tol:
        raise ValueError("solution did not converge")
    n = model.n
    delta = 1.0 / (3.0 * n)
    t = sol.t
    base, fiber = sol.lambda_minus_one()
    lap = sol.laplacian_u()
    sup_lap = float(np.max(lap * t**delta))
    sup_pinch = float(max(np.max(np.abs(base) * t ** (delta / 2)), np.max(np.abs(fiber) * t ** (delta / 2))))

    base_exp = asymptotic_exponent(fit_decay((t, base)))
    fiber_exp = asymptotic_exponent(fit_decay((t, fiber)))
    lap_exp = asymptotic_exponent(fit_decay((t, lap)))
    exps = [e for e in (base_exp, fiber_exp) if e is not None]
    return PinchReport(
        delta_used=delta,
        sup_scaled_laplacian=sup_lap + 0.0,
        pinch_constant=sup_pinch,
        fitted_pinch_exponent=max(exps) if exps else None,
        envelope_exponent=-delta / 2.0,
        base_exponent=base_exp,
        fiber_exponent=fiber_exp,
        laplacian_exponent=lap_exp,
        tolerance=tolerance,
    )


def laplacian_pinch_consistency(sol: Solution, tolerance: float = 0.1) -> dict:
    """Laplacian decay ``t^-beta`` should force eigenvalue decay at least ``t^(-beta/2)``."""
    t = sol.t
    base, fiber = sol.lambda_minus_one()
    lap_exp = asymptotic_exponent(fit_decay((t, sol.laplacian_u())))
    out = {"laplacian_exponent": lap_exp, "predicted": None, "measured": None, "pass": True}
    if lap_exp is None:
        return out
    predicted = lap_exp / 2.0
    measured = [e for e in (asymptotic_exponent(fit_decay((t, base))),
                            asymptotic_exponent(fit_decay((t, fiber)))) if e is not None]
    worst = max(measured) if measured else None
    out.update(predicted=predicted, measured=worst,
               **{"pass": worst is None or worst <= predicted + tolerance})
    return out


# ---------------------------------------------------------------------------
# eps-scaling of the perturbed solutions
# ---------------------------------------------------------------------------

def scaling_exponent(n: int, delta: float) -> float:
    """``1 + n delta - delta/(n+1)``."""
    return 1.0 + n * delta - delta / (n + 1.0)


@dataclass(frozen=True)
class ScalingReport:
    delta: float
    envelope: float
    tolerance: float
    eps: tuple
    sup_u: tuple
    S: tuple
    grad: tuple
    hess: tuple
    trivial_bound_ok: tuple
    fit: DecayFit | None
    grad_fit: DecayFit | None
    hess_fit: DecayFit | None
    trivial_slack: float = 0.0

    @property
    def passed(self) -> bool:
        ok = all(self.trivial_bound_ok)
        for fit in (self.fit, self.grad_fit, self.hess_fit):
            if fit is not None:
                ok = ok and fit.exponent <= self.envelope + self.tolerance
        return ok

    def as_dict(self):
        return {
            "delta": self.delta,
            "envelope": self.envelope,
            "tolerance": self.tolerance,
            "trivial_slack": self.trivial_slack,
            "eps": list(self.eps),
            "sup_u": list(self.sup_u),
            "S": list(self.S),
            "grad": list(self.grad),
            "hess": list(self.hess),
            "trivial_bound_ok": list(self.trivial_bound_ok),
            "fit": None if self.fit is None else self.fit.as_dict(),
            "grad_fit": None if self.grad_fit is None else self.grad_fit.as_dict(),
            "hess_fit": None if self.hess_fit is None else self.hess_fit.as_dict(),
            "pass": self.passed,
        }


def admissible_delta(model: ModelEnd) -> float:
    """Upper end of the admissible range ``0 < delta < N - 1 - 1/n``."""
    if model.forcing.is_zero:
        return math.inf
    return model.forcing.exponent - 1.0 - 1.0 / model.n


def _eps_fit(eps, values):
    eps, values = np.asarray(eps), np.asarray(values)
    keep = values > 0
    if keep.sum() < 2:
        return None
    inv = 1.0 / eps[keep]
    slope, const, r2 = loglog_fit(inv, values[keep])
    return DecayFit(slope, const, (float(inv.min()), float(inv.max())), r2, int(keep.sum()))


def verify_ueps_scaling(model: ModelEnd, trace, delta: float, tolerance: float = 0.05,
                        trivial_slack: float = 1e-10) -> ScalingReport:
    """Fit ``log S(eps)`` against ``log(1/eps)`` with ``S = sup_t |u_eps| t^delta``.

    Also fits the analogues for ``|du|_omega = |u'| / sqrt(b)`` and
    ``|Delta_omega u|``, and checks ``sup |u_eps| <= sup|f| / eps`` at every
    trace point.
    """
    if not 0.0 < delta < admissible_delta(model):
        raise ValueError(f"delta={delta} outside the admissible range (0, {admissible_delta(model)})")
    n = model.n
    supf = model.forcing.sup_abs(model.t0)
    eps, sup_u, S, grad, hess, ok = [], [], [], [], [], []
    for sol in trace:
        if not sol.eps > 0:
            raise ValueError("trace entries must have eps > 0")
        t = sol.t
        w = t**delta
        u = sol.u.values
        _, b = reference_coefficients(model, t)
        su = float(np.max(np.abs(u)))
        eps.append(sol.eps)
        sup_u.append(su)
        S.append(float(np.max(np.abs(u) * w)))
        grad.append(float(np.max(np.abs(sol.du()) / np.sqrt(b) * w)))
        hess.append(float(np.max(np.abs(sol.laplacian_u()) * w)))
        ok.append(bool(su <= supf / sol.eps + trivial_slack))
    return ScalingReport(
        delta=delta,
        envelope=scaling_exponent(n, delta),
        tolerance=tolerance,
        eps=tuple(eps), sup_u=tuple(sup_u), S=tuple(S), grad=tuple(grad), hess=tuple(hess),
        trivial_bound_ok=tuple(ok),
        fit=_eps_fit(eps, S), grad_fit=_eps_fit(eps, grad), hess_fit=_eps_fit(eps, hess),
        trivial_slack=trivial_slack,
    )


def default_delta(model: ModelEnd) -> float:
    """``min(0.5, (N - 1 - 1/n) / 2)``."""
    return min(0.5, admissible_delta(model) / 2.0)


def interior_extremum_signs(sol: Solution, f) -> dict:
    """At interior local extrema of ``u_eps`` the equation fixes the sign of ``f + eps u``.

    At a critical point ``u' = 0`` the radial equation reads
    ``1 + n t^(1-1/n) u'' = e^{f + eps u}``; a maximum (u'' <= 0) therefore
    has ``f + eps u <= 0`` and a minimum has ``f + eps u >= 0``.
    """
    u = sol.u.values
    arg = f + sol.eps * u
    interior = np.arange(1, u.size - 1)
    is_max = (u[interior] >= u[interior - 1]) & (u[interior] >= u[interior + 1])
    is_min = (u[interior] <= u[interior - 1]) & (u[interior] <= u[interior + 1])
    return {
        "max_nodes": interior[is_max].tolist(),
        "min_nodes": interior[is_min].tolist(),
        "max_values": arg[interior[is_max]].tolist(),
        "min_values": arg[interior[is_min]].tolist(),
    }
