import math

import numpy as np
import pytest

from conftest import limit_run
from ricciflat_end.estimates import (
    asymptotic_exponent,
    default_delta,
    dyadic_windows,
    fit_decay,
    laplacian_pinch_consistency,
    loglog_fit,
    scaling_exponent,
    verify_main_theorem,
    verify_ueps_scaling,
)
from ricciflat_end.ma_solver import SolverConfig, continue_to_limit, make_state
from ricciflat_end.model_end import Forcing, ModelEnd, RadialField, make_grid, normalize_mass


def test_loglog_fit_exact_monomial():
    x = np.geomspace(3, 300, 50)
    slope, const, r2 = loglog_fit(x, 2.5 * x**-1.75)
    assert slope == pytest.approx(-1.75, abs=1e-12)
    assert const == pytest.approx(2.5, rel=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_dyadic_windows_cover_range():
    w = dyadic_windows(2.0, 2000.0)
    assert w[0][0] == 2.0 and w[-1][1] <= 2000.0
    assert all(hi == pytest.approx(4 * lo) for lo, hi in w)
    assert all(a[1] == b[0] for a, b in zip(w, w[1:]))


def test_fit_exact_power_law():
    g = make_grid(ModelEnd(1, 2.0), 2000.0, 512)
    fits = fit_decay(RadialField.sample(g, lambda t: t**-2.0))
    assert fits
    for f in fits:
        assert f.exponent == pytest.approx(-2.0, abs=1e-10)
        assert f.r_squared == pytest.approx(1.0, abs=1e-10)
        assert f.window[0] < f.window[1]


def test_fit_perturbed_power_law():
    t = np.geomspace(2.0, 1e5, 2000)
    fits = fit_decay((t, t**-2.0 * (1 + 1 / t)))
    far = [f for f in fits if f.window[0] >= 100]
    assert far
    assert all(-2.1 < f.exponent < -2.0 for f in far)


def test_fit_skips_bad_windows():
    t = np.geomspace(2.0, 2000.0, 300)
    # windows [2,8], [8,32], [32,128], [128,512]
    v = np.where(t < 20, np.cos(t), t**-1.0)
    v[t > 300] = 0.0
    fits = fit_decay((t, v))
    reasons = {f.skipped for f in fits}
    assert "sign change" in reasons and "field vanishes" in reasons
    few = fit_decay((t, t**-1.0), min_nodes=10**4)
    assert all(f.skipped == "too few nodes" for f in few)
    assert asymptotic_exponent(few) is None
    assert asymptotic_exponent(fits) == pytest.approx(-1.0, abs=1e-10)


def test_fit_serializes():
    d = fit_decay((np.geomspace(2, 100, 40), np.geomspace(2, 100, 40) ** -1.0))[0].as_dict()
    assert set(d) == {"exponent", "constant", "window", "r_squared", "nodes", "skipped"}


# -- main theorem -------------------------------------------------------------

def test_main_theorem_unforced():
    m = ModelEnd(2, 2.0)
    g = make_grid(m, 200.0, 64)
    rep = verify_main_theorem(m, make_state(m, g, np.zeros(65), g.nodes))
    assert rep.sup_scaled_laplacian == 0.0 and rep.pinch_constant == 0.0
    assert rep.fitted_pinch_exponent is None and rep.passed
    assert rep.delta_used == pytest.approx(1 / 6)
    assert rep.envelope_exponent == pytest.approx(-1 / 12)


@pytest.mark.parametrize("n, N", [(1, 3.0), (2, 3.5), (3, 10 / 3)])
def test_main_theorem_power(n, N):
    model, _, limit, _ = limit_run(n, N)
    rep = verify_main_theorem(model, limit, 0.02)
    assert math.isfinite(rep.pinch_constant) and math.isfinite(rep.sup_scaled_laplacian)
    assert rep.passed
    # both eigenvalue fields decay like t^-N: u' ~ t^(1/n-N), u'' / b ~ t^-N as well
    assert rep.fiber_exponent == pytest.approx(-N, abs=0.02)
    if n > 1:
        assert rep.base_exponent == pytest.approx(-N, abs=0.02)
    assert rep.fitted_pinch_exponent <= -1 / (6 * n)


def test_main_theorem_rejects_eps_solution():
    model, _, _, trace = limit_run(1, 3.0)
    with pytest.raises(ValueError):
        verify_main_theorem(model, trace[0])


def test_laplacian_pinch_consistency():
    _, _, limit, _ = limit_run(2, 3.5)
    out = laplacian_pinch_consistency(limit)
    assert out["pass"]
    assert out["measured"] <= out["predicted"] + 0.1


# -- eps scaling --------------------------------------------------------------

def test_scaling_exponent():
    assert scaling_exponent(1, 0.5) == 1.25
    assert scaling_exponent(2, 0.5) == pytest.approx(1 + 1 - 0.5 / 3)


def test_default_delta():
    assert default_delta(normalize_mass(ModelEnd(1, 2.0, Forcing("power", 1.0, 3.0)))) == 0.5
    assert default_delta(ModelEnd(2, 2.0, Forcing("power", 1.0, 2.0))) == pytest.approx(0.25)


def test_scaling_power_n1():
    model, _, _, trace = limit_run(1, 3.0)
    rep = verify_ueps_scaling(model, trace, 0.5)
    assert rep.envelope == 1.25
    assert all(rep.trivial_bound_ok)
    assert rep.fit.exponent <= 1.25 + 0.05
    assert rep.passed


def test_scaling_rejects_inadmissible_delta():
    model, _, _, trace = limit_run(1, 3.0)
    with pytest.raises(ValueError):
        verify_ueps_scaling(model, trace, 1.0)
    with pytest.raises(ValueError):
        verify_ueps_scaling(model, trace, 0.0)


def test_scaling_unforced_is_vacuous():
    m = ModelEnd(1, 2.0)
    _, trace = continue_to_limit(m, make_grid(m, 100.0, 32), SolverConfig(eps_floor=1e-3))
    rep = verify_ueps_scaling(m, trace, 0.5)
    assert rep.fit is None and all(s == 0.0 for s in rep.S) and rep.passed


def test_gradient_norm_uses_radial_formula():
    model, _, _, trace = limit_run(1, 3.0)
    rep = verify_ueps_scaling(model, trace[:1], 0.5)
    s = trace[0]
    b = (1.0 / model.n) * s.t ** (1.0 / model.n - 1.0)
    expected = np.max(np.abs(s.du()) / np.sqrt(b) * s.t**0.5)
    assert rep.grad[0] == pytest.approx(expected, rel=1e-14)
