from __future__ import annotations

import numpy as np
import pytest

from cspx import csp, sysdef, verify
from cspx.errors import IntegrationError, NumericalError, ValidationError


@pytest.fixture(scope="module")
def parabola():
    return sysdef.load_fixture("parabola")


def test_oracle_on_linear_system():
    # x' = eps, y' = -(y - x): invariant graph y = x - eps exactly
    spec = sysdef.parse_system({
        "name": "lin", "vars": ["x", "y"], "fast_dim": 1, "N": [["0"], ["-1"]],
        "f": ["y - x"], "G": ["1", "0"], "chart": ["y"]})
    h = verify.series_matching_oracle(spec, [0.3], 4)
    np.testing.assert_allclose(h[:, 0], [0.3, -1.0, 0.0, 0.0, 0.0], atol=1e-14)


def test_oracle_on_parabola(parabola):
    h = verify.series_matching_oracle(parabola, [1.0], 4)[:, 0]
    np.testing.assert_allclose(h[:3], [0.0, 0.75, 0.15625], atol=1e-13)
    for x in [-2.0, 0.5, 2.0]:
        h1 = verify.series_matching_oracle(parabola, [x], 1)[1, 0]
        assert h1 == pytest.approx(3 * x / (3 * x**2 + 1), abs=1e-12)


@pytest.mark.parametrize("p", [2, 4])
def test_oracle_satisfies_invariance_to_its_order(parabola, p):
    # y' - h'(x) x' on the truncated graph shrinks like eps^(p+1); the graph's
    # x-slope comes from neighbouring oracle evaluations
    x0, dx = 0.5, 1e-4
    polys = [verify.series_matching_oracle(parabola, [x], p)[::-1, 0]
             for x in (x0 - dx, x0, x0 + dx)]

    def residual(eps):
        ym, y, yp = (np.polyval(c, eps) for c in polys)
        rhs = sysdef.vector_field(parabola, eps)(0.0, np.array([x0, y]))
        return abs(rhs[1] - (yp - ym) / (2 * dx) * rhs[0])

    est = verify.estimate_order(residual, [0.04, 0.02, 0.01, 0.005])
    assert est.within(p + 1, band=0.3)


def test_fit_order_recovers_power():
    eps = np.array(verify.DEFAULT_EPS_GRID)
    est = verify.fit_order(eps, 3.0 * eps**2)
    assert est.fitted_slope == pytest.approx(2.0) and est.r_squared == pytest.approx(1.0)
    assert est.within(2.1) and not est.within(2.3)


def test_fit_order_rejects_bad_input():
    with pytest.raises(ValidationError):
        verify.fit_order([0.1, 0.01], [1.0, 0.1])
    with pytest.raises(NumericalError):
        verify.fit_order([0.1, 0.03, 0.01, 0.003], [1.0, 0.0, 0.1, 0.01])


def test_circle_trajectory_lands_on_the_circle():
    spec = sysdef.load_fixture("circle")
    tr = verify.integrate_trajectory(spec, [2.0, 0.0], 0.1, 10.0)
    assert abs(np.hypot(*tr.states[-1]) - 1.0) < 1e-8
    assert tr.f_norm(spec)[-1] < 1e-8
    assert tr.method == "RK45" and tr.nfev > 0


def test_integration_input_errors():
    spec = sysdef.load_fixture("circle")
    with pytest.raises(ValidationError):
        verify.integrate_trajectory(spec, [1.0], 0.1, 1.0)
    with pytest.raises(ValidationError):
        verify.integrate_trajectory(spec, [1.0, 0.0], 0.1, -1.0)


def test_blow_up_is_reported():
    spec = sysdef.parse_system({
        "name": "blow", "vars": ["x", "y"], "fast_dim": 1, "N": [["0"], ["1"]],
        "f": ["y^2"], "G": ["0", "0"], "chart": ["y"]})
    with pytest.raises(IntegrationError, match="stopped"):
        verify.integrate_trajectory(spec, [0.0, 1.0], 0.1, 2.0)


def test_parabola_fiber_contraction(parabola):
    run = csp.run_csp(parabola, [1.0], steps=1)
    fb = csp.csp_fiber(run, 1)
    rep = verify.fiber_contraction_check(parabola, run.anchor, fb.at(0.01)[:, 0], 0.01, 4.0)
    assert rep.eigenvalue == pytest.approx(-4.0)
    assert rep.passed()
