from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cspx import jets
from cspx.errors import DomainError, JetOrderError, JetShapeError, SingularJetError
from cspx.jets import Jet, JetMatrix, JetSpace

import _jet_checks

SEEDED = settings(max_examples=100, derandomize=True, deadline=None)
seeds = st.integers(min_value=0, max_value=2**32 - 1)


@SEEDED
@given(seeds)
def test_product_rule(seed):
    assert _jet_checks.product_rule(seed) <= 1.0


@SEEDED
@given(seeds)
def test_inverse_residual(seed):
    assert _jet_checks.inverse_residual(seed) <= 1.0


@SEEDED
@given(seeds)
def test_finite_differences(seed):
    assert _jet_checks.finite_differences(seed) <= 1.0


def test_coefficient_layout():
    space = JetSpace(2, 2, (1.0, 2.0))
    x, y = space.variable(0), space.variable(1)
    p = x * y
    # graded order: 1, dx, dy, dx^2, dx dy, dy^2
    np.testing.assert_allclose(p.coeffs, [2.0, 2.0, 1.0, 0.0, 1.0, 0.0])
    assert p.evaluate([0.5, -1.0]) == pytest.approx(1.5 * 1.0)


def test_elementary_function_series():
    space = JetSpace(1, 6, (0.0,))
    t = space.variable(0)
    np.testing.assert_allclose(jets.exp(t).coeffs, [1 / math.factorial(k) for k in range(7)])
    np.testing.assert_allclose(jets.log(1.0 + t).coeffs,
                               [0, 1, -1 / 2, 1 / 3, -1 / 4, 1 / 5, -1 / 6])
    s, c = jets.sin(t), jets.cos(t)
    np.testing.assert_allclose((s * s + c * c).coeffs, np.eye(7)[0], atol=1e-15)
    r = jets.sqrt(1.0 + t)
    np.testing.assert_allclose((r * r).coeffs, [1, 1, 0, 0, 0, 0, 0], atol=1e-15)


def test_integer_powers_and_division():
    space = JetSpace(2, 4, (1.5, -0.5))
    x, y = space.variable(0), space.variable(1)
    np.testing.assert_allclose((x ** 3).coeffs, (x * x * x).coeffs)
    np.testing.assert_allclose(((x ** -2) * x * x).coeffs, np.eye(space.ncoeff)[0], atol=1e-14)
    np.testing.assert_allclose(((x + y) / (x + y)).coeffs, np.eye(space.ncoeff)[0], atol=1e-14)
    with pytest.raises(TypeError):
        x ** 0.5


def test_compose_matches_direct_substitution():
    outer_space = JetSpace(2, 4, (1.0, 2.0))
    F = jets.exp(outer_space.variable(0)) * outer_space.variable(1)
    eps = jets.series_space(4)
    e = eps.variable(0)
    inner = [e * 0.5, e * e]
    direct = jets.exp(1.0 + 0.5 * e) * (2.0 + e * e)
    np.testing.assert_allclose(jets.compose(F, inner).coeffs, direct.coeffs, atol=1e-14)


def test_drop_insert_round_trip():
    rng = np.random.default_rng(3)
    space = JetSpace(3, 4, (0.1, 0.2, 0.0))
    J = Jet(space, rng.normal(size=space.ncoeff))
    rebuilt = space.zeros()
    for power in range(space.order + 1):
        rebuilt = rebuilt + jets.insert_var(jets.drop_var(J, 2, power), 2, power, space)
    np.testing.assert_allclose(rebuilt.coeffs, J.coeffs)


def test_matrix_indexing_and_stacking():
    space = JetSpace(2, 2, (0.0, 0.0))
    x, y = space.variable(0), space.variable(1)
    M = JetMatrix.from_entries(space, [[x, 1.0], [y, x * y]])
    assert M.shape == (2, 2)
    np.testing.assert_allclose(M.T.const, [[0, 0], [1, 0]])
    S = jets.hstack([M, M[:, [0]]])
    assert S.shape == (2, 3)
    assert jets.vstack([M, M]).shape == (4, 2)
    J = jets.jacobian(JetMatrix.column(space, [x * y, x + y]), 2)
    np.testing.assert_allclose(J.const, [[0, 0], [1, 1]])


def test_error_kinds():
    space = JetSpace(1, 3, (0.0,))
    t = space.variable(0)
    with pytest.raises(SingularJetError):
        t.reciprocal()
    with pytest.raises(DomainError):
        jets.log(t - 1.0)
    with pytest.raises(DomainError):
        jets.sqrt(t - 1.0)
    with pytest.raises(JetOrderError):
        t.truncate(5)
    with pytest.raises(JetOrderError):
        space.with_order(0).variable(0).diff(0)
    with pytest.raises(JetShapeError):
        jets.compose(JetSpace(2, 2, (0.0, 0.0)).variable(0), [t])
    with pytest.raises(SingularJetError):
        jets.lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))
