"""Seeded jet-arithmetic checks shared by the unit and acceptance suites.

Each returns the worst normalized error for one random case; a case passes
when the value is at most 1.
"""
from __future__ import annotations

import numpy as np

from cspx import jets
from cspx.jets import FINITE_DIFF_TOL, INVERSE_TOL, PRODUCT_RULE_TOL, Jet, JetMatrix, JetSpace


def random_space(rng) -> JetSpace:
    nv = int(rng.integers(1, 4))
    order = int(rng.integers(2, 6))
    return JetSpace(nv, order, tuple(rng.normal(size=nv)))


def product_rule(seed: int) -> float:
    rng = np.random.default_rng(seed)
    space = random_space(rng)
    a = Jet(space, rng.normal(size=space.ncoeff))
    b = Jet(space, rng.normal(size=space.ncoeff))
    m = space.order - 1
    scale = max(1.0, a.max_abs() * b.max_abs()) * space.ncoeff
    worst = 0.0
    for v in range(space.num_vars):
        lhs = (a * b).diff(v)
        rhs = a.diff(v) * b.truncate(m) + a.truncate(m) * b.diff(v)
        worst = max(worst, (lhs - rhs).max_abs() / (PRODUCT_RULE_TOL * scale))
    return worst


def inverse_residual(seed: int) -> float:
    rng = np.random.default_rng(seed)
    space = random_space(rng)
    n = int(rng.integers(1, 5))
    c = rng.normal(size=(n, n, space.ncoeff)) * 0.3
    c[:, :, 0] += 2.0 * np.eye(n)
    M = JetMatrix(space, c)
    return (M @ jets.inverse(M) - np.eye(n)).max_abs() / INVERSE_TOL


def sample_function(z):
    x, y = z
    return (jets.exp(0.3 * x) * jets.sin(y) + x ** 3 / (1.0 + y * y)
            + jets.sqrt(2.0 + jets.cos(x * y)))


def finite_differences(seed: int, h: float = 1e-4) -> float:
    """First and second Taylor coefficients against central differences."""
    rng = np.random.default_rng(seed)
    anchor = rng.uniform(-1.0, 1.0, size=2)
    space = JetSpace(2, 2, tuple(anchor))
    F = sample_function([space.variable(0), space.variable(1)])
    f0 = sample_function(anchor)
    worst = abs(F.const - f0) / (1e-14 * max(1.0, abs(f0)))
    for i in range(2):
        e = np.eye(2)[i] * h
        fp, fm = sample_function(anchor + e), sample_function(anchor - e)
        d1 = (fp - fm) / (2 * h)
        d2 = (fp - 2 * f0 + fm) / h**2
        worst = max(worst, abs(F.coeffs[1 + i] - d1) / (FINITE_DIFF_TOL * max(1.0, abs(d1))))
        # the second difference loses about three more digits to cancellation
        c_ii = F.axis_series(i)[2]
        worst = max(worst, abs(c_ii - d2 / 2) / (1e3 * FINITE_DIFF_TOL * max(1.0, abs(d2))))
    return worst
