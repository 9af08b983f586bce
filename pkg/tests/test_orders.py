"""Observed accuracy orders, recorded as they are measured.

These complement the acceptance suite: they pin down what the method actually
delivers where that differs from the nominal orders checked there.
"""
from __future__ import annotations

import numpy as np
import pytest

from cspx import csp, sysdef, verify

EPS_GRID = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


@pytest.fixture(scope="module")
def parabola():
    return sysdef.load_fixture("parabola")


@pytest.mark.parametrize("j", [1, 2])
def test_off_diagonal_lambda_is_one_order_smaller_than_j(parabola, j):
    run = csp.run_csp(parabola, [1.0], steps=j, eps_order=j + 4)
    lam = csp.lambda_on_graph(run, j)
    for block in (lam.fs, lam.sf):
        c = np.moveaxis(block.coeffs, -1, 0)[:, 0, 0]
        assert np.all(np.abs(c[: j + 1]) < 1e-12)
        est = verify.estimate_order(lambda e: abs(np.polyval(c[::-1], e)), EPS_GRID)
        assert est.within(j + 1)


def test_slime_trajectory_settles_on_the_csp_manifold():
    # |f| levels off at O(eps): the trajectory lands on the slow manifold, which
    # is O(eps) away from f = 0, and sits within O(eps^2) of K^(1)
    spec = sysdef.load_fixture("slime")
    late_f, dist_S, dist_K1 = [], [], []
    eps_values = (0.02, 0.01, 0.005, 0.0025)
    for eps in eps_values:
        tr = verify.integrate_trajectory(spec, [1.0, 0.8, 0.6, 0.4], eps, 50.0,
                                         t_eval=np.linspace(10.0, 50.0, 5))
        late_f.append(tr.f_norm(spec).max())
        dS = dK = 0.0
        for z in tr.states:
            x, y = spec.split(z)
            run = csp.run_csp(spec, x, steps=1, eps_order=2, y_guess=y)
            dS = max(dS, float(np.abs(y - run.graphs[0].series()[0]).max()))
            dK = max(dK, float(np.abs(y - run.graphs[1].evaluate(eps)).max()))
        dist_S.append(dS)
        dist_K1.append(dK)
    assert verify.fit_order(eps_values, late_f).within(1.0, 0.2)
    assert all(k < 1e-3 * s for k, s in zip(dist_K1, dist_S))
    assert dist_K1[1] < 1e-7
