"""Acceptance criteria, one test each.

Every test prints a single ``CRITERION n: PASS|FAIL ...`` line (collected in
the terminal summary as well) and then asserts the verdict. Run directly with
``python3 tests/test_acceptance.py`` for just the eight lines.
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

import _jet_checks  # noqa: E402
from conftest import ACCEPTANCE_LINES  # noqa: E402

from cspx import csp, geometry, sysdef, verify  # noqa: E402

CIRCLE_ANGLES = np.pi / 8 + np.arange(8) * np.pi / 4
PARABOLA_X = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)
SLIME_CHART = ((1.0, 0.5), (1.2, 0.5), (0.8, 0.6), (1.5, 0.3), (1.0, 1.0))
EPS_GRID = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
SEED = 20240531


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def series_of(block) -> np.ndarray:
    """Epsilon coefficients of a block along a graph, shape (p+1, rows, cols)."""
    return np.moveaxis(block.coeffs, -1, 0)


# -- 1 ------------------------------------------------------------------------------------

def test_criterion_1_circle_lambda_and_manifolds():
    spec = sysdef.load_fixture("circle")
    lam_dev = upd_max = graph_res = 0.0
    for t in CIRCLE_ANGLES:
        x, y = np.cos(t), np.sin(t)
        run = csp.run_csp(spec, [x], steps=3, y_guess=[y])
        lam = series_of(csp.lambda_on_graph(run, 0).full)
        target = np.zeros_like(lam)
        target[0] = [[-2.0, 0.0], [0.0, 0.0]]
        lam_dev = max(lam_dev, float(np.abs(lam - target).max()))
        upd = run.updates[0]
        upd_max = max(upd_max, upd.U_tilde.max_abs(), upd.L_tilde.max_abs())
        for j in range(4):
            psi = run.graphs[j].series()[:, 0]
            # x^2 + psi(eps)^2 - 1 as an eps-series
            res = np.convolve(psi, psi)[: psi.size]
            res[0] += x * x - 1.0
            graph_res = max(graph_res, float(np.abs(res).max()))
    ok = lam_dev < 1e-10 and upd_max < 1e-10 and graph_res < 1e-10
    report(1, ok, f"Lambda0 dev {lam_dev:.1e}, max|U~|,|L~| {upd_max:.1e}, "
                  f"K(0..3) residual {graph_res:.1e}")


# -- 2 ------------------------------------------------------------------------------------

def test_criterion_2_modified_circle_fiber_and_lambda():
    spec = sysdef.load_fixture("circle_mod")
    span_dev = flipped_sf = 0.0
    block_dev = {"ff": 0.0, "fs": 0.0, "sf": 0.0, "ss": 0.0}
    for t in CIRCLE_ANGLES:
        x, y = np.cos(t), np.sin(t)
        run = csp.run_csp(spec, [x], steps=1, y_guess=[y], bases="explicit")
        fb = csp.csp_fiber(run, 1)
        got = csp.span_first_order(fb.eps_series[0], fb.eps_series[1])
        want = csp.span_first_order(np.array([[x], [y]]), np.array([[y**4], [-x * y**3]]))
        span_dev = max(span_dev, float(np.abs(got - want).max()))
        lam = csp.lambda_on_graph(run, 0, eps_order=1)
        targets = {"ff": [-2.0, -2 * x * y * y], "fs": [0.0, 0.0], "sf": [0.0, y**3],
                   "ss": [0.0, 0.0]}
        for name, coeffs in targets.items():
            dev = np.abs(series_of(getattr(lam, name))[:, 0, 0] - coeffs).max()
            block_dev[name] = max(block_dev[name], float(dev))
        flipped_sf = max(flipped_sf, abs(series_of(lam.sf)[1, 0, 0] + y**3))
    ok = span_dev < 1e-8 and max(block_dev.values()) < 1e-10
    devs = ", ".join(f"{k} {v:.1e}" for k, v in block_dev.items())
    report(2, ok, f"fiber span dev {span_dev:.1e}; Lambda0 block devs {devs}; "
                  f"sf eps-coefficient vs -y^3: {flipped_sf:.1e}")


# -- 3 ------------------------------------------------------------------------------------

def test_criterion_3_parabola():
    spec = sysdef.load_fixture("parabola")
    psi_dev = off_diag = diag_dev = 0.0
    for x in PARABOLA_X:
        run = csp.run_csp(spec, [x], steps=1, eps_order=1, bases="explicit")
        psi_dev = max(psi_dev, abs(run.graphs[1].series()[1, 0] - 3 * x / (3 * x * x + 1)))
        lam = csp.lambda_on_graph(run, 1, eps_order=1)
        off_diag = max(off_diag, float(np.abs(series_of(lam.fs)).max()),
                       float(np.abs(series_of(lam.sf)).max()))
        g = 3 * x * x + 1
        ff, ss = series_of(lam.ff)[:, 0, 0], series_of(lam.ss)[:, 0, 0]
        diag_dev = max(diag_dev, float(np.abs(ff - [-g, -12 * x / g]).max()),
                       float(np.abs(ss - [0.0, -12 * x / g**2]).max()))
    ok = psi_dev < 1e-9 and off_diag < 1e-8 and diag_dev < 1e-8
    report(3, ok, f"psi1 dev {psi_dev:.1e}, off-diagonal {off_diag:.1e}, "
                  f"diagonal dev {diag_dev:.1e}")


# -- 4 ------------------------------------------------------------------------------------

def test_criterion_4_slime_first_order_graph():
    spec = sysdef.load_fixture("slime")
    worst = 0.0
    for x in SLIME_CHART:
        run = csp.run_csp(spec, list(x), steps=1)
        pipeline = run.graphs[1].series()[1]
        closed = csp.first_order_correction(spec, run.anchor)
        oracle = verify.series_matching_oracle(spec, x, 1, run.y0)[1]
        worst = max(worst, float(np.abs(pipeline - closed).max()),
                    float(np.abs(pipeline - oracle).max()), float(np.abs(closed - oracle).max()))
    report(4, worst < 1e-8, f"max pairwise disagreement {worst:.1e} over {len(SLIME_CHART)} points")


# -- 5 ------------------------------------------------------------------------------------

def test_criterion_5_convergence_orders():
    spec = sysdef.load_fixture("parabola")
    x = 1.0
    oracle = verify.series_matching_oracle(spec, [x], 8)[:, 0]

    def graph_error(psi):
        return lambda e: abs(np.polyval(psi[::-1], e) - np.polyval(oracle[::-1], e))

    slopes_a, ok_a = [], True
    for j in range(3):
        run = csp.run_csp(spec, [x], steps=j)
        est = verify.estimate_order(graph_error(run.graphs[j].series()[:, 0]), EPS_GRID)
        slopes_a.append(est.fitted_slope)
        ok_a &= est.within(j + 1)

    slopes_b, ok_b = [], True
    for j in (1, 2):
        run = csp.run_csp(spec, [x], steps=j, eps_order=j + 4)
        lam = csp.lambda_on_graph(run, j)
        for block in (lam.fs, lam.sf):
            c = series_of(block)[:, 0, 0]
            est = verify.estimate_order(lambda e: abs(np.polyval(c[::-1], e)), EPS_GRID)
            slopes_b.append(est.fitted_slope)
            ok_b &= est.within(j)
    fmt = lambda v: "/".join(f"{s:.2f}" for s in v)  # noqa: E731
    report(5, ok_a and ok_b, f"(a) psi slopes j=0,1,2: {fmt(slopes_a)} vs 1/2/3; "
                              f"(b) fs/sf slopes j=1,2: {fmt(slopes_b)} vs 1/1/2/2")


# -- 6 ------------------------------------------------------------------------------------

def _random_chart_points(spec, rng, count):
    if spec.name.startswith("circle"):
        t = rng.uniform(0.35, np.pi - 0.35, count) * rng.choice([-1, 1], count)
        return [([np.cos(a)], [np.sin(a)]) for a in t]
    if spec.name == "parabola":
        return [([v], None) for v in rng.uniform(-2.0, 2.0, count)]
    return [(list(v), None) for v in zip(rng.uniform(0.7, 1.3, count),
                                         rng.uniform(0.3, 0.8, count))]


def test_criterion_6_property_suite():
    rng = np.random.default_rng(SEED)
    worst = {"idempotence": 0.0, "PiS N": 0.0, "Df PiS": 0.0, "BA-I": 0.0,
             "projection identity": 0.0, "invariant Lambda_fs": 0.0}
    for name in sysdef.list_fixtures():
        spec = sysdef.load_fixture(name)
        for x, guess in _random_chart_points(spec, rng, 5):
            run = csp.run_csp(spec, x, steps=3, y_guess=guess)
            z = run.anchor
            P = geometry.projector_S(spec, z, 2).matrix
            worst["idempotence"] = max(worst["idempotence"], (P @ P - P).max_abs())
            N = run.parts.N.truncate(2)
            Df = np.array([run.parts.f.diff(i).const[:, 0] for i in range(spec.n)]).T
            worst["PiS N"] = max(worst["PiS N"], (P @ N).max_abs())
            worst["Df PiS"] = max(worst["Df PiS"], float(np.abs(Df @ P.const).max()))
            for basis in run.bases:
                at_anchor = np.abs(basis.B.const @ basis.A.const - np.eye(spec.n)).max()
                worst["BA-I"] = max(worst["BA-I"], float(at_anchor),
                                    basis.relative_duality_residual())
            ident = csp.projection_identity_check(spec, z)
            worst["projection identity"] = max(worst["projection identity"], ident.residual)
            if spec.invariant_manifold:
                for j in range(3):
                    fs = csp.lambda_on_graph(run, j).fs
                    worst["invariant Lambda_fs"] = max(worst["invariant Lambda_fs"],
                                                       fs.max_abs())
    ok = max(worst.values()) < 1e-10
    report(6, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# -- 7 ------------------------------------------------------------------------------------

def test_criterion_7_jet_engine():
    seeds = np.random.default_rng(SEED).integers(0, 2**32 - 1, size=100)
    checks = {"product rule": _jet_checks.product_rule,
              "inverse": _jet_checks.inverse_residual,
              "finite differences": _jet_checks.finite_differences}
    failures = {name: sum(fn(int(s)) > 1.0 for s in seeds) for name, fn in checks.items()}
    ok = not any(failures.values())
    report(7, ok, ", ".join(f"{k} {100 - v}/100" for k, v in failures.items()))


# -- 8 ------------------------------------------------------------------------------------

def test_criterion_8_trajectories():
    slime = sysdef.load_fixture("slime")
    tr = verify.integrate_trajectory(slime, [1.0, 0.8, 0.6, 0.4], 0.01, 50.0)
    fn = tr.f_norm(slime)
    below = fn < 1e-6
    # first sample from which |f| stays below the threshold to the end
    reached = bool(below[-1])
    if reached:
        last_above = np.flatnonzero(~below)
        start = last_above[-1] + 1 if last_above.size else 0
        reached = bool(np.all(below[start:]))
    late_min = float(fn[tr.times >= 5.0].min())

    circle = sysdef.load_fixture("circle")
    run = csp.run_csp(circle, [0.6], steps=1)
    direction = csp.csp_fiber(run, 1).at(0.01)[:, 0]
    rep = verify.fiber_contraction_check(circle, run.anchor, direction, 0.01, 6.0)
    ok = reached and rep.passed(0.1)
    report(8, ok, f"slime min |f| over t>=5: {late_min:.2e} (need < 1e-6); "
                  f"circle rate {rep.fitted_rate:.4f} vs {rep.eigenvalue:.1f}")


if __name__ == "__main__":
    failed = 0
    for fn in [v for k, v in sorted(globals().items()) if k.startswith("test_criterion")]:
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
