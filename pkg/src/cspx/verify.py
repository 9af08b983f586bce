"""Independent checks: invariance-equation series, trajectories, order fits.

Nothing here calls into the CSP engine; the series oracle only uses jets and
system evaluation, so agreement with the CSP graphs is a genuine cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import jets
from .errors import (ConvergenceError, IntegrationError, NumericalError, ValidationError,
                     error_context)
from .jets import JetMatrix, JetSpace
from .sysdef import SystemSpec, eval_float, evaluate_jets, f_jacobian, vector_field

DEFAULT_EPS_GRID = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


# -- invariance-equation oracle ----------------------------------------------------------

def _graph_point(spec: SystemSpec, xs, ys) -> list:
    z = [None] * spec.n
    for i, v in zip(spec.slow_idx, xs):
        z[i] = v
    for i, v in zip(spec.fast_idx, ys):
        z[i] = v
    return z


def _critical_y(spec: SystemSpec, x0: np.ndarray, y_guess, tol=1e-13, maxiter=60) -> np.ndarray:
    y = np.ones(spec.fast_dim) if y_guess is None else np.atleast_1d(
        np.asarray(y_guess, dtype=float)).copy()
    fast = list(spec.fast_idx)
    for _ in range(maxiter):
        z = np.asarray(_graph_point(spec, x0, y), dtype=float)
        fz = eval_float(spec, z)["f"]
        if np.max(np.abs(fz)) <= tol * max(1.0, float(np.max(np.abs(z)))):
            return y
        y = y - np.linalg.solve(f_jacobian(spec, z)[:, fast], fz)
    raise ConvergenceError("oracle Newton on f = 0 did not converge", module="verify")


def series_matching_oracle(spec: SystemSpec, x_chart, p: int, y_guess=None) -> np.ndarray:
    """Coefficients h_0..h_p of the invariant graph y = sum eps^i h_i(x) at ``x_chart``.

    Substitutes the graph into H_y(x, h, eps) = D_x h H_x(x, h, eps) and solves
    order by order in eps, carrying h as a Taylor jet in (x, eps) so that D_x h
    is available. Each order is a linear problem whose operator at x0 is
    (N_y - D_x h0 N_x) D_y f; a chord sweep with that constant matrix gains one
    order in x per pass. Returns an array of shape (p + 1, n - k).
    """
    x0 = np.atleast_1d(np.asarray(x_chart, dtype=float))
    k, fd = spec.k, spec.fast_dim
    slow, fast = list(spec.slow_idx), list(spec.fast_idx)
    Q = p + 1
    with error_context("verify", x0):
        y0 = _critical_y(spec, x0, y_guess)
        z0 = np.asarray(_graph_point(spec, x0, y0), dtype=float)
        Dyf = f_jacobian(spec, z0)[:, fast]
        lu_f = jets.lu_factor(Dyf)

        # h0 as a jet in the chart variables, by chord iteration on f(x, h0(x)) = 0
        xspace = JetSpace(k, Q, tuple(x0))
        xs = [xspace.variable(i) for i in range(k)]
        h0 = xspace.constant(y0[:, None])
        for _ in range(Q):
            ys = [h0.entry(i) for i in range(fd)]
            fv = evaluate_jets(spec, _graph_point(spec, xs, ys), 0.0).f
            h0 = JetMatrix(xspace, h0.coeffs - jets.lu_solve(lu_f, fv.coeffs))

        N0 = eval_float(spec, z0)["N"]
        Dxh0 = jets.jacobian(h0, k).const
        L0 = (N0[fast] - Dxh0 @ N0[slow]) @ Dyf
        lu_L = jets.lu_factor(L0)

        space = JetSpace(k + 1, Q, tuple(x0) + (0.0,))
        h = jets.insert_var(h0, k, 0, space)
        xv = [space.variable(i) for i in range(k)]
        ev = space.variable(k)

        def residual(h: JetMatrix) -> JetMatrix:
            ys = [h.entry(i) for i in range(fd)]
            H = evaluate_jets(spec, _graph_point(spec, xv, ys), ev).H.truncate(Q - 1)
            return H[fast, 0] - jets.jacobian(h, k) @ H[slow, 0]

        coeffs = np.zeros((p + 1, fd))
        coeffs[0] = y0
        for i in range(1, p + 1):
            for _ in range(Q - i):
                r = jets.drop_var(residual(h), k, i)
                step = JetMatrix(r.space, -jets.lu_solve(lu_L, r.coeffs))
                h = h + jets.insert_var(step, k, i, space)
            coeffs[i] = jets.drop_var(h, k, i).const[:, 0]
    return coeffs


# -- trajectories ------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray     # (len(times), n)
    eps: float
    rtol: float
    atol: float
    method: str
    nfev: int

    def f_norm(self, spec: SystemSpec) -> np.ndarray:
        """max |f| along the trajectory."""
        return np.array([np.max(np.abs(eval_float(spec, z)["f"])) for z in self.states])


def integrate_trajectory(spec: SystemSpec, ic, eps: float, t_max: float, *, tol: float = 1e-10,
                         atol: float | None = None, t_eval: Sequence[float] | None = None,
                         num_points: int = 501) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) solution of z' = N f + eps G."""
    if tol <= 0:
        raise ValidationError("tolerance must be positive", module="verify")
    if t_max <= 0:
        raise ValidationError("t_max must be positive", module="verify")
    z0 = np.asarray(ic, dtype=float)
    if z0.shape != (spec.n,):
        raise ValidationError(f"initial condition must have {spec.n} entries", module="verify")
    atol = tol * 1e-2 if atol is None else atol
    if t_eval is None:
        t_eval = np.linspace(0.0, t_max, num_points)
    sol = solve_ivp(vector_field(spec, eps), (0.0, t_max), z0, method="RK45", rtol=tol,
                    atol=atol, t_eval=t_eval)
    if sol.status != 0:
        reached = float(sol.t[-1]) if sol.t.size else 0.0
        hint = (" For very small eps the problem is stiff; use the series tools "
                "(series/iterate) instead." if eps < 1e-4 else "")
        raise IntegrationError(f"integration stopped at t = {reached:.6g}: {sol.message}.{hint}",
                               module="verify", anchor=z0)
    return Trajectory(sol.t, sol.y.T, float(eps), tol, atol, "RK45", int(sol.nfev))


# -- order estimation ----------------------------------------------------------------------

@dataclass(frozen=True)
class OrderEstimate:
    eps_values: np.ndarray
    residuals: np.ndarray
    fitted_slope: float
    r_squared: float

    def within(self, expected: float, band: float = 0.15) -> bool:
        return abs(self.fitted_slope - expected) <= band


def fit_order(eps_values, residuals) -> OrderEstimate:
    """Least-squares slope of log(residual) against log(eps)."""
    e = np.asarray(eps_values, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if e.size < 4:
        raise ValidationError("order estimation needs at least 4 eps values", module="verify")
    if np.any(e <= 0):
        raise ValidationError("eps values must be positive", module="verify")
    bad = np.flatnonzero(~(r > 0))
    if bad.size:
        raise NumericalError(f"residual at index {int(bad[0])} is not positive "
                             f"({r[bad[0]]!r})", module="verify")
    le, lr = np.log(e), np.log(r)
    slope, icpt = np.polyfit(le, lr, 1)
    pred = slope * le + icpt
    ss_res = float(np.sum((lr - pred) ** 2))
    ss_tot = float(np.sum((lr - lr.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return OrderEstimate(e, r, float(slope), r2)


def estimate_order(residual_fn: Callable[[float], float],
                   eps_list: Sequence[float] = DEFAULT_EPS_GRID) -> OrderEstimate:
    eps = np.asarray(eps_list, dtype=float)
    return fit_order(eps, [float(residual_fn(e)) for e in eps])


# -- contraction along fibers ------------------------------------------------------------------

@dataclass(frozen=True)
class ContractionReport:
    times: np.ndarray
    separation: np.ndarray
    fitted_rate: float
    eigenvalue: float
    relative_error: float

    def passed(self, rel_tol: float = 0.1) -> bool:
        return bool(np.isfinite(self.relative_error) and self.relative_error <= rel_tol)


def fiber_contraction_check(spec: SystemSpec, basepoint, direction, eps: float, t: float, *,
                            offset: float = 1e-3, tol: float = 1e-12,
                            floor: float = 1e-11) -> ContractionReport:
    """Exponential rate at which a point offset along ``direction`` approaches the basepoint orbit.

    ``direction`` is a fiber vector (for instance the first column of a CSP
    fiber at eps); the rate is compared with the leading (least negative)
    eigenvalue of DfN at the basepoint. Only the part of the separation curve
    that is still well above its final value enters the fit.
    """
    p = np.asarray(basepoint, dtype=float)
    d = np.asarray(direction, dtype=float)
    nd = np.linalg.norm(d)
    q = p if nd == 0 or offset == 0 else p + offset * d / nd
    t_eval = np.linspace(0.0, t, 201)
    a = integrate_trajectory(spec, p, eps, t, tol=tol, atol=tol * 1e-3, t_eval=t_eval)
    b = integrate_trajectory(spec, q, eps, t, tol=tol, atol=tol * 1e-3, t_eval=t_eval)
    sep = np.linalg.norm(a.states - b.states, axis=1)
    N = eval_float(spec, p)["N"]
    eig = np.linalg.eigvals(f_jacobian(spec, p) @ N)
    lead = float(np.max(eig.real))
    # points within a decade of the final separation belong to the slow drift
    # between neighbouring basepoints, not to the contraction
    use = (sep > floor) & (sep > 10.0 * sep[-1])
    if np.count_nonzero(use) < 3:
        return ContractionReport(a.times, sep, float("nan"), lead, float("nan"))
    rate = float(np.polyfit(a.times[use], np.log(sep[use]), 1)[0])
    return ContractionReport(a.times, sep, rate, lead, abs(rate - lead) / abs(lead))
