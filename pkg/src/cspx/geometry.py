"""Points on the critical manifold, complement frames and projectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import jets
from .errors import (ChartError, ConvergenceError, SingularJetError, ValidationError,
                     error_context)
from .jets import Jet, JetMatrix, JetSpace
from .sysdef import SystemSpec, eval_float, eval_parts, evaluate_jets, f_jacobian

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
CHART_COND_LIMIT = 1e12
FRAME_RANK_TOL = 1e-8


class DegenerateReferenceError(ValidationError):
    """The frozen reference frame loses rank after projection."""


def _fast_jacobian(spec: SystemSpec, z: np.ndarray) -> np.ndarray:
    return f_jacobian(spec, z)[:, list(spec.fast_idx)]


def solve_critical_point(spec: SystemSpec, x_chart, y_guess=None, *,
                         tol: float = NEWTON_TOL, maxiter: int = NEWTON_MAXITER) -> np.ndarray:
    """Newton on f(x, y) = 0 in the graph variables; returns the full point z."""
    x = np.atleast_1d(np.asarray(x_chart, dtype=float))
    if x.shape != (spec.k,):
        raise ValidationError(f"chart point must have {spec.k} entries, got {x.size}",
                              module="geometry")
    y = (np.ones(spec.fast_dim) if y_guess is None
         else np.atleast_1d(np.asarray(y_guess, dtype=float)))
    if y.shape != (spec.fast_dim,):
        raise ValidationError(f"y guess must have {spec.fast_dim} entries", module="geometry")
    z = spec.join(x, y)
    with error_context("geometry", z):
        for _ in range(maxiter):
            fz = eval_float(spec, z)["f"]
            scale = max(1.0, float(np.max(np.abs(z))))
            Dy = _fast_jacobian(spec, z)
            if np.max(np.abs(fz)) <= tol * scale:
                _check_chart(spec, Dy, z)
                return z
            if not np.all(np.isfinite(Dy)) or np.linalg.cond(Dy) > CHART_COND_LIMIT:
                raise ChartError(_chart_message(spec), anchor=z)
            y = y - np.linalg.solve(Dy, fz)
            z = spec.join(x, y)
            if not np.all(np.isfinite(z)):
                break
        raise ConvergenceError(f"Newton did not converge in {maxiter} iterations", anchor=z)


def _chart_message(spec: SystemSpec) -> str:
    ys = ", ".join(spec.var_names[i] for i in spec.fast_idx)
    return (f"D_y f is singular: the chart with graph variable(s) ({ys}) "
            "does not represent the critical manifold as a graph here")


def _check_chart(spec: SystemSpec, Dy: np.ndarray, z) -> None:
    if np.linalg.cond(Dy) > CHART_COND_LIMIT:
        raise ChartError(_chart_message(spec), anchor=z)


def check_chart(spec: SystemSpec, z) -> None:
    """Raise :class:`ChartError` if the declared chart fails at ``z``."""
    Dy = _fast_jacobian(spec, np.asarray(z, dtype=float))
    if np.linalg.cond(Dy) > CHART_COND_LIMIT:
        raise ChartError(_chart_message(spec), module="geometry", anchor=z)


# -- complement frames -----------------------------------------------------------

@dataclass(frozen=True)
class ComplementFrame:
    target: JetMatrix
    reference: np.ndarray
    result: JetMatrix


def default_reference(T0: np.ndarray) -> np.ndarray:
    """Identity columns picked greedily for the largest projected norm."""
    n, r = T0.shape
    Q, _ = np.linalg.qr(T0)
    P = np.eye(n) - Q @ Q.T
    chosen: list[int] = []
    basis = np.zeros((n, 0))
    for _ in range(n - r):
        best, best_norm = -1, -1.0
        for i in range(n):
            if i in chosen:
                continue
            v = P[:, i] - basis @ (basis.T @ P[:, i])
            nv = float(np.linalg.norm(v))
            if nv > best_norm + 1e-14:
                best, best_norm = i, nv
        v = P[:, best] - basis @ (basis.T @ P[:, best])
        basis = np.hstack([basis, (v / np.linalg.norm(v))[:, None]])
        chosen.append(best)
    return np.eye(n)[:, sorted(chosen)]


def complement_basis(target: JetMatrix, reference: np.ndarray | None = None) -> ComplementFrame:
    """Smooth frame for the orthogonal complement of Col(target).

    The frozen ``reference`` is pushed through I - T (T^T T)^{-1} T^T in jet
    arithmetic, so the result is differentiable in the anchor.
    """
    n, r = target.shape
    T0 = target.const
    if np.linalg.matrix_rank(T0) < r:
        raise DegenerateReferenceError("target does not have full column rank",
                                       module="geometry")
    if reference is None:
        reference = default_reference(T0)
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (n, n - r):
        raise ValidationError(f"reference must be {n}x{n - r}, got {reference.shape}",
                              module="geometry")
    gram = target.T @ target
    P = target.space.identity(n) - target @ jets.jet_lu_solve(gram, target.T)
    result = P @ reference
    s = np.linalg.svd(result.const, compute_uv=False)
    if s.size and s[-1] <= FRAME_RANK_TOL * max(1.0, s[0]):
        raise DegenerateReferenceError(
            "projected reference frame is rank deficient; supply a different frame",
            module="geometry")
    return ComplementFrame(target, reference, result)


# -- projectors ------------------------------------------------------------------

ProjectorKind = Literal["onto_TS_parallel_N", "onto_N_parallel_TS", "oblique"]


@dataclass(frozen=True)
class Projector:
    matrix: JetMatrix
    kind: ProjectorKind

    @property
    def const(self) -> np.ndarray:
        return self.matrix.const


def _fast_projector(spec: SystemSpec, anchor, order: int) -> JetMatrix:
    parts = eval_parts(spec, anchor, order + 1)
    Df = jets.jacobian(parts.f, spec.n)
    N = parts.N.truncate(order)
    try:
        return N @ jets.jet_lu_solve(Df @ N, Df)
    except SingularJetError as exc:
        raise SingularJetError("DfN is singular (normal hyperbolicity fails)",
                               module="geometry", anchor=anchor) from exc


def projector_N(spec: SystemSpec, anchor, order: int = 0) -> Projector:
    """N (Df N)^{-1} Df: projection onto Col N along the tangent space of S."""
    return Projector(_fast_projector(spec, anchor, order), "onto_N_parallel_TS")


def projector_S(spec: SystemSpec, anchor, order: int = 0) -> Projector:
    """I - N (Df N)^{-1} Df: projection onto the tangent space of S along Col N."""
    PN = _fast_projector(spec, anchor, order)
    return Projector(PN.space.identity(spec.n) - PN, "onto_TS_parallel_N")


def oblique_projector(V, U) -> Projector:
    """V (U^T V)^{-1} U^T for constant arrays or jet matrices."""
    if isinstance(V, JetMatrix):
        U = U if isinstance(U, JetMatrix) else V.space.constant(U)
        return Projector(V @ jets.jet_lu_solve(U.T @ V, U.T), "oblique")
    V = np.atleast_2d(np.asarray(V, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if V.shape[0] == 1 and V.shape[1] > 1:
        V, U = V.T, U.T
    lu = jets.lu_factor(U.T @ V)
    space = JetSpace(1, 0, (0.0,))
    M = V @ jets.lu_solve(lu, U.T)
    return Projector(space.constant(M), "oblique")


def reduced_vector_field(spec: SystemSpec, anchor_on_S) -> np.ndarray:
    """Pi^S G(z, 0) at a point of S."""
    z = np.asarray(anchor_on_S, dtype=float)
    PS = projector_S(spec, z, 0).const
    return PS @ eval_float(spec, z, 0.0)["G"]


# -- the critical manifold as a graph ------------------------------------------------

def critical_graph_jet(spec: SystemSpec, x0, order: int, y_guess=None) -> list[Jet]:
    """Taylor jets of h0 with f(x, h0(x)) = 0, in the k chart variables around x0."""
    z0 = solve_critical_point(spec, x0, y_guess)
    x0, y0 = spec.split(z0)
    space = JetSpace(spec.k, order, tuple(x0))
    lu = jets.lu_factor(_fast_jacobian(spec, z0))
    h = [space.constant(v) for v in y0]
    xs = [space.variable(i) for i in range(spec.k)]
    for _ in range(order):
        z = _assemble(spec, xs, h)
        fv = evaluate_jets(spec, z, 0.0).f.coeffs[:, 0, :]
        step = jets.lu_solve(lu, fv)
        h = [hi - Jet(space, step[i]) for i, hi in enumerate(h)]
    return h


def _assemble(spec: SystemSpec, xs, ys) -> list:
    z = [None] * spec.n
    for i, v in zip(spec.slow_idx, xs):
        z[i] = v
    for i, v in zip(spec.fast_idx, ys):
        z[i] = v
    return z
