"""The CSP iteration for z' = N f + eps G, on jets anchored at a point of S.

Every object for a chart point x lives in one jet space in (z, eps) around
z0 = (x, h0(x)) with eps = 0. Each Lie bracket consumes one derivative, so a
run with ``steps`` iterations and epsilon-series order ``p`` needs jet order
``steps + p + 2``. Quantities "on a CSP manifold" are obtained by composing a
jet with the curve eps -> (x, psi(x, eps), eps), which yields plain
epsilon-series (univariate jets).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import jets
from .errors import (ConvergenceError, DualityError, JetOrderError, SingularJetError,
                     ValidationError, error_context)
from .geometry import check_chart, complement_basis, projector_S, solve_critical_point
from .jets import Jet, JetArray, JetMatrix, JetSpace
from .sysdef import Parts, SystemSpec, eval_parts, evaluate_jets

DUALITY_TOL = 1e-8
EXPLICIT_BASIS_TOL = 1e-9
NEWTON_TOL = 1e-13
NEWTON_MAXITER = 50

Mode = Literal["one_step", "two_step"]
BasesChoice = Literal["auto", "default", "explicit"]


def _fit(X, order: int):
    return X if X.order == order else X.truncate(order)


# -- data types -------------------------------------------------------------------

@dataclass(frozen=True)
class CspBasis:
    j: int
    A: JetMatrix
    B: JetMatrix
    fast_cols: int

    @property
    def order(self) -> int:
        return self.A.order

    @property
    def A_f(self) -> JetMatrix:
        return self.A[:, : self.fast_cols]

    @property
    def A_s(self) -> JetMatrix:
        return self.A[:, self.fast_cols:]

    @property
    def B_sperp(self) -> JetMatrix:
        return self.B[: self.fast_cols, :]

    @property
    def B_fperp(self) -> JetMatrix:
        return self.B[self.fast_cols:, :]

    def duality_residual(self) -> float:
        BA = self.B @ self.A
        return (BA - np.eye(self.A.rows)).max_abs()

    def relative_duality_residual(self) -> float:
        """Duality residual per Taylor degree, scaled by the size of the factors there.

        High-degree coefficients of the iterated bases grow quickly, so their
        absolute rounding error does too; this stays near machine precision.
        """
        R = (self.B @ self.A - np.eye(self.A.rows)).coeffs
        deg = self.A.space.tables.degree
        worst = 0.0
        for d in range(self.order + 1):
            m = deg == d
            scale = max(1.0, float(np.abs(self.A.coeffs[..., m]).max())
                        * float(np.abs(self.B.coeffs[..., m]).max()))
            worst = max(worst, float(np.abs(R[..., m]).max()) / scale)
        return worst


@dataclass(frozen=True)
class LambdaBlocks:
    ff: JetMatrix
    fs: JetMatrix
    sf: JetMatrix
    ss: JetMatrix

    @classmethod
    def split(cls, lam: JetMatrix, fast: int) -> LambdaBlocks:
        return cls(lam[:fast, :fast], lam[:fast, fast:], lam[fast:, :fast], lam[fast:, fast:])

    @property
    def full(self) -> JetMatrix:
        top = jets.hstack([self.ff, self.fs])
        bottom = jets.hstack([self.sf, self.ss])
        return jets.vstack([top, bottom])

    @property
    def order(self) -> int:
        return self.ff.order

    def compose(self, inner: Sequence[Jet]) -> LambdaBlocks:
        return LambdaBlocks(*(jets.compose(b, inner) for b in (self.ff, self.fs, self.sf, self.ss)))


@dataclass(frozen=True)
class UpdateMatrices:
    U_tilde: JetMatrix
    L_tilde: JetMatrix


@dataclass(frozen=True)
class ManifoldGraph:
    """Epsilon-series of the graph y = psi(x, eps) at one or more chart points.

    ``coefficients[m, i]`` is psi_i at ``x_points[m]``.
    """
    j: int
    chart: tuple[int, ...]
    x_points: np.ndarray
    coefficients: np.ndarray
    eps_order: int

    def series(self, m: int = 0) -> np.ndarray:
        return self.coefficients[m]

    def evaluate(self, eps: float, m: int = 0) -> np.ndarray:
        powers = eps ** np.arange(self.eps_order + 1)
        return powers @ self.coefficients[m]

    @staticmethod
    def merge(graphs: Sequence[ManifoldGraph]) -> ManifoldGraph:
        g0 = graphs[0]
        return ManifoldGraph(g0.j, g0.chart, np.vstack([g.x_points for g in graphs]),
                             np.concatenate([g.coefficients for g in graphs]), g0.eps_order)


@dataclass(frozen=True)
class FiberFrame:
    j: int
    basepoint: np.ndarray
    columns: JetMatrix          # A_f as an epsilon-series (univariate jet matrix)
    eps_series: np.ndarray      # (p+1, n, n-k): coefficient of eps^i per column

    def at(self, eps: float) -> np.ndarray:
        powers = eps ** np.arange(self.eps_series.shape[0])
        return np.tensordot(powers, self.eps_series, axes=1)


# -- basic operators ------------------------------------------------------------------

def lie_bracket(X: JetMatrix, H: JetMatrix, num_state: int) -> JetMatrix:
    """Columnwise [X_i, H] = DH X_i - DX_i H, derivatives in the state variables only."""
    a = min(X.order, H.order)
    if a < 1:
        raise JetOrderError("Lie bracket needs jets of order at least 1")
    X, H = _fit(X, a), _fit(H, a)
    DH = jets.jacobian(H, num_state)
    Xl, Hl = X.truncate(a - 1), H.truncate(a - 1)
    cols = []
    for i in range(X.cols):
        DXi = jets.jacobian(X[:, i], num_state)
        cols.append(DH @ Xl[:, i] - DXi @ Hl)
    return jets.hstack(cols)


def _use_explicit(spec: SystemSpec, bases: BasesChoice) -> bool:
    has = spec.As0 is not None and spec.Nperp is not None
    if bases == "explicit" and not has:
        raise ValidationError(f"system {spec.name!r} has no explicit As0/Nperp bases")
    if bases not in ("auto", "default", "explicit"):
        raise ValidationError(f"unknown bases choice {bases!r}")
    return has and bases != "default"


def _initial_frames(spec: SystemSpec, parts: Parts, bases: BasesChoice):
    """N, Df, A_s and N^perp at order m - 1."""
    m = parts.space.order
    Df = jets.jacobian(parts.f, spec.n)
    N = parts.N.truncate(m - 1)
    if _use_explicit(spec, bases):
        As = parts.As0.truncate(m - 1)
        Np = parts.Nperp.truncate(m - 1)
        scale = max(1.0, As.max_abs() * Df.max_abs(), Np.max_abs() * N.max_abs())
        if (Df @ As).max_abs() > EXPLICIT_BASIS_TOL * scale:
            raise ValidationError("explicit As0 columns are not annihilated by Df")
        if (Np.T @ N).max_abs() > EXPLICIT_BASIS_TOL * scale:
            raise ValidationError("explicit Nperp columns are not orthogonal to N")
    else:
        As = complement_basis(Df.T).result
        Np = complement_basis(N).result
    return N, Df, As, Np


def initialize_basis(spec: SystemSpec, anchor, order: int, *, bases: BasesChoice = "auto",
                     parts: Parts | None = None) -> CspBasis:
    """A = [N, (Df^T)^perp] and its dual [(DfN)^{-1} Df; ((N^perp)^T A_s)^{-1} (N^perp)^T]."""
    with error_context("csp", anchor):
        if parts is None:
            parts = eval_parts(spec, anchor, order)
        N, Df, As, Np = _initial_frames(spec, parts, bases)
        try:
            Bs = jets.jet_lu_solve(Df @ N, Df)
        except SingularJetError as exc:
            raise SingularJetError("DfN is singular at the anchor") from exc
        try:
            Bf = jets.jet_lu_solve(Np.T @ As, Np.T)
        except SingularJetError as exc:
            raise SingularJetError("(N^perp)^T A_s is singular at the anchor") from exc
        basis = CspBasis(0, jets.hstack([N, As]), jets.vstack([Bs, Bf]), spec.fast_dim)
        _check_duality(basis)
    return basis


def _check_duality(basis: CspBasis) -> None:
    res = basis.relative_duality_residual()
    if res > DUALITY_TOL:
        raise DualityError(f"B A differs from I by {res:.3g} (relative) at iterate {basis.j}")


def lambda_op(basis: CspBasis, H: JetMatrix) -> LambdaBlocks:
    """Lambda = B [A, H], split into fast/slow blocks."""
    n = basis.A.rows
    br = lie_bracket(basis.A, H, n)
    lam = basis.B.truncate(br.order) @ br
    return LambdaBlocks.split(lam, basis.fast_cols)


def lambda_blocks_closed_form(spec: SystemSpec, anchor, order: int, *,
                              bases: BasesChoice = "auto") -> LambdaBlocks:
    """Lambda^(0) blocks assembled from N, f, G and the complement frames.

    With (DN f) the matrix whose m-th column is (dN/dz_m) f:

    ff = DfN + (DfN)^{-1} Df [(DN f) N - DN (N f)] + eps (DfN)^{-1} Df [N, G]
    fs = (DfN)^{-1} Df [(DN f) A_s - DA_s (N f)] + eps (DfN)^{-1} Df [A_s, G]
    sf = C^{-1} (N^perp)^T [(DN f) N - DN (N f) + eps [N, G]]
    ss = C^{-1} (N^perp)^T [(DN f) A_s - DA_s (N f) + eps [A_s, G]]

    where C = (N^perp)^T A_s.
    """
    n = spec.n
    with error_context("csp", anchor):
        parts = eval_parts(spec, anchor, order)
        N, Df, As, Np = _initial_frames(spec, parts, bases)
        a = order - 2
        if a < 0:
            raise JetOrderError("closed-form Lambda needs jet order at least 2")
        eps = parts.space.with_order(a).variable(n)
        f = parts.f.truncate(order - 1)
        Nf = (parts.N @ parts.f).truncate(order - 1)
        DNf = jets.hstack([parts.N.diff(m) @ f for m in range(n)]).truncate(a)

        def drift(X):      # (DN f) X - DX (N f), both at order a
            DX = [jets.jacobian(X[:, i], n) for i in range(X.cols)]
            Nfa = Nf.truncate(a)
            return DNf @ X.truncate(a) - jets.hstack([D @ Nfa for D in DX])

        NG = lie_bracket(N, parts.G, n).truncate(a)
        AG = lie_bracket(As, parts.G, n).truncate(a)
        DfN = (Df @ N).truncate(a)
        Dfa = Df.truncate(a)
        C = (Np.T @ As).truncate(a)
        Npa = Np.truncate(a).T
        wN = drift(N) + NG * eps
        wA = drift(As) + AG * eps
        ff = DfN + jets.jet_lu_solve(DfN, Dfa @ wN)
        fs = jets.jet_lu_solve(DfN, Dfa @ wA)
        sf = jets.jet_lu_solve(C, Npa @ wN)
        ss = jets.jet_lu_solve(C, Npa @ wA)
    return LambdaBlocks(ff, fs, sf, ss)


def update_blocks(lam: LambdaBlocks) -> UpdateMatrices:
    """U~ = Lambda_ff^{-1} Lambda_fs and L~ = Lambda_sf Lambda_ff^{-1}."""
    try:
        U = jets.jet_lu_solve(lam.ff, lam.fs)
        L = jets.jet_lu_solve(lam.ff.T, lam.sf.T).T
    except SingularJetError as exc:
        raise SingularJetError("Lambda_ff is singular", module="csp") from exc
    return UpdateMatrices(U, L)


def csp_step(basis: CspBasis, upd: UpdateMatrices, mode: Mode = "two_step") -> CspBasis:
    """One CSP refinement of (A, B)."""
    a = min(basis.order, upd.U_tilde.order)
    b = CspBasis(basis.j, _fit(basis.A, a), _fit(basis.B, a), basis.fast_cols)
    U, L = _fit(upd.U_tilde, a), _fit(upd.L_tilde, a)
    Af, As, Bs, Bf = b.A_f, b.A_s, b.B_sperp, b.B_fperp
    if mode == "two_step":
        fd, k = U.shape
        I_f = np.eye(fd)
        I_s = np.eye(k)
        Af_new = Af @ (I_f - U @ L) + As @ L
        As_new = As - Af @ U
        Bs_new = Bs + U @ Bf
        Bf_new = (I_s - L @ U) @ Bf - L @ Bs
    elif mode == "one_step":
        Af_new, As_new = Af, As - Af @ U
        Bs_new, Bf_new = Bs + U @ Bf, Bf
    else:
        raise ValidationError(f"unknown CSP mode {mode!r}")
    new = CspBasis(basis.j + 1, jets.hstack([Af_new, As_new]), jets.vstack([Bs_new, Bf_new]),
                   basis.fast_cols)
    _check_duality(new)
    return new


# -- curves and series ----------------------------------------------------------------

def curve_inner(spec: SystemSpec, space: JetSpace, y_series: np.ndarray) -> list[Jet]:
    """Displacements (0, psi(eps) - y0, eps) as epsilon-series for composition.

    ``y_series[i]`` is the eps^i coefficient of the graph variables; the
    constant coefficient must equal the anchor's y.
    """
    p = y_series.shape[0] - 1
    ss = jets.series_space(p)
    inner: list[Jet] = [ss.zeros() for _ in range(space.num_vars)]
    for col, idx in enumerate(spec.fast_idx):
        c = np.zeros(p + 1)
        c[1:] = y_series[1:, col]
        inner[idx] = Jet(ss, c)
    inner[spec.n] = ss.variable(0)
    return inner


def _coeff(series: JetArray, i: int) -> np.ndarray:
    return series.coeffs[..., i]


@dataclass
class CspRun:
    """All iterates for one chart point."""
    spec: SystemSpec
    x: np.ndarray
    anchor: np.ndarray
    order: int
    steps: int
    eps_order: int
    mode: Mode
    bases_choice: BasesChoice
    parts: Parts
    bases: list[CspBasis] = field(default_factory=list)
    lambdas: list[LambdaBlocks] = field(default_factory=list)
    updates: list[UpdateMatrices] = field(default_factory=list)
    graphs: list[ManifoldGraph] = field(default_factory=list)

    @property
    def H(self) -> JetMatrix:
        return self.parts.H

    @property
    def y0(self) -> np.ndarray:
        return self.spec.split(self.anchor)[1]

    def graph_inner(self, j: int, eps_order: int | None = None) -> list[Jet]:
        g = self.graphs[j].series()
        if eps_order is not None:
            if eps_order > g.shape[0] - 1:
                raise JetOrderError(f"graph {j} is known to eps-order {g.shape[0] - 1} only")
            g = g[: eps_order + 1]
        return curve_inner(self.spec, self.parts.space, g)


def default_order(steps: int, eps_order: int) -> int:
    return steps + eps_order + 2


def run_csp(spec: SystemSpec, x_chart, *, steps: int = 1, eps_order: int | None = None,
            order: int | None = None, mode: Mode = "two_step", bases: BasesChoice = "auto",
            y_guess=None) -> CspRun:
    """Run ``steps`` CSP iterations at one chart point and solve the graphs K^(0..steps)."""
    if steps < 0:
        raise ValidationError("steps must be non-negative")
    p = steps if eps_order is None else eps_order
    if p < 0:
        raise ValidationError("eps_order must be non-negative")
    m = default_order(steps, p) if order is None else order
    z0 = solve_critical_point(spec, x_chart, y_guess)
    with error_context("csp", z0):
        check_chart(spec, z0)
        if m < steps + 2:
            raise JetOrderError(f"jet order {m} is too low for {steps} step(s); "
                                f"need at least {steps + 2}")
        parts = eval_parts(spec, z0, m)
        run = CspRun(spec, spec.split(z0)[0], z0, m, steps, p, mode, bases, parts)
        run.bases.append(initialize_basis(spec, z0, m, bases=bases, parts=parts))
        for j in range(steps + 1):
            lam = lambda_op(run.bases[j], parts.H)
            run.lambdas.append(lam)
            if j < steps:
                upd = update_blocks(lam)
                run.updates.append(upd)
                run.bases.append(csp_step(run.bases[j], upd, mode))
        for j in range(steps + 1):
            run.graphs.append(csp_manifold_solve(run, j))
    return run


def _series_solve(run: CspRun, J0: np.ndarray, p: int, residual) -> np.ndarray:
    lu = jets.lu_factor(J0)
    Y = np.zeros((p + 1, run.spec.fast_dim))
    Y[0] = run.y0
    for i in range(1, p + 1):
        r = residual(Y, i)
        Y[i] = -jets.lu_solve(lu, r)
    return Y


def _fast_DyH(run: CspRun) -> np.ndarray:
    DH = jets.jacobian(run.H, run.spec.n).const
    return DH[:, list(run.spec.fast_idx)]


def csp_manifold_solve(run: CspRun, j: int, *, mode: Literal["series", "numeric"] = "series",
                       eps: float | None = None, eps_order: int | None = None):
    """Graph of K^(j) at the run's chart point.

    K^(0) = {B_sperp^(0)(z) H(z, eps) = 0}; for j >= 1 the dual row is frozen on
    the previous graph: B_sperp^(j)(x, psi^(j-1)(x, eps), eps) H(x, y, eps) = 0.
    Series mode returns a :class:`ManifoldGraph`; numeric mode returns y at
    the given eps.
    """
    if mode == "numeric":
        if eps is None:
            raise ValidationError("numeric mode needs eps")
        return _numeric_graph(run, j, eps)
    p = run.eps_order if eps_order is None else eps_order
    spec = run.spec
    basis = run.bases[j]
    if basis.order < p:
        raise JetOrderError(f"basis {j} has order {basis.order}; eps-order {p} needs "
                            f"jet order >= {p + j + 1}")
    Bs = basis.B_sperp
    J0 = Bs.const @ _fast_DyH(run)
    if j == 0:
        F = Bs @ run.H.truncate(Bs.order)

        def residual(Y, i):
            inner = curve_inner(spec, run.parts.space, Y[: i + 1])
            return _coeff(jets.compose(F, inner), i)[:, 0]
    else:
        b = jets.compose(Bs, run.graph_inner(j - 1, p))

        def residual(Y, i):
            inner = curve_inner(spec, run.parts.space, Y[: i + 1])
            Hs = jets.compose(run.H, inner)
            return _coeff(b.truncate(i) @ Hs, i)[:, 0]

    with error_context("csp", run.anchor):
        Y = _series_solve(run, J0, p, residual)
    return ManifoldGraph(j, spec.chart, run.x[None, :], Y[None], p)


def _h_at(spec: SystemSpec, z: np.ndarray, eps: float, order: int = 1):
    """Parts at a point with eps held fixed, as order-``order`` jets in z."""
    space = JetSpace(spec.n, order, tuple(z))
    return evaluate_jets(spec, [space.variable(i) for i in range(spec.n)], eps)


def _numeric_graph(run: CspRun, j: int, eps: float) -> np.ndarray:
    spec = run.spec
    fast = list(spec.fast_idx)
    if j == 0:
        def F(y):
            z = spec.join(run.x, y)
            parts = _h_at(spec, z, eps, 2)
            Df = jets.jacobian(parts.f, spec.n)
            Bs = jets.jet_lu_solve(Df @ parts.N.truncate(1), Df)
            val = Bs @ parts.H.truncate(1)
            return val.const[:, 0], jets.jacobian(val, spec.n).const[:, fast]
    else:
        yprev = _numeric_graph(run, j - 1, eps)
        delta = np.zeros(spec.n + 1)
        delta[fast] = yprev - run.y0
        delta[spec.n] = eps
        b = run.bases[j].B_sperp.evaluate(delta)

        def F(y):
            parts = _h_at(spec, spec.join(run.x, y), eps, 1)
            val = b @ parts.H
            return val.const[:, 0], jets.jacobian(val, spec.n).const[:, fast]

    y = run.y0.copy()
    with error_context("csp", run.anchor):
        for _ in range(NEWTON_MAXITER):
            r, J = F(y)
            step = np.linalg.solve(J, r)
            y = y - step
            if np.max(np.abs(step)) <= NEWTON_TOL * max(1.0, float(np.max(np.abs(y)))):
                return y
        raise ConvergenceError(f"numeric graph solve for K^({j}) did not converge at eps={eps}")


# -- quantities on the graphs -------------------------------------------------------------

def lambda_on_graph(run: CspRun, j: int, graph_j: int | None = None,
                    eps_order: int | None = None) -> LambdaBlocks:
    """Lambda^(j) blocks as epsilon-series along the graph of K^(graph_j) (default j)."""
    g = j if graph_j is None else graph_j
    lam = run.lambdas[j]
    p = min(run.eps_order, lam.order) if eps_order is None else eps_order
    if p > lam.order:
        raise JetOrderError(f"Lambda^({j}) has jet order {lam.order}; cannot expand to "
                            f"eps-order {p}")
    return lam.compose(run.graph_inner(g, p))


def basis_on_graph(run: CspRun, j: int, graph_j: int, eps_order: int | None = None):
    """(A^(j), B^(j)) as epsilon-series along the graph of K^(graph_j)."""
    basis = run.bases[j]
    p = min(run.eps_order, basis.order) if eps_order is None else eps_order
    inner = run.graph_inner(graph_j, p)
    return jets.compose(basis.A, inner), jets.compose(basis.B, inner)


def csp_fiber(run: CspRun, j: int, eps_order: int | None = None) -> FiberFrame:
    """A_f^(j) along K^(j-1) (K^(0) for j = 0) as an epsilon-series."""
    g = max(j - 1, 0)
    basis = run.bases[j]
    p = min(run.eps_order, basis.order) if eps_order is None else eps_order
    if p > basis.order:
        raise JetOrderError(f"A^({j}) has jet order {basis.order}; cannot expand to "
                            f"eps-order {p}")
    cols = jets.compose(basis.A_f, run.graph_inner(g, min(p, run.graphs[g].eps_order)))
    series = np.moveaxis(cols.coeffs, -1, 0)
    return FiberFrame(j, run.anchor.copy(), cols, series)


def span_first_order(a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
    """First-order motion of span{a0 + eps a1}: (I - P_a0) a1 (a0^T a0)^{-1} a0^T.

    Two one-parameter families of subspaces agree to first order in eps
    exactly when these matrices agree; the norm of their difference is the
    eps-derivative of the largest principal angle at eps = 0.
    """
    a0 = np.atleast_2d(a0.T).T
    a1 = np.atleast_2d(a1.T).T
    pinv = np.linalg.pinv(a0)
    P = a0 @ pinv
    return (np.eye(a0.shape[0]) - P) @ a1 @ pinv


def first_order_correction(spec: SystemSpec, anchor_on_S) -> np.ndarray:
    """psi_1 = -(D_y f)^{-1} (DfN)^{-1} (Df G) at a point of S, with G at eps = 0."""
    z = np.asarray(anchor_on_S, dtype=float)
    with error_context("csp", z):
        parts = eval_parts(spec, z, 1)
        Df = jets.jacobian(parts.f, spec.n).const
        N = parts.N.const
        G = parts.G.const[:, 0]
        Dy = Df[:, list(spec.fast_idx)]
        inner = jets.lu_solve(jets.lu_factor(Df @ N), Df @ G)
        return -jets.lu_solve(jets.lu_factor(Dy), inner)


@dataclass(frozen=True)
class ProjectionIdentity:
    residual: float
    bracket_in_kernel: bool
    bracket_projection: float


def projection_identity_check(spec: SystemSpec, anchor_on_S, order: int = 4, *,
                              bases: BasesChoice = "auto", kernel_tol: float = 1e-10
                              ) -> ProjectionIdentity:
    """Compare A_s L~ with Pi^perp(-(DN)(N f) + (DN f) N + eps [N, G]) Lambda_ff^{-1}.

    Pi^perp = A_s ((N^perp)^T A_s)^{-1} (N^perp)^T. The (DN f) N term cancels the
    -(DN)(N f) term identically when there is a single fast direction. Also
    reports whether Pi^S [N, G] vanishes at the anchor (fiber update trivial).
    """
    z = np.asarray(anchor_on_S, dtype=float)
    n = spec.n
    with error_context("csp", z):
        parts = eval_parts(spec, z, order)
        basis = initialize_basis(spec, z, order, bases=bases, parts=parts)
        lam = lambda_op(basis, parts.H)
        upd = update_blocks(lam)
        a = lam.order
        N, Df, As, Np = _initial_frames(spec, parts, bases)
        eps = parts.space.with_order(a).variable(n)
        f = parts.f.truncate(order - 1)
        Nf = (parts.N @ parts.f).truncate(order - 1)
        DNf = jets.hstack([parts.N.diff(m) @ f for m in range(n)]).truncate(a)
        DN = [jets.jacobian(N[:, i], n) for i in range(N.cols)]
        drift = DNf @ N.truncate(a) - jets.hstack([D @ Nf.truncate(a) for D in DN])
        NG = lie_bracket(N, parts.G, n).truncate(a)
        Asa, Npa = As.truncate(a), Np.truncate(a)
        Pperp = Asa @ jets.jet_lu_solve(Npa.T @ Asa, Npa.T)
        rhs = Pperp @ (drift + NG * eps)
        rhs = jets.jet_lu_solve(lam.ff.T, rhs.T).T
        lhs = Asa @ upd.L_tilde
        residual = (lhs - rhs).max_abs()
        PS = projector_S(spec, z, 0).const
        NG0 = lie_bracket(parts.N.truncate(1), parts.G.truncate(1), n).const
        proj = float(np.max(np.abs(PS @ NG0)))
    return ProjectionIdentity(residual, proj <= kernel_tol, proj)


@dataclass(frozen=True)
class Refactorization:
    N: JetMatrix
    f: JetMatrix
    G: JetMatrix
    reassembly_residual: float
    leading_offset: float   # max |A_f,0 - N|, the O(f) part of the eps^0 fiber term


def refactorize(run: CspRun, j: int) -> Refactorization:
    """N^(j) = N + sum_i eps^i A_f,i and G^(j) = G - sum_i eps^(i-1) A_f,i f."""
    spec = run.spec
    if not spec.invariant_manifold:
        raise ValidationError(f"system {spec.name!r} is not flagged invariant_manifold; "
                              "refactorization needs S to be invariant")
    if j < 1:
        raise ValidationError("refactorization needs j >= 1")
    Af = run.bases[j].A_f
    a = Af.order - 1
    if a < 0:
        raise JetOrderError("not enough jet order to refactorize")
    space = run.parts.space.with_order(a)
    ev = spec.n
    Nj = run.parts.N.truncate(a)
    Gcorr = space.zeros((spec.n, spec.fast_dim))
    for i in range(1, Af.order + 1):
        Ai = jets.drop_var(Af, ev, i)
        if i <= a:
            Nj = Nj + jets.insert_var(Ai.truncate(a - i), ev, i, space)
        Gcorr = Gcorr + jets.insert_var(Ai, ev, i - 1, space)
    f = run.parts.f.truncate(a)
    Gj = run.parts.G.truncate(a) - Gcorr @ f
    eps = space.variable(ev)
    H = run.H.truncate(a)
    res = (Nj @ f + Gj * eps - H).max_abs()
    A0 = jets.insert_var(jets.drop_var(Af, ev, 0).truncate(a), ev, 0, space)
    lead = (A0 - run.parts.N.truncate(a)).max_abs()
    return Refactorization(Nj, f, Gj, res, lead)
