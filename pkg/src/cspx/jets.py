"""Truncated multivariate Taylor polynomials ("jets") and jet-valued linear algebra.

A jet stores the Taylor coefficients ``c_alpha = d^alpha F / alpha!`` of a
function around an anchor point, for all multi-indices with ``|alpha| <= order``.
Coefficients are kept in graded order (all degree-0 terms, then degree 1, ...),
so truncating to a lower order is a slice of the coefficient axis.

Scalars (:class:`Jet`) and matrices (:class:`JetMatrix`) share one
implementation: the coefficient array has shape ``(*lead, ncoeff)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, JetOrderError, JetShapeError, SingularJetError

SINGULAR_TOL = 1e-12

# Accuracy the jet arithmetic is held to by its test-suite, relative to the
# size of the operands: product rule on first derivatives, M @ inverse(M) - I
# for well-conditioned M, and agreement of first/second Taylor coefficients
# with central finite differences.
PRODUCT_RULE_TOL = 1e-12
INVERSE_TOL = 1e-10
FINITE_DIFF_TOL = 1e-6

# exponent digits for multi-index keys; orders are far below this
_KEY_BASE = 64
_MAX_VARS = 10


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class _Tables:
    """Index tables shared by every jet space with the same (num_vars, order)."""

    def __init__(self, num_vars: int, order: int):
        rows = [a for d in range(order + 1) for a in _compositions(d, num_vars)]
        self.exps = np.array(rows, dtype=np.int64).reshape(-1, num_vars)
        self.degree = self.exps.sum(axis=1)
        self.weights = _KEY_BASE ** np.arange(num_vars, dtype=np.int64)
        self.keys = self.exps @ self.weights
        self._sorter = np.argsort(self.keys)
        self._sorted = self.keys[self._sorter]
        nc = len(rows)
        self.ncoeff = nc

        I, J = np.nonzero(self.degree[:, None] + self.degree[None, :] <= order)
        K = self.lookup(self.keys[I] + self.keys[J])
        perm = np.argsort(K, kind="stable")
        self.mul_i = I[perm]
        self.mul_j = J[perm]
        self.mul_starts = np.searchsorted(K[perm], np.arange(nc))

        self.diff_src: list[np.ndarray] = []
        self.diff_fac: list[np.ndarray] = []
        if order >= 1:
            nlow = comb(num_vars + order - 1, order - 1)
            low = self.exps[:nlow]
            for v in range(num_vars):
                self.diff_src.append(self.lookup(self.keys[:nlow] + self.weights[v]))
                self.diff_fac.append((low[:, v] + 1).astype(float))

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self._sorted, keys)
        return self._sorter[pos]


@lru_cache(maxsize=None)
def _tables(num_vars: int, order: int) -> _Tables:
    return _Tables(num_vars, order)


@dataclass(frozen=True)
class JetSpace:
    """Where a jet lives: variable count, truncation order and anchor point."""

    num_vars: int
    order: int
    anchor: tuple[float, ...]

    def __post_init__(self):
        if not 1 <= self.num_vars <= _MAX_VARS:
            raise ValueError(f"num_vars must be in 1..{_MAX_VARS}")
        if self.order < 0:
            raise ValueError("order must be non-negative")
        if len(self.anchor) != self.num_vars:
            raise ValueError("anchor length must equal num_vars")
        object.__setattr__(self, "anchor", tuple(float(a) for a in self.anchor))

    @property
    def ncoeff(self) -> int:
        return comb(self.num_vars + self.order, self.order)

    @property
    def tables(self) -> _Tables:
        return _tables(self.num_vars, self.order)

    def with_order(self, order: int) -> JetSpace:
        return JetSpace(self.num_vars, order, self.anchor)

    def zeros(self, shape: tuple[int, ...] = ()) -> Jet | JetMatrix:
        return _wrap(self, np.zeros(shape + (self.ncoeff,)))

    def constant(self, value) -> Jet | JetMatrix:
        value = np.asarray(value, dtype=float)
        c = np.zeros(value.shape + (self.ncoeff,))
        c[..., 0] = value
        return _wrap(self, c)

    def variable(self, i: int) -> Jet:
        """The coordinate function ``z_i = anchor_i + delta_i``."""
        c = np.zeros(self.ncoeff)
        c[0] = self.anchor[i]
        if self.order >= 1:
            c[1 + i] = 1.0
        return Jet(self, c)

    def delta(self, i: int) -> Jet:
        """The displacement ``z_i - anchor_i`` (no constant term)."""
        c = np.zeros(self.ncoeff)
        if self.order >= 1:
            c[1 + i] = 1.0
        return Jet(self, c)

    def identity(self, n: int) -> JetMatrix:
        return self.constant(np.eye(n))


def _wrap(space: JetSpace, coeffs: np.ndarray):
    if coeffs.ndim == 1:
        return Jet(space, coeffs)
    if coeffs.ndim == 3:
        return JetMatrix(space, coeffs)
    raise ValueError(f"unsupported jet array shape {coeffs.shape}")


def _mul_coeffs(space: JetSpace, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    t = space.tables
    prod = a[..., t.mul_i] * b[..., t.mul_j]
    return np.add.reduceat(prod, t.mul_starts, axis=-1)


class JetArray:
    """Common machinery for scalar and matrix jets."""

    __slots__ = ("space", "coeffs")
    __array_priority__ = 1000

    def __init__(self, space: JetSpace, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != space.ncoeff:
            raise JetShapeError(
                f"coefficient axis has length {coeffs.shape[-1]}, expected {space.ncoeff}")
        if not np.all(np.isfinite(coeffs)):
            raise DomainError("non-finite jet coefficient")
        self.space = space
        self.coeffs = coeffs

    # -- bookkeeping -------------------------------------------------------
    @property
    def order(self) -> int:
        return self.space.order

    @property
    def num_vars(self) -> int:
        return self.space.num_vars

    @property
    def const(self):
        """Value at the anchor."""
        c = self.coeffs[..., 0]
        return float(c) if c.ndim == 0 else c.copy()

    def _check(self, other: JetArray):
        if other.space != self.space:
            raise JetShapeError(
                f"jet mismatch: (vars={self.space.num_vars}, order={self.space.order}) vs "
                f"(vars={other.space.num_vars}, order={other.space.order}) or different anchors")

    def _other_coeffs(self, other) -> np.ndarray:
        if isinstance(other, JetArray):
            self._check(other)
            return other.coeffs
        val = np.asarray(other, dtype=float)
        c = np.zeros(val.shape + (self.space.ncoeff,))
        c[..., 0] = val
        return c

    def truncate(self, order: int):
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order {self.order} to {order}")
        space = self.space.with_order(order)
        return _wrap(space, self.coeffs[..., : space.ncoeff].copy())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    # -- arithmetic --------------------------------------------------------
    def __neg__(self):
        return _wrap(self.space, -self.coeffs)

    def __pos__(self):
        return self

    def __add__(self, other):
        return _wrap(self.space, self.coeffs + self._other_coeffs(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _wrap(self.space, self.coeffs - self._other_coeffs(other))

    def __rsub__(self, other):
        return _wrap(self.space, self._other_coeffs(other) - self.coeffs)

    def __mul__(self, other):
        if isinstance(other, JetArray):
            self._check(other)
            a, b = np.broadcast_arrays(self.coeffs, other.coeffs)
            return _wrap(self.space, _mul_coeffs(self.space, a, b))
        val = np.asarray(other, dtype=float)
        return _wrap(self.space, self.coeffs * val[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, JetArray):
            return self * other.reciprocal()
        val = np.asarray(other, dtype=float)
        if np.any(val == 0):
            raise DomainError("division by zero")
        return _wrap(self.space, self.coeffs / val[..., None])

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k):
        if isinstance(k, float) and k.is_integer():
            k = int(k)
        if not isinstance(k, (int, np.integer)):
            raise TypeError("jets support integer powers only; use sqrt/exp/log")
        k = int(k)
        base = self if k >= 0 else self.reciprocal()
        k = abs(k)
        result = _wrap(self.space, self._other_coeffs(np.ones(self.coeffs.shape[:-1])))
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def reciprocal(self, tol: float = SINGULAR_TOL):
        a0 = self.coeffs[..., 0]
        scale = np.max(np.abs(self.coeffs), axis=-1)
        if np.any(np.abs(a0) <= tol * scale) or np.any(a0 == 0):
            raise SingularJetError("division by a jet with (near-)zero constant term")
        t = self.coeffs / a0[..., None]
        t[..., 0] = 0.0
        tj = _wrap(self.space, t)
        # 1/(1+t) = 1 - t(1 - t(1 - ...)); t has no constant term
        s = _wrap(self.space, self._other_coeffs(np.ones(a0.shape)))
        for _ in range(self.order):
            s = 1.0 - tj * s
        return _wrap(self.space, s.coeffs / a0[..., None])

    # -- calculus ----------------------------------------------------------
    def diff(self, var: int):
        """Partial derivative; the result has order one lower."""
        if self.order < 1:
            raise JetOrderError("cannot differentiate an order-0 jet")
        t = self.space.tables
        space = self.space.with_order(self.order - 1)
        return _wrap(space, self.coeffs[..., t.diff_src[var]] * t.diff_fac[var])

    def evaluate(self, delta: Sequence[float]):
        """Value of the Taylor polynomial at ``anchor + delta``."""
        delta = np.asarray(delta, dtype=float)
        mono = np.prod(delta[None, :] ** self.space.tables.exps, axis=1)
        out = self.coeffs @ mono
        return float(out) if np.ndim(out) == 0 else out

    def axis_series(self, var: int) -> np.ndarray:
        """Coefficients of ``delta_var**i`` with every other displacement zero."""
        t = self.space.tables
        idx = t.lookup(np.arange(self.order + 1) * t.weights[var])
        return self.coeffs[..., idx]

    def _compose_univariate(self, gk: Sequence[np.ndarray]):
        """sum_k gk[k] * (self - self.const)**k, truncated."""
        t = self.coeffs.copy()
        t[..., 0] = 0.0
        tj = _wrap(self.space, t)
        m = self.order
        s = _wrap(self.space, self._other_coeffs(gk[m]))
        for k in range(m - 1, -1, -1):
            s = tj * s + gk[k]
        return s


class Jet(JetArray):
    __slots__ = ()

    def __init__(self, space: JetSpace, coeffs):
        super().__init__(space, coeffs)
        if self.coeffs.ndim != 1:
            raise JetShapeError("scalar jet needs a 1-d coefficient array")

    def __repr__(self):
        return f"Jet(order={self.order}, const={self.const:.6g})"

    def __float__(self):
        return self.const


class JetMatrix(JetArray):
    __slots__ = ()

    def __init__(self, space: JetSpace, coeffs):
        super().__init__(space, coeffs)
        if self.coeffs.ndim != 3:
            raise JetShapeError("jet matrix needs a 3-d coefficient array")

    @classmethod
    def from_entries(cls, space: JetSpace, rows: Sequence[Sequence]) -> JetMatrix:
        nr, nc = len(rows), len(rows[0]) if rows else 0
        c = np.zeros((nr, nc, space.ncoeff))
        for i, row in enumerate(rows):
            if len(row) != nc:
                raise JetShapeError("ragged rows")
            for j, e in enumerate(row):
                if isinstance(e, JetArray):
                    if e.space != space:
                        raise JetShapeError("entry lives in a different jet space")
                    c[i, j] = e.coeffs
                else:
                    c[i, j, 0] = float(e)
        return cls(space, c)

    @classmethod
    def column(cls, space: JetSpace, entries: Sequence) -> JetMatrix:
        return cls.from_entries(space, [[e] for e in entries])

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[:2]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[1]

    @property
    def T(self) -> JetMatrix:
        return JetMatrix(self.space, self.coeffs.transpose(1, 0, 2).copy())

    def __getitem__(self, key):
        i, j = key
        if isinstance(i, (int, np.integer)) and isinstance(j, (int, np.integer)):
            return Jet(self.space, self.coeffs[i, j].copy())
        if isinstance(i, (int, np.integer)):
            i = slice(i, i + 1)
        if isinstance(j, (int, np.integer)):
            j = slice(j, j + 1)
        return JetMatrix(self.space, self.coeffs[i, j].copy())

    def entry(self, i: int, j: int = 0) -> Jet:
        return Jet(self.space, self.coeffs[i, j].copy())

    def __matmul__(self, other):
        if isinstance(other, JetMatrix):
            self._check(other)
            if self.cols != other.rows:
                raise JetShapeError(f"matmul shape mismatch {self.shape} @ {other.shape}")
            t = self.space.tables
            prod = np.einsum("ijp,jkp->ikp", self.coeffs[..., t.mul_i], other.coeffs[..., t.mul_j])
            return JetMatrix(self.space, np.add.reduceat(prod, t.mul_starts, axis=-1))
        m = np.asarray(other, dtype=float)
        return JetMatrix(self.space, np.einsum("ijp,jk->ikp", self.coeffs, m))

    def __rmatmul__(self, other):
        m = np.asarray(other, dtype=float)
        return JetMatrix(self.space, np.einsum("ij,jkp->ikp", m, self.coeffs))

    def __repr__(self):
        return f"JetMatrix({self.rows}x{self.cols}, order={self.order})"


# -- construction helpers ---------------------------------------------------

def hstack(blocks: Sequence[JetMatrix]) -> JetMatrix:
    space = blocks[0].space
    for b in blocks:
        blocks[0]._check(b)
    return JetMatrix(space, np.concatenate([b.coeffs for b in blocks], axis=1))


def vstack(blocks: Sequence[JetMatrix]) -> JetMatrix:
    space = blocks[0].space
    for b in blocks:
        blocks[0]._check(b)
    return JetMatrix(space, np.concatenate([b.coeffs for b in blocks], axis=0))


def jacobian(v: JetMatrix, num: int | None = None) -> JetMatrix:
    """Jacobian of a column jet with respect to the first ``num`` variables."""
    if v.cols != 1:
        raise JetShapeError("jacobian expects a column")
    num = v.num_vars if num is None else num
    cols = [v.diff(c).coeffs[:, 0] for c in range(num)]
    space = v.space.with_order(v.order - 1)
    return JetMatrix(space, np.stack(cols, axis=1))


# -- elementary functions (jets or plain floats) ----------------------------

def _is_jet(x) -> bool:
    return isinstance(x, JetArray)


def exp(a):
    if not _is_jet(a):
        return math.exp(a) if np.ndim(a) == 0 else np.exp(a)
    e0 = np.exp(a.coeffs[..., 0])
    return a._compose_univariate([e0 / math.factorial(k) for k in range(a.order + 1)])


def log(a):
    if not _is_jet(a):
        if np.any(np.asarray(a) <= 0):
            raise DomainError("log of a non-positive value")
        return math.log(a) if np.ndim(a) == 0 else np.log(a)
    a0 = a.coeffs[..., 0]
    if np.any(a0 <= 0):
        raise DomainError("log of a jet with non-positive constant term")
    gk = [np.log(a0)] + [(-1.0) ** (k + 1) / (k * a0 ** k) for k in range(1, a.order + 1)]
    return a._compose_univariate(gk)


def sin(a):
    if not _is_jet(a):
        return math.sin(a) if np.ndim(a) == 0 else np.sin(a)
    a0 = a.coeffs[..., 0]
    cyc = [np.sin(a0), np.cos(a0), -np.sin(a0), -np.cos(a0)]
    return a._compose_univariate([cyc[k % 4] / math.factorial(k) for k in range(a.order + 1)])


def cos(a):
    if not _is_jet(a):
        return math.cos(a) if np.ndim(a) == 0 else np.cos(a)
    a0 = a.coeffs[..., 0]
    cyc = [np.cos(a0), -np.sin(a0), -np.cos(a0), np.sin(a0)]
    return a._compose_univariate([cyc[k % 4] / math.factorial(k) for k in range(a.order + 1)])


def sqrt(a):
    if not _is_jet(a):
        if np.any(np.asarray(a) < 0):
            raise DomainError("sqrt of a negative value")
        return math.sqrt(a) if np.ndim(a) == 0 else np.sqrt(a)
    a0 = a.coeffs[..., 0]
    if np.any(a0 <= 0):
        raise DomainError("sqrt of a jet with non-positive constant term")
    gk = []
    binom = 1.0
    for k in range(a.order + 1):
        gk.append(binom * a0 ** (0.5 - k))
        binom *= (0.5 - k) / (k + 1)
    return a._compose_univariate(gk)


def int_pow(a, k: int):
    return a ** int(k)


# -- dense linear algebra on the constant term ---------------------------------

def lu_factor(M0: np.ndarray, tol: float = SINGULAR_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Doolittle LU with partial pivoting; raises on a small pivot.

    A pivot counts as singular when it is below ``tol`` times the largest
    magnitude in its (original) row.
    """
    A = np.array(M0, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise JetShapeError("LU needs a square matrix")
    row_scale = np.max(np.abs(A), axis=1)
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if p != k:
            A[[k, p]] = A[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        scale = row_scale[perm[k]]
        if scale == 0 or abs(A[k, k]) <= tol * scale:
            raise SingularJetError("singular constant-term matrix", pivot=k)
        A[k + 1:, k] /= A[k, k]
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    return A, perm


def lu_solve(lu: tuple[np.ndarray, np.ndarray], b: np.ndarray) -> np.ndarray:
    """Solve with a factorization from :func:`lu_factor`; ``b`` may carry trailing axes."""
    A, perm = lu
    x = np.array(b, dtype=float)[perm]
    n = A.shape[0]
    for i in range(n):
        x[i] -= np.tensordot(A[i, :i], x[:i], axes=(0, 0))
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - np.tensordot(A[i, i + 1:], x[i + 1:], axes=(0, 0))) / A[i, i]
    return x


def jet_lu_solve(M: JetMatrix, rhs: JetMatrix, tol: float = SINGULAR_TOL) -> JetMatrix:
    """Solve ``M X = rhs`` exactly through the truncation order.

    The constant-term matrix is LU-factored once; higher-order terms follow
    from the fixed point ``X = M0^{-1}(rhs - (M - M0) X)``, which gains one
    order per sweep.
    """
    M._check(rhs)
    if M.rows != M.cols or M.rows != rhs.rows:
        raise JetShapeError(f"cannot solve {M.shape} system with rhs {rhs.shape}")
    lu = lu_factor(M.coeffs[..., 0], tol)
    Mt = M.coeffs.copy()
    Mt[..., 0] = 0.0
    Mtail = JetMatrix(M.space, Mt)
    X = JetMatrix(M.space, lu_solve(lu, rhs.coeffs))
    for _ in range(M.order):
        X = JetMatrix(M.space, lu_solve(lu, (rhs - Mtail @ X).coeffs))
    return X


def inverse(M: JetMatrix, tol: float = SINGULAR_TOL) -> JetMatrix:
    return jet_lu_solve(M, M.space.identity(M.rows), tol)


# -- composition and variable slicing -----------------------------------------

def compose(outer: JetArray, inner: Sequence[Jet]):
    """Substitute ``delta_v -> inner[v]`` into the Taylor polynomial of ``outer``.

    Every inner jet must have a zero constant term (it describes a displacement
    from the outer anchor). The result lives in the inner space with order
    ``min(outer.order, inner order)``.
    """
    if len(inner) != outer.num_vars:
        raise JetShapeError(f"compose needs {outer.num_vars} inner jets, got {len(inner)}")
    ispace = inner[0].space
    for j in inner:
        if j.space != ispace:
            raise JetShapeError("inner jets must share a space")
        if abs(j.const) > 1e-14 * max(1.0, j.max_abs()):
            raise ValueError("inner jets must have zero constant term")
    m = min(outer.order, ispace.order)
    ispace = ispace.with_order(m)
    inner = [j.truncate(m) for j in inner]
    t = outer.space.tables
    nused = comb(outer.num_vars + m, m)
    monos = np.zeros((nused, ispace.ncoeff))
    monos[0, 0] = 1.0
    first = np.argmax(t.exps[:nused] > 0, axis=1)
    parents = t.lookup(t.keys[:nused] - t.weights[first])
    for a in range(1, nused):
        monos[a] = _mul_coeffs(ispace, monos[parents[a]], inner[first[a]].coeffs)
    return _wrap(ispace, outer.coeffs[..., :nused] @ monos)


def drop_var(jet: JetArray, var: int, power: int):
    """Coefficient of ``delta_var**power`` as a jet in the remaining variables."""
    if power > jet.order:
        raise JetOrderError(f"no coefficient of degree {power} in an order-{jet.order} jet")
    nv = jet.num_vars
    if nv < 2:
        raise ValueError("cannot drop the only variable")
    anchor = tuple(a for i, a in enumerate(jet.space.anchor) if i != var)
    space = JetSpace(nv - 1, jet.order - power, anchor)
    sub = space.tables
    full = jet.space.tables
    ins = np.insert(sub.exps, var, power, axis=1)
    idx = full.lookup(ins @ full.weights)
    return _wrap(space, jet.coeffs[..., idx])


def insert_var(jet: JetArray, var: int, power: int, space: JetSpace):
    """Inverse of :func:`drop_var`: embed as ``jet * delta_var**power`` in ``space``.

    Terms whose total degree would exceed ``space.order`` are discarded.
    """
    full = space.tables
    sub = jet.space.tables
    keep = sub.degree + power <= space.order
    ins = np.insert(sub.exps[keep], var, power, axis=1)
    idx = full.lookup(ins @ full.weights)
    c = np.zeros(jet.coeffs.shape[:-1] + (space.ncoeff,))
    c[..., idx] = jet.coeffs[..., keep]
    return _wrap(space, c)


def series_space(order: int) -> JetSpace:
    """Univariate space in epsilon around 0, used for epsilon-series."""
    return JetSpace(1, order, (0.0,))


def as_jets(values: Iterable, space: JetSpace) -> list[Jet]:
    out = []
    for v in values:
        out.append(v if isinstance(v, Jet) else space.constant(float(v)))
    return out
