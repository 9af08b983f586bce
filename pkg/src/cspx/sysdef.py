"""System definitions of the form z' = N(z) f(z) + eps G(z, eps).

A :class:`SystemSpec` is parsed from a small JSON document, validated for
dimensions, and evaluated either as floats or as jets in the n+1 variables
(z_1, ..., z_n, eps) with eps anchored at zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import expr as ex
from . import jets
from .errors import (DimensionError, NumericalError, ParseError, ValidationError,
                     error_context)
from .jets import Jet, JetMatrix, JetSpace

MEMBERSHIP_TOL = 1e-9
SPECTRAL_MARGIN = 1e-6

_REQUIRED = ("name", "vars", "fast_dim", "N", "f", "G", "chart")
_OPTIONAL = ("params", "As0", "Nperp", "invariant_manifold")


@dataclass(frozen=True)
class SystemSpec:
    name: str
    var_names: tuple[str, ...]
    fast_dim: int
    params: Mapping[str, float]
    N: tuple[tuple[ex.Expr, ...], ...]
    f: tuple[ex.Expr, ...]
    G: tuple[ex.Expr, ...]
    chart: tuple[int, ...]
    As0: tuple[tuple[ex.Expr, ...], ...] | None = None
    Nperp: tuple[tuple[ex.Expr, ...], ...] | None = None
    # True when the critical manifold is itself invariant for every eps
    # (H restricted to S is tangent to S); enables exact refactorization.
    invariant_manifold: bool = False
    _fn: Callable = field(default=None, compare=False, repr=False)

    @property
    def n(self) -> int:
        return len(self.var_names)

    @property
    def k(self) -> int:
        return self.n - self.fast_dim

    @property
    def fast_idx(self) -> tuple[int, ...]:
        return self.chart

    @property
    def slow_idx(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if i not in self.chart)

    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return z[list(self.slow_idx)], z[list(self.fast_idx)]

    def join(self, x, y) -> np.ndarray:
        z = np.empty(self.n)
        z[list(self.slow_idx)] = x
        z[list(self.fast_idx)] = y
        return z


# -- parsing -----------------------------------------------------------------

def _matrix(doc, key, rows, cols, names, params, allow_eps=False):
    m = doc[key]
    if not isinstance(m, list) or len(m) != rows:
        raise DimensionError(f"{key} must have {rows} rows, got "
                             f"{len(m) if isinstance(m, list) else type(m).__name__}")
    out = []
    for i, row in enumerate(m):
        if not isinstance(row, list) or len(row) != cols:
            raise DimensionError(f"{key} row {i} must have {cols} entries")
        out.append(tuple(ex.parse_expression(e, names, params, allow_eps=allow_eps,
                                             field=f"{key}[{i}][{j}]")
                         for j, e in enumerate(row)))
    return tuple(out)


def _vector(doc, key, length, names, params, allow_eps=False):
    v = doc[key]
    if not isinstance(v, list) or len(v) != length:
        raise DimensionError(f"{key} must have length {length}, got "
                             f"{len(v) if isinstance(v, list) else type(v).__name__}")
    return tuple(ex.parse_expression(e, names, params, allow_eps=allow_eps,
                                     field=f"{key}[{i}]") for i, e in enumerate(v))


def parse_system(document: bytes | str | Mapping[str, Any]) -> SystemSpec:
    """Build a validated :class:`SystemSpec` from a JSON document."""
    if isinstance(document, (bytes, str)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg} (line {exc.lineno})",
                             column=exc.colno) from None
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        raise ParseError("system document must be a JSON object")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ParseError(f"missing field(s): {', '.join(missing)}")
    unknown = set(doc) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        raise ParseError(f"unknown field(s): {', '.join(sorted(unknown))}")

    names = doc["vars"]
    if (not isinstance(names, list) or not names
            or not all(isinstance(v, str) and v.isidentifier() for v in names)):
        raise ParseError("vars must be a non-empty list of identifiers", field="vars")
    if len(set(names)) != len(names):
        raise ParseError("duplicate variable names", field="vars")
    params = doc.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ParseError("params must be an object", field="params")
    for p, val in params.items():
        if p in names or p == ex.EPS or p in ex.FUNCTIONS:
            raise ParseError(f"parameter name {p!r} clashes with a variable or builtin",
                             field="params")
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ParseError(f"parameter {p!r} must be a number", field="params")
    if ex.EPS in names:
        raise ParseError("'eps' is reserved", field="vars")
    params = {p: float(v) for p, v in params.items()}

    n = len(names)
    fd = doc["fast_dim"]
    if isinstance(fd, bool) or not isinstance(fd, int) or not 1 <= fd < n:
        raise DimensionError(f"fast_dim must be an integer with 1 <= fast_dim < {n}")
    k = n - fd

    N = _matrix(doc, "N", n, fd, names, params)
    f = _vector(doc, "f", fd, names, params)
    G = _vector(doc, "G", n, names, params, allow_eps=True)

    chart_names = doc["chart"]
    if not isinstance(chart_names, list) or len(chart_names) != fd:
        raise DimensionError(f"chart must list exactly {fd} variable(s)")
    chart = []
    for c in chart_names:
        if isinstance(c, int) and not isinstance(c, bool):
            idx = c
        elif isinstance(c, str) and c in names:
            idx = names.index(c)
        else:
            raise ValidationError(f"chart entry {c!r} is not a declared variable")
        if not 0 <= idx < n:
            raise ValidationError(f"chart index {idx} out of range")
        chart.append(idx)
    if len(set(chart)) != len(chart):
        raise ValidationError("chart entries must be distinct")

    As0 = _matrix(doc, "As0", n, k, names, params) if doc.get("As0") is not None else None
    Nperp = (_matrix(doc, "Nperp", n, k, names, params)
             if doc.get("Nperp") is not None else None)
    inv = doc.get("invariant_manifold", False)
    if not isinstance(inv, bool):
        raise ParseError("invariant_manifold must be a boolean", field="invariant_manifold")
    return _build(str(doc["name"]), tuple(names), fd, params, N, f, G, tuple(chart),
                  As0, Nperp, inv)


def _build(name, names, fd, params, N, f, G, chart, As0, Nperp, inv) -> SystemSpec:
    outputs = {"N": N, "f": f, "G": G}
    if As0 is not None:
        outputs["As0"] = As0
    if Nperp is not None:
        outputs["Nperp"] = Nperp
    fn = ex.compile_function(outputs, names, params)
    return SystemSpec(name, names, fd, dict(params), N, f, G, chart, As0, Nperp, inv, fn)


def with_params(spec: SystemSpec, overrides: Mapping[str, float]) -> SystemSpec:
    """Copy of ``spec`` with some parameter values replaced."""
    bad = set(overrides) - set(spec.params)
    if bad:
        raise ValidationError(f"unknown parameter(s): {', '.join(sorted(bad))}")
    params = {**spec.params, **{k: float(v) for k, v in overrides.items()}}
    return _build(spec.name, spec.var_names, spec.fast_dim, params, spec.N, spec.f,
                  spec.G, spec.chart, spec.As0, spec.Nperp, spec.invariant_manifold)


def to_document(spec: SystemSpec) -> dict:
    doc = {
        "name": spec.name,
        "vars": list(spec.var_names),
        "fast_dim": spec.fast_dim,
        "params": dict(spec.params),
        "N": [[ex.to_string(e) for e in row] for row in spec.N],
        "f": [ex.to_string(e) for e in spec.f],
        "G": [ex.to_string(e) for e in spec.G],
        "chart": [spec.var_names[i] for i in spec.chart],
    }
    if spec.As0 is not None:
        doc["As0"] = [[ex.to_string(e) for e in row] for row in spec.As0]
    if spec.Nperp is not None:
        doc["Nperp"] = [[ex.to_string(e) for e in row] for row in spec.Nperp]
    if spec.invariant_manifold:
        doc["invariant_manifold"] = True
    return doc


def serialize_system(spec: SystemSpec) -> str:
    return json.dumps(to_document(spec), indent=2)


def list_fixtures() -> list[str]:
    root = resources.files("cspx") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name: str) -> SystemSpec:
    if name not in list_fixtures():
        raise ValidationError(f"unknown fixture {name!r}; available: "
                              f"{', '.join(list_fixtures())}")
    data = (resources.files("cspx") / "fixtures" / f"{name}.json").read_bytes()
    return parse_system(data)


def load_system(path: str) -> SystemSpec:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read system file {path!r}: {exc.strerror}") from None
    return parse_system(data)


# -- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class Parts:
    """N, f, G and H = N f + eps G as jets (column matrices for vectors)."""
    space: JetSpace
    N: JetMatrix
    f: JetMatrix
    G: JetMatrix
    H: JetMatrix
    As0: JetMatrix | None = None
    Nperp: JetMatrix | None = None


def _as_matrix(space: JetSpace, rows) -> JetMatrix:
    rows = [[e if isinstance(e, Jet) else float(e) for e in r] for r in rows]
    return JetMatrix.from_entries(space, rows)


def jet_space(spec: SystemSpec, anchor, order: int) -> JetSpace:
    anchor = np.asarray(anchor, dtype=float)
    if anchor.shape != (spec.n,):
        raise DimensionError(f"anchor must have length {spec.n}, got {anchor.size}")
    return JetSpace(spec.n + 1, order, tuple(anchor) + (0.0,))


def eval_parts(spec: SystemSpec, anchor, order: int) -> Parts:
    """Jets of the system parts in (z, eps) at ``anchor`` with eps = 0."""
    if order < 1:
        raise ValueError("order must be at least 1")
    space = jet_space(spec, anchor, order)
    z = [space.variable(i) for i in range(spec.n)]
    with error_context("sysdef", anchor):
        return evaluate_jets(spec, z, space.variable(spec.n))


def evaluate_jets(spec: SystemSpec, z: Sequence[Jet], eps) -> Parts:
    """Evaluate the parts on arbitrary jets ``z`` (and ``eps``, jet or float).

    All jets must share one space; the result lives in it.
    """
    space = z[0].space
    vals = spec._fn(list(z), eps)
    N = _as_matrix(space, vals["N"])
    f = _as_matrix(space, [[e] for e in vals["f"]])
    G = _as_matrix(space, [[e] for e in vals["G"]])
    H = N @ f + G * eps
    As0 = _as_matrix(space, vals["As0"]) if "As0" in vals else None
    Nperp = _as_matrix(space, vals["Nperp"]) if "Nperp" in vals else None
    return Parts(space, N, f, G, H, As0, Nperp)


def eval_float(spec: SystemSpec, z, eps: float = 0.0) -> dict[str, np.ndarray]:
    """Plain float evaluation: N (n x fd), f (fd), G (n), H (n)."""
    z = np.asarray(z, dtype=float)
    with error_context("sysdef", z):
        try:
            vals = spec._fn(list(z), float(eps))
        except ZeroDivisionError:
            raise NumericalError("division by zero while evaluating the system") from None
    N = np.array(vals["N"], dtype=float).reshape(spec.n, spec.fast_dim)
    f = np.array(vals["f"], dtype=float)
    G = np.array(vals["G"], dtype=float)
    return {"N": N, "f": f, "G": G, "H": N @ f + eps * G}


def vector_field(spec: SystemSpec, eps: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """``rhs(t, z)`` for ODE integration."""
    fn = spec._fn

    def rhs(t, z):
        vals = fn(list(z), eps)
        N = np.array(vals["N"], dtype=float).reshape(spec.n, spec.fast_dim)
        return N @ np.array(vals["f"], dtype=float) + eps * np.array(vals["G"], dtype=float)

    return rhs


def f_jacobian(spec: SystemSpec, z) -> np.ndarray:
    """Df at ``z`` as a (fd x n) array."""
    parts = eval_parts(spec, z, 1)
    return jets.jacobian(parts.f, spec.n).coeffs[..., 0]


# -- standing assumptions --------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    point: tuple[float, ...]
    f_residual: float
    rank_N: int
    rank_Df: int
    eigenvalues: np.ndarray
    spectral_margin: float
    full_rank: bool
    attracting: bool

    @property
    def passed(self) -> bool:
        return self.full_rank and self.attracting


def membership_residual(spec: SystemSpec, z) -> float:
    """|f(z)| scaled by the magnitude of the point."""
    f = eval_float(spec, z)["f"]
    scale = max(1.0, float(np.max(np.abs(z))))
    return float(np.max(np.abs(f))) / scale


def check_assumptions(spec: SystemSpec, point, *, spectral_margin: float = SPECTRAL_MARGIN,
                      membership_tol: float = MEMBERSHIP_TOL) -> AssumptionReport:
    """Rank and normal-hyperbolicity checks at a point of the critical manifold."""
    z = np.asarray(point, dtype=float)
    res = membership_residual(spec, z)
    if res > membership_tol:
        raise ValidationError(f"point is not on the critical manifold (|f| = {res:.3g})",
                              module="sysdef", anchor=z)
    N = eval_float(spec, z)["N"]
    Df = f_jacobian(spec, z)
    fd = spec.fast_dim
    rN = int(np.linalg.matrix_rank(N))
    rDf = int(np.linalg.matrix_rank(Df))
    eig = np.linalg.eigvals(Df @ N)
    eig = eig[np.lexsort((eig.imag, eig.real))]
    return AssumptionReport(tuple(float(v) for v in z), res, rN, rDf, eig, spectral_margin,
                            rN == fd and rDf == fd,
                            bool(np.all(eig.real < -spectral_margin)))
