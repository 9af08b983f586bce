"""Command-line front end: ``cspx <subcommand> ...``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np

from . import csp, geometry, sysdef, verify
from .errors import CspError, NumericalError, ValidationError


# -- output ------------------------------------------------------------------------------

def _format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == 0.0:
        return "0.0"
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def to_json(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON: 17 significant digits, keys in insertion order."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _rows_to_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_format_float(float(v)) if isinstance(v, (float, np.floating)) else v
                    for v in r])
    return buf.getvalue()


def _emit(args, payload: dict, csv_table: tuple[Sequence[str], list] | None = None) -> None:
    if args.format == "csv":
        if csv_table is None:
            raise ValidationError(f"{args.command} has no CSV form; use --format json")
        text = _rows_to_csv(*csv_table)
    else:
        text = to_json(payload) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- argument helpers -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"{what} must be comma-separated numbers, got {text!r}") from None


def _params(text: str | None) -> dict[str, float]:
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        name, sep, val = item.partition("=")
        if not sep:
            raise ValidationError(f"--params entries must look like name=value, got {item!r}")
        try:
            out[name.strip()] = float(val)
        except ValueError:
            raise ValidationError(f"parameter {name.strip()!r} needs a number") from None
    return out


def _load(args) -> sysdef.SystemSpec:
    if bool(args.fixture) == bool(args.system):
        raise ValidationError("give exactly one of --fixture or --system")
    spec = sysdef.load_fixture(args.fixture) if args.fixture else sysdef.load_system(args.system)
    overrides = _params(args.params)
    return sysdef.with_params(spec, overrides) if overrides else spec


def _chart_points(args, spec) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """(x, y_guess) pairs from --point (full points) or --x (chart values)."""
    pts = []
    for text in args.point or []:
        z = _floats(text, "--point")
        if len(z) != spec.n:
            raise ValidationError(f"--point needs {spec.n} coordinates, got {len(z)}")
        x, y = spec.split(z)
        pts.append((x, y))
    for text in args.x or []:
        x = _floats(text, "--x")
        if len(x) != spec.k:
            raise ValidationError(f"--x needs {spec.k} value(s), got {len(x)}")
        guess = None if args.y_guess is None else _floats(args.y_guess, "--y-guess")
        pts.append((np.asarray(x), None if guess is None else np.asarray(guess)))
    if not pts:
        raise ValidationError("give at least one --point or --x")
    return pts


def _workers() -> int:
    env = os.environ.get("CSPX_THREADS")
    if env is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(env)
    except ValueError:
        raise ValidationError(f"CSPX_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ValidationError("CSPX_THREADS must be at least 1")
    return n


def _map(fn: Callable, items: list) -> list:
    workers = _workers()
    if workers == 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _eps_series(X) -> list:
    """Per-entry epsilon coefficients of a univariate jet matrix, as nested lists."""
    return np.moveaxis(X.coeffs, -1, 0).tolist()


def _run(args, spec, x, guess) -> csp.CspRun:
    return csp.run_csp(spec, x, steps=args.steps, eps_order=args.eps_order, order=args.order,
                       mode=args.mode, bases=args.bases, y_guess=guess)


# -- subcommands ---------------------------------------------------------------------------------

def cmd_check(args) -> None:
    spec = _load(args)
    records = []
    # --point is checked as given; --x is first completed to a point of S
    points = [np.asarray(_floats(t, "--point")) for t in args.point or []]
    if args.x:
        args = argparse.Namespace(**{**vars(args), "point": None})
        points += [geometry.solve_critical_point(spec, x, guess)
                   for x, guess in _chart_points(args, spec)]
    if not points:
        raise ValidationError("give at least one --point or --x")
    for z in points:
        if z.shape != (spec.n,):
            raise ValidationError(f"--point needs {spec.n} coordinates, got {z.size}")
        rep = sysdef.check_assumptions(spec, z, spectral_margin=args.spectral_margin)
        records.append({
            "point": list(rep.point),
            "f_residual": rep.f_residual,
            "rank_N": rep.rank_N,
            "rank_Df": rep.rank_Df,
            "eigenvalues": [[float(e.real), float(e.imag)] for e in rep.eigenvalues],
            "spectral_margin": rep.spectral_margin,
            "verdict": "PASS" if rep.passed else "FAIL",
        })
    rows = [[*r["point"], *[e[0] for e in r["eigenvalues"]], r["verdict"]] for r in records]
    header = [*spec.var_names, *[f"eig{i}" for i in range(spec.fast_dim)], "verdict"]
    _emit(args, {"system": spec.name, "reports": records}, (header, rows))


def cmd_iterate(args) -> None:
    spec = _load(args)

    def one(item):
        x, guess = item
        run = _run(args, spec, x, guess)
        steps = []
        for j, basis in enumerate(run.bases):
            lam = csp.lambda_on_graph(run, j)
            rec = {
                "j": j,
                "jet_order": basis.order,
                "duality_residual": basis.duality_residual(),
                "relative_duality_residual": basis.relative_duality_residual(),
                "A": basis.A.const,
                "B": basis.B.const,
                "lambda_on_graph": {name: _eps_series(getattr(lam, name))
                                    for name in ("ff", "fs", "sf", "ss")},
            }
            if j < len(run.updates):
                rec["U_tilde_max"] = run.updates[j].U_tilde.max_abs()
                rec["L_tilde_max"] = run.updates[j].L_tilde.max_abs()
            steps.append(rec)
        return {"x": run.x, "anchor": run.anchor, "jet_order": run.order, "steps": steps}

    records = _map(one, _chart_points(args, spec))
    _emit(args, {"system": spec.name, "mode": args.mode, "points": records})


def cmd_series(args) -> None:
    spec = _load(args)

    def one(item):
        x, guess = item
        run = _run(args, spec, x, guess)
        g = run.graphs[args.steps]
        rec = {"x": run.x, "psi": g.series()}
        if args.oracle:
            rec["oracle"] = verify.series_matching_oracle(spec, run.x, g.eps_order, run.y0)
        return rec

    records = _map(one, _chart_points(args, spec))
    rows = []
    for r in records:
        for i, coeff in enumerate(np.asarray(r["psi"])):
            rows.append([*np.asarray(r["x"]), i, *coeff])
    header = [*[spec.var_names[i] for i in spec.slow_idx], "eps_power",
              *[spec.var_names[i] for i in spec.fast_idx]]
    _emit(args, {"system": spec.name, "j": args.steps,
                 "eps_order": args.steps if args.eps_order is None else args.eps_order,
                 "chart": [spec.var_names[i] for i in spec.fast_idx], "points": records},
          (header, rows))


def cmd_fibers(args) -> None:
    spec = _load(args)

    def one(item):
        x, guess = item
        run = _run(args, spec, x, guess)
        fb = csp.csp_fiber(run, args.steps)
        return {"x": run.x, "basepoint": fb.basepoint, "A_f": fb.eps_series}

    records = _map(one, _chart_points(args, spec))
    _emit(args, {"system": spec.name, "j": args.steps, "points": records})


def _sweep_residual(spec, run, quantity: str, j: int, eps: float, oracle) -> float:
    if quantity == "manifold":
        psi = run.graphs[j].series()[: j + 1]
        diff = (eps ** np.arange(j + 1)) @ psi - (eps ** np.arange(oracle.shape[0])) @ oracle
        return float(np.max(np.abs(diff)))
    lam = csp.lambda_on_graph(run, j)
    block = lam.fs if quantity == "lambda_fs" else lam.sf
    ser = np.moveaxis(block.coeffs, -1, 0)
    return float(np.max(np.abs(np.tensordot(eps ** np.arange(ser.shape[0]), ser, axes=1))))


def cmd_sweep(args) -> None:
    spec = _load(args)
    eps_list = _floats(args.eps_list, "--eps-list") if args.eps_list else list(
        verify.DEFAULT_EPS_GRID)
    eps_order = args.eps_order if args.eps_order is not None else args.steps + 4

    def one(item):
        x, guess = item
        run = csp.run_csp(spec, x, steps=args.steps, eps_order=eps_order, order=args.order,
                          mode=args.mode, bases=args.bases, y_guess=guess)
        oracle = (verify.series_matching_oracle(spec, run.x, eps_order, run.y0)
                  if args.quantity == "manifold" else None)
        est = verify.estimate_order(
            lambda e: _sweep_residual(spec, run, args.quantity, args.steps, e, oracle), eps_list)
        return {"x": run.x, "eps": est.eps_values, "residuals": est.residuals,
                "slope": est.fitted_slope, "r_squared": est.r_squared}

    records = _map(one, _chart_points(args, spec))
    rows = [[*np.asarray(r["x"]), e, res] for r in records
            for e, res in zip(r["eps"], r["residuals"])]
    header = [*[spec.var_names[i] for i in spec.slow_idx], "eps", "residual"]
    _emit(args, {"system": spec.name, "quantity": args.quantity, "j": args.steps,
                 "points": records}, (header, rows))


def cmd_simulate(args) -> None:
    spec = _load(args)
    ic = _floats(args.ic, "--ic")
    if args.eps is None:
        raise ValidationError("simulate needs --eps")
    tr = verify.integrate_trajectory(spec, ic, args.eps, args.t_max, tol=args.tol,
                                     num_points=args.samples)
    fn = tr.f_norm(spec)
    header = ["t", *spec.var_names, "abs_f"]
    rows = [[t, *z, f] for t, z, f in zip(tr.times, tr.states, fn)]
    _emit(args, {"system": spec.name, "eps": tr.eps, "rtol": tr.rtol, "atol": tr.atol,
                 "method": tr.method, "nfev": tr.nfev, "t": tr.times, "states": tr.states,
                 "abs_f": fn}, (header, rows))


def cmd_fixtures(args) -> None:
    names = sysdef.list_fixtures()
    if args.show:
        spec = sysdef.load_fixture(args.show)
        text = sysdef.serialize_system(spec) + "\n"
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return
    _emit(args, {"fixtures": names}, (["name"], [[n] for n in names]))


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cspx", description="CSP reduction for z' = N(z) f(z) + eps G(z, eps).")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, points=True, csp_opts=False):
        sp.add_argument("--fixture", help="built-in system name")
        sp.add_argument("--system", help="path to a system JSON file")
        sp.add_argument("--params", help="parameter overrides, e.g. k1=1,c=3")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--out", help="output path (default stdout)")
        if points:
            sp.add_argument("--point", action="append",
                            help="full point z (comma-separated); its y part seeds Newton")
            sp.add_argument("--x", action="append", help="chart coordinates (comma-separated)")
            sp.add_argument("--y-guess", help="Newton start for the graph variables with --x")
        if csp_opts:
            sp.add_argument("--steps", type=int, default=1, help="number of CSP iterations")
            sp.add_argument("--eps-order", type=int, default=None,
                            help="epsilon-series order (default: steps)")
            sp.add_argument("--order", type=int, default=None,
                            help="jet order (default: steps + eps-order + 2)")
            sp.add_argument("--mode", choices=("two_step", "one_step"), default="two_step")
            sp.add_argument("--bases", choices=("auto", "default", "explicit"), default="auto")

    sp = sub.add_parser("check", help="standing-assumption report at points of S")
    common(sp)
    sp.add_argument("--spectral-margin", type=float, default=sysdef.SPECTRAL_MARGIN)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("iterate", help="CSP bases and Lambda blocks per step")
    common(sp, csp_opts=True)
    sp.set_defaults(func=cmd_iterate)

    sp = sub.add_parser("series", help="epsilon-series of the CSP manifold graph")
    common(sp, csp_opts=True)
    sp.add_argument("--oracle", action="store_true", help="also report the invariance series")
    sp.set_defaults(func=cmd_series)

    sp = sub.add_parser("fibers", help="epsilon-series of the CSP fiber frame")
    common(sp, csp_opts=True)
    sp.set_defaults(func=cmd_fibers)

    sp = sub.add_parser("sweep", help="fitted epsilon-order of an error quantity")
    common(sp, csp_opts=True)
    sp.add_argument("--quantity", choices=("manifold", "lambda_fs", "lambda_sf"),
                    default="manifold")
    sp.add_argument("--eps-list", help="comma-separated eps values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("simulate", help="integrate a trajectory")
    common(sp, points=False)
    sp.add_argument("--ic", required=True, help="initial condition (comma-separated)")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--t-max", type=float, default=10.0)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--samples", type=int, default=501)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fixtures", help="list or print built-in systems")
    sp.add_argument("--show", help="print the named fixture as JSON")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fixtures)
    return p


def _validate(args) -> None:
    if getattr(args, "steps", 0) < 0:
        raise ValidationError("--steps must be non-negative")
    if getattr(args, "eps_order", None) is not None and args.eps_order < 0:
        raise ValidationError("--eps-order must be non-negative")
    if getattr(args, "order", None) is not None and args.order < 1:
        raise ValidationError("--order must be positive")
    if getattr(args, "eps", None) is not None and args.eps < 0:
        raise ValidationError("--eps must be non-negative")


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except CspError as exc:  # pragma: no cover - every error is one of the two kinds
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
