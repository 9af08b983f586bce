"""Expression trees for system entries.

Grammar: identifiers, decimal literals, ``+ - * /``, ``^`` with an integer
exponent, parentheses, and the functions exp/log/sin/cos/sqrt. Parsing goes
through Python's own tokenizer and AST (``^`` is rewritten to ``**`` first),
then the tree is restricted to that grammar.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

from . import jets
from .errors import ParseError

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")
EPS = "eps"


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Const, Var, Param, BinOp, Neg, Pow, Call]

_BINOPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/"}


def parse_expression(text: str, variables: Sequence[str], params: Mapping[str, float],
                     *, allow_eps: bool = False, field: str | None = None) -> Expr:
    if not isinstance(text, str):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return Const(float(text))
        raise ParseError(f"expected an expression string, got {type(text).__name__}",
                         field=field)
    # rewritten source position -> 1-based column in the text as written
    lead = len(text) - len(text.lstrip())
    src, cols = [], []
    for i, ch in enumerate(text[lead:].rstrip(), start=lead + 1):
        src.append("**" if ch == "^" else ch)
        cols.extend([i] * len(src[-1]))
    src = "".join(src)

    def column(offset):
        if offset is None or not cols:
            return None
        return cols[min(max(offset, 0), len(cols) - 1)]

    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        off = None if exc.offset is None else exc.offset - 1
        raise ParseError(f"syntax error: {exc.msg} in {text!r}", field=field,
                         column=column(off)) from None
    names = set(variables)

    def conv(node) -> Expr:
        col = column(getattr(node, "col_offset", None))
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ParseError(f"unsupported literal {node.value!r}", field=field, column=col)
            return Const(float(node.value))
        if isinstance(node, ast.Name):
            if node.id in names:
                return Var(node.id)
            if node.id == EPS:
                if not allow_eps:
                    raise ParseError("'eps' may only appear in G", field=field, column=col)
                return Var(EPS)
            if node.id in params:
                return Param(node.id)
            raise ParseError(f"unknown identifier {node.id!r}", field=field, column=col)
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return Neg(conv(node.operand))
            if isinstance(node.op, ast.UAdd):
                return conv(node.operand)
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                return Pow(conv(node.left), _int_exponent(node.right, field, column))
            op = _BINOPS.get(type(node.op))
            if op is not None:
                return BinOp(op, conv(node.left), conv(node.right))
        if isinstance(node, ast.Call):
            if (isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS
                    and len(node.args) == 1 and not node.keywords):
                return Call(node.func.id, conv(node.args[0]))
            raise ParseError("unsupported function call", field=field, column=col)
        raise ParseError(f"unsupported syntax {type(node).__name__}", field=field, column=col)

    return conv(tree.body)


def _int_exponent(node, field, column) -> int:
    sign = 1
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        sign = -1 if isinstance(node.op, ast.USub) else 1
        node = node.operand
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool) and float(node.value).is_integer():
        return sign * int(node.value)
    raise ParseError("exponent must be an integer literal", field=field,
                     column=column(getattr(node, "col_offset", None)))


def to_string(e: Expr) -> str:
    """Fully parenthesized text that parses back to the same tree."""
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Neg):
        return f"(-{to_string(e.operand)})"
    if isinstance(e, Pow):
        return f"({to_string(e.base)} ^ {e.exponent})"
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})"
    raise TypeError(e)


def references(e: Expr) -> set[str]:
    if isinstance(e, (Var, Param)):
        return {e.name}
    if isinstance(e, BinOp):
        return references(e.left) | references(e.right)
    if isinstance(e, (Neg, Call)):
        return references(e.operand if isinstance(e, Neg) else e.arg)
    if isinstance(e, Pow):
        return references(e.base)
    return set()


def to_python(e: Expr, params: Mapping[str, float]) -> str:
    """Python source for ``e``; function names map to the jet-aware dispatchers."""
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name if e.name == EPS else f"_v_{e.name}"
    if isinstance(e, Param):
        return repr(float(params[e.name]))
    if isinstance(e, BinOp):
        return f"({to_python(e.left, params)} {e.op} {to_python(e.right, params)})"
    if isinstance(e, Neg):
        return f"(-{to_python(e.operand, params)})"
    if isinstance(e, Pow):
        return f"({to_python(e.base, params)} ** {e.exponent})"
    if isinstance(e, Call):
        return f"_{e.fn}({to_python(e.arg, params)})"
    raise TypeError(e)


_NAMESPACE = {f"_{fn}": getattr(jets, fn) for fn in FUNCTIONS}


def compile_function(exprs: Mapping[str, object], variables: Sequence[str],
                     params: Mapping[str, float]) -> Callable:
    """Compile nested lists of expressions into ``fn(z, eps)``.

    ``exprs`` maps output names to nested lists of Expr; the function returns a
    dict with the same structure. It works on floats and on jets alike.
    """
    lines = ["def _fn(z, eps):"]
    for i, v in enumerate(variables):
        lines.append(f"    _v_{v} = z[{i}]")

    def nest(obj):
        if isinstance(obj, (list, tuple)):
            return "[" + ", ".join(nest(o) for o in obj) + "]"
        return to_python(obj, params)

    items = ", ".join(f"{k!r}: {nest(v)}" for k, v in exprs.items())
    lines.append(f"    return {{{items}}}")
    ns = dict(_NAMESPACE)
    exec(compile("\n".join(lines), "<cspx-system>", "exec"), ns)
    return ns["_fn"]
