"""Exception hierarchy.

``ValidationError`` covers bad input (CLI exit code 1); ``NumericalError``
covers failures during computation (exit code 2). Both carry the module they
originate from and, when known, the anchor point.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Sequence


class CspError(Exception):
    def __init__(self, message: str, *, module: str | None = None,
                 anchor: Sequence[float] | None = None):
        super().__init__(message)
        self.message = message
        self.module = module
        self.anchor = None if anchor is None else tuple(float(a) for a in anchor)

    def __str__(self) -> str:
        parts = []
        if self.module:
            parts.append(f"[{self.module}]")
        parts.append(self.message)
        if self.anchor is not None:
            pt = ", ".join(f"{a:.12g}" for a in self.anchor)
            parts.append(f"(at point ({pt}))")
        return " ".join(parts)


class ValidationError(CspError):
    pass


class NumericalError(CspError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, *, field: str | None = None,
                 column: int | None = None, **kw):
        loc = ""
        if field is not None:
            loc = f" in {field}"
            if column is not None:
                loc += f" at column {column}"
        super().__init__(message + loc, **kw)
        self.field = field
        self.column = column


class DimensionError(ValidationError):
    pass


class ChartError(ValidationError):
    """The declared chart does not represent the manifold as a graph here."""


class JetShapeError(ValueError):
    """Jets with different (num_vars, order, anchor) were combined."""


class SingularJetError(NumericalError):
    def __init__(self, message: str, *, pivot: int | None = None, **kw):
        if pivot is not None:
            message = f"{message} (pivot {pivot})"
        super().__init__(message, **kw)
        self.pivot = pivot


class DomainError(NumericalError):
    pass


class JetOrderError(NumericalError):
    """Not enough Taylor order left for the requested derivative or series."""


class ConvergenceError(NumericalError):
    pass


class DualityError(NumericalError):
    pass


class IntegrationError(NumericalError):
    pass


@contextmanager
def error_context(module: str, anchor: Sequence[float] | None = None) -> Iterator[None]:
    """Fill in module/anchor on any CspError escaping the block."""
    try:
        yield
    except CspError as exc:
        if exc.module is None:
            exc.module = module
        if exc.anchor is None and anchor is not None:
            exc.anchor = tuple(float(a) for a in anchor)
        raise
