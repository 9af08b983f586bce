"""Computational singular perturbation for nonstandard slow-fast systems.

Systems have the form z' = N(z) f(z) + eps G(z, eps) with a critical
manifold S = {f = 0}. The package iterates CSP bases on truncated Taylor
jets and extracts slow-manifold graphs and fast-fiber frames as series in eps.
"""
from __future__ import annotations

from .errors import CspError, NumericalError, ValidationError
from .sysdef import SystemSpec, load_fixture, parse_system

__all__ = ["CspError", "NumericalError", "ValidationError", "SystemSpec", "load_fixture",
           "parse_system"]
__version__ = "0.1.0"
