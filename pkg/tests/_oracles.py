"""Reference computations that do not go through the CSP engine.

Derivatives come from central finite differences of the float vector field,
so these share nothing with the jet machinery beyond the system definition.
"""
from __future__ import annotations

import numpy as np

from cspx import sysdef

FD_STEP = 1e-5


def fd_jacobian(fn, z, h=FD_STEP):
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        cols.append((np.asarray(fn(z + e)) - np.asarray(fn(z - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _field(spec, key, eps=0.0):
    return lambda z: sysdef.eval_float(spec, z, eps)[key]


def fast_projector(spec, z):
    N = sysdef.eval_float(spec, z)["N"]
    Df = fd_jacobian(_field(spec, "f"), z)
    return N @ np.linalg.solve(Df @ N, Df), Df, N


def first_order_graph(spec, z):
    """psi_1 = -(D_y f)^{-1} (Df N)^{-1} Df G at a point of S."""
    _, Df, N = fast_projector(spec, z)
    G = sysdef.eval_float(spec, z, 0.0)["G"]
    Dy = Df[:, list(spec.fast_idx)]
    return -np.linalg.solve(Dy, np.linalg.solve(Df @ N, Df @ G))


def invariant_fiber_first_order(spec, z):
    """(v0, v1) with span{v0 + eps v1} the linear fast fiber at z, when S is invariant.

    Expanding the invariant-bundle equation (D_z H) v - eps (Dv) G = lambda v in
    eps gives v0 = N and (N Df - lambda0) v1 = lambda1 N - [N, G], whose
    tangential part is Pi^S v1 = Pi^S [N, G] / lambda0. Only a single fast
    direction is handled.
    """
    PN, Df, N = fast_projector(spec, z)
    if N.shape[1] != 1:
        raise ValueError("oracle handles one fast direction")
    lam0 = float((Df @ N)[0, 0])
    DG = fd_jacobian(_field(spec, "G"), z)
    DN = fd_jacobian(lambda w: sysdef.eval_float(spec, w)["N"][:, 0], z)
    G = sysdef.eval_float(spec, z, 0.0)["G"]
    bracket = DG @ N[:, 0] - DN @ G
    PS = np.eye(spec.n) - PN
    return N, (PS @ bracket / lam0)[:, None]
