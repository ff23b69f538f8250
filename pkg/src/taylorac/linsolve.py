"""Krylov solvers (CG, BiCGStab, restarted GMRES) with optional Jacobi scaling.

The Krylov iterations themselves come from :mod:`scipy.sparse.linalg`; this
module fixes the stopping rule ``||b - Ax|| <= max(rel_tol ||b||, abs_tol)``,
checks it against the true residual after the solve, and turns any failure
into a :class:`~taylorac.errors.SolverError`.

``method="direct"`` is an opt-in sparse LU (SuperLU with COLAMD ordering)
followed by iterative refinement under the same stopping rule.  It exists for
the strongly penalized momentum systems (``lambda`` in the thousands), where
Jacobi-preconditioned Krylov iterations need tens of thousands of steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, SolverError

__all__ = ["SolverConfig", "SolveResult", "solve", "solve_zero_mean",
           "CG", "BICGSTAB", "GMRES", "DIRECT"]

CG, BICGSTAB, GMRES, DIRECT = "cg", "bicgstab", "gmres", "direct"


@dataclass(frozen=True)
class SolverConfig:
    method: str = CG
    preconditioner: str = "jacobi"
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iter: int = 20000
    restart: int = 50

    def __post_init__(self):
        if self.method not in (CG, BICGSTAB, GMRES, DIRECT):
            raise InvalidArgument(f"unknown method {self.method!r}")
        if self.preconditioner not in ("none", "jacobi"):
            raise InvalidArgument(f"unknown preconditioner {self.preconditioner!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidArgument("tolerances must be positive")
        if self.restart < 1 or self.max_iter < 1:
            raise InvalidArgument("restart and max_iter must be >= 1")


class SolveResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def _jacobi(A):
    d = A.diagonal().copy()
    d[d == 0] = 1.0
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, matvec=lambda v: inv * v.ravel(), dtype=float)


def solve(A, b, cfg=SolverConfig(), x0=None):
    """Solve ``A x = b``; returns ``(x, iterations, residual_norm)``.

    Raises :class:`SolverError` if the tolerance is not met within
    ``cfg.max_iter`` iterations.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise InvalidArgument(f"incompatible shapes {A.shape} and {b.shape}")
    bnorm = float(np.linalg.norm(b))
    target = max(cfg.rel_tol * bnorm, cfg.abs_tol)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = float(np.linalg.norm(b - A @ x))
    if r <= target:
        return SolveResult(x, 0, r)
    if cfg.method == DIRECT:
        return _solve_direct(A, b, x, target, cfg)
    M = _jacobi(A) if cfg.preconditioner == "jacobi" else None

    count = [0]

    def cb(_):
        count[0] += 1

    budget = cfg.max_iter
    # a couple of restarts absorb drift between recursive and true residual
    for _ in range(4):
        if budget <= 0:
            break
        # scipy compares against max(rtol*||b||, atol) with b the true rhs
        kwargs = dict(rtol=cfg.rel_tol, atol=cfg.abs_tol, M=M, x0=x, callback=cb)
        start = count[0]
        if cfg.method == CG:
            x, info = spla.cg(A, b, maxiter=budget, **kwargs)
        elif cfg.method == BICGSTAB:
            x, info = spla.bicgstab(A, b, maxiter=budget, **kwargs)
        else:
            x, info = spla.gmres(A, b, restart=cfg.restart, maxiter=max(1, budget // cfg.restart),
                                 callback_type="pr_norm", **kwargs)
        budget -= max(1, count[0] - start)
        r = float(np.linalg.norm(b - A @ x))
        if not np.isfinite(r):
            break
        if r <= target:
            return SolveResult(x, count[0], r)
        if info < 0:
            break
    raise SolverError(f"{cfg.method} did not converge to {target:.3e}",
                      residual=r, iterations=count[0])


def _solve_direct(A, b, x, target, cfg):
    """LU solve plus refinement steps; ``iterations`` counts the refinements.

    Besides the usual target, a solution is accepted once refinement stalls
    with normwise backward error ``||r|| / (||A|| ||x|| + ||b||) <= 1e-13``
    and relative residual below ``1e-8`` (which rejects inconsistent systems):
    for nearly cancelling right-hand sides the absolute tolerance can lie
    below what floating point resolves for a strongly penalized matrix.
    """
    try:
        lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
    except RuntimeError as err:  # exactly singular
        raise SolverError(f"LU factorization failed: {err}",
                          residual=float(np.linalg.norm(b - A @ x)), iterations=0) from None
    a_norm = spla.norm(A, np.inf)
    b_norm = float(np.linalg.norm(b, np.inf))
    b_2 = float(np.linalg.norm(b))
    r_vec = b - A @ x
    r = float(np.linalg.norm(r_vec))
    steps = min(cfg.max_iter, 5)
    for it in range(1, steps + 1):
        x = x + lu.solve(r_vec)
        r_vec = b - A @ x
        r_old, r = r, float(np.linalg.norm(r_vec))
        if not np.isfinite(r):
            break
        if r <= target:
            return SolveResult(x, it, r)
        backward = float(np.linalg.norm(r_vec, np.inf)) / (a_norm * float(np.linalg.norm(x, np.inf)) + b_norm)
        if r > 0.5 * r_old and backward <= 1e-13 and r <= 1e-8 * b_2:
            return SolveResult(x, it, r)
    raise SolverError(f"direct solve did not reach {target:.3e}", residual=r, iterations=steps)


def solve_zero_mean(A, b, mass_lumped, cfg=SolverConfig(), x0=None):
    """Solve a singular system whose kernel is the constants.

    The right-hand side is projected onto the range (``sum(b) = 0``) and the
    returned solution is shifted so that ``mass_lumped @ x = 0``.
    """
    w = np.asarray(mass_lumped, dtype=float)
    b = np.asarray(b, dtype=float)
    b = b - b.sum() * w / w.sum()
    x = solve(A, b, cfg, x0).x
    return x - (w @ x) / w.sum()
