"""Fourth-order Taylor-series cascade for variable-density flow.

The state carries ``rho_l, u_l, p_l`` for ``l = d^l/dt^l``, l = 0..3.  A step
first updates the density derivatives from order 3 down to 0, then the
velocity/pressure derivatives in the same order.  Stage ``l`` is the
``l``-th time derivative of the governing equations; derivatives of order
``l+1`` and ``l+2`` already computed at the new level enter as the
correction terms ``(tau/2) d_{l+1}`` and ``(tau^2/12) d_{l+2}`` that raise
the stage accuracy, and time derivatives of the convection term come from
finite differences of extrapolated velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial
from typing import List

import numpy as np

from . import assembly as asm
from .errors import InvalidArgument
from .fespace import Field
from .scheme import _source_values, solve_stage

__all__ = [
    "TaylorState",
    "SourceBundle",
    "extrapolate",
    "extrapolate_fields",
    "FD_STENCILS",
    "apply_stencil",
    "nonlinear_fd_combos",
    "continuity_cascade",
    "momentum_cascade",
    "step_taylor4",
    "sources_from_problem",
]

# coefficients on N at levels (n+3, n+2, n+1, n); entry d approximates
# d^d N / dt^d at t^{n+1} once divided by tau^d
FD_STENCILS = {
    1: (Fraction(-1, 6), Fraction(1), Fraction(-1, 2), Fraction(-1, 3)),
    2: (Fraction(0), Fraction(1), Fraction(-2), Fraction(1)),
    3: (Fraction(1), Fraction(-3), Fraction(3), Fraction(-1)),
}


def apply_stencil(order, values, tau):
    """Combine ``values`` at levels (n+3, n+2, n+1, n) with ``FD_STENCILS[order]``.

    Works with Fractions (exact) as well as floats and arrays.
    """
    exact = isinstance(tau, Fraction)
    acc = 0
    for c, v in zip(FD_STENCILS[order], values):
        if c:
            acc = acc + (c if exact else float(c)) * v
    return acc / tau**order


@dataclass
class TaylorState:
    """Fields ``rho[l], u[l], p[l]`` holding the l-th time derivatives at ``t``."""

    rho: List[Field]
    u: List[Field]
    p: List[Field]
    t: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        if not (len(self.rho) == len(self.u) == len(self.p) == 4):
            raise InvalidArgument("a TaylorState holds four derivative orders per variable")

    def copy(self):
        return TaylorState([f.copy() for f in self.rho], [f.copy() for f in self.u],
                           [f.copy() for f in self.p], self.t, self.tau)

    @classmethod
    def from_exact(cls, disc, case, t):
        """Interpolate exact fields and time derivatives of a manufactured case."""
        from .fespace import interpolate

        rho = [interpolate(disc.R, lambda x, y, tt, l=l: case.rho(l, x, y, tt), t) for l in range(4)]
        u = [interpolate(disc.V, lambda x, y, tt, l=l: case.u(l, x, y, tt), t) for l in range(4)]
        p = [Field(disc.Q, disc.zero_mean(
            interpolate(disc.Q, lambda x, y, tt, l=l: case.p(l, x, y, tt), t).values)) for l in range(4)]
        return cls(rho, u, p, t, 0.0)


@dataclass
class SourceBundle:
    """Momentum sources ``f[l]`` and continuity sources ``g[l]`` at t^{n+1}.

    Entries are quadrature values, ``None`` (zero) or, for ``f``, a callable
    receiving the list of new density derivatives.
    """

    f: list = field(default_factory=lambda: [None] * 4)
    g: list = field(default_factory=lambda: [None] * 4)


def extrapolate_fields(derivs, s, tau, order):
    """Taylor extrapolation of derivative ``order`` to ``t + s tau``.

    ``derivs`` holds the derivatives 0..3 at t; the highest one is held
    constant, so ``order = 3`` returns a copy of ``derivs[3]``.
    """
    if order not in (0, 1, 2, 3):
        raise InvalidArgument("order must be 0..3")
    h = s * tau
    vals = derivs[order].values.copy()
    for j in range(order + 1, 4):
        vals += h ** (j - order) / factorial(j - order) * derivs[j].values
    return Field(derivs[order].space, vals)


def extrapolate(state, s, order, tau=None):
    """``(rho~_order, u~_order)`` at level n+s, s in {1, 2, 3}."""
    if s not in (1, 2, 3):
        raise InvalidArgument("s must be 1, 2 or 3")
    tau = state.tau if tau is None else tau
    return (extrapolate_fields(state.rho, s, tau, order),
            extrapolate_fields(state.u, s, tau, order))


def nonlinear_fd_combos(state, tau, rule, include_convection=True):
    """Approximations of d^l/dt^l N(u) at t^{n+1}, ``N(w) = (w . grad) w``.

    Returns a list indexed by l = 0..3 of (C, nq, 2) arrays: ``N(u~_0^{n+1})``
    and the stencils of :data:`FD_STENCILS` applied to
    ``N(u~_0^{n+3}), N(u~_0^{n+2}), N(u~_0^{n+1}), N(u_0^n)``.
    """
    if not include_convection:
        C, nq = state.u[0].space.mesh.num_cells, len(rule)
        z = np.zeros((C, nq, 2))
        return [z, z, z, z]
    levels = [extrapolate_fields(state.u, s, tau, 0) for s in (3, 2, 1)] + [state.u[0]]
    N = [asm.convection_qp(w, rule) for w in levels]
    return [N[2]] + [apply_stencil(d, N, tau) for d in (1, 2, 3)]


def _poisoned(space):
    return Field(space, np.full(space.ndofs, np.nan))


def continuity_cascade(disc, state, params, g=None, rho_bc=None, iterations=None):
    """New density derivatives ``[rho_0, .., rho_3]`` at t^{n+1}.

    ``g`` lists the continuity sources per order (None for zero).  ``rho_bc``
    is one inflow boundary spec shared by all orders or a list of four.
    """
    tau, rule = params.tau, disc.rule
    t1 = state.t + tau
    g = [None] * 4 if g is None else g
    rho_t = [extrapolate_fields(state.rho, 1, tau, l) for l in range(4)]
    u_t = [extrapolate_fields(state.u, 1, tau, l) for l in range(4)]
    grad_rho_t = [r.grad_at_quadrature(rule) for r in rho_t]
    u_tq = [w.at_quadrature(rule) for w in u_t]
    base = disc.M_R / tau + asm.advection_scalar(disc.R, u_t[0], rule=rule)
    new = [_poisoned(disc.R) for _ in range(4)]
    for l in (3, 2, 1, 0):
        A = base
        sig = disc.viscosity_qp(params.sigma[l])
        if sig is not None:
            A = A + asm.stiffness(disc.R, sig, rule)
        b = disc.M_R @ state.rho[l].values / tau
        if l + 1 <= 3:
            b -= 0.5 * (disc.M_R @ (new[l + 1].values - state.rho[l + 1].values))
        if l + 2 <= 3:
            b -= tau / 12 * (disc.M_R @ (new[l + 2].values - state.rho[l + 2].values))
        if l >= 1:
            expl = sum(comb(l, j) * np.einsum("cqd,cqd->cq", u_tq[j], grad_rho_t[l - j])
                       for j in range(1, l + 1))
            b -= asm.load_vector(disc.R, expl, rule)
        gq = _source_values(g[l])
        if gq is not None:
            b += asm.load_vector(disc.R, gq, rule)
        bc = rho_bc[l] if isinstance(rho_bc, (list, tuple)) else rho_bc
        A_l, b = asm.apply_bc(A, b, bc, disc.R, t1)
        res = solve_stage(A_l, b, params.density_solver, rho_t[l].values, f"continuity[{l}]")
        new[l] = Field(disc.R, res.x)
        if iterations is not None:
            iterations[f"rho{l}"] = res.iterations
    return new


def _pressure_extrapolant(state, new_p, l, tau):
    """p_l^n + sum_j (-1)^(j+1) tau^j / j! p_{l+j}^{n+1}."""
    vals = state.p[l].values.copy()
    for j in range(1, 4 - l):
        vals += (-1) ** (j + 1) * tau**j / factorial(j) * new_p[l + j].values
    return vals


def momentum_cascade(disc, state, rho_new, params, bcs, f=None, iterations=None):
    """New velocity and pressure derivatives at t^{n+1}.

    ``bcs[l]`` is the boundary spec of ``u_l``; ``f[l]`` the momentum source
    of order ``l`` (quadrature values, a callable of ``rho_new`` or None).
    Returns ``(u_new, p_new)``.
    """
    tau, rule, lam = params.tau, disc.rule, params.lam
    t1 = state.t + tau
    f = [None] * 4 if f is None else f
    Nd = nonlinear_fd_combos(state, tau, rule, params.include_convection)
    u_t = [extrapolate_fields(state.u, 1, tau, l) for l in range(4)]
    u_tq = [w.at_quadrature(rule) for w in u_t]
    rq = [disc.qp(r) for r in rho_new]
    M0 = asm.mass(disc.V, rq[0], rule)
    M1 = asm.mass(disc.V, rq[1], rule)
    base = M0 / tau + lam * disc.G_V
    if not params.strict_printed_form:
        base = base + params.mu * disc.K_V
    u_new = [_poisoned(disc.V) for _ in range(4)]
    p_new = [_poisoned(disc.Q) for _ in range(4)]
    for l in (3, 2, 1, 0):
        A = base + l * M1 if l else base
        nuq = disc.viscosity_qp(params.nu[l], rho_new[0])
        if nuq is not None:
            A = A + asm.stiffness(disc.V, nuq, rule)
        b = M0 @ state.u[l].values / tau
        if l + 1 <= 3:
            b -= 0.5 * (M0 @ (u_new[l + 1].values - state.u[l + 1].values))
        if l + 2 <= 3:
            b -= tau / 12 * (M0 @ (u_new[l + 2].values - state.u[l + 2].values))
        expl = rq[0][..., None] * Nd[l]
        for j in range(1, l + 1):
            inner = Nd[l - j] if j < 2 else u_tq[l - j + 1] + Nd[l - j]
            expl = expl + comb(l, j) * rq[j][..., None] * inner
        b -= asm.load_vector(disc.V, expl, rule)
        P = Field(disc.Q, _pressure_extrapolant(state, p_new, l, tau))
        b -= asm.gradient_load(disc.V, P, rule)
        fq = _source_values(f[l], rho_new)
        if fq is not None:
            b += asm.load_vector(disc.V, fq, rule)
        A_l, b = asm.apply_bc(A, b, bcs[l], disc.V, t1, symmetric=True)
        res = solve_stage(A_l, b, params.velocity_solver, u_t[l].values, f"momentum[{l}]")
        u_new[l] = Field(disc.V, res.x)
        p_new[l] = disc.project_pressure(P.values, u_new[l], lam, params, stage=f"pressure[{l}]")
        if iterations is not None:
            iterations[f"u{l}"] = res.iterations
    return u_new, p_new


def sources_from_problem(problem, disc, t1):
    """SourceBundle evaluated at ``t1`` from a problem description."""
    f = [lambda rho_new, l=l: problem.momentum_source(disc, l, t1, rho_new[l]) for l in range(4)]
    g = [problem.density_source(disc, l, t1) for l in range(4)]
    return SourceBundle(f, g)


def step_taylor4(disc, state, params, bcs, sources=None, rho_bc=None, iterations=None):
    """Advance all twelve derivative fields by ``params.tau``."""
    sources = SourceBundle() if sources is None else sources
    rho_new = continuity_cascade(disc, state, params, sources.g, rho_bc, iterations)
    u_new, p_new = momentum_cascade(disc, state, rho_new, params, bcs, sources.f, iterations)
    return TaylorState(rho_new, u_new, p_new, state.t + params.tau, params.tau)
