"""First-order variable-density artificial-compressibility scheme.

One step of the basic scheme performs three solves::

    (rho' - rho)/tau + u . grad rho' - sigma lap rho' = g
    rho' (u' - u)/tau + rho' (u . grad) u - lam grad div u' - mu lap u'
        - nu div(rho' grad u') + grad p = f
    p' = p - lam div u'

The energy-stable variant uses a skew-symmetric density flux, the lagged
density ``rho`` in the momentum time derivative, semi-implicit advection and
the new pressure in the momentum equation.  With ``|u|**2`` representable in
the density space (``k_rho >= 2 k_u``) its discrete L2 identities hold up to
solver tolerance; :func:`energy_report` evaluates every term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dc_fields
from functools import cached_property
from typing import Protocol, Union

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from .errors import InvalidArgument, SolverError
from .fespace import DEFAULT_QUAD_DEGREE, Field, FeSpace, quadrature
from .linsolve import CG, GMRES, SolverConfig, solve

__all__ = [
    "SchemeParams",
    "State1",
    "Discretization",
    "Problem",
    "step_first_order",
    "step_energy_stable",
    "EnergyReport",
    "energy_report",
    "ENERGY_CSV_COLUMNS",
]

Viscosity = Union[float, np.ndarray]


def _as_stage_tuple(v, name):
    if isinstance(v, (list, tuple)):
        if len(v) != 4:
            raise InvalidArgument(f"{name} needs one entry per cascade stage (4)")
        return tuple(v)
    return (v, v, v, v)


@dataclass(frozen=True)
class SchemeParams:
    """Parameters shared by the first-order and cascade steppers.

    ``sigma`` and ``nu`` hold the artificial viscosities for cascade stages
    0..3 (index = derivative order); each entry is a constant or a per-cell
    array such as ``0.5 * mesh.h_per_cell``.  The first-order scheme uses
    entry 0.
    """

    tau: float
    lam: float = 1.0
    mu: float = 1.0
    sigma: tuple = (0.0, 0.0, 0.0, 0.0)
    nu: tuple = (0.0, 0.0, 0.0, 0.0)
    cfl: float = 1.0
    s_max: float = 1.1
    s_min: float = 0.75
    tol: float = math.inf
    lumped_pressure_mass: bool = False
    strict_printed_form: bool = False
    include_convection: bool = True
    density_solver: SolverConfig = SolverConfig(method=GMRES, max_iter=50000)
    velocity_solver: SolverConfig = SolverConfig(method=CG, max_iter=200000)
    pressure_solver: SolverConfig = SolverConfig(method=CG)
    coupled_solver: SolverConfig = SolverConfig(method=GMRES, restart=100)

    def __post_init__(self):
        object.__setattr__(self, "sigma", _as_stage_tuple(self.sigma, "sigma"))
        object.__setattr__(self, "nu", _as_stage_tuple(self.nu, "nu"))
        if not (self.tau > 0):
            raise InvalidArgument("tau must be positive")
        if self.lam < 0 or self.mu < 0:
            raise InvalidArgument("lam and mu must be non-negative")
        if not (self.s_min < 1.0 < self.s_max):
            raise InvalidArgument("require s_min < 1 < s_max")
        for v in self.sigma + self.nu:
            if np.any(np.asarray(v) < 0):
                raise InvalidArgument("artificial viscosities must be non-negative")

    def with_tau(self, tau):
        kw = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        kw["tau"] = float(tau)
        return SchemeParams(**kw)


@dataclass
class State1:
    """Density, velocity and pressure at one time level."""

    rho: Field
    u: Field
    p: Field
    t: float = 0.0

    def copy(self):
        return State1(self.rho.copy(), self.u.copy(), self.p.copy(), self.t)


class Discretization:
    """Spaces, quadrature and the time-independent operators of one mesh.

    Parameters
    ----------
    mesh : Mesh
    degrees : (k_rho, k_u, k_p)
    quad_degree : exactness degree of the assembly rule.
    """

    def __init__(self, mesh, degrees=(3, 3, 2), quad_degree=DEFAULT_QUAD_DEGREE):
        kr, ku, kp = degrees
        self.mesh = mesh
        self.degrees = (int(kr), int(ku), int(kp))
        self.R = FeSpace(mesh, kr, 1)
        self.V = FeSpace(mesh, ku, 2)
        self.Q = FeSpace(mesh, kp, 1)
        self.rule = quadrature(quad_degree)
        self.xq = mesh.geometry(self.rule).points

    @cached_property
    def M_R(self):
        return asm.mass(self.R, rule=self.rule)

    @cached_property
    def K_R(self):
        return asm.stiffness(self.R, rule=self.rule)

    @cached_property
    def M_V(self):
        return asm.mass(self.V, rule=self.rule)

    @cached_property
    def K_V(self):
        return asm.stiffness(self.V, rule=self.rule)

    @cached_property
    def G_V(self):
        return asm.grad_div(self.V, rule=self.rule)

    @cached_property
    def M_Q(self):
        return asm.mass(self.Q, rule=self.rule)

    @cached_property
    def D(self):
        return asm.divergence_matrix(self.Q, self.V, rule=self.rule)

    @cached_property
    def q_weights(self):
        return asm.mean_weights(self.Q, rule=self.rule)

    @cached_property
    def q_lumped(self):
        return asm.hrz_lumped_mass(self.Q, rule=self.rule)

    # helpers -------------------------------------------------------------
    def zero_mean(self, values):
        w = self.q_weights
        return values - (w @ values) / w.sum()

    def qp(self, f):
        return f.at_quadrature(self.rule)

    def viscosity_qp(self, nu, weight=None):
        """Viscosity (constant or per cell) times an optional Field, at qp; None if zero."""
        nu = np.asarray(nu, dtype=float)
        if not np.any(nu):
            return None
        C, nq = self.mesh.num_cells, len(self.rule)
        v = np.full((C, nq), float(nu)) if nu.ndim == 0 else np.repeat(nu[:, None], nq, axis=1)
        if weight is not None:
            v = v * self.qp(weight)
        return v

    def project_pressure(self, base, u, lam, params, x0=None, stage="pressure"):
        """Solve ``M_Q p = M_Q base - lam D u`` and subtract the mean."""
        rhs_div = self.D @ u.values
        if params.lumped_pressure_mass:
            p = base - lam * rhs_div / self.q_lumped
        else:
            rhs = self.M_Q @ base - lam * rhs_div
            guess = base if x0 is None else x0
            p = solve_stage(self.M_Q, rhs, params.pressure_solver, guess, stage).x
        return Field(self.Q, self.zero_mean(p))


class Problem(Protocol):
    """Sources and boundary data consumed by the time steppers.

    ``order`` is the time-derivative order (0..3).  Sources are returned as
    quadrature-point values on ``disc.rule``; ``None`` means zero.
    """

    def momentum_source(self, disc, order, t, rho): ...

    def density_source(self, disc, order, t): ...

    def velocity_bc(self, order): ...


def solve_stage(A, b, cfg, x0, stage):
    """:func:`linsolve.solve` with the failure labelled by ``stage``.

    A symmetric solver that fails (CG on an indefinite stage matrix) is
    retried once with GMRES before giving up.
    """
    try:
        return solve(A, b, cfg, x0)
    except SolverError as err:
        if cfg.method == CG:
            alt = SolverConfig(GMRES, cfg.preconditioner, cfg.rel_tol, cfg.abs_tol,
                               cfg.max_iter, max(cfg.restart, 100))
            try:
                return solve(A, b, alt, x0)
            except SolverError as err2:
                raise err2.with_stage(stage) from err
        raise err.with_stage(stage) from None


def _source_values(src, *args):
    if src is None:
        return None
    if callable(src):
        return src(*args)
    return src


def step_first_order(disc, s, params, bc, f=None, g=None, rho_bc=None, iterations=None):
    """Advance ``s`` by ``params.tau`` with the first-order scheme.

    Parameters
    ----------
    disc : Discretization
    s : State1 at time t^n
    bc : velocity boundary spec, evaluated at t^{n+1}
    f : momentum forcing at t^{n+1} as quadrature values, or a callable
        ``f(rho_new)`` returning them (needed for buoyancy), or None.
    g : continuity source at t^{n+1} (quadrature values) or None.
    iterations : optional dict receiving Krylov iteration counts per substep.
    """
    tau, rule = params.tau, disc.rule
    t1 = s.t + tau

    # (a) continuity
    A = disc.M_R / tau + asm.advection_scalar(disc.R, s.u, rule=rule)
    sig = disc.viscosity_qp(params.sigma[0])
    if sig is not None:
        A = A + asm.stiffness(disc.R, sig, rule)
    b = disc.M_R @ s.rho.values / tau
    gq = _source_values(g)
    if gq is not None:
        b = b + asm.load_vector(disc.R, gq, rule)
    A, b = asm.apply_bc(A, b, rho_bc, disc.R, t1)
    res = solve_stage(A, b, params.density_solver, s.rho.values, "continuity")
    rho1 = Field(disc.R, res.x)
    if iterations is not None:
        iterations["continuity"] = res.iterations

    # (b) momentum
    Mr = asm.mass(disc.V, rho1, rule)
    A = Mr / tau + params.lam * disc.G_V + params.mu * disc.K_V
    nuq = disc.viscosity_qp(params.nu[0], rho1)
    if nuq is not None:
        A = A + asm.stiffness(disc.V, nuq, rule)
    b = Mr @ s.u.values / tau - asm.gradient_load(disc.V, s.p, rule)
    fq = _source_values(f, rho1)
    if fq is not None:
        b = b + asm.load_vector(disc.V, fq, rule)
    if params.include_convection:
        b = b - asm.nonlinear_load(disc.V, rho1, s.u, rule)
    A, b = asm.apply_bc(A, b, bc, disc.V, t1, symmetric=True)
    res = solve_stage(A, b, params.velocity_solver, s.u.values, "momentum")
    u1 = Field(disc.V, res.x)
    if iterations is not None:
        iterations["momentum"] = res.iterations

    # (c) pressure
    p1 = disc.project_pressure(s.p.values, u1, params.lam, params)
    return State1(rho1, u1, p1, t1)


# -- energy-stable variant -------------------------------------------------

def step_energy_stable(disc, s, params, bc):
    """One step of the energy-stable scheme; returns ``(State1, EnergyReport)``.

    Requires ``u . n = 0`` boundary conditions and zero forcing.  The
    momentum equation carries ``grad p^{n+1}``, so velocity and pressure are
    solved together from the block system::

        [ A    -D^T    ] [u']   [M(rho) u / tau]
        [ D   M_Q/lam  ] [p'] = [M_Q p / lam   ]

    whose second row is ``p' = p - lam div u'`` tested against Q_h.
    """
    kr, ku, _ = disc.degrees
    if kr < 2 * ku:
        raise InvalidArgument("the energy identity needs k_rho >= 2 k_u so |u|^2 lies in M_h")
    if params.lam <= 0:
        raise InvalidArgument("the energy-stable step needs lam > 0")
    tau, rule, lam = params.tau, disc.rule, params.lam
    t1 = s.t + tau

    A = disc.M_R / tau + asm.skew_advection_scalar(disc.R, s.u, rule)
    b = disc.M_R @ s.rho.values / tau
    solver = params.density_solver
    res = solve_stage(sp.csr_matrix(A), b, solver, s.rho.values, "continuity")
    rho1 = Field(disc.R, res.x)

    divu = asm.div_qp(s.u, rule)
    rho1q = disc.qp(rho1)
    Au = (asm.mass(disc.V, s.rho, rule) / tau
          + asm.advection_vector(disc.V, s.u, rho1q, rule)
          + params.mu * disc.K_V
          + 0.25 * asm.mass(disc.V, rho1q * divu, rule))
    bu = asm.mass(disc.V, s.rho, rule) @ s.u.values / tau
    # velocity boundary rows: identity with prescribed value; pressure columns cleared
    dofs, vals = asm.boundary_values(bc, disc.V, t1)
    keep = np.ones(disc.V.ndofs)
    keep[dofs] = 0.0
    Dk = sp.diags(keep)
    Au = (Dk @ Au + sp.diags(1.0 - keep)).tocsr()
    bu = keep * bu
    bu[dofs] = vals
    big = sp.bmat([[Au, -(Dk @ disc.D.T)], [disc.D, disc.M_Q / lam]], format="csr")
    rhs = np.concatenate([bu, disc.M_Q @ s.p.values / lam])
    x0 = np.concatenate([s.u.values, s.p.values])
    res = solve_stage(big, rhs, params.coupled_solver, x0, "coupled")
    nV = disc.V.ndofs
    u1 = Field(disc.V, res.x[:nV])
    p1 = Field(disc.Q, res.x[nV:])
    new = State1(rho1, u1, p1, t1)
    return new, energy_report(disc, s, new, params)


ENERGY_CSV_COLUMNS = (
    "t", "rho_new_sq", "rho_old_sq", "rho_jump_sq", "density_residual",
    "ke_new", "ke_old", "ke_jump", "viscous", "p_new_sq", "p_old_sq", "p_jump_sq",
    "pressure_term", "momentum_residual", "composite_old", "composite_new",
)


@dataclass(frozen=True)
class EnergyReport:
    """Terms of the density and kinetic-energy identities for one step.

    ``ke_*`` are ``int rho |u|^2`` with the density of the matching level
    (``ke_jump`` uses the old density).  Residuals are divided by the sum of
    the absolute values of their terms (0 when every term is 0).
    """

    t: float
    rho_new_sq: float
    rho_old_sq: float
    rho_jump_sq: float
    density_residual: float
    ke_new: float
    ke_old: float
    ke_jump: float
    viscous: float
    p_new_sq: float
    p_old_sq: float
    p_jump_sq: float
    pressure_term: float
    momentum_residual: float
    composite_old: float
    composite_new: float

    def csv_row(self):
        return [getattr(self, c) for c in ENERGY_CSV_COLUMNS]


def _relative(terms):
    total = sum(abs(x) for x in terms)
    return abs(sum(terms)) / total if total > 0 else 0.0


def energy_report(disc, before, after, params, rule=None):
    """Evaluate every term of both identities between two states."""
    rule = disc.rule if rule is None else rule
    w = disc.mesh.geometry(rule).weights

    def sq(fld):
        v = fld.at_quadrature(rule)
        return float((w * (v**2 if v.ndim == 2 else (v**2).sum(-1))).sum())

    def ke(rho, u):
        return float((w * rho.at_quadrature(rule) * (u.at_quadrature(rule) ** 2).sum(-1)).sum())

    r1, r0 = sq(after.rho), sq(before.rho)
    rj = sq(after.rho - before.rho)
    k1 = ke(after.rho, after.u)
    k0 = ke(before.rho, before.u)
    kj = ke(before.rho, after.u - before.u)
    gu = after.u.grad_at_quadrature(rule)
    visc = 2 * params.mu * params.tau * float((w * (gu**2).sum((-1, -2))).sum())
    p1, p0 = sq(after.p), sq(before.p)
    pj = sq(after.p - before.p)
    scale = params.tau / params.lam if params.lam > 0 else 0.0
    pt = scale * (p1 - p0 + pj)
    return EnergyReport(
        t=after.t,
        rho_new_sq=r1, rho_old_sq=r0, rho_jump_sq=rj,
        density_residual=_relative([r1, -r0, rj]),
        ke_new=k1, ke_old=k0, ke_jump=kj, viscous=visc,
        p_new_sq=p1, p_old_sq=p0, p_jump_sq=pj, pressure_term=pt,
        momentum_residual=_relative([k1, -k0, kj, visc, scale * p1, -scale * p0, scale * pj]),
        composite_old=k0 + scale * p0,
        composite_new=k1 + scale * p1,
    )
