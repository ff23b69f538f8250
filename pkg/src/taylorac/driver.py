"""Initialization and the time loop.

Without analytic time derivatives the cascade is started from first-order
runs with steps tau/k, k = 1..4, combined by Richardson extrapolation at
t = tau, 2 tau, 3 tau; one-sided differences through t = 0 then give the
derivatives at t = tau.  The loop adapts the step with a CFL rule bounded
by ``[s_min, s_max]`` and repeats a step that would need a larger cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List

import numpy as np

from . import assembly as asm
from .errors import InvalidArgument, SolverError
from .fespace import Field, eval_basis
from .linsolve import SolverConfig, solve_zero_mean
from .scheme import step_first_order
from .taylor4 import TaylorState, sources_from_problem, step_taylor4

__all__ = [
    "RichardsonWeights",
    "RICHARDSON_WEIGHTS",
    "LAGRANGE_WEIGHTS",
    "INIT_STENCILS",
    "init_derivatives",
    "laplacian_qp",
    "viscous_pressure_load",
    "initial_pressure",
    "richardson_init",
    "StepDecision",
    "cfl_step_factor",
    "RunResult",
    "DIAGNOSTIC_COLUMNS",
    "run",
]


@dataclass(frozen=True)
class RichardsonWeights:
    """Weights ``w[i]`` applied to the run with step ``tau / k[i]``."""

    w: tuple = (Fraction(5, 42), Fraction(4, 7), Fraction(-81, 14), Fraction(128, 21))
    k: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        w = [Fraction(x) for x in self.w]
        if len(w) != len(self.k):
            raise InvalidArgument("one weight per substep count")
        for p in range(3):
            target = 1 if p == 0 else 0
            if sum(wi / Fraction(ki) ** p for wi, ki in zip(w, self.k)) != target:
                raise InvalidArgument(f"weights fail the 1/k^{p} moment condition")
        object.__setattr__(self, "w", tuple(w))

    def moment(self, p):
        """``sum w / k**p`` in exact arithmetic."""
        return sum(wi / Fraction(ki) ** p for wi, ki in zip(self.w, self.k))

    def combine(self, values):
        return sum(float(wi) * v for wi, v in zip(self.w, values))


RICHARDSON_WEIGHTS = RichardsonWeights()
LAGRANGE_WEIGHTS = RichardsonWeights(
    (Fraction(-1, 6), Fraction(4), Fraction(-27, 2), Fraction(32, 3)))

# coefficients on phi at t = 0, tau, 2 tau, 3 tau for derivative d at t = tau
INIT_STENCILS = {
    1: (Fraction(-2, 6), Fraction(-3, 6), Fraction(6, 6), Fraction(-1, 6)),
    2: (Fraction(1), Fraction(-2), Fraction(1), Fraction(0)),
    3: (Fraction(-1), Fraction(3), Fraction(-3), Fraction(1)),
}


def init_derivatives(values, tau):
    """``[phi, phi_t, phi_tt, phi_ttt]`` at t = tau from samples at 0, tau, 2tau, 3tau."""
    exact = isinstance(tau, Fraction)
    out = [values[1]]
    for d in (1, 2, 3):
        acc = 0
        for c, v in zip(INIT_STENCILS[d], values):
            if c:
                acc = acc + (c if exact else float(c)) * v
        out.append(acc / tau**d)
    return out


def laplacian_qp(u, rule):
    """Elementwise Laplacian of a vector field at quadrature points, (C, nq, 2)."""
    s = u.space
    H = s.hessians(rule)
    lap = H[..., 0, 0] + H[..., 1, 1]  # (C, nq, nb)
    cv = s.cell_values(u.values)  # (C, nb, 2)
    return np.einsum("cqb,cbk->cqk", lap, cv)


def _boundary_edge_points(mesh, npts):
    """Points on every boundary facet, as (cells, bary, weights, tangents).

    Weights include the facet length; tangents are unit vectors running
    counter-clockwise around the domain.
    """
    owner = {}
    for c, eids in enumerate(mesh.cell_edges):
        for j, e in enumerate(eids):
            owner.setdefault(int(e), (c, j))
    gx, gw = np.polynomial.legendre.leggauss(npts)
    s = 0.5 * (gx + 1.0)
    cells, bary, weights, tangents = [], [], [], []
    for e in mesh.facet_edge_ids:
        c, j = owner[int(e)]
        va = mesh.vertices[mesh.cells[c, j]]
        vb = mesh.vertices[mesh.cells[c, (j + 1) % 3]]
        edge = vb - va
        length = float(np.linalg.norm(edge))
        sign = 1.0 if mesh.areas[c] > 0 else -1.0
        b = np.zeros((npts, 3))
        b[:, j] = 1.0 - s
        b[:, (j + 1) % 3] = s
        cells.append(np.full(npts, c))
        bary.append(b)
        weights.append(0.5 * length * gw)
        tangents.append(np.repeat((sign * edge / length)[None, :], npts, axis=0))
    return (np.concatenate(cells), np.concatenate(bary), np.concatenate(weights),
            np.concatenate(tangents))


def _basis_grads_at(space, cells, bary):
    """Physical basis gradients (n, nb, 2) at barycentric points of given cells."""
    _, dphi = eval_basis(space.degree, bary)
    p = space.mesh.vertices[space.mesh.cells[cells]]
    invJ = np.linalg.inv(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1))
    return np.einsum("nbj,njk->nbk", dphi, invJ)


def viscous_pressure_load(disc, rho0, u0, mu, npts=8):
    """``(mu rho^-1 lap u, grad q)`` in rotational form, for divergence-free ``u``.

    With ``lap u = -curl w`` and ``w = d_x u_y - d_y u_x``, integration by parts
    gives ``mu int_bdry w rho^-1 d_t q ds - mu int w rho^-2 grad rho . grad^perp q``
    with ``grad^perp q = (-q_y, q_x)``; only first derivatives of ``u`` enter,
    which keeps the initial pressure one order more accurate than the
    elementwise Laplacian.
    """
    rule, Q = disc.rule, disc.Q
    gu = u0.grad_at_quadrature(rule)
    w = gu[..., 1, 0] - gu[..., 0, 1]
    rq = disc.qp(rho0)
    grho = rho0.grad_at_quadrature(rule)
    _, dphi = Q.tabulate(rule)
    perp = np.stack([-dphi[..., 1], dphi[..., 0]], axis=-1)
    W = disc.mesh.geometry(rule).weights * w / rq**2
    vol = -np.einsum("cq,cqd,cqid->ci", W, grho, perp, optimize=True)
    out = np.bincount(Q.dof_map.ravel(), weights=vol.ravel(), minlength=Q.n_scalar)

    cells, bary, bw, tang = _boundary_edge_points(disc.mesh, npts)
    if len(cells):
        gu_b = np.einsum("nbk,nbc->nck", _basis_grads_at(disc.V, cells, bary),
                         disc.V.cell_values(u0.values)[cells])
        wb = gu_b[:, 1, 0] - gu_b[:, 0, 1]
        rb = rho0.eval_cells(cells, bary)
        dt_q = np.einsum("nbk,nk->nb", _basis_grads_at(Q, cells, bary), tang)
        local = (bw * wb / rb)[:, None] * dt_q
        np.add.at(out, Q.dof_map[cells], local)
    return mu * out


def initial_pressure(disc, rho0, u0, f0, mu, cfg=SolverConfig()):
    """Pressure compatible with the initial velocity and density.

    Solves ``(rho^-1 grad p, grad q) = (rho^-1 (f + mu lap u) - (u . grad) u, grad q)``
    for all q, whose boundary terms cancel for walls with ``u . n = 0``.
    The viscous part is assembled by :func:`viscous_pressure_load`.
    ``f0`` holds quadrature values of the forcing at t = 0 (or None).
    """
    rule = disc.rule
    rq = disc.qp(rho0)
    if np.any(rq <= 0):
        raise InvalidArgument("initial density must be positive")
    F = -asm.convection_qp(u0, rule)
    if f0 is not None:
        F = F + f0 / rq[..., None]
    A = asm.stiffness(disc.Q, 1.0 / rq, rule)
    b = asm.load_gradient(disc.Q, F, rule)
    if mu and np.any(u0.values):
        b = b + viscous_pressure_load(disc, rho0, u0, mu)
    if not np.any(b):
        return Field(disc.Q)
    x = solve_zero_mean(A, b, disc.q_weights, cfg)
    return Field(disc.Q, disc.zero_mean(x))


def _first_order_run(disc, s0, params, problem, nsteps, record_every):
    """First-order states after every ``record_every`` steps."""
    bc = problem.velocity_bc(0)
    out = []
    s = s0
    for i in range(1, nsteps + 1):
        t1 = s.t + params.tau
        f = (lambda r, t1=t1: problem.momentum_source(disc, 0, t1, r))
        g = problem.density_source(disc, 0, t1)
        s = step_first_order(disc, s, params, bc, f, g)
        if i % record_every == 0:
            out.append(s)
    return out


def richardson_init(disc, s0, tau, params, problem, weights=RICHARDSON_WEIGHTS):
    """TaylorState at ``s0.t + tau`` built from extrapolated first-order runs."""
    runs = []
    for k in weights.k:
        p = params.with_tau(tau / k)
        runs.append(_first_order_run(disc, s0, p, problem, 3 * k, k))
    samples = {"rho": [s0.rho.values], "u": [s0.u.values], "p": [s0.p.values]}
    for m in range(3):
        for name in samples:
            samples[name].append(weights.combine([getattr(r[m], name).values for r in runs]))
    rho = [Field(disc.R, v) for v in init_derivatives(samples["rho"], tau)]
    u = [Field(disc.V, v) for v in init_derivatives(samples["u"], tau)]
    p = [Field(disc.Q, disc.zero_mean(v)) for v in init_derivatives(samples["p"], tau)]
    return TaylorState(rho, u, p, s0.t + tau, tau)


# -- step control ----------------------------------------------------------

@dataclass(frozen=True)
class StepDecision:
    next_tau: float
    repeat: bool
    s: float


def max_cell_speed(u):
    """Largest nodal ``|u|`` per cell."""
    cv = u.space.cell_values(u.values)
    return np.linalg.norm(cv, axis=-1).max(axis=1)


def cfl_step_factor(u, params, mesh, tau, estimates=()):
    """Step factor from the CFL rule and optional error estimates.

    ``s_cfl = CFL min_K(h_K / max speed in K) / tau``; ``estimates`` are
    local error indicators compared with ``params.tol`` (ignored when the
    tolerance is infinite).
    """
    if not tau > 0:
        raise InvalidArgument("tau must be positive")
    speed = max_cell_speed(u)
    with np.errstate(divide="ignore"):
        ratio = np.where(speed > 0, mesh.h_per_cell / np.where(speed > 0, speed, 1.0), np.inf)
    s_cfl = params.cfl * float(ratio.min()) / tau
    s = min(s_cfl, params.s_max)
    if math.isfinite(params.tol):
        for e in estimates:
            if e > 0:
                s = min(s, (params.tol / e) ** 0.25)
    if s < params.s_min:
        return StepDecision(s * tau, True, s)
    return StepDecision(s * tau, False, s)


# -- time loop -------------------------------------------------------------

DIAGNOSTIC_COLUMNS = (
    "step", "t", "tau", "div_linf", "rho_min", "rho_max", "rho3_linf", "kinetic_energy",
    "iters_rho3", "iters_rho2", "iters_rho1", "iters_rho0",
    "iters_u3", "iters_u2", "iters_u1", "iters_u0",
)


@dataclass
class RunResult:
    state: object
    diagnostics: List[dict] = field(default_factory=list)
    snapshots: Dict[float, object] = field(default_factory=dict)

    @property
    def div_linf_max(self):
        """Max of ``||div u_0||_Linf`` over levels with t > 0 (initial data excluded)."""
        return max((d["div_linf"] for d in self.diagnostics if d["t"] > 0), default=0.0)


def _diagnostics(disc, step, t, tau, rho, u, rho3, its):
    rule = disc.rule
    w = disc.mesh.geometry(rule).weights
    rq = disc.qp(rho)
    row = {
        "step": step, "t": t, "tau": tau,
        "div_linf": float(np.abs(asm.div_qp(u, rule)).max()),
        "rho_min": float(min(rho.values.min(), rq.min())),
        "rho_max": float(max(rho.values.max(), rq.max())),
        "rho3_linf": float(np.abs(rho3.values).max()) if rho3 is not None else 0.0,
        "kinetic_energy": float(0.5 * (w * rq * (disc.qp(u) ** 2).sum(-1)).sum()),
    }
    for key in DIAGNOSTIC_COLUMNS[8:]:
        row[key] = int(its.get(key[6:], 0))
    if "continuity" in its:
        row["iters_rho0"] = int(its["continuity"])
        row["iters_u0"] = int(its["momentum"])
    return row


def _taylor_eval(state, t):
    """TaylorState at time t from the Taylor polynomials of every derivative."""
    h = t - state.t
    out = []
    for derivs in (state.rho, state.u, state.p):
        out.append([Field(derivs[0].space, sum(h ** (j - i) / math.factorial(j - i) * derivs[j].values
                                               for j in range(i, 4))) for i in range(4)])
    return TaylorState(*out, t, state.tau)


def run(disc, problem, params, state, T, adaptive=False, snapshot_times=(),
        max_repeats=5, first_order=False, on_step=None):
    """Advance ``state`` to time ``T``.

    ``state`` is a TaylorState (cascade) or a State1 (``first_order=True``).
    In fixed-step mode the step is shrunk once so that T is hit exactly.
    ``snapshot_times`` are recorded at the step that crosses them: as a
    TaylorState evaluated from the Taylor polynomials, or as the State1
    closing the step in first-order mode.
    Returns a :class:`RunResult`; the last diagnostic row is the final state.
    """
    res = RunResult(state)
    tau = params.tau
    if not adaptive:
        n = max(1, math.ceil((T - state.t) / tau - 1e-9))
        tau = (T - state.t) / n
    pending = sorted(t for t in snapshot_times if t >= state.t - 1e-12)
    step = 0
    bcs = [problem.velocity_bc(l) for l in range(4)]
    rho3 = state.rho[3] if not first_order else None
    u0 = state.u[0] if not first_order else state.u
    rho0 = state.rho[0] if not first_order else state.rho
    res.diagnostics.append(_diagnostics(disc, 0, state.t, 0.0, rho0, u0, rho3, {}))
    while state.t < T - 1e-12 * max(1.0, T):
        if adaptive:
            tau = min(tau, T - state.t)
        repeats = 0
        while True:
            p = params.with_tau(tau)
            its = {}
            try:
                if first_order:
                    t1 = state.t + tau
                    new = step_first_order(
                        disc, state, p, bcs[0],
                        lambda r, t1=t1: problem.momentum_source(disc, 0, t1, r),
                        problem.density_source(disc, 0, t1), iterations=its)
                    u_new = new.u
                else:
                    new = step_taylor4(disc, state, p, bcs,
                                       sources_from_problem(problem, disc, state.t + tau),
                                       iterations=its)
                    u_new = new.u[0]
            except SolverError as err:
                raise SolverError(str(err), err.residual, err.iterations,
                                  stage=f"step {step + 1}") from err
            if not adaptive:
                break
            dec = cfl_step_factor(u_new, params, disc.mesh, tau)
            if not dec.repeat:
                break
            repeats += 1
            if repeats > max_repeats:
                raise SolverError("step control kept rejecting the step",
                                  stage=f"step {step + 1}")
            tau = dec.next_tau
        while pending and pending[0] <= new.t + 1e-12:
            ts = pending.pop(0)
            res.snapshots[ts] = new.copy() if first_order else _taylor_eval(state, ts)
        state = new
        step += 1
        if first_order:
            row = _diagnostics(disc, step, state.t, tau, state.rho, state.u, None, its)
        else:
            row = _diagnostics(disc, step, state.t, tau, state.rho[0], state.u[0], state.rho[3], its)
        res.diagnostics.append(row)
        if on_step is not None:
            on_step(row, state)
        if adaptive:
            tau = dec.next_tau
    res.state = state
    return res
