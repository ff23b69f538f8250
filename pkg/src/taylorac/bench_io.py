"""Experiment configurations, CSV/VTK output and the command implementations.

Four experiments are provided: a space-time convergence study on the
manufactured square solution, a sweep over the grad-div parameter, the
Rayleigh-Taylor instability and an audit of the energy identities of the
energy-stable scheme.  Every CSV written here has a fixed header listed in
the ``*_COLUMNS`` constants.

Config files are flat ``key = value`` text; ``#`` starts a comment.  See
:data:`CONFIG_KEYS` for the accepted keys.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from .assembly import Dirichlet, Slip
from .driver import (DIAGNOSTIC_COLUMNS, initial_pressure, richardson_init, run)
from .errors import InvalidArgument
from .fespace import Field, interpolate, quadrature
from .linsolve import DIRECT, SolverConfig
from .mesh import build_rectangle, h_min, refine_uniform
from .mms import convergence_rates, field_errors, square_case
from .scheme import (ENERGY_CSV_COLUMNS, Discretization, SchemeParams, State1,
                     step_energy_stable)
from .taylor4 import TaylorState

__all__ = [
    "RunConfig",
    "RtCase",
    "CONFIG_KEYS",
    "parse_config_text",
    "load_config",
    "CONVERGENCE_COLUMNS",
    "RATE_COLUMNS",
    "LAMBDA_COLUMNS",
    "ENERGY_COLUMNS",
    "RT_SUMMARY_COLUMNS",
    "write_csv",
    "write_vtk",
    "read_vtk_point_data",
    "cmd_converge",
    "cmd_lambda_sweep",
    "cmd_rt",
    "cmd_energy_audit",
]

CASES = ("converge", "lambda_sweep", "rt", "energy_audit")
INIT_MODES = ("analytic", "richardson")
LINEAR_SOLVERS = ("krylov", "direct")


def solver_settings(kind):
    """SchemeParams solver overrides: ``krylov`` keeps the defaults, ``direct``
    switches the momentum and projection solves to sparse LU."""
    if kind == "krylov":
        return {}
    return {"velocity_solver": SolverConfig(method=DIRECT),
            "pressure_solver": SolverConfig(method=DIRECT)}

CONVERGENCE_COLUMNS = (
    "level", "n", "h_min", "tau", "steps", "ndofs_rho", "ndofs_u", "ndofs_p",
    "rho_L1", "rho_L2", "rho_Linf", "u_L1", "u_L2", "u_Linf", "p_L1", "p_L2", "p_Linf",
)
RATE_COLUMNS = ("variable", "norm", "level_from", "level_to", "rate")
LAMBDA_COLUMNS = ("lambda", "init", "div_linf", "u_L2", "rho_L2")
ENERGY_COLUMNS = ("step",) + ENERGY_CSV_COLUMNS
RT_SUMMARY_COLUMNS = (
    "resolution", "mode", "steps", "t_final", "rho_min", "rho_max", "rho3_linf_max",
)

TRYGGVASON_TIMES = (1.0, 1.5, 1.75, 2.0, 2.25, 2.5)


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class RtCase:
    """Rayleigh-Taylor setup: heavy fluid over light fluid in a slip box.

    The domain is ``(-d/2, d/2) x (-2d, 2d)``.  ``visc`` is the factor C in
    the h-viscosities ``sigma = nu = C h`` used by every cascade stage.
    """

    d: float = 1.0
    rho1: float = 3.0
    rho2: float = 1.0
    g: float = 1.0
    lam: float = 5000.0
    cfl: float = 0.5
    s_max: float = 1.1
    s_min: float = 0.75
    visc: float = 0.5
    Re: float = 5000.0
    linear_solver: str = "direct"

    def __post_init__(self):
        if not (self.rho1 > self.rho2 > 0):
            raise InvalidArgument("need rho1 > rho2 > 0")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise InvalidArgument(f"unknown linear solver {self.linear_solver!r}")

    @property
    def mu(self):
        return self.rho2 * self.d**1.5 * self.g**0.5 / self.Re

    @property
    def bounds(self):
        return (-self.d / 2, -2 * self.d, self.d / 2, 2 * self.d)

    def eta(self, x):
        return -0.1 * self.d * np.cos(2 * np.pi * x / self.d)

    def initial_density(self, x, y, t=0.0):
        mid, amp = (self.rho1 + self.rho2) / 2, (self.rho1 - self.rho2) / 2
        return mid + amp * np.tanh((y - self.eta(x)) / (0.01 * self.d))

    def mesh(self, nx, ny):
        x0, y0, x1, y1 = self.bounds
        return build_rectangle(x0, y0, x1, y1, nx, ny)

    def params(self, mesh, tau):
        h = self.visc * mesh.h_per_cell
        return SchemeParams(tau=tau, lam=self.lam, mu=self.mu, sigma=h, nu=h,
                            cfl=self.cfl, s_max=self.s_max, s_min=self.s_min,
                            **solver_settings(self.linear_solver))

    # problem protocol
    def momentum_source(self, disc, order, t, rho=None):
        rq = disc.qp(rho)
        out = np.zeros(rq.shape + (2,))
        out[..., 1] = -self.g * rq
        return out

    def density_source(self, disc, order, t):
        return None

    def velocity_bc(self, order):
        return {"left": Slip(0), "right": Slip(0), "bottom": Slip(1), "top": Slip(1)}

    def initial_pressure_forcing(self, disc, rho0):
        return self.momentum_source(disc, 0, 0.0, rho0)


CONFIG_KEYS = {
    "case": "converge | lambda_sweep | rt | energy_audit",
    "base_n": "cells per side of the coarsest square mesh",
    "mesh_levels": "number of meshes in the convergence family",
    "degrees": "k_rho,k_u,k_p",
    "lam": "grad-div parameter lambda",
    "mu": "dynamic viscosity (manufactured cases)",
    "cfl": "CFL number; tau = cfl h_min / max speed",
    "T": "termination time",
    "init": "analytic | richardson",
    "out": "output directory",
    "lambdas": "comma list of lambda values for the sweep",
    "sweep_n": "cells per side of the sweep mesh",
    "sweep_inits": "comma list of init modes run by the sweep (default both)",
    "rt_resolutions": "comma list of NXxNY meshes for the Rayleigh-Taylor runs",
    "rt_t_final": "final time on the Tryggvason scale",
    "snapshot_times": "comma list of snapshot times on the Tryggvason scale",
    "first_order": "true | false: add the first-order run to the Rayleigh-Taylor command",
    "energy_steps": "number of energy-audit steps",
    "energy_tau": "energy-audit step size",
    "seed": "seed of the energy-audit initial data",
    "linear_solver": "krylov | direct: momentum and projection solver of the manufactured cases (Rayleigh-Taylor uses RtCase.linear_solver, direct by default)",
}


def _default_lambdas():
    return tuple(float(x) for x in np.logspace(0, 6, 13))


@dataclass(frozen=True)
class RunConfig:
    """Settings of one experiment.

    Degrees must satisfy ``k_u > k_p``; the energy audit always uses its own
    triple (2, 1, 1) because its identity needs ``k_rho >= 2 k_u``.
    """

    case: str = "converge"
    base_n: int = 8
    mesh_levels: int = 3
    degrees: Tuple[int, int, int] = (3, 3, 2)
    lam: float = 1.0
    mu: float = 1.0
    cfl: float = 1.0
    T: float = 2.0
    init: str = "analytic"
    out: str = "out"
    lambdas: Tuple[float, ...] = field(default_factory=_default_lambdas)
    sweep_n: int = 8
    sweep_inits: Tuple[str, ...] = INIT_MODES
    rt_resolutions: Tuple[Tuple[int, int], ...] = ((18, 72), (25, 100))
    rt_t_final: float = 2.5
    snapshot_times: Tuple[float, ...] = TRYGGVASON_TIMES
    first_order: bool = False
    energy_steps: int = 100
    energy_tau: float = 0.01
    seed: int = 0
    linear_solver: str = "krylov"

    def __post_init__(self):
        if self.case not in CASES:
            raise InvalidArgument(f"unknown case {self.case!r}")
        for mode in (self.init,) + tuple(self.sweep_inits):
            if mode not in INIT_MODES:
                raise InvalidArgument(f"unknown init mode {mode!r}")
        if len(self.degrees) != 3:
            raise InvalidArgument("degrees needs three entries")
        if self.degrees[1] <= self.degrees[2]:
            raise InvalidArgument("velocity degree must exceed pressure degree")
        if self.case == "rt" and self.init == "analytic":
            raise InvalidArgument("analytic initial derivatives exist only for manufactured cases")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise InvalidArgument(f"unknown linear solver {self.linear_solver!r}")
        if self.mesh_levels < 1 or self.base_n < 1 or self.sweep_n < 1:
            raise InvalidArgument("mesh sizes must be positive")
        if self.T <= 0 or self.cfl <= 0 or self.energy_tau <= 0:
            raise InvalidArgument("T, cfl and energy_tau must be positive")

    @classmethod
    def from_mapping(cls, values):
        """Build from string or typed values keyed as in :data:`CONFIG_KEYS`."""
        kw = {}
        for k, v in values.items():
            if k not in CONFIG_KEYS:
                raise InvalidArgument(f"unknown config key {k!r}")
            kw[k] = _convert(k, v)
        return cls(**kw)

    def updated(self, **kw):
        return replace(self, **{k: _convert(k, v) for k, v in kw.items() if v is not None})


def _floats(v):
    if isinstance(v, str):
        return tuple(float(x) for x in v.replace(" ", "").split(",") if x)
    return tuple(float(x) for x in v)


def _convert(key, v):
    if not isinstance(v, str):
        if key == "degrees":
            return tuple(int(x) for x in v)
        if key in ("lambdas", "snapshot_times"):
            return _floats(v)
        if key == "rt_resolutions":
            return tuple((int(a), int(b)) for a, b in v)
        if key == "sweep_inits":
            return tuple(v)
        return v
    v = v.strip()
    if key in ("case", "init", "out", "linear_solver"):
        return v.replace("-", "_") if key == "case" else v
    if key in ("base_n", "mesh_levels", "sweep_n", "energy_steps", "seed"):
        return int(v)
    if key == "degrees":
        return tuple(int(x) for x in v.split(","))
    if key in ("lambdas", "snapshot_times"):
        return _floats(v)
    if key == "sweep_inits":
        return tuple(x for x in v.replace(" ", "").split(",") if x)
    if key == "rt_resolutions":
        out = []
        for item in v.replace(" ", "").split(","):
            a, b = item.lower().split("x")
            out.append((int(a), int(b)))
        return tuple(out)
    if key == "first_order":
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidArgument(f"first_order expects a boolean, got {v!r}")
    return float(v)


def parse_config_text(text):
    """``key = value`` lines to a dict of strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in CONFIG_KEYS:
            raise InvalidArgument(f"line {lineno}: unknown key {k!r}")
        out[k] = v
    return out


def load_config(path, **overrides):
    """Read a config file and apply non-None ``overrides``."""
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(values)


# -- output --------------------------------------------------------------------

def write_csv(path, columns, rows):
    """Write ``rows`` (dicts or sequences) under the fixed header ``columns``."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            if isinstance(r, dict):
                r = [r[c] for c in columns]
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# reference points of the once-refined cell: vertices, then edge midpoints
_VTK_BARY = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5],
])


def write_vtk(fields, mesh, path):
    """Legacy ASCII VTK file of ``fields`` sampled on the refined P1 mesh.

    ``fields`` maps names to scalar or vector Fields on ``mesh``.  Each cell
    is split once into four triangles; values are taken at the vertices and
    edge midpoints of the original cells.  Returns the output mesh.
    """
    fine = refine_uniform(mesh)
    V = mesh.num_vertices
    ids = np.concatenate([mesh.cells, V + mesh.cell_edges], axis=1)  # (C, 6)
    C = mesh.num_cells
    cells_rep = np.repeat(np.arange(C), 6)
    bary = np.tile(_VTK_BARY, (C, 1))
    data = {}
    for name, fld in fields.items():
        if fld.space.mesh is not mesh:
            raise InvalidArgument(f"field {name!r} lives on another mesh")
        vals = fld.eval_cells(cells_rep, bary)
        ncomp = fld.space.components
        out = np.zeros((fine.num_vertices,) if ncomp == 1 else (fine.num_vertices, ncomp))
        out[ids.ravel()] = vals
        data[name] = out
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("taylorac output\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {fine.num_vertices} double\n")
        for x, y in fine.vertices:
            fh.write(f"{x:.9e} {y:.9e} 0\n")
        nc = fine.num_cells
        fh.write(f"CELLS {nc} {4 * nc}\n")
        for a, b, c in fine.cells:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nc}\n")
        fh.write("5\n" * nc)
        fh.write(f"POINT_DATA {fine.num_vertices}\n")
        for name, arr in data.items():
            if arr.ndim == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{v:.9e}\n" for v in arr)
            else:
                fh.write(f"VECTORS {name} double\n")
                fh.writelines(f"{a:.9e} {b:.9e} 0\n" for a, b in arr)
    return fine


def read_vtk_point_data(path):
    """Parse a file written by :func:`write_vtk`.

    Returns ``(n_points, n_cells, {name: array})``.
    """
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    i, npts, ncells, data = 0, 0, 0, {}
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        if line[0] == "POINTS":
            npts = int(line[1])
            i += npts + 1
        elif line[0] == "CELLS":
            ncells = int(line[1])
            i += ncells + 1
        elif line[0] == "CELL_TYPES":
            i += int(line[1]) + 1
        elif line[0] == "SCALARS":
            rows = tokens[i + 2:i + 2 + npts]
            data[line[1]] = np.array([float(r) for r in rows])
            i += 2 + npts
        elif line[0] == "VECTORS":
            rows = tokens[i + 1:i + 1 + npts]
            data[line[1]] = np.array([[float(v) for v in r.split()[:2]] for r in rows])
            i += 1 + npts
        else:
            i += 1
    return npts, ncells, data


# -- manufactured-solution runs ----------------------------------------------

def _square_disc(cfg, n):
    return Discretization(build_rectangle(0.0, 0.0, 1.0, 1.0, n, n), cfg.degrees)


def _mms_tau(cfg, disc, case):
    """Step count and step with ``tau <= cfl h_min / max speed`` landing on T."""
    target = cfg.cfl * h_min(disc.mesh) / case.max_speed
    steps = max(1, math.ceil(cfg.T / target - 1e-9))
    return steps, cfg.T / steps


def mms_initial_state(disc, case, cfg, params):
    """Starting TaylorState: exact derivatives or Richardson initialization."""
    if cfg.init == "analytic":
        return TaylorState.from_exact(disc, case, 0.0)
    rho0 = interpolate(disc.R, lambda x, y, t: case.rho(0, x, y, t))
    u0 = interpolate(disc.V, lambda x, y, t: case.u(0, x, y, t))
    p0 = initial_pressure(disc, rho0, u0, case.initial_pressure_forcing(disc, rho0), case.mu,
                          params.pressure_solver)
    return richardson_init(disc, State1(rho0, u0, p0, 0.0), params.tau, params, case)


def mms_run(cfg, n, lam=None, case=None):
    """One manufactured-solution run; returns ``(ErrorReport, RunResult, steps, tau)``."""
    case = square_case(cfg.mu) if case is None else case
    disc = _square_disc(cfg, n)
    steps, tau = _mms_tau(cfg, disc, case)
    params = SchemeParams(tau=tau, lam=cfg.lam if lam is None else lam, mu=case.mu,
                          **solver_settings(cfg.linear_solver))
    state = mms_initial_state(disc, case, cfg, params)
    res = run(disc, case, params, state, cfg.T)
    s = res.state
    rule = quadrature(max(14, 2 * max(cfg.degrees) + 2))
    report = field_errors(case, s.rho[0], s.u[0], s.p[0], s.t, rule)
    return report, res, steps, tau


def cmd_converge(cfg, write=True):
    """Convergence study on ``base_n * 2**i`` meshes, i < mesh_levels.

    Returns ``(reports, rates)`` where ``rates[var]`` holds the L2 rates
    between consecutive levels.  Writes ``convergence.csv`` and
    ``rates.csv`` to ``cfg.out`` when ``write`` is set.
    """
    if cfg.mesh_levels < 2:
        raise InvalidArgument("a convergence study needs at least two levels")
    reports, rows = [], []
    for level in range(cfg.mesh_levels):
        n = cfg.base_n * 2**level
        rep, _, steps, tau = mms_run(cfg, n)
        reports.append(rep)
        row = {"level": level, "n": n, "h_min": rep.h_min, "tau": tau, "steps": steps,
               "ndofs_rho": rep.ndofs["rho"], "ndofs_u": rep.ndofs["u"], "ndofs_p": rep.ndofs["p"]}
        for var in ("rho", "u", "p"):
            for name, val in zip(("L1", "L2", "Linf"), rep.errors[var]):
                row[f"{var}_{name}"] = float(val)
        rows.append(row)
    rates, rate_rows = {}, []
    for var in ("rho", "u", "p"):
        for norm, name in enumerate(("L1", "L2", "Linf")):
            r = convergence_rates(reports, var, norm)
            if name == "L2":
                rates[var] = r
            for i, v in enumerate(r):
                rate_rows.append([var, name, i, i + 1, float(v)])
    if write:
        write_csv(os.path.join(cfg.out, "convergence.csv"), CONVERGENCE_COLUMNS, rows)
        write_csv(os.path.join(cfg.out, "rates.csv"), RATE_COLUMNS, rate_rows)
    return reports, rates


def cmd_lambda_sweep(cfg, write=True):
    """Maximum divergence over the run and final errors for each lambda.

    Every init mode in ``cfg.sweep_inits`` is swept.  Returns the list of
    row dicts written to ``lambda_sweep.csv``.
    """
    rows = []
    for mode in cfg.sweep_inits:
        c = replace(cfg, init=mode)
        for lam in cfg.lambdas:
            rep, res, _, _ = mms_run(c, cfg.sweep_n, lam=lam)
            rows.append({"lambda": lam, "init": mode, "div_linf": res.div_linf_max,
                         "u_L2": float(rep.errors["u"][1]), "rho_L2": float(rep.errors["rho"][1])})
    if write:
        write_csv(os.path.join(cfg.out, "lambda_sweep.csv"), LAMBDA_COLUMNS, rows)
    return rows


# -- Rayleigh-Taylor -----------------------------------------------------------

@dataclass
class RtRun:
    """Outcome of one Rayleigh-Taylor run."""

    resolution: Tuple[int, int]
    mode: str
    diagnostics: List[dict]
    snapshots: Dict[float, State1]
    final: State1
    rho3: Dict[float, Field] = field(default_factory=dict)

    @property
    def rho3_linf_max(self):
        return max(d["rho3_linf"] for d in self.diagnostics)

    def summary(self):
        return {
            "resolution": f"{self.resolution[0]}x{self.resolution[1]}",
            "mode": self.mode,
            "steps": self.diagnostics[-1]["step"],
            "t_final": self.diagnostics[-1]["t"],
            "rho_min": min(d["rho_min"] for d in self.diagnostics),
            "rho_max": max(d["rho_max"] for d in self.diagnostics),
            "rho3_linf_max": self.rho3_linf_max,
        }


def rt_initial_state(disc, case):
    rho0 = interpolate(disc.R, case.initial_density)
    u0 = Field(disc.V)
    p0 = initial_pressure(disc, rho0, u0, case.initial_pressure_forcing(disc, rho0), case.mu)
    return State1(rho0, u0, p0, 0.0)


def rt_run(case, resolution, t_final, snapshot_times=(), first_order=False, disc=None,
           on_step=None):
    """Simulate to ``t_final`` (physical time) with CFL-adaptive steps.

    The first step uses ``tau = cfl h_min / sqrt(g d)``.  Taylor mode starts
    from the Richardson initialization.  Snapshots are State1 objects; in
    Taylor mode ``rho3`` maps each snapshot time to the third density
    derivative there.
    """
    nx, ny = resolution
    disc = Discretization(case.mesh(nx, ny)) if disc is None else disc
    tau0 = case.cfl * h_min(disc.mesh) / math.sqrt(case.g * case.d)
    params = case.params(disc.mesh, tau0)
    s0 = rt_initial_state(disc, case)
    state = s0 if first_order else richardson_init(disc, s0, tau0, params, case)
    res = run(disc, case, params, state, t_final, adaptive=True, snapshot_times=snapshot_times,
              first_order=first_order, on_step=on_step)
    snaps, rho3 = {}, {}
    for t, s in res.snapshots.items():
        if first_order:
            snaps[t] = s
        else:
            snaps[t] = State1(s.rho[0], s.u[0], s.p[0], s.t)
            rho3[t] = s.rho[3]
    s = res.state
    final = s if first_order else State1(s.rho[0], s.u[0], s.p[0], s.t)
    return RtRun(resolution, "first_order" if first_order else "taylor",
                 res.diagnostics, snaps, final, rho3)


def cmd_rt(cfg, case=None, write=True):
    """Rayleigh-Taylor runs at ``cfg.rt_resolutions``; returns the RtRun list.

    With ``cfg.first_order`` the first-order scheme is also run on the
    finest resolution.  Writes per-run diagnostics, VTK snapshots and
    ``rt_summary.csv``.
    """
    case = RtCase() if case is None else case
    scale = math.sqrt(2.0)
    t_final = scale * cfg.rt_t_final
    snaps = [scale * t for t in cfg.snapshot_times]
    jobs = [(r, False) for r in cfg.rt_resolutions]
    if cfg.first_order:
        jobs.append((cfg.rt_resolutions[-1], True))
    runs = []
    for res, fo in jobs:
        disc = Discretization(case.mesh(*res))
        out = rt_run(case, res, t_final, snaps, first_order=fo, disc=disc)
        runs.append(out)
        if write:
            tag = f"rt_{res[0]}x{res[1]}_{out.mode}"
            write_csv(os.path.join(cfg.out, f"{tag}_diagnostics.csv"), DIAGNOSTIC_COLUMNS,
                      out.diagnostics)
            for tt, s in sorted(out.snapshots.items()):
                flds = {"rho0": s.rho, "u0": s.u, "p0": s.p}
                if tt in out.rho3:
                    flds["rho3"] = out.rho3[tt]
                write_vtk(flds, disc.mesh,
                          os.path.join(cfg.out, f"{tag}_t{tt / scale:.2f}.vtk"))
    if write:
        write_csv(os.path.join(cfg.out, "rt_summary.csv"), RT_SUMMARY_COLUMNS,
                  [r.summary() for r in runs])
    return runs


# -- energy audit ---------------------------------------------------------------

def energy_initial_state(disc, seed=0):
    """Smooth random density, a divergence-free velocity vanishing on the walls
    and a smooth pressure, from a seeded generator."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.3, 0.3, size=(3, 3))
    c = rng.uniform(-1.0, 1.0, size=3)
    q = rng.uniform(-1.0, 1.0, size=(2, 2))

    def rho(x, y, t=0.0):
        out = 2.0 + 0 * x
        for i in range(3):
            for j in range(3):
                out = out + a[i, j] * np.cos(np.pi * i * x) * np.cos(np.pi * j * y) / (1 + i + j)
        return out

    def vel(x, y, t=0.0):
        # u = curl of psi = s(x)^2 s(y)^2 (c0 + c1 x + c2 y), s = sin(pi .)
        sx, sy = np.sin(np.pi * x), np.sin(np.pi * y)
        dsx, dsy = 2 * np.pi * sx * np.cos(np.pi * x), 2 * np.pi * sy * np.cos(np.pi * y)
        poly = c[0] + c[1] * x + c[2] * y
        psi_x = dsx * sy**2 * poly + sx**2 * sy**2 * c[1]
        psi_y = sx**2 * dsy * poly + sx**2 * sy**2 * c[2]
        return np.stack([psi_y, -psi_x], axis=-1)

    def pres(x, y, t=0.0):
        return sum(q[i, j] * np.cos(np.pi * (i + 1) * x) * np.cos(np.pi * j * y)
                   for i in range(2) for j in range(2))

    r = interpolate(disc.R, rho)
    u = interpolate(disc.V, vel)
    p = interpolate(disc.Q, pres)
    return State1(r, u, Field(disc.Q, disc.zero_mean(p.values)), 0.0)


WALLS = {tag: Dirichlet(0.0) for tag in ("left", "right", "bottom", "top")}


def cmd_energy_audit(cfg, write=True, initial=None):
    """Run the energy-stable scheme and report both identities every step.

    Uses degrees (2, 1, 1) on a ``sweep_n``-square mesh with no-slip walls.
    ``initial(disc)`` may supply the starting State1 instead of the seeded
    data.  Returns the list of EnergyReports.
    """
    disc = Discretization(build_rectangle(0.0, 0.0, 1.0, 1.0, cfg.sweep_n, cfg.sweep_n), (2, 1, 1))
    s = energy_initial_state(disc, cfg.seed) if initial is None else initial(disc)
    params = SchemeParams(tau=cfg.energy_tau, lam=cfg.lam, mu=cfg.mu)
    reports = []
    for _ in range(cfg.energy_steps):
        s, rep = step_energy_stable(disc, s, params, WALLS)
        reports.append(rep)
    if write:
        write_csv(os.path.join(cfg.out, "energy_audit.csv"), ENERGY_COLUMNS,
                  [[i + 1] + r.csv_row() for i, r in enumerate(reports)])
    return reports
