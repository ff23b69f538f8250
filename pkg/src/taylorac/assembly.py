"""Sparse operators, load vectors and strong boundary conditions.

Everything is integrated with a :class:`~taylorac.fespace.QuadratureRule`
(default exactness 14).  Weights and winds may be given as a :class:`Field`,
a constant, a per-cell array ``(C,)`` or raw quadrature-point values
``(C, nq)`` / ``(C, nq, 2)``; the last form is what the time steppers use
for pointwise products such as ``rho * (w . grad w)``.

Vector operators are built from scalar blocks following the component-blocked
DOF layout of vector spaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, Unsupported
from .fespace import DEFAULT_QUAD_DEGREE, Field, quadrature

__all__ = [
    "mass",
    "stiffness",
    "grad_div",
    "advection_scalar",
    "skew_advection_scalar",
    "advection_vector",
    "divergence_matrix",
    "nonlinear_load",
    "gradient_load",
    "divergence_load",
    "load_vector",
    "load_gradient",
    "mean_weights",
    "hrz_lumped_mass",
    "values_qp",
    "grad_qp",
    "div_qp",
    "convection_qp",
    "Dirichlet",
    "Slip",
    "BcSpec",
    "boundary_values",
    "apply_bc",
]


def _rule(rule):
    return quadrature(DEFAULT_QUAD_DEGREE) if rule is None else rule


def _check_mesh(space, *fields):
    for f in fields:
        if isinstance(f, Field) and f.space.mesh is not space.mesh:
            raise InvalidArgument("field and space are defined on different meshes")


def _scalar_qp(space, weight, rule):
    """Weight as (C, nq) quadrature values, or None for unit weight."""
    if weight is None:
        return None
    C, nq = space.mesh.num_cells, len(rule)
    if isinstance(weight, Field):
        if weight.space.components != 1:
            raise InvalidArgument("weight must be a scalar field")
        return weight.at_quadrature(rule)
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        return np.full((C, nq), float(w))
    if w.shape == (C,):
        return np.repeat(w[:, None], nq, axis=1)
    if w.shape == (C, nq):
        return w
    raise InvalidArgument(f"cannot interpret weight of shape {w.shape}")


def _vector_qp(space, wind, rule):
    C, nq = space.mesh.num_cells, len(rule)
    if isinstance(wind, Field):
        if wind.space.components != 2:
            raise InvalidArgument("wind must be a vector field")
        return wind.at_quadrature(rule)
    w = np.asarray(wind, dtype=float)
    if w.shape == (2,):
        return np.broadcast_to(w, (C, nq, 2))
    if w.shape == (C, nq, 2):
        return w
    raise InvalidArgument(f"cannot interpret vector data of shape {w.shape}")


def values_qp(field, rule=None):
    return field.at_quadrature(_rule(rule))


def grad_qp(field, rule=None):
    return field.grad_at_quadrature(_rule(rule))


def div_qp(field, rule=None):
    g = field.grad_at_quadrature(_rule(rule))
    return g[..., 0, 0] + g[..., 1, 1]


def convection_qp(w, rule=None, grad=None):
    """Pointwise ``(w . grad) w`` at quadrature points, shape (C, nq, 2)."""
    rule = _rule(rule)
    wq = w.at_quadrature(rule) if isinstance(w, Field) else w
    gw = w.grad_at_quadrature(rule) if grad is None else grad
    return np.einsum("cqd,cqkd->cqk", wq, gw)


def _scatter_matrix(test, trial, local):
    """Assemble (C, nb_test, nb_trial) local blocks into a CSR matrix."""
    dmr, dmc = test.dof_map, trial.dof_map
    rows = np.repeat(dmr[:, :, None], dmc.shape[1], axis=2).ravel()
    cols = np.repeat(dmc[:, None, :], dmr.shape[1], axis=1).ravel()
    A = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(test.n_scalar, trial.n_scalar))
    A.sum_duplicates()
    A.sort_indices()
    return A


def _scatter_vector(space, local):
    return np.bincount(space.dof_map.ravel(), weights=local.ravel(), minlength=space.n_scalar)


def _weighted(rule, space, w):
    geom = space.mesh.geometry(rule)
    return geom.weights if w is None else geom.weights * w


def _scalar_mass(space, w, rule):
    phi, _ = space.tabulate(rule)
    W = _weighted(rule, space, w)
    local = np.einsum("cq,qi,qj->cij", W, phi, phi, optimize=True)
    return _scatter_matrix(space, space, local)


def _scalar_stiffness(space, w, rule):
    _, dphi = space.tabulate(rule)
    W = _weighted(rule, space, w)
    local = np.einsum("cq,cqid,cqjd->cij", W, dphi, dphi, optimize=True)
    return _scatter_matrix(space, space, local)


def _blockdiag(A, ncomp):
    if ncomp == 1:
        return A
    return sp.block_diag([A] * ncomp, format="csr")


def mass(space, weight=None, rule=None):
    """Mass matrix ``int w phi_j phi_i`` (block diagonal for vector spaces)."""
    rule = _rule(rule)
    _check_mesh(space, weight)
    w = _scalar_qp(space, weight, rule)
    return _blockdiag(_scalar_mass(space.scalar_part(), w, rule), space.components)


def stiffness(space, weight=None, rule=None):
    """Stiffness ``int w grad phi_j . grad phi_i`` (full-gradient form for vectors)."""
    rule = _rule(rule)
    _check_mesh(space, weight)
    w = _scalar_qp(space, weight, rule)
    return _blockdiag(_scalar_stiffness(space.scalar_part(), w, rule), space.components)


def grad_div(space, rule=None):
    """Grad-div matrix ``int (div phi_j)(div phi_i)`` on a vector space."""
    if space.components != 2:
        raise InvalidArgument("grad_div requires a vector space")
    rule = _rule(rule)
    s = space.scalar_part()
    _, dphi = s.tabulate(rule)
    W = _weighted(rule, s, None)
    blocks = [[None, None], [None, None]]
    for a in range(2):
        for b in range(2):
            local = np.einsum("cq,cqi,cqj->cij", W, dphi[..., a], dphi[..., b], optimize=True)
            blocks[a][b] = _scatter_matrix(s, s, local)
    return sp.bmat(blocks, format="csr")


def advection_scalar(space, wind, weight=None, rule=None):
    """Advection ``int weight (w . grad phi_j) phi_i``; nonsymmetric in general."""
    rule = _rule(rule)
    _check_mesh(space, wind, weight)
    s = space.scalar_part()
    wq = _vector_qp(s, wind, rule)
    phi, dphi = s.tabulate(rule)
    W = _weighted(rule, s, _scalar_qp(s, weight, rule))
    wgrad = np.einsum("cqd,cqjd->cqj", wq, dphi)
    local = np.einsum("cq,qi,cqj->cij", W, phi, wgrad, optimize=True)
    return _blockdiag(_scatter_matrix(s, s, local), space.components)


def skew_advection_scalar(space, wind, rule=None):
    """Skew form ``int div(phi_j w) phi_i - 1/2 int (div w) phi_j phi_i``.

    Expanding ``div(phi w) = w . grad phi + phi div w`` this equals the
    advection matrix plus ``1/2 int (div w) phi_j phi_i``.  Its quadratic form
    vanishes whenever ``w . n = 0`` on the boundary.
    """
    rule = _rule(rule)
    _check_mesh(space, wind)
    if isinstance(wind, Field):
        dw = div_qp(wind, rule)
    else:
        raise InvalidArgument("skew advection needs the wind as a Field (its divergence is used)")
    return advection_scalar(space, wind, rule=rule) + 0.5 * mass(space, dw, rule)


def advection_vector(space, wind, weight=None, rule=None):
    """Componentwise vector advection ``int weight (w . grad) phi_j . phi_i``."""
    if space.components != 2:
        raise InvalidArgument("advection_vector requires a vector space")
    return advection_scalar(space, wind, weight, rule)


def divergence_matrix(scalar_space, vector_space, rule=None):
    """Rectangular ``D[i, j] = int (div phi_j) q_i`` with q from ``scalar_space``."""
    if vector_space.components != 2 or scalar_space.components != 1:
        raise InvalidArgument("divergence_matrix needs (scalar, vector) spaces")
    if scalar_space.mesh is not vector_space.mesh:
        raise InvalidArgument("spaces are defined on different meshes")
    rule = _rule(rule)
    s = vector_space.scalar_part()
    q, _ = scalar_space.tabulate(rule)
    _, dphi = s.tabulate(rule)
    W = _weighted(rule, s, None)
    blocks = []
    for a in range(2):
        local = np.einsum("cq,qi,cqj->cij", W, q, dphi[..., a], optimize=True)
        blocks.append(_scatter_matrix(scalar_space, s, local))
    return sp.hstack(blocks, format="csr")


def load_vector(space, values, rule=None):
    """``int F . phi_i`` for quadrature data F: (C, nq) scalar or (C, nq, 2) vector."""
    rule = _rule(rule)
    s = space.scalar_part()
    phi, _ = s.tabulate(rule)
    W = _weighted(rule, s, None)
    F = np.asarray(values, dtype=float)
    if space.components == 1:
        if F.ndim == 0:
            F = np.full(W.shape, float(F))
        return _scatter_vector(s, np.einsum("cq,cq,qi->ci", W, F, phi, optimize=True))
    F = np.broadcast_to(F, W.shape + (2,))
    parts = [_scatter_vector(s, np.einsum("cq,cq,qi->ci", W, F[..., a], phi, optimize=True))
             for a in range(2)]
    return np.concatenate(parts)


def load_gradient(space, values, rule=None):
    """``int F . grad q_i`` for vector quadrature data F on a scalar space."""
    if space.components != 1:
        raise InvalidArgument("load_gradient is defined on scalar spaces")
    rule = _rule(rule)
    _, dphi = space.tabulate(rule)
    W = _weighted(rule, space, None)
    return _scatter_vector(space, np.einsum("cq,cqd,cqid->ci", W, values, dphi, optimize=True))


def nonlinear_load(vector_space, density_weight, w, rule=None):
    """``int rho (w . grad w) . v`` for the explicit convection terms."""
    rule = _rule(rule)
    _check_mesh(vector_space, density_weight, w)
    rq = _scalar_qp(vector_space, density_weight, rule)
    N = convection_qp(w, rule)
    if rq is not None:
        N = rq[..., None] * N
    return load_vector(vector_space, N, rule)


def gradient_load(vector_space, p, rule=None):
    """``int grad p . v`` for a scalar field ``p``."""
    rule = _rule(rule)
    _check_mesh(vector_space, p)
    return load_vector(vector_space, p.grad_at_quadrature(rule), rule)


def divergence_load(scalar_space, u, rule=None):
    """``int (div u) q`` for a vector field ``u``."""
    rule = _rule(rule)
    _check_mesh(scalar_space, u)
    return load_vector(scalar_space, div_qp(u, rule), rule)


def mean_weights(space, rule=None):
    """Row sums of the mass matrix, ``int phi_i``; ``w @ c`` is the integral."""
    rule = _rule(rule)
    s = space.scalar_part()
    phi, _ = s.tabulate(rule)
    W = _weighted(rule, s, None)
    return _scatter_vector(s, W @ phi)


def hrz_lumped_mass(space, rule=None):
    """Diagonal (HRZ) lumping: diag(M) rescaled to preserve total mass.

    Row-sum lumping is singular for P2 (vertex functions integrate to zero),
    so the diagonal-scaling variant is used instead.
    """
    M = mass(space.scalar_part(), rule=rule)
    d = M.diagonal()
    area = mean_weights(space, rule).sum()
    d = d * area / d.sum()
    return np.tile(d, space.components)


# -- boundary conditions ----------------------------------------------------

Value = Union[float, Callable]


@dataclass(frozen=True)
class Dirichlet:
    """Prescribe all components; ``value`` is a constant or ``f(x, y, t)``."""

    value: Value = 0.0


@dataclass(frozen=True)
class Slip:
    """Zero the normal component on an axis-aligned wall (``component`` = normal axis)."""

    component: int


BcSpec = dict


def _axis_aligned(space, tag, component):
    m = space.mesh
    sel = np.array([t == tag for t in m.facet_tags])
    pts = m.vertices[m.facets[sel]]
    along = pts[:, 1, component] - pts[:, 0, component]
    return np.allclose(along, 0.0, atol=1e-12 * max(1.0, np.abs(pts).max()))


def boundary_values(bc, space, t):
    """Constrained global DOFs and their values for a boundary spec."""
    dofs, vals = [], []
    n = space.n_scalar
    x = space.dof_coords
    for tag, cond in (bc or {}).items():
        if cond is None:
            continue
        if tag not in space.boundary_dofs:
            raise InvalidArgument(f"unknown boundary tag {tag!r}")
        bd = space.boundary_dofs[tag]
        if isinstance(cond, Slip):
            if space.components != 2:
                raise InvalidArgument("slip conditions apply to vector spaces")
            if not _axis_aligned(space, tag, cond.component):
                raise Unsupported(f"slip on non-axis-aligned boundary {tag!r}")
            dofs.append(cond.component * n + bd)
            vals.append(np.zeros(len(bd)))
        elif isinstance(cond, Dirichlet):
            v = cond.value
            if callable(v):
                v = np.asarray(v(x[bd, 0], x[bd, 1], t), dtype=float)
            v = np.broadcast_to(np.asarray(v, dtype=float),
                                (len(bd),) if space.components == 1 else (len(bd), 2))
            if space.components == 1:
                dofs.append(bd)
                vals.append(np.array(v))
            else:
                for c in range(2):
                    dofs.append(c * n + bd)
                    vals.append(np.array(v[:, c]))
        else:
            raise InvalidArgument(f"unknown boundary condition {cond!r}")
    if not dofs:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    # later entries win on shared corner DOFs
    _, last = np.unique(dofs[::-1], return_index=True)
    idx = len(dofs) - 1 - last
    return dofs[idx], vals[idx]


def apply_bc(matrix, rhs, bc, space, t=0.0, symmetric=False):
    """Impose strong boundary conditions by row replacement.

    Constrained rows become identity rows with the prescribed value on the
    right-hand side.  With ``symmetric=True`` the known values are also
    eliminated from the columns, which keeps symmetric systems symmetric.
    Returns new ``(matrix, rhs)``.
    """
    dofs, vals = boundary_values(bc, space, t)
    A = sp.csr_matrix(matrix)
    b = np.array(rhs, dtype=float)
    if len(dofs) == 0:
        return A, b
    n = A.shape[0]
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    g = np.zeros(n)
    g[dofs] = vals
    if symmetric:
        b = b - A @ g
        A = D @ A @ D
    else:
        A = D @ A
    A = (A + sp.diags(1.0 - keep)).tocsr()
    b = keep * b + g
    A.eliminate_zeros()
    return A, b
