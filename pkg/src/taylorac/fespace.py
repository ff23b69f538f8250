"""Continuous Lagrange spaces P1-P3 on triangles, quadrature, and fields.

Reference triangle has vertices (0,0), (1,0), (0,1); barycentric coordinates
are ``(1 - xi - eta, xi, eta)``.  Local DOF order is vertices, then nodes of
the local edges (0,1), (1,2), (2,0) walking from the first to the second
vertex, then interior nodes.  Globally, edge nodes are numbered along the
edge from its lower to its higher vertex index, which is what makes the
numbering consistent between the two cells sharing an edge.

Vector spaces are component-blocked: global DOF ``c * n_scalar + i`` is
component ``c`` of scalar DOF ``i``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import InvalidArgument, Unsupported

__all__ = [
    "QuadratureRule",
    "quadrature",
    "eval_basis",
    "reference_nodes",
    "FeSpace",
    "Field",
    "make_space",
    "interpolate",
    "DEFAULT_QUAD_DEGREE",
    "MAX_QUAD_DEGREE",
]

DEFAULT_QUAD_DEGREE = 14
MAX_QUAD_DEGREE = 40


class QuadratureRule:
    """Quadrature on the reference triangle.

    Attributes
    ----------
    points : (nq, 2) reference coordinates.
    barycentric : (nq, 3) barycentric coordinates of the same points.
    weights : (nq,) positive weights summing to 1/2.
    degree : total polynomial degree integrated exactly.
    """

    def __init__(self, points, weights, degree):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.degree = int(degree)
        xi, eta = self.points.T
        self.barycentric = np.column_stack([1 - xi - eta, xi, eta])

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature(exactness_degree=DEFAULT_QUAD_DEGREE):
    """Collapsed Gauss rule exact for polynomials of the requested degree.

    Conical product of Gauss-Legendre (along the collapsed direction) and
    Gauss-Jacobi with weight ``(1 - eta)`` uses ``m = ceil((n + 1) / 2)``
    points per direction.  All weights are positive.
    """
    n = int(exactness_degree)
    if n < 0:
        raise InvalidArgument("exactness degree must be non-negative")
    if n > MAX_QUAD_DEGREE:
        raise Unsupported(f"quadrature degree {n} exceeds table maximum {MAX_QUAD_DEGREE}")
    m = max(1, (n + 2) // 2)
    s, ws = np.polynomial.legendre.leggauss(m)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    x, wx = roots_jacobi(m, 1.0, 0.0)
    eta = 0.5 * (x + 1.0)
    weta = 0.25 * wx
    S, E = np.meshgrid(s, eta, indexing="ij")
    W = np.outer(ws, weta)
    xi = S * (1.0 - E)
    pts = np.column_stack([xi.ravel(), E.ravel()])
    return QuadratureRule(pts, W.ravel(), n)


@lru_cache(maxsize=None)
def reference_nodes(k):
    """Lattice counts ``(i0, i1, i2)`` with ``i0+i1+i2 = k`` in local DOF order."""
    if k not in (1, 2, 3):
        raise InvalidArgument(f"unsupported degree {k}; expected 1, 2 or 3")
    nodes = []
    for v in range(3):
        c = [0, 0, 0]
        c[v] = k
        nodes.append(tuple(c))
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for j in range(1, k):
            c = [0, 0, 0]
            c[a] = k - j
            c[b] = j
            nodes.append(tuple(c))
    for i1 in range(1, k):
        for i2 in range(1, k - i1):
            i0 = k - i1 - i2
            if i0 >= 1:
                nodes.append((i0, i1, i2))
    return tuple(nodes)


def _monomials(k):
    return [(a, b) for d in range(k + 1) for b in range(d + 1) for a in [d - b]]


@lru_cache(maxsize=None)
def _basis_coefficients(k):
    """Monomial coefficients C with phi_i(xi, eta) = sum_m C[m, i] xi^a eta^b."""
    nodes = np.array(reference_nodes(k), dtype=float) / k
    pts = nodes[:, 1:]  # (xi, eta) = (lambda1, lambda2)
    mons = _monomials(k)
    V = np.array([[x**a * y**b for a, b in mons] for x, y in pts])
    return np.linalg.solve(V, np.eye(len(mons)))


def _eval_monomials(k, pts, order):
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    mons = _monomials(k)

    def pw(z, e):
        return z**e if e >= 0 else np.zeros_like(z)

    vals = np.stack([pw(x, a) * pw(y, b) for a, b in mons], axis=1)
    if order == 0:
        return vals
    dx = np.stack([a * pw(x, a - 1) * pw(y, b) for a, b in mons], axis=1)
    dy = np.stack([b * pw(x, a) * pw(y, b - 1) for a, b in mons], axis=1)
    grads = np.stack([dx, dy], axis=-1)
    if order == 1:
        return vals, grads
    dxx = np.stack([a * (a - 1) * pw(x, a - 2) * pw(y, b) for a, b in mons], axis=1)
    dxy = np.stack([a * b * pw(x, a - 1) * pw(y, b - 1) for a, b in mons], axis=1)
    dyy = np.stack([b * (b - 1) * pw(x, a) * pw(y, b - 2) for a, b in mons], axis=1)
    hess = np.stack([np.stack([dxx, dxy], -1), np.stack([dxy, dyy], -1)], -2)
    return vals, grads, hess


def eval_basis(degree, points, hessians=False):
    """Evaluate the reference basis of degree ``k``.

    Parameters
    ----------
    degree : 1, 2 or 3.
    points : (n, 2) reference coordinates or (n, 3) barycentric coordinates.
    hessians : also return ``(n, nb, 2, 2)`` reference second derivatives.

    Returns
    -------
    values : (n, nb)
    grads : (n, nb, 2) derivatives with respect to (xi, eta).
    """
    C = _basis_coefficients(degree)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] == 3:
        pts = pts[:, 1:]
    out = _eval_monomials(degree, pts, 2 if hessians else 1)
    vals = out[0] @ C
    grads = np.einsum("nmd,mb->nbd", out[1], C)
    if hessians:
        return vals, grads, np.einsum("nmde,mb->nbde", out[2], C)
    return vals, grads


class FeSpace:
    """Scalar or vector continuous Lagrange space on a mesh.

    Attributes
    ----------
    dof_map : (C, nb) global scalar DOF indices per cell.
    dof_coords : (Ns, 2) coordinates of the scalar DOFs.
    n_scalar : number of scalar DOFs; ``ndofs = components * n_scalar``.
    """

    def __init__(self, mesh, degree, components=1):
        if degree not in (1, 2, 3):
            raise InvalidArgument(f"unsupported degree {degree}; expected 1, 2 or 3")
        if components not in (1, 2):
            raise InvalidArgument("components must be 1 or 2")
        self.mesh = mesh
        self.degree = k = int(degree)
        self.components = int(components)
        V, E, C = mesh.num_vertices, len(mesh.edges), mesh.num_cells
        ne = k - 1
        nint = (k - 1) * (k - 2) // 2
        nb = (k + 1) * (k + 2) // 2
        dm = np.empty((C, nb), dtype=np.int64)
        dm[:, :3] = mesh.cells
        col = 3
        for le, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            if ne == 0:
                break
            ge = mesh.cell_edges[:, le]
            forward = mesh.cells[:, a] < mesh.cells[:, b]
            for j in range(1, k):
                pos = np.where(forward, j - 1, ne - j)
                dm[:, col] = V + ge * ne + pos
                col += 1
        for i in range(nint):
            dm[:, col] = V + E * ne + np.arange(C) * nint + i
            col += 1
        self.dof_map = dm
        self.dof_map.setflags(write=False)
        self.n_scalar = V + E * ne + C * nint
        self.nb = nb

        coords = np.empty((self.n_scalar, 2))
        coords[:V] = mesh.vertices
        if ne:
            lo = mesh.vertices[mesh.edges[:, 0]]
            hi = mesh.vertices[mesh.edges[:, 1]]
            for q in range(ne):
                t = (q + 1) / k
                coords[V + np.arange(E) * ne + q] = lo + t * (hi - lo)
        if nint:
            lam = np.array(reference_nodes(k)[3 + 3 * ne:], dtype=float) / k
            p = mesh.vertices[mesh.cells]
            for i in range(nint):
                coords[V + E * ne + np.arange(C) * nint + i] = np.einsum("j,cjd->cd", lam[i], p)
        self.dof_coords = coords
        self._tab = {}
        self._bdofs = None

    @property
    def ndofs(self):
        return self.components * self.n_scalar

    @property
    def dofs_per_cell(self):
        return self.components * self.nb

    @property
    def boundary_dofs(self):
        """Mapping tag -> sorted array of scalar DOF indices on that boundary part."""
        if self._bdofs is None:
            m, k = self.mesh, self.degree
            V, ne = m.num_vertices, k - 1
            out = {}
            for tag in m.tags:
                sel = np.array([t == tag for t in m.facet_tags])
                verts = np.unique(m.facets[sel].ravel())
                eids = m.facet_edge_ids[sel]
                extra = (V + eids[:, None] * ne + np.arange(ne)[None, :]).ravel()
                out[tag] = np.unique(np.concatenate([verts, extra]))
            self._bdofs = out
        return self._bdofs

    def tabulate(self, rule):
        """Reference values (nq, nb) and physical gradients (C, nq, nb, 2) at ``rule``."""
        key = rule.degree
        if key not in self._tab:
            phi, dphi = eval_basis(self.degree, rule.points)
            geom = self.mesh.geometry(rule)
            grads = np.einsum("qbj,cjk->cqbk", dphi, geom.invJ)
            self._tab[key] = (phi, grads)
        return self._tab[key]

    def hessians(self, rule):
        """Physical second derivatives (C, nq, nb, 2, 2) of the basis."""
        key = ("hess", rule.degree)
        if key not in self._tab:
            _, _, H = eval_basis(self.degree, rule.points, hessians=True)
            invJ = self.mesh.geometry(rule).invJ
            self._tab[key] = np.einsum("qbij,cik,cjl->cqbkl", H, invJ, invJ)
        return self._tab[key]

    def cell_values(self, values):
        """Gather coefficients per cell: (C, nb) or (C, nb, components)."""
        v = np.asarray(values)
        if self.components == 1:
            return v[self.dof_map]
        return v.reshape(self.components, self.n_scalar).T[self.dof_map]

    def scalar_part(self):
        """The scalar space with the same mesh and degree."""
        if self.components == 1:
            return self
        if not hasattr(self, "_scalar"):
            self._scalar = FeSpace(self.mesh, self.degree, 1)
            self._scalar._tab = self._tab
        return self._scalar

    def __repr__(self):
        kind = "vector" if self.components == 2 else "scalar"
        return f"FeSpace(P{self.degree}, {kind}, ndofs={self.ndofs})"


def make_space(mesh, degree, components=1):
    return FeSpace(mesh, degree, components)


class Field:
    """Coefficient vector attached to a space.

    Supports linear combination with other fields of the same space.
    """

    __slots__ = ("space", "values")

    def __init__(self, space, values=None):
        self.space = space
        if values is None:
            values = np.zeros(space.ndofs)
        values = np.asarray(values, dtype=float)
        if values.shape != (space.ndofs,):
            raise InvalidArgument(
                f"field length {values.shape} does not match space ({space.ndofs},)")
        self.values = values

    def copy(self):
        return Field(self.space, self.values.copy())

    def _coerce(self, other):
        if isinstance(other, Field):
            if other.space is not self.space:
                raise InvalidArgument("fields live on different spaces")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.space, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.space, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.space, self._coerce(other) - self.values)

    def __mul__(self, c):
        return Field(self.space, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.space, -self.values)

    def component(self, c):
        n = self.space.n_scalar
        return self.values[c * n:(c + 1) * n]

    def at_quadrature(self, rule):
        """Values at quadrature points: (C, nq) or (C, nq, 2)."""
        phi, _ = self.space.tabulate(rule)
        cv = self.space.cell_values(self.values)
        if self.space.components == 1:
            return cv @ phi.T
        return np.einsum("qb,cbk->cqk", phi, cv)

    def grad_at_quadrature(self, rule):
        """Gradients: (C, nq, 2) or (C, nq, 2, 2) indexed [component, derivative]."""
        _, grads = self.space.tabulate(rule)
        cv = self.space.cell_values(self.values)
        if self.space.components == 1:
            return np.einsum("cqbd,cb->cqd", grads, cv)
        return np.einsum("cqbd,cbk->cqkd", grads, cv)

    def eval_cells(self, cells, bary):
        """Evaluate in given cells at barycentric points ``bary`` (n, 3)."""
        phi, _ = eval_basis(self.space.degree, np.asarray(bary))
        cv = self.space.cell_values(self.values)[np.asarray(cells)]
        if self.space.components == 1:
            return np.einsum("nb,nb->n", phi, cv)
        return np.einsum("nb,nbk->nk", phi, cv)

    def eval_points(self, points):
        """Evaluate at arbitrary physical points by brute-force point location."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mesh = self.space.mesh
        p = mesh.vertices[mesh.cells]
        cells = np.empty(len(pts), dtype=np.int64)
        bary = np.empty((len(pts), 3))
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        invJ = np.linalg.inv(J)
        for n, x in enumerate(pts):
            ref = np.einsum("cij,cj->ci", invJ, x[None, :] - p[:, 0])
            lam = np.column_stack([1 - ref.sum(axis=1), ref])
            score = lam.min(axis=1)
            c = int(np.argmax(score))
            if score[c] < -1e-10:
                raise InvalidArgument(f"point {x} lies outside the mesh")
            cells[n] = c
            bary[n] = lam[c]
        return self.eval_cells(cells, bary)


def interpolate(space, f, t=0.0):
    """Nodal interpolant of ``f(x, y, t)``.

    ``f`` returns an array broadcast like ``x`` for scalar spaces and with a
    trailing axis of length 2 for vector spaces.  Constants are accepted.
    """
    x, y = space.dof_coords.T
    if callable(f):
        vals = np.asarray(f(x, y, t), dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
    if space.components == 1:
        vals = np.broadcast_to(vals, (space.n_scalar,))
        return Field(space, np.array(vals, dtype=float))
    vals = np.broadcast_to(vals, (space.n_scalar, 2))
    return Field(space, np.ascontiguousarray(vals.T).ravel())
