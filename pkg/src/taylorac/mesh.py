"""Conforming 2D triangular meshes with tagged boundary facets.

Only structured generators are provided: rectangles (two diagonal patterns)
and a straight-edged polygonal approximation of a disk.  Meshes are immutable
once built; derived connectivity (edges, areas) is computed on first use.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "Mesh",
    "MeshFamily",
    "build_rectangle",
    "build_polygonal_disk",
    "refine_uniform",
    "h_min",
    "write_mesh_text",
]


class Mesh:
    """A 2D conforming triangulation.

    Parameters
    ----------
    vertices : (V, 2) array of coordinates.
    cells : (C, 3) array of vertex indices.  Cells with negative signed area
        are reoriented so that every cell is counter-clockwise.
    facets : (F, 2) array of boundary edges (vertex pairs).
    facet_tags : sequence of F strings, one tag per boundary facet.
    """

    def __init__(self, vertices, cells, facets, facet_tags):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
        a = _signed_areas(vertices, cells)
        flip = a < 0
        if np.any(flip):
            cells[flip] = cells[flip][:, [0, 2, 1]]
        self.vertices = vertices
        self.cells = cells
        self.facets = np.array(facets, dtype=np.int64).reshape(-1, 2)
        self.facet_tags = tuple(facet_tags)
        if len(self.facet_tags) != len(self.facets):
            raise InvalidArgument("one tag per boundary facet is required")
        for arr in (self.vertices, self.cells, self.facets):
            arr.setflags(write=False)
        self._cache = {}

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def boundary_facets(self):
        """List of ``((a, b), tag)`` pairs."""
        return [((int(a), int(b)), t) for (a, b), t in zip(self.facets, self.facet_tags)]

    @property
    def tags(self):
        return sorted(set(self.facet_tags))

    @cached_property
    def areas(self):
        return _signed_areas(self.vertices, self.cells)

    @cached_property
    def _edge_data(self):
        local = np.array([[0, 1], [1, 2], [2, 0]])
        pairs = self.cells[:, local].reshape(-1, 2)
        lohi = np.sort(pairs, axis=1)
        edges, inverse = np.unique(lohi, axis=0, return_inverse=True)
        cell_edges = inverse.reshape(-1, 3)
        return edges, cell_edges

    @property
    def edges(self):
        """(E, 2) unique edges, each stored as (low, high) vertex index."""
        return self._edge_data[0]

    @property
    def cell_edges(self):
        """(C, 3) global edge id of local edges (0,1), (1,2), (2,0)."""
        return self._edge_data[1]

    @cached_property
    def edge_cell_count(self):
        return np.bincount(self.cell_edges.ravel(), minlength=len(self.edges))

    @cached_property
    def h_per_cell(self):
        """Cell diameter, taken as the longest edge."""
        p = self.vertices[self.cells]
        lengths = np.stack(
            [np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
             np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
             np.linalg.norm(p[:, 0] - p[:, 2], axis=1)], axis=1)
        return lengths.max(axis=1)

    @cached_property
    def facet_edge_ids(self):
        """Global edge id of each boundary facet."""
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}
        return np.array([lookup[tuple(sorted((int(a), int(b))))] for a, b in self.facets],
                        dtype=np.int64)

    def geometry(self, rule):
        """Affine cell data for a quadrature rule, cached per exactness degree."""
        key = ("geom", rule.degree)
        if key not in self._cache:
            self._cache[key] = CellGeometry(self, rule)
        return self._cache[key]

    def __repr__(self):
        return f"Mesh(V={self.num_vertices}, C={self.num_cells}, tags={self.tags})"


class CellGeometry:
    """Jacobians, inverse Jacobians and physical quadrature data per cell."""

    def __init__(self, mesh, rule):
        p = mesh.vertices[mesh.cells]
        J = np.empty((mesh.num_cells, 2, 2))
        J[:, :, 0] = p[:, 1] - p[:, 0]
        J[:, :, 1] = p[:, 2] - p[:, 0]
        self.rule = rule
        self.J = J
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.invJ = np.linalg.inv(J)
        # physical points: x = p0 + J xi
        self.points = p[:, None, 0, :] + np.einsum("cij,qj->cqi", J, rule.points)
        self.weights = np.abs(self.detJ)[:, None] * rule.weights[None, :]


@dataclass(frozen=True)
class MeshFamily:
    """A base mesh and the number of uniform refinements applied to it."""

    base: Mesh
    levels: int

    def meshes(self):
        out = [self.base]
        for _ in range(self.levels - 1):
            out.append(refine_uniform(out[-1]))
        return out


def _signed_areas(vertices, cells):
    p = vertices[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_rectangle(x0, y0, x1, y1, nx, ny, pattern="diagonal"):
    """Structured triangulation of ``[x0, x1] x [y0, y1]``.

    ``pattern="diagonal"`` splits each of the ``nx*ny`` squares along one
    diagonal (2 cells per square); ``"crossed"`` adds the square centre and
    produces 4 cells per square.  Boundary facets are tagged
    ``left/right/bottom/top``.
    """
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgument("rectangle must have positive width and height")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgument("cell counts must be positive integers")
    if pattern not in ("diagonal", "crossed"):
        raise InvalidArgument(f"unknown pattern {pattern!r}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, Jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    I, Jj = I.ravel(), Jj.ravel()
    v00, v10, v01, v11 = vid(I, Jj), vid(I + 1, Jj), vid(I, Jj + 1), vid(I + 1, Jj + 1)
    if pattern == "diagonal":
        cells = np.concatenate([np.column_stack([v00, v10, v11]),
                                np.column_stack([v00, v11, v01])])
    else:
        centres = np.column_stack([(xs[I] + xs[I + 1]) / 2, (ys[Jj] + ys[Jj + 1]) / 2])
        c = len(verts) + np.arange(len(I))
        verts = np.vstack([verts, centres])
        cells = np.concatenate([np.column_stack([v00, v10, c]),
                                np.column_stack([v10, v11, c]),
                                np.column_stack([v11, v01, c]),
                                np.column_stack([v01, v00, c])])

    facets, tags = [], []
    for i in range(nx):
        facets.append((vid(i, 0), vid(i + 1, 0)))
        tags.append("bottom")
        facets.append((vid(i + 1, ny), vid(i, ny)))
        tags.append("top")
    for j in range(ny):
        facets.append((vid(0, j + 1), vid(0, j)))
        tags.append("left")
        facets.append((vid(nx, j), vid(nx, j + 1)))
        tags.append("right")
    return Mesh(verts, cells, facets, tags)


def build_polygonal_disk(radius, n_boundary):
    """Triangulate the regular ``n_boundary``-gon inscribed in a circle.

    Interior points are placed on concentric rings and connected by a
    Delaunay triangulation, which covers the (convex) polygon exactly.
    All boundary facets carry the tag ``"disk"``.
    """
    from scipy.spatial import Delaunay

    if not radius > 0:
        raise InvalidArgument("radius must be positive")
    if int(n_boundary) != n_boundary or n_boundary < 8:
        raise InvalidArgument("n_boundary must be an integer >= 8")
    n_boundary = int(n_boundary)
    n_rings = max(1, int(round(n_boundary / (2 * np.pi))))
    pts = [np.zeros((1, 2))]
    for j in range(1, n_rings):
        r = radius * j / n_rings
        n = max(6, int(round(n_boundary * j / n_rings)))
        th = 2 * np.pi * (np.arange(n) + 0.5 * (j % 2)) / n
        pts.append(r * np.column_stack([np.cos(th), np.sin(th)]))
    th = 2 * np.pi * np.arange(n_boundary) / n_boundary
    boundary = radius * np.column_stack([np.cos(th), np.sin(th)])
    nb0 = sum(len(p) for p in pts)
    pts.append(boundary)
    verts = np.vstack(pts)
    tri = Delaunay(verts)
    cells = tri.simplices
    keep = np.abs(_signed_areas(verts, cells)) > 1e-12 * radius**2
    cells = cells[keep]
    facets = [(nb0 + i, nb0 + (i + 1) % n_boundary) for i in range(n_boundary)]
    return Mesh(verts, cells, facets, ["disk"] * n_boundary)


def refine_uniform(m):
    """Split every cell into four through its edge midpoints.

    New vertex ``V + e`` is the midpoint of edge ``e`` of the coarse mesh, so
    coarse vertices keep their indices.
    """
    edges = m.edges
    mids = 0.5 * (m.vertices[edges[:, 0]] + m.vertices[edges[:, 1]])
    verts = np.vstack([m.vertices, mids])
    V = m.num_vertices
    a, b, c = m.cells.T
    e01, e12, e20 = (V + m.cell_edges).T
    cells = np.concatenate([
        np.column_stack([a, e01, e20]),
        np.column_stack([e01, b, e12]),
        np.column_stack([e20, e12, c]),
        np.column_stack([e01, e12, e20]),
    ])
    mid = V + m.facet_edge_ids
    facets = np.concatenate([np.column_stack([m.facets[:, 0], mid]),
                             np.column_stack([mid, m.facets[:, 1]])])
    tags = list(m.facet_tags) + list(m.facet_tags)
    return Mesh(verts, cells, facets, tags)


def h_min(m):
    """Smallest cell diameter of the mesh."""
    return float(m.h_per_cell.min())


def write_mesh_text(m, path):
    """Write a plain-text dump: vertex block, cell block, facet block."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"vertices {m.num_vertices}\n")
        for x, y in m.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"cells {m.num_cells}\n")
        for a, b, c in m.cells:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"facets {len(m.facets)}\n")
        for (a, b), t in zip(m.facets, m.facet_tags):
            fh.write(f"{a} {b} {t}\n")
