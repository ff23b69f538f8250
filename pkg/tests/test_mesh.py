import math

import numpy as np
import pytest

from taylorac.errors import InvalidArgument
from taylorac.mesh import (MeshFamily, build_polygonal_disk, build_rectangle, h_min,
                           refine_uniform, write_mesh_text)


def _brute_force_diameters(m):
    p = m.vertices[m.cells]
    return np.array([max(np.linalg.norm(c[i] - c[j]) for i in range(3) for j in range(i))
                     for c in p])


def test_minimal_rectangle():
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    assert (m.num_cells, m.num_vertices, len(m.facets)) == (2, 4, 4)


def test_rayleigh_taylor_domain_cell_count():
    m = build_rectangle(-0.5, -2, 0.5, 2, 8, 32)
    assert m.num_cells == 512
    assert abs(m.areas.sum() - 4.0) < 1e-12


def test_crossed_pattern_area():
    m = build_rectangle(0, 0, 1, 1, 2, 2, pattern="crossed")
    assert m.num_cells == 16
    assert abs(m.areas.sum() - 1.0) < 1e-14


@pytest.mark.parametrize("args", [(0, 0, 0, 1, 1, 1), (0, 0, 1, 1, 0, 1), (0, 0, 1, 1, 1.5, 1)])
def test_rectangle_rejects_bad_input(args):
    with pytest.raises(InvalidArgument):
        build_rectangle(*args)


def test_rectangle_invariants():
    m = build_rectangle(-1, 0, 2, 1, 5, 3)
    assert np.all(m.areas > 0)
    counts = m.edge_cell_count
    boundary = set(m.facet_edge_ids.tolist())
    for e, c in enumerate(counts):
        assert c == (1 if e in boundary else 2)
    # Euler formula for a simply connected mesh
    assert m.num_vertices - len(m.edges) + m.num_cells == 1
    assert np.allclose(m.h_per_cell, _brute_force_diameters(m))
    assert set(m.tags) == {"left", "right", "bottom", "top"}
    pts = {tag: m.vertices[m.facets[np.array(m.facet_tags) == tag]] for tag in m.tags}
    assert np.allclose(pts["left"][..., 0], -1) and np.allclose(pts["right"][..., 0], 2)
    assert np.allclose(pts["bottom"][..., 1], 0) and np.allclose(pts["top"][..., 1], 1)


def test_disk_areas():
    m8 = build_polygonal_disk(1.0, 8)
    assert abs(m8.areas.sum() - 2 * math.sqrt(2)) < 1e-12
    m = build_polygonal_disk(1.0, 256)
    assert abs(m.areas.sum() - math.pi) < 1e-3
    assert set(m.facet_tags) == {"disk"}
    assert np.all(m.areas > 0)
    r = np.linalg.norm(m.vertices[m.facets.ravel()], axis=1)
    assert np.allclose(r, 1.0)


@pytest.mark.parametrize("args", [(0.0, 8), (1.0, 7)])
def test_disk_rejects_bad_input(args):
    with pytest.raises(InvalidArgument):
        build_polygonal_disk(*args)


def test_refinement():
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    fam = MeshFamily(m, 4).meshes()
    assert [x.num_cells for x in fam] == [2, 8, 32, 128]
    for coarse, fine in zip(fam, fam[1:]):
        assert fine.num_cells == 4 * coarse.num_cells
        assert np.array_equal(fine.vertices[:coarse.num_vertices], coarse.vertices)
        assert abs(fine.h_per_cell.max() - coarse.h_per_cell.max() / 2) < 1e-15
        assert h_min(fine) == h_min(coarse) / 2
        assert abs(fine.areas.sum() - 1.0) < 1e-14
        assert fine.edge_cell_count.max() <= 2
        assert sorted(fine.facet_tags) == sorted(list(coarse.facet_tags) * 2)


def test_h_min():
    assert abs(h_min(build_rectangle(0, 0, 1, 1, 1, 1)) - math.sqrt(2)) < 1e-15
    m = build_rectangle(0, 0, 1, 1, 2, 2, pattern="crossed")
    assert abs(h_min(m) - _brute_force_diameters(m).min()) < 1e-15


def test_mesh_text_dump(tmp_path):
    m = build_rectangle(0, 0, 1, 1, 2, 1)
    path = tmp_path / "m.txt"
    write_mesh_text(m, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"vertices {m.num_vertices}"
    i = 1 + m.num_vertices
    assert lines[i] == f"cells {m.num_cells}"
    j = i + 1 + m.num_cells
    assert lines[j] == f"facets {len(m.facets)}"
    assert len(lines) == j + 1 + len(m.facets)
    xy = np.array([[float(v) for v in ln.split()] for ln in lines[1:i]])
    assert np.array_equal(xy, m.vertices)
    tags = [ln.split()[2] for ln in lines[j + 1:]]
    assert tags == list(m.facet_tags)


def test_refine_uniform_quarters_cells():
    m = build_rectangle(0, 0, 2, 1, 2, 1)
    f = refine_uniform(m)
    assert f.num_cells == 4 * m.num_cells
    assert abs(np.abs(f.areas).sum() - 2.0) < 1e-14
    assert np.allclose(f.h_per_cell.max(), 0.5 * m.h_per_cell.max())
    assert sorted(set(f.facet_tags)) == m.tags and len(f.facets) == 2 * len(m.facets)
