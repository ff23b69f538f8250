from fractions import Fraction
from math import factorial

import numpy as np
import pytest
import sympy

from taylorac.errors import InvalidArgument, Unsupported
from taylorac.fespace import (Field, eval_basis, interpolate, make_space, quadrature,
                              reference_nodes)
from taylorac.mesh import build_rectangle, refine_uniform
from taylorac.mms import convergence_rates, error_norms


def monomial_integral(a, b):
    """Exact integral of xi^a eta^b over the reference triangle."""
    return Fraction(factorial(a) * factorial(b), factorial(a + b + 2))


@pytest.mark.parametrize("n", [1, 2, 5, 8, 14, 20])
def test_quadrature_exactness(n):
    rule = quadrature(n)
    xi, eta = rule.points.T
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - 0.5) < 1e-15
    for d in range(n + 1):
        for b in range(d + 1):
            a = d - b
            got = np.sum(rule.weights * xi**a * eta**b)
            assert abs(got - float(monomial_integral(a, b))) < 1e-14


def test_one_point_rule():
    rule = quadrature(1)
    assert len(rule) == 1
    assert np.allclose(rule.points, [[1 / 3, 1 / 3]]) and rule.weights[0] == 0.5


def test_monomial_example():
    rule = quadrature(5)
    xi, eta = rule.points.T
    exact = monomial_integral(2, 3)
    assert exact == Fraction(1, 420)
    assert abs(np.sum(rule.weights * xi**2 * eta**3) - float(exact)) < 1e-15


def test_quadrature_beyond_table():
    with pytest.raises(Unsupported):
        quadrature(41)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_partition_of_unity(k, rng):
    pts = rng.dirichlet([1, 1, 1], size=100)
    vals, grads = eval_basis(k, pts)
    assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-14)
    assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-12)


def test_p1_vertex_values():
    vals, _ = eval_basis(1, np.eye(3))
    assert np.allclose(vals, np.eye(3))


def _symbolic_basis(k):
    """Lagrange basis on the reference lattice computed with sympy."""
    x, y = sympy.symbols("x y")
    mons = [x**a * y**(d - a) for d in range(k + 1) for a in range(d + 1)]
    nodes = [(sympy.Rational(n[1], k), sympy.Rational(n[2], k)) for n in reference_nodes(k)]
    V = sympy.Matrix([[m.subs({x: px, y: py}) for m in mons] for px, py in nodes])
    C = V.inv()
    return x, y, [sum(C[j, i] * mons[j] for j in range(len(mons))) for i in range(len(nodes))]


@pytest.mark.parametrize("k", [2, 3])
def test_basis_matches_symbolic(k):
    x, y, basis = _symbolic_basis(k)
    pt = sympy.Rational(1, 3)
    exact = [float(b.subs({x: pt, y: pt})) for b in basis]
    vals, grads = eval_basis(k, np.array([[1 / 3, 1 / 3]]))
    assert np.allclose(vals[0], exact, atol=1e-13)
    gx = [float(sympy.diff(b, x).subs({x: pt, y: pt})) for b in basis]
    gy = [float(sympy.diff(b, y).subs({x: pt, y: pt})) for b in basis]
    assert np.allclose(grads[0, :, 0], gx, atol=1e-12)
    assert np.allclose(grads[0, :, 1], gy, atol=1e-12)


def test_dof_counts():
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    assert make_space(m, 1).ndofs == 4
    assert make_space(m, 3).ndofs == 16
    assert make_space(m, 3, 2).ndofs == 32
    assert make_space(m, 3, 2).dofs_per_cell == 20


@pytest.mark.parametrize("k", [0, 4])
def test_unsupported_degree(k):
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    with pytest.raises(InvalidArgument):
        make_space(m, k)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_c0_continuity(k, rng):
    m = build_rectangle(0, 0, 1, 1, 3, 3)
    s = make_space(m, k)
    f = Field(s, rng.standard_normal(s.ndofs))
    # every interior edge: evaluate from both neighbours at 10 points
    owners = {}
    for c in range(m.num_cells):
        for le, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            owners.setdefault(int(m.cell_edges[c, le]), []).append((c, a, b))
    checked = 0
    for e, own in owners.items():
        if len(own) != 2:
            continue
        t = rng.uniform(0, 1, 10)
        p0, p1 = m.vertices[m.edges[e]]
        vals = []
        for c, a, b in own:
            bary = np.zeros((10, 3))
            va = m.cells[c, a]
            # the point p0 + t (p1 - p0) in barycentric coordinates of cell c
            wa = np.where(va == m.edges[e, 0], 1 - t, t)
            bary[:, a], bary[:, b] = wa, 1 - wa
            vals.append(f.eval_cells(np.full(10, c), bary))
        assert np.allclose(vals[0], vals[1], atol=1e-12)
        checked += 1
    assert checked > 0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_interpolation_reproduces_polynomials(k, rng):
    m = build_rectangle(0, 0, 1, 1, 3, 2)
    s = make_space(m, k)
    f = lambda x, y, t=0: 1 + x**k - 2 * x * y ** (k - 1) + 0.5 * y**k
    fld = interpolate(s, f)
    pts = rng.uniform(0.01, 0.99, size=(20, 2))
    assert np.allclose(fld.eval_points(pts), f(pts[:, 0], pts[:, 1]), atol=1e-12)
    c = interpolate(s, 2.5)
    assert np.all(c.values == 2.5)


def test_vector_interpolation_layout():
    m = build_rectangle(0, 0, 1, 1, 2, 2)
    s = make_space(m, 2, 2)
    fld = interpolate(s, lambda x, y, t: np.stack([x, -y], axis=-1))
    x, y = s.dof_coords.T
    assert np.array_equal(fld.component(0), x) and np.array_equal(fld.component(1), -y)


def test_interpolation_rate_p3():
    rule = quadrature(14)
    f = lambda x, y, t=0: np.sin(x) * np.sin(y)
    g = lambda x, y: np.sin(x) * np.sin(y)
    m = build_rectangle(0, 0, 1, 1, 2, 2)
    pairs = []
    for _ in range(3):
        s = make_space(m, 3)
        e = error_norms(interpolate(s, f), g, rule)[1]
        pairs.append((m.h_per_cell.min(), e))
        m = refine_uniform(m)
    rates = convergence_rates(pairs, "x")
    assert np.all(np.abs(rates - 4) < 0.3)


def test_field_length_checked():
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    with pytest.raises(InvalidArgument):
        Field(make_space(m, 1), np.zeros(5))
