"""Manufactured solutions with closed-form time derivatives, and error norms.

Both cases share one structure::

    rho = 2 + x a(t) + y b(t),    a + i b = exp(i sin t)
    u   = cos(t) U(x, y),          div U = 0
    p   = sin(t) (P(x, y) - mean P),  P = sin x sin y

so that every time derivative reduces to derivatives of a handful of scalar
functions of ``t``.  The momentum forcing ``f`` and the density source
``g = rho_t + u . grad rho`` follow from substituting into the equations;
their ``l``-th time derivatives are written out with the Leibniz rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, pi
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "MmsCase",
    "square_case",
    "disk_case",
    "paper_disk_case",
    "ErrorReport",
    "error_norms",
    "field_errors",
    "convergence_rates",
]


def _cos_deriv(k, t):
    return np.cos(t + k * pi / 2)


def _sin_deriv(k, t):
    return np.sin(t + k * pi / 2)


def _cos2_deriv(k, t):
    """k-th derivative of cos(t)**2 = (1 + cos 2t) / 2."""
    if k == 0:
        return np.cos(t) ** 2
    return 2.0 ** (k - 1) * np.cos(2 * t + k * pi / 2)


def _exp_isin_multiplier(k, t):
    """m_k(t) with d^k/dt^k exp(i sin t) = m_k(t) exp(i sin t), k <= 4."""
    c, s = np.cos(t), np.sin(t)
    if k == 0:
        return 1.0 + 0j
    if k == 1:
        return 1j * c
    if k == 2:
        return -c**2 - 1j * s
    if k == 3:
        return 3 * s * c - 1j * (c + c**3)
    if k == 4:
        return 3 * np.cos(2 * t) + c**2 + c**4 + 1j * (s + 6 * s * c**2)
    raise InvalidArgument("density derivatives are tabulated up to order 4")


def _v(s):
    """Time factor broadcastable against (..., 2) vector data."""
    return np.asarray(s)[..., None]


def _density_coeffs(k, t):
    """(a_k, b_k): k-th derivatives of cos(sin t) and sin(sin t)."""
    z = _exp_isin_multiplier(k, t) * np.exp(1j * np.sin(t))
    return np.real(z), np.imag(z)


@dataclass(frozen=True)
class MmsCase:
    """Manufactured solution on a fixed domain.

    ``U``, ``W = (U . grad) U``, ``lapU`` and ``gradP`` are spatial fields
    returning arrays with a trailing axis of length 2.
    """

    name: str
    domain: str
    U: Callable
    W: Callable
    lapU: Callable
    P: Callable
    gradP: Callable
    p_mean: float
    mu: float = 1.0
    has_density_source: bool = True
    max_speed: float = 1.0

    # exact fields -----------------------------------------------------
    def rho(self, order, x, y, t):
        a, b = _density_coeffs(order, t)
        base = 2.0 if order == 0 else 0.0
        return base + x * a + y * b

    def u(self, order, x, y, t):
        return _v(_cos_deriv(order, t)) * self.U(x, y)

    def p(self, order, x, y, t):
        return _sin_deriv(order, t) * (self.P(x, y) - self.p_mean)

    # sources ----------------------------------------------------------
    def f(self, order, x, y, t):
        """order-th time derivative of rho (u_t + u . grad u) + grad p - mu lap u."""
        U, W = self.U(x, y), self.W(x, y)
        out = _v(_sin_deriv(order, t)) * self.gradP(x, y) - self.mu * _v(_cos_deriv(order, t)) * self.lapU(x, y)
        for j in range(order + 1):
            r = self.rho(j, x, y, t)[..., None]
            inner = _v(_cos_deriv(order - j + 1, t)) * U + _v(_cos2_deriv(order - j, t)) * W
            out = out + comb(order, j) * r * inner
        return out

    def g(self, order, x, y, t):
        """order-th time derivative of rho_t + u . grad rho."""
        a1, b1 = _density_coeffs(order + 1, t)
        out = x * a1 + y * b1
        U = self.U(x, y)
        for j in range(order + 1):
            a, b = _density_coeffs(order - j, t)
            out = out + comb(order, j) * _cos_deriv(j, t) * (U[..., 0] * a + U[..., 1] * b)
        return out

    # problem protocol used by the time steppers -------------------------
    def momentum_source(self, disc, order, t, rho=None):
        x, y = disc.xq[..., 0], disc.xq[..., 1]
        return self.f(order, x, y, t)

    def density_source(self, disc, order, t):
        if not self.has_density_source:
            return None
        x, y = disc.xq[..., 0], disc.xq[..., 1]
        return self.g(order, x, y, t)

    def velocity_bc(self, order):
        from .assembly import Dirichlet

        value = Dirichlet(lambda x, y, t, _o=order: self.u(_o, x, y, t))
        tags = ["disk"] if self.domain == "disk" else ["left", "right", "bottom", "top"]
        return {tag: value for tag in tags}

    def initial_pressure_forcing(self, disc, rho0):
        return self.momentum_source(disc, 0, 0.0)


def _square_U(x, y):
    return np.stack([np.sin(pi * x) * np.cos(pi * y), -np.cos(pi * x) * np.sin(pi * y)], axis=-1)


def _square_W(x, y):
    return np.stack([0.5 * pi * np.sin(2 * pi * x), 0.5 * pi * np.sin(2 * pi * y)], axis=-1)


def _square_lapU(x, y):
    return -2 * pi**2 * _square_U(x, y)


def _P(x, y):
    return np.sin(x) * np.sin(y)


def _gradP(x, y):
    return np.stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)], axis=-1)


def square_case(mu=1.0):
    """Unit-square solution with u . n = 0 on the walls and a density source."""
    return MmsCase(
        name="square", domain="square",
        U=_square_U, W=_square_W, lapU=_square_lapU, P=_P, gradP=_gradP,
        p_mean=(1 - np.cos(1.0)) ** 2, mu=mu, has_density_source=True, max_speed=1.0,
    )


def disk_case(mu=1.0):
    """Rigid-rotation solution on the unit disk; the density is a pure transport."""
    return MmsCase(
        name="disk", domain="disk",
        U=lambda x, y: np.stack([-y, x], axis=-1),
        W=lambda x, y: np.stack([-x, -y], axis=-1),
        lapU=lambda x, y: np.zeros(np.shape(x) + (2,)),
        P=_P, gradP=_gradP, p_mean=0.0, mu=mu, has_density_source=False,
        max_speed=np.sqrt(2.0),
    )


paper_disk_case = disk_case


# -- error norms ----------------------------------------------------------

class ErrorReport(NamedTuple):
    """Relative errors per variable: ``errors[name] = (L1, L2, Linf)``."""

    errors: dict
    ndofs: dict
    h_min: float


def error_norms(field, exact, rule):
    """Relative L1, L2 and Linf errors of ``field`` against ``exact``.

    ``exact`` is either a callable ``exact(x, y)`` or quadrature-point values.
    Returns ``(L1, L2, Linf, relative)``; ``relative`` is False when the
    exact solution vanishes and absolute norms are returned instead.
    """
    if rule.degree < 2 * field.space.degree + 2:
        raise InvalidArgument("error quadrature must integrate degree 2k+2 exactly")
    geom = field.space.mesh.geometry(rule)
    uh = field.at_quadrature(rule)
    if callable(exact):
        ue = np.asarray(exact(geom.points[..., 0], geom.points[..., 1]), dtype=float)
    else:
        ue = np.asarray(exact, dtype=float)
    e = uh - ue
    if field.space.components == 2:
        e = np.linalg.norm(e, axis=-1)
        ue = np.linalg.norm(ue, axis=-1)
    else:
        e, ue = np.abs(e), np.abs(ue)
    w = geom.weights
    errs = np.array([(w * e).sum(), np.sqrt((w * e**2).sum()), e.max()])
    refs = np.array([(w * ue).sum(), np.sqrt((w * ue**2).sum()), ue.max()])
    if refs.max() == 0.0:
        return errs[0], errs[1], errs[2], False
    return errs[0] / refs[0], errs[1] / refs[1], errs[2] / refs[2], True


def field_errors(case, rho, u, p, t, rule):
    """ErrorReport of the three primary fields against the exact solution at ``t``."""
    errs = {
        "rho": error_norms(rho, lambda x, y: case.rho(0, x, y, t), rule)[:3],
        "u": error_norms(u, lambda x, y: case.u(0, x, y, t), rule)[:3],
        "p": error_norms(p, lambda x, y: case.p(0, x, y, t), rule)[:3],
    }
    ndofs = {"rho": rho.space.ndofs, "u": u.space.ndofs, "p": p.space.ndofs}
    return ErrorReport(errs, ndofs, float(rho.space.mesh.h_per_cell.min()))


def convergence_rates(reports, variable, norm=1):
    """Observed rates ``log(e_i / e_i+1) / log(h_i / h_i+1)`` between levels.

    ``norm`` indexes (L1, L2, Linf).  ``reports`` may be ErrorReports or
    plain ``(h, error)`` pairs.
    """
    pairs = []
    for r in reports:
        if isinstance(r, ErrorReport):
            pairs.append((r.h_min, r.errors[variable][norm]))
        else:
            pairs.append((float(r[0]), float(r[1])))
    if len(pairs) < 2:
        raise InvalidArgument("need at least two reports")
    hs = np.array([p[0] for p in pairs])
    if np.any(np.diff(hs) >= 0):
        raise InvalidArgument("mesh sizes must decrease strictly")
    es = np.array([p[1] for p in pairs])
    return np.log(es[:-1] / es[1:]) / np.log(hs[:-1] / hs[1:])
