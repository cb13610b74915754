"""Built-in charts and displacement families.

Charts are declared symbolically and differentiated with sympy once at
construction, so the frame computations always see analytic derivatives.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp
from numpy.polynomial import polynomial as npoly
from scipy.interpolate import RectBivariateSpline

from .errors import BadSpec
from .geometry import Chart, DisplacementField, hat

_s1, _s2 = sp.symbols("xi1 xi2", real=True)


def _vectorize(fn, shape):
    def call(xi):
        out = fn(float(xi[0]), float(xi[1]))
        return np.array(out, dtype=float).reshape(shape)
    return call


def chart_from_expressions(exprs, domain, name="custom", **params) -> Chart:
    """Chart from three sympy expressions in the symbols ``xi1, xi2``."""
    psi = sp.Matrix(exprs)
    jac = psi.jacobian([_s1, _s2])
    hess = [[[sp.diff(psi[a], u, v) for v in (_s1, _s2)] for u in (_s1, _s2)] for a in range(3)]
    f0 = sp.lambdify((_s1, _s2), list(psi), "numpy")
    f1 = sp.lambdify((_s1, _s2), [list(jac.row(a)) for a in range(3)], "numpy")
    f2 = sp.lambdify((_s1, _s2), hess, "numpy")
    return Chart(
        psi=_vectorize(f0, (3,)), d_psi=_vectorize(f1, (3, 2)), d2_psi=_vectorize(f2, (3, 2, 2)),
        domain=tuple(tuple(map(float, d)) for d in domain), name=name, params=dict(params),
    )


@lru_cache(maxsize=None)
def plane(domain=((0.0, 1.0), (0.0, 1.0))) -> Chart:
    return chart_from_expressions([_s1, _s2, 0], domain, "plane")


@lru_cache(maxsize=None)
def cylinder(radius: float = 1.0, domain=((-1.0, 1.0), (0.0, 1.0))) -> Chart:
    R = radius
    return chart_from_expressions(
        [R * sp.cos(_s1), R * sp.sin(_s1), _s2], domain, "cylinder", radius=R)


@lru_cache(maxsize=None)
def sphere(radius: float = 1.0, domain=((0.3, 1.3), (0.0, 1.5))) -> Chart:
    """Spherical coordinates ``(theta, phi)``; keep theta away from the poles."""
    R = radius
    th, ph = _s1, _s2
    return chart_from_expressions(
        [R * sp.sin(th) * sp.cos(ph), R * sp.sin(th) * sp.sin(ph), R * sp.cos(th)],
        domain, "sphere", radius=R)


@lru_cache(maxsize=None)
def torus(major: float = 2.0, minor: float = 0.5, domain=((0.0, 1.0), (0.0, 3.0))) -> Chart:
    R, r = major, minor
    u, v = _s1, _s2
    return chart_from_expressions(
        [(R + r * sp.cos(v)) * sp.cos(u), (R + r * sp.cos(v)) * sp.sin(u), r * sp.sin(v)],
        domain, "torus", major=R, minor=r)


@lru_cache(maxsize=None)
def graph(a: float = 0.6, b: float = -0.4, c: float = 0.2, d: float = 0.1,
          domain=((-0.5, 0.5), (-0.5, 0.5))) -> Chart:
    """Graph of ``a xi1^2/2 + b xi2^2/2 + c xi1 xi2 + d sin(xi1) sin(xi2)``."""
    f = a * _s1**2 / 2 + b * _s2**2 / 2 + c * _s1 * _s2 + d * sp.sin(_s1) * sp.sin(_s2)
    return chart_from_expressions([_s1, _s2, f], domain, "graph", a=a, b=b, c=c, d=d)


CHARTS = {"plane": plane, "cylinder": cylinder, "sphere": sphere, "torus": torus, "graph": graph}


def make_chart(name: str, **params) -> Chart:
    try:
        factory = CHARTS[name]
    except KeyError:
        raise BadSpec(f"unknown chart {name!r}; choose from {sorted(CHARTS)}") from None
    if "domain" in params:
        params["domain"] = tuple(tuple(float(v) for v in d) for d in params["domain"])
    return factory(**params)


# displacement families --------------------------------------------------------

def rigid(chart: Chart, a=(0.0, 0.0, 0.0), b=(0.0, 0.0, 0.0)) -> DisplacementField:
    """Infinitesimal rigid motion ``a + b x psi``."""
    a = np.asarray(a, dtype=float)
    B = hat(b)
    return DisplacementField(
        V=lambda xi: a + B @ chart.psi(xi),
        dV=lambda xi: B @ chart.d_psi(xi),
        d2V=lambda xi: np.einsum("ab,bij->aij", B, chart.d2_psi(xi)),
        name="rigid",
    )


def polynomial(coeffs) -> DisplacementField:
    """``V_c(xi) = sum_pq coeffs[c, p, q] xi1^p xi2^q``."""
    try:
        C = np.asarray(coeffs, dtype=float)
    except ValueError:
        raise BadSpec("polynomial coefficients must form a rectangular (3, p, q) array") from None
    if C.ndim != 3 or C.shape[0] != 3:
        raise BadSpec(f"polynomial coefficients need shape (3, p, q), got {C.shape}")
    C1 = [npoly.polyder(C, axis=1 + i) for i in range(2)]
    C2 = [[npoly.polyder(C1[i], axis=1 + j) for j in range(2)] for i in range(2)]

    def ev(c, xi):
        return np.array([npoly.polyval2d(xi[0], xi[1], c[k]) for k in range(3)])

    return DisplacementField(
        V=lambda xi: ev(C, xi),
        dV=lambda xi: np.stack([ev(C1[i], xi) for i in range(2)], axis=1),
        d2V=lambda xi: np.stack([np.stack([ev(C2[i][j], xi) for j in range(2)], axis=1) for i in range(2)], axis=1),
        name="polynomial",
    )


def random_polynomial(rng: np.random.Generator, degree: int = 3, scale: float = 0.5) -> DisplacementField:
    C = rng.normal(scale=scale, size=(3, degree + 1, degree + 1))
    # drop terms of total degree > degree
    p, q = np.meshgrid(np.arange(degree + 1), np.arange(degree + 1), indexing="ij")
    C[:, p + q > degree] = 0.0
    return polynomial(C)


def normal_graph(chart: Chart, w_coeffs) -> DisplacementField:
    """``V = w(xi) n(xi)`` with ``w`` a 2D polynomial in ``xi``.

    Second derivatives are taken by central differences of the analytic
    first derivatives.
    """
    from .geometry import frame_at

    W = np.asarray(w_coeffs, dtype=float)
    W1 = [npoly.polyder(W, axis=i) for i in range(2)]

    def V(xi):
        return npoly.polyval2d(xi[0], xi[1], W) * frame_at(chart, xi).n

    def dV(xi):
        p = frame_at(chart, xi)
        w = npoly.polyval2d(xi[0], xi[1], W)
        return np.stack([npoly.polyval2d(xi[0], xi[1], W1[i]) * p.n + w * p.dn[:, i] for i in range(2)], axis=1)

    return DisplacementField(V=V, dV=dV, d2V=None, name="normal_graph")


def tabulated(xi1, xi2, values, degree: int = 5) -> DisplacementField:
    """Spline interpolant of samples ``values[c, i, j]`` on a tensor grid."""
    vals = np.asarray(values, dtype=float)
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if vals.shape != (3, xi1.size, xi2.size):
        raise BadSpec(f"tabulated values need shape (3, {xi1.size}, {xi2.size}), got {vals.shape}")
    sp_ = [RectBivariateSpline(xi1, xi2, vals[c], kx=degree, ky=degree) for c in range(3)]

    def ev(xi, dx=0, dy=0):
        return np.array([float(s.ev(xi[0], xi[1], dx=dx, dy=dy)) for s in sp_])

    return DisplacementField(
        V=lambda xi: ev(xi),
        dV=lambda xi: np.stack([ev(xi, 1, 0), ev(xi, 0, 1)], axis=1),
        d2V=lambda xi: np.stack([np.stack([ev(xi, 2, 0), ev(xi, 1, 1)], axis=1),
                                 np.stack([ev(xi, 1, 1), ev(xi, 0, 2)], axis=1)], axis=1),
        name="tabulated",
    )


def make_displacement(chart: Chart, spec: dict | None) -> DisplacementField:
    """Displacement from a configuration table (``family`` plus parameters)."""
    if not spec:
        return polynomial(np.zeros((3, 1, 1)))
    spec = dict(spec)
    family = spec.pop("family", "rigid")
    if family == "rigid":
        return rigid(chart, spec.get("a", (0, 0, 0)), spec.get("b", (0, 0, 0)))
    if family == "polynomial":
        return polynomial(spec["coeffs"])
    if family == "normal_graph":
        return normal_graph(chart, spec["w"])
    raise BadSpec(f"unknown displacement family {family!r}")
