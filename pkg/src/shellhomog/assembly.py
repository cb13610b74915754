"""Surface quadrature and assembly of the limit energies."""
from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .cell_solver import CellDiscretization, RegimeSpec, effective_form, load_vector
from .convex_shell import ConvexityCertificate
from .errors import BadSpec, NotABending
from .geometry import Chart, DisplacementField, TangentForm, b_form, dv2_form, frame_at, q_form
from .material import MicrostructureSpec, QuadraticDensity, sample_cell


@dataclass
class SurfaceQuadrature:
    """Tensor Gauss rule on the chart rectangle, weights include ``sqrt(det g)``."""

    points: list
    order: int

    @classmethod
    def from_chart(cls, chart: Chart, order: int = 6, domain=None) -> "SurfaceQuadrature":
        if order < 1:
            raise BadSpec(f"quadrature order must be >= 1, got {order}")
        (a1, b1), (a2, b2) = domain or chart.domain
        x, w = np.polynomial.legendre.leggauss(order)
        u = 0.5 * (b1 - a1) * x + 0.5 * (b1 + a1)
        v = 0.5 * (b2 - a2) * x + 0.5 * (b2 + a2)
        wu = 0.5 * (b1 - a1) * w
        wv = 0.5 * (b2 - a2) * w
        pts = []
        for i in range(order):
            for j in range(order):
                xi = np.array([u[i], v[j]])
                pts.append((xi, float(wu[i] * wv[j] * frame_at(chart, xi).area_element)))
        return cls(pts, order)

    @property
    def area(self) -> float:
        return math.fsum(w for _, w in self.points)


FormField = Union[TangentForm, np.ndarray, Callable, None]


@dataclass
class BendingInput:
    """Displacement and membrane field for the limit energy.

    ``B_w`` is a constant :class:`TangentForm`, a constant 2x2 array (read
    in the orthonormal frame), a callable ``xi -> TangentForm | array``, or
    ``None`` for zero.  ``cancel_dv2`` replaces ``B_w`` by ``-(dV)^2 / 2`` so
    the membrane argument vanishes.  ``bending_tolerance=None`` uses
    ``1e-8 (1 + max |grad V|)``.
    """

    V: DisplacementField
    B_w: FormField = None
    bending_tolerance: Optional[float] = None
    cancel_dv2: bool = False

    def bw_at(self, xi, point) -> TangentForm:
        B = self.B_w(xi) if callable(self.B_w) else self.B_w
        if B is None:
            return TangentForm(np.zeros((2, 2)), "orthonormal")
        if not isinstance(B, TangentForm):
            B = np.asarray(B, dtype=float)
            if not np.allclose(B, B.T, atol=1e-14):
                raise BadSpec("B_w must be symmetric")
            B = TangentForm(B, "orthonormal")
        return B.to_orthonormal(point)


@dataclass
class EnergyReport:
    total: float
    integrand: list
    weights: list
    regime: str
    discretization: dict
    timing: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"total": self.total, "integrand": self.integrand, "weights": self.weights,
             "regime": self.regime, "discretization": self.discretization, **self.meta}
        if include_timing:
            d["timing"] = self.timing
        return d


def _loads(chart, xi, inp: BendingInput, tol: float):
    pt = frame_at(chart, xi)
    qv = q_form(chart, xi, inp.V).to_orthonormal(pt).coeffs
    if np.linalg.norm(qv) > tol:
        raise NotABending(f"|q_V| = {np.linalg.norm(qv):.3e} > {tol:.3e} at xi={list(map(float, xi))}")
    half_dv2 = 0.5 * dv2_form(chart, xi, inp.V).to_orthonormal(pt).coeffs
    q1 = np.zeros((2, 2)) if inp.cancel_dv2 else inp.bw_at(xi, pt).coeffs + half_dv2
    q2 = -b_form(chart, xi, inp.V).to_orthonormal(pt).coeffs
    return pt, q1, q2


def default_bending_tolerance(chart, quad, V) -> float:
    g = max(float(np.max(np.abs(V.evaluate(xi)[1]))) for xi, _ in quad.points)
    return 1e-8 * (1.0 + g)


def assemble(chart: Chart, quad: SurfaceQuadrature, inp: BendingInput, regime: RegimeSpec,
             disc: CellDiscretization, material: Union[MicrostructureSpec, QuadraticDensity],
             grid: tuple | None = None, threads: int = 1, eliminate_g: bool = True) -> EnergyReport:
    """Integrate the regime's effective form of ``(B_w + (dV)^2/2, -b_V)`` over ``quad``.

    ``material`` is a microstructure (sampled at each point when it is
    ``x_dependent``) or an already sampled density.  Effective forms are
    cached for x-independent materials; the cache key includes the
    Weingarten map where the regime depends on it.
    """
    t0 = time.perf_counter()
    grid = tuple(grid or disc.default_grid())
    tol = inp.bending_tolerance
    if tol is None:
        tol = default_bending_tolerance(chart, quad, inp.V)
    if regime.kind == "convex":
        ConvexityCertificate.from_chart(chart, [xi for xi, _ in quad.points]).require()
    x_dep = isinstance(material, MicrostructureSpec) and material.x_dependent
    shared = None
    if not x_dep:
        shared = material if isinstance(material, QuadraticDensity) else sample_cell(material, grid=grid)

    lock = threading.Lock()
    cache: dict = {}
    stats = {"solves": 0}

    def form_for(pt):
        reg = regime
        key = ()
        if regime.kind == "zero-critical":
            reg = regime.with_weingarten(pt.weingarten_ortho)
            key = tuple(np.round(pt.weingarten_ortho.ravel(), 12))
        if x_dep:
            with lock:
                stats["solves"] += 1
            return effective_form(sample_cell(material, x=pt, grid=grid), reg, disc, eliminate_g)
        with lock:
            if key not in cache:
                cache[key] = effective_form(shared, reg, disc, eliminate_g)
                stats["solves"] += 1
            return cache[key]

    def work(item):
        xi, w = item
        pt, q1, q2 = _loads(chart, xi, inp, tol)
        form = form_for(pt)
        z = load_vector(q1, q2)
        return float(z @ form.qhat @ z)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vals = list(ex.map(work, quad.points))
    else:
        vals = [work(it) for it in quad.points]
    weights = [w for _, w in quad.points]
    total = math.fsum(w * v for w, v in zip(weights, vals))
    return EnergyReport(
        total=total, integrand=vals, weights=weights, regime=regime.label,
        discretization={"N": disc.N, "P": disc.P, "solver": disc.solver, "grid": list(grid),
                        "quadrature_order": quad.order},
        timing={"seconds": time.perf_counter() - t0, "threads": threads},
        meta={"cell_solves": stats["solves"], "bending_tolerance": tol},
    )
