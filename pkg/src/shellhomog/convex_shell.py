"""Convex-shell regime: per-mode Fourier solver and the bending functional.

Mode systems are written in the rescaled symbol ``k`` (the factor ``2 pi i``
of the derivative is absorbed into ``c``); the displacement coefficient is
recovered as ``w_k = c_k / (2 pi i)``.  Only a half-lattice of modes is
stored, the rest follow by conjugate symmetry.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cell_solver import (CellDiscretization, EffectiveForm, RegimeSpec, RelaxationBasis, _check_grid,
                          _integrand, fourier_tables, half_lattice, solve_galerkin)
from .errors import BadSpec, NotConvex, SingularMode
from .geometry import TangentForm, frame_at, b_form
from .material import FREE, QuadraticDensity, ReducedDensity, embed_tangential, reduce_q2, tangential_to_voigt2

log = logging.getLogger(__name__)

CERTIFICATE_MARGIN = 0.9
DET_FLOOR = 1e-14


@dataclass(frozen=True)
class ConvexityCertificate:
    """Smallest principal curvature over the sampled points."""

    c_min: float
    samples: int = 1

    @property
    def ok(self) -> bool:
        return self.c_min > 0

    @property
    def bound(self) -> float:
        return CERTIFICATE_MARGIN * self.c_min

    def require(self):
        if not self.ok:
            raise NotConvex(f"Weingarten map not positive definite (c_min = {self.c_min:.3e})")
        return self

    @classmethod
    def from_matrix(cls, A) -> "ConvexityCertificate":
        A = _matrix(A)
        return cls(float(np.linalg.eigvalsh(A)[0]), 1)

    @classmethod
    def from_chart(cls, chart, points) -> "ConvexityCertificate":
        """Certificate from the Weingarten map at the listed chart coordinates.

        The sign of the normal is chosen per chart so that the first sampled
        map has positive trace.
        """
        mats = [frame_at(chart, xi).weingarten_ortho for xi in points]
        if not mats:
            raise BadSpec("no sample points for the convexity certificate")
        sign = 1.0 if np.trace(mats[0]) >= 0 else -1.0
        c = min(float(np.linalg.eigvalsh(sign * m)[0]) for m in mats)
        return cls(c, len(mats))


def _matrix(A) -> np.ndarray:
    if isinstance(A, TangentForm):
        if A.frame_tag != "orthonormal":
            raise BadSpec("the Weingarten map must be given in the orthonormal frame")
        return A.coeffs
    A = np.asarray(A, dtype=float)
    if A.shape == (3,):
        A = np.array([[A[0], A[1]], [A[1], A[2]]])
    if A.shape != (2, 2):
        raise BadSpec(f"Weingarten map needs 2x2 or (A11, A12, A22), got shape {A.shape}")
    return 0.5 * (A + A.T)


@dataclass
class FourierField:
    """Mean-zero symmetric 2x2 field ``B(y) = sum_k b_k exp(2 pi i k.y)``.

    ``coeffs[m]`` holds ``(b11, b12, b22)`` for the half-lattice vector
    ``ks[m]``; the coefficient of ``-k`` is the complex conjugate.
    """

    N: int
    coeffs: np.ndarray
    ks: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ks is None:
            self.ks = np.array(half_lattice(self.N), dtype=int).reshape(-1, 2)
        self.coeffs = np.asarray(self.coeffs, dtype=complex).reshape(-1, 3)
        if self.coeffs.shape[0] != self.ks.shape[0]:
            raise BadSpec(f"expected {self.ks.shape[0]} modes for N={self.N}, got {self.coeffs.shape[0]}")

    @classmethod
    def zeros(cls, N: int) -> "FourierField":
        return cls(N, np.zeros((len(half_lattice(N)), 3), dtype=complex))

    @classmethod
    def random(cls, N: int, rng: np.random.Generator, scale: float = 1.0) -> "FourierField":
        nk = len(half_lattice(N))
        c = rng.normal(scale=scale, size=(nk, 3)) + 1j * rng.normal(scale=scale, size=(nk, 3))
        return cls(N, c)

    @classmethod
    def from_samples(cls, samples, N: int) -> "FourierField":
        """Project a real sampled field ``samples[3, M1, M2]`` (mid-cell grid) onto modes ``|k_i| <= N``."""
        s = np.asarray(samples, dtype=float)
        if s.ndim != 3 or s.shape[0] != 3:
            raise BadSpec(f"samples need shape (3, M1, M2), got {s.shape}")
        m1, m2 = s.shape[1:]
        if min(m1, m2) < 2 * N + 1:
            raise BadSpec(f"a {m1}x{m2} grid cannot resolve N={N}")
        ks = np.array(half_lattice(N), dtype=int).reshape(-1, 2)
        y1 = (np.arange(m1) + 0.5) / m1
        y2 = (np.arange(m2) + 0.5) / m2
        ph = np.exp(-2j * np.pi * (ks[:, 0, None, None] * y1[None, :, None] + ks[:, 1, None, None] * y2[None, None, :]))
        coeffs = np.einsum("kab,cab->kc", ph, s) / (m1 * m2)
        return cls(N, coeffs, ks)

    def evaluate(self, m1: int, m2: int | None = None) -> np.ndarray:
        """Real samples ``(3, M1, M2)`` on the mid-cell grid."""
        return _synth(self.ks, self.coeffs, m1, m2 or m1)

    def to_dict(self) -> dict:
        return {"N": self.N, "ks": self.ks.tolist(),
                "re": self.coeffs.real.tolist(), "im": self.coeffs.imag.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FourierField":
        try:
            N = int(d["N"])
            c = np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)
            ks = np.asarray(d["ks"], dtype=int).reshape(-1, 2) if "ks" in d else None
        except (KeyError, TypeError, ValueError) as exc:
            raise BadSpec(f"malformed Fourier field: {exc}") from None
        if ks is not None and sorted(map(tuple, ks)) != sorted(half_lattice(N)):
            raise BadSpec("Fourier field modes do not form the half-lattice for its N")
        return cls(N, c, ks)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "FourierField":
        return cls.from_dict(json.loads(text))


def _synth(ks, coeffs, m1, m2) -> np.ndarray:
    y1 = (np.arange(m1) + 0.5) / m1
    y2 = (np.arange(m2) + 0.5) / m2
    ph = np.exp(2j * np.pi * (ks[:, 0, None, None] * y1[None, :, None] + ks[:, 1, None, None] * y2[None, None, :]))
    coeffs = np.asarray(coeffs).reshape(ks.shape[0], -1)
    return 2.0 * np.einsum("kab,kc->cab", ph, coeffs).real


def mode_matrix(A: np.ndarray, k) -> np.ndarray:
    """Coefficient matrix of the mode system in ``(c1, c2, d)``."""
    k1, k2 = float(k[0]), float(k[1])
    return np.array([[k1, 0.0, A[0, 0]],
                     [0.5 * k2, 0.5 * k1, A[0, 1]],
                     [0.0, k2, A[1, 1]]])


def mode_det(A: np.ndarray, k) -> float:
    k1, k2 = float(k[0]), float(k[1])
    return 0.5 * (A[1, 1] * k1 * k1 - 2 * A[0, 1] * k1 * k2 + A[0, 0] * k2 * k2)


@dataclass
class ModeSolution:
    """Per-mode ``c_k`` (rescaled displacement symbol) and ``d_k`` (phi coefficient)."""

    N: int
    ks: np.ndarray
    c: np.ndarray  # (nk, 2) complex
    d: np.ndarray  # (nk,) complex
    dets: np.ndarray
    A: np.ndarray

    @property
    def w_coeffs(self) -> np.ndarray:
        return self.c / (2j * np.pi)

    def w(self, m1: int, m2: int | None = None) -> np.ndarray:
        return _synth(self.ks, self.w_coeffs, m1, m2 or m1)

    def phi(self, m1: int, m2: int | None = None) -> np.ndarray:
        return _synth(self.ks, self.d[:, None], m1, m2 or m1)[0]

    def image_coeffs(self) -> np.ndarray:
        """Mode coefficients of ``sym grad w + phi A`` as ``(b11, b12, b22)``."""
        return np.array([mode_matrix(self.A, k) @ np.array([c[0], c[1], d])
                         for k, c, d in zip(self.ks, self.c, self.d)]).reshape(-1, 3)

    def to_dict(self) -> dict:
        nk = self.ks.shape[0]
        ratio = self.dets / np.maximum(np.sum(self.ks.astype(float) ** 2, axis=1), 1.0) if nk else np.zeros(0)
        return {
            "N": self.N, "A": self.A.tolist(), "ks": self.ks.tolist(),
            "c_re": self.c.real.tolist(), "c_im": self.c.imag.tolist(),
            "d_re": self.d.real.tolist(), "d_im": self.d.imag.tolist(),
            "det": self.dets.tolist(),
            "min_det_ratio": float(np.min(np.abs(ratio))) if nk else None,
        }


def solve_modes(A, B: FourierField, certificate: ConvexityCertificate | None = None) -> ModeSolution:
    """Solve the per-mode 3x3 systems for ``sym grad w + phi A = B``."""
    A = _matrix(A)
    (certificate or ConvexityCertificate.from_matrix(A)).require()
    nk = B.ks.shape[0]
    c = np.zeros((nk, 2), dtype=complex)
    d = np.zeros(nk, dtype=complex)
    dets = np.zeros(nk)
    for m, k in enumerate(B.ks):
        M = mode_matrix(A, k)
        dets[m] = mode_det(A, k)
        if abs(dets[m]) < DET_FLOOR:
            raise SingularMode(f"mode k={tuple(k)} has determinant {dets[m]:.3e}")
        sol = np.linalg.solve(M, B.coeffs[m])
        c[m] = sol[:2]
        d[m] = sol[2]
    return ModeSolution(B.N, B.ks.copy(), c, d, dets, A)


def reconstruction_residual(A, B: FourierField, sol: ModeSolution, m: int | None = None) -> float:
    """Relative L2 residual of ``sym grad w + phi A - B`` on a sample grid."""
    A = _matrix(A)
    m = m or 2 * B.N + 2
    y = (np.arange(m) + 0.5) / m
    ks = sol.ks.astype(float)
    ph = np.exp(2j * np.pi * (ks[:, 0, None, None] * y[None, :, None] + ks[:, 1, None, None] * y[None, None, :]))
    # grad w sampled from the displacement coefficients
    gw = np.zeros((2, 2, m, m))
    for a in range(2):
        for b in range(2):
            gw[a, b] = 2.0 * np.einsum("kxy,k->xy", ph, sol.w_coeffs[:, a] * 2j * np.pi * ks[:, b]).real
    phi = sol.phi(m)
    S = 0.5 * (gw + np.swapaxes(gw, 0, 1))
    img = np.stack([S[0, 0] + phi * A[0, 0], S[0, 1] + phi * A[0, 1], S[1, 1] + phi * A[1, 1]])
    target = B.evaluate(m)
    num = np.sqrt(np.mean(np.sum((img - target) ** 2, axis=0)))
    den = np.sqrt(np.mean(np.sum(target ** 2, axis=0)))
    return float(num / den) if den > 0 else float(num)


def curlcurl_check(A, B: FourierField, sol: ModeSolution) -> float:
    """Largest per-mode residual of ``cof(A) : hess phi = curl curl B`` in symbols."""
    A = _matrix(A)
    ks = sol.ks.astype(float)
    if ks.shape[0] == 0:
        return 0.0
    k1, k2 = ks[:, 0], ks[:, 1]
    b = B.coeffs
    lhs = k2 * k2 * b[:, 0] - 2 * k1 * k2 * b[:, 1] + k1 * k1 * b[:, 2]
    sym = A[0, 0] * k2 * k2 - 2 * A[0, 1] * k1 * k2 + A[1, 1] * k1 * k1
    return float(np.max(np.abs(lhs - sym * sol.d)))


# effective form -------------------------------------------------------------------

def build_convex_basis(disc: CellDiscretization, grid: tuple, eliminate_g: bool = True) -> RelaxationBasis:
    """Mean-zero, t-independent tangential fields (one per mode, kind and component)."""
    grid = tuple(int(g) for g in grid)
    _check_grid(disc, grid)
    nt, m1, m2 = grid
    ny = m1 * m2
    nq = nt * ny
    flab, fval, _, _ = fourier_tables(disc.N, m1, m2, order=0)
    fval = fval.reshape(len(flab), ny)
    labels, imgs = [], []
    for a in range(3):
        for m, (k, kind) in enumerate(flab):
            v = np.zeros((nt, ny, 3))
            v[..., a] = fval[m][None, :]
            imgs.append(v.reshape(nq, 3))
            labels.append(("B", a, k, kind, None, None))
    images = np.array(imgs)
    if not eliminate_g:
        images = images @ embed_tangential().T
        g = []
        for q in range(nq):
            for a in FREE:
                v = np.zeros((nq, 6))
                v[q, a] = 1.0
                g.append(v)
                labels.append(("g", int(a), None, "nodal", None, q))
        images = np.concatenate([images, np.array(g)]) if g else images
    counts = {}
    for lab in labels:
        counts[lab[0]] = counts.get(lab[0], 0) + 1
    return RelaxationBasis(RegimeSpec("convex"), disc, "tangential" if eliminate_g else "full",
                           labels, images, [np.arange(images.shape[0])], grid, counts)


def convex_effective_form(Q2, disc: CellDiscretization, weingarten=None, eliminate_g: bool = True) -> EffectiveForm:
    """Effective form of the convex regime.

    ``Q2`` is a :class:`ReducedDensity` (or a full density, reduced here).
    With ``eliminate_g=False`` the normal block is kept as explicit nodal
    unknowns and the full density is used.  A Weingarten map, when given,
    is checked for convexity.
    """
    if weingarten is not None:
        ConvexityCertificate.from_matrix(weingarten).require()
    if eliminate_g:
        dens = Q2 if isinstance(Q2, ReducedDensity) else reduce_q2(Q2)
    else:
        dens = Q2.source if isinstance(Q2, ReducedDensity) else Q2
        if not isinstance(dens, QuadraticDensity):
            raise BadSpec("the explicit g path needs the unreduced density")
    basis = build_convex_basis(disc, dens.grid, eliminate_g)
    qm, w = _integrand(dens, basis.space)
    qhat, Pi, cond, jitter, _ = solve_galerkin(basis.images, qm, w, dens.t_of_points(), basis.blocks, disc)
    regime = RegimeSpec("convex", None, None if weingarten is None else TangentForm(_matrix(weingarten), "orthonormal"))
    return EffectiveForm(qhat, regime, disc, basis, Pi, cond, jitter, dens, meta={"space": basis.space})


def bending_density(dens) -> np.ndarray:
    """Per-y quadratic form ``b -> min_M int_I Q2(t, y)(M + t b) dt`` as ``(M1, M2, 3, 3)``.

    For a t-independent integrand this is ``(1/12) Q2(y)``.
    """
    red = dens if isinstance(dens, ReducedDensity) else reduce_q2(dens)
    w = red.t_weights
    t = red.t_nodes
    q = red.q2mat
    m0 = np.einsum("t,tabij->abij", w, q)
    m1 = np.einsum("t,tabij->abij", w * t, q)
    m2 = np.einsum("t,tabij->abij", w * t * t, q)
    out = m2 - m1 @ np.linalg.solve(m0, m1)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def convex_bending_functional(chart, quad, V, material, certificate: ConvexityCertificate | None = None) -> float:
    """Simplified bending energy ``sum_x w_x mean_y B(y)(b_V(x))`` over a surface quadrature.

    ``material`` is a density (x-independent) or a callable ``point -> density``.
    """
    pts = [p for p, _ in quad.points]
    (certificate or ConvexityCertificate.from_chart(chart, pts)).require()
    cache = None if callable(material) else bending_density(material).mean(axis=(0, 1))
    vals = []
    for xi, wt in quad.points:
        pt = frame_at(chart, xi)
        bv = tangential_to_voigt2(b_form(chart, xi, V).to_orthonormal(pt).coeffs)
        Bm = cache if cache is not None else bending_density(material(pt)).mean(axis=(0, 1))
        vals.append(wt * float(bv @ Bm @ bv))
    return math.fsum(vals)
