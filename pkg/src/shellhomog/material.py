"""Microscopic energy densities, their quadratic expansions and the
pointwise plane-stress relaxation.

Symmetric 3x3 matrices are stored as orthonormal Voigt 6-vectors
``(11, 22, 33, sqrt2*23, sqrt2*13, sqrt2*12)`` so that the Euclidean norm of
the vector equals the Frobenius norm of the matrix.  Tangential forms use the
3-vector ``(11, 22, sqrt2*12)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BadSpec, ExpansionMismatch, SingularBlock

log = logging.getLogger(__name__)

SQ2 = np.sqrt(2.0)
_PAIRS = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
TANGENTIAL = np.array([0, 1, 5])
FREE = np.array([2, 3, 4])
# I = (-1/2, 1/2)
THICKNESS_INTERVAL = (-0.5, 0.5)


def sym_to_voigt(G) -> np.ndarray:
    """Voigt vector of ``sym G`` (works on stacked ``(..., 3, 3)`` arrays)."""
    G = np.asarray(G, dtype=float)
    S = 0.5 * (G + np.swapaxes(G, -1, -2))
    return np.stack([S[..., i, j] * (1.0 if i == j else SQ2) for i, j in _PAIRS], axis=-1)


def voigt_to_sym(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape[:-1] + (3, 3))
    for a, (i, j) in enumerate(_PAIRS):
        s = 1.0 if i == j else 1.0 / SQ2
        S[..., i, j] = v[..., a] * s
        S[..., j, i] = v[..., a] * s
    return S


def voigt_basis() -> np.ndarray:
    """Symmetric matrices ``E_a`` dual to the Voigt coordinates."""
    return voigt_to_sym(np.eye(6))


def tangential_to_voigt2(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    s = 0.5 * (q + np.swapaxes(q, -1, -2))
    return np.stack([s[..., 0, 0], s[..., 1, 1], SQ2 * s[..., 0, 1]], axis=-1)


def voigt2_to_tangential(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    q = np.zeros(v.shape[:-1] + (2, 2))
    q[..., 0, 0] = v[..., 0]
    q[..., 1, 1] = v[..., 1]
    q[..., 0, 1] = q[..., 1, 0] = v[..., 2] / SQ2
    return q


def embed_tangential() -> np.ndarray:
    """6x3 matrix embedding tangential Voigt vectors into 3D Voigt."""
    P = np.zeros((6, 3))
    P[TANGENTIAL, [0, 1, 2]] = 1.0
    return P


def isotropic_qmat(lam: float, mu: float) -> np.ndarray:
    """Voigt matrix of ``G -> 2 mu |sym G|^2 + lam (tr G)^2``."""
    m = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    return 2.0 * mu * np.eye(6) + lam * np.outer(m, m)


def quadratic_value(qmat, G) -> float:
    v = sym_to_voigt(G)
    return float(v @ np.asarray(qmat) @ v)


# nonlinear densities ---------------------------------------------------------

def dist2_so3(F) -> float:
    """Squared Frobenius distance of ``F`` to SO(3)."""
    U, s, Vt = np.linalg.svd(np.asarray(F, dtype=float))
    if np.linalg.det(U @ Vt) < 0:
        s = s.copy()
        s[-1] = -s[-1]
    return float(np.sum((s - 1.0) ** 2))


@dataclass(frozen=True)
class EnergyDensity:
    """Stored energy ``w(t, y, F)`` at a fixed surface point."""

    w: Callable[[float, np.ndarray, np.ndarray], float]
    alpha: float
    beta: float
    rho: float = 1.0
    name: str = "custom"

    def __call__(self, t, y, F) -> float:
        return float(self.w(t, np.asarray(y, dtype=float), np.asarray(F, dtype=float)))


def st_venant_kirchhoff(lam: float, mu: float) -> EnergyDensity:
    """``W(F) = mu/4 |F^T F - I|^2 + lam/8 tr(F^T F - I)^2``.

    Not in the admissible class globally (it vanishes on reflections); the
    bounds returned are those of its quadratic part only.
    """
    def w(t, y, F):
        C = F.T @ F - np.eye(3)
        return mu / 4 * np.sum(C * C) + lam / 8 * np.trace(C) ** 2

    ev = np.linalg.eigvalsh(isotropic_qmat(lam / 2, mu / 2))
    return EnergyDensity(w, alpha=float(ev[0]), beta=float(ev[-1]), name="svk")


def squared_distance(scale: float = 1.0) -> EnergyDensity:
    """``W(F) = scale * dist^2(F, SO(3))``; in the class with alpha = beta = scale."""
    return EnergyDensity(lambda t, y, F: scale * dist2_so3(F), alpha=scale, beta=scale, rho=np.inf,
                         name="dist2")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    Qm, R = np.linalg.qr(rng.normal(size=(3, 3)))
    Qm = Qm @ np.diag(np.sign(np.diag(R)))
    if np.linalg.det(Qm) < 0:
        Qm[:, 0] = -Qm[:, 0]
    return Qm


def _second_difference(W: EnergyDensity, t, y, G, s) -> float:
    I = np.eye(3)
    return (W(t, y, I + s * G) + W(t, y, I - s * G)) / (2 * s * s)


def quadratic_expansion(W: EnergyDensity, t: float = 0.0, y=(0.0, 0.0), step: float = 1e-2,
                        ladder=(1e-2, 1e-3, 1e-4), ladder_tol: float = 1e-3,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Voigt matrix of the quadratic term of ``W(t, y, I + G)``.

    Symmetric second differences along the Voigt directions, polarised for
    the mixed entries and Richardson-extrapolated in the step.  The result is
    validated by requiring ``|W(I+sG) - s^2 Q(G)| / s^2`` to decrease along
    ``ladder`` and to end below ``ladder_tol`` for a few random directions.
    """
    E = voigt_basis()

    def q_of(G):
        d1 = _second_difference(W, t, y, G, step)
        d2 = _second_difference(W, t, y, G, step / 2)
        return (4 * d2 - d1) / 3

    Qm = np.zeros((6, 6))
    diag = [q_of(E[a]) for a in range(6)]
    for a in range(6):
        Qm[a, a] = diag[a]
        for b in range(a + 1, 6):
            Qm[a, b] = Qm[b, a] = 0.25 * (q_of(E[a] + E[b]) - q_of(E[a] - E[b]))

    rng = rng if rng is not None else np.random.default_rng(12345)
    I = np.eye(3)
    for _ in range(3):
        G = rng.normal(size=(3, 3))
        G /= np.linalg.norm(G)
        qg = quadratic_value(Qm, G)
        errs = [abs(W(t, y, I + s * G) - s * s * qg) / (s * s) for s in ladder]
        if not all(e2 <= e1 * 1.0001 + 1e-12 for e1, e2 in zip(errs, errs[1:])) or errs[-1] > ladder_tol:
            raise ExpansionMismatch(f"expansion ladder {errs} does not decrease below {ladder_tol}")
    return 0.5 * (Qm + Qm.T)


def check_material_class(W: EnergyDensity, rng: np.random.Generator, samples: int = 100,
                         t: float = 0.0, y=(0.0, 0.0), near_identity_only: bool = False) -> dict:
    """Sample the class conditions; returns worst violations (0 means satisfied)."""
    out = {"frame_indifference": 0.0, "minimal_at_identity": abs(W(t, y, np.eye(3))),
           "lower_bound": 0.0, "upper_bound": 0.0}
    for _ in range(samples):
        F = np.eye(3) + (0.3 if near_identity_only else 1.0) * rng.normal(size=(3, 3))
        R = random_rotation(rng)
        wf = W(t, y, F)
        out["frame_indifference"] = max(out["frame_indifference"], abs(W(t, y, R @ F) - wf))
        d2 = dist2_so3(F)
        out["lower_bound"] = max(out["lower_bound"], W.alpha * d2 - wf)
        if d2 <= W.rho:
            out["upper_bound"] = max(out["upper_bound"], wf - W.beta * d2)
    return out


# sampled quadratic densities -------------------------------------------------

def gauss_nodes(nt: int):
    """Gauss-Legendre nodes and weights on ``I = (-1/2, 1/2)``."""
    x, w = np.polynomial.legendre.leggauss(nt)
    return 0.5 * x, 0.5 * w


def cell_points(m: int) -> np.ndarray:
    """Mid-cell sample points ``(j + 1/2)/m`` of the unit period."""
    return (np.arange(m) + 0.5) / m


@dataclass(frozen=True)
class QuadraticDensity:
    """``Q(t, y, .)`` sampled on Gauss nodes in t times a uniform y grid.

    ``qmat`` has shape ``(Nt, M1, M2, 6, 6)``.  ``generator``, when present,
    evaluates the density at arbitrary ``t``: ``generator(t, Y1, Y2)`` returns
    ``(M1, M2, 6, 6)``.
    """

    t_nodes: np.ndarray
    t_weights: np.ndarray
    qmat: np.ndarray
    alpha: float
    beta: float
    generator: Optional[Callable] = None
    t_dependent: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> tuple:
        return self.qmat.shape[:3]

    @property
    def y_points(self):
        return cell_points(self.qmat.shape[1]), cell_points(self.qmat.shape[2])

    def flat(self):
        """``(Nq, 6, 6)`` samples with matching quadrature weights ``(Nq,)``."""
        nt, m1, m2 = self.grid
        w = np.repeat(self.t_weights, m1 * m2) / (m1 * m2)
        return self.qmat.reshape(-1, 6, 6), w

    def t_of_points(self) -> np.ndarray:
        nt, m1, m2 = self.grid
        return np.repeat(self.t_nodes, m1 * m2)

    def slice_at(self, t: float) -> np.ndarray:
        """``(M1, M2, 6, 6)`` density at thickness coordinate ``t``."""
        hit = np.flatnonzero(np.isclose(self.t_nodes, t, rtol=0, atol=1e-14))
        if hit.size:
            return self.qmat[hit[0]]
        if not self.t_dependent:
            return self.qmat[0]
        if self.generator is None:
            raise BadSpec(f"t={t} is not a sample node and the density has no generator")
        y1, y2 = self.y_points
        Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
        return self.generator(t, Y1, Y2)

    def value(self, G, it: int = 0, iy=(0, 0)) -> float:
        return quadratic_value(self.qmat[it, iy[0], iy[1]], G)


@dataclass(frozen=True)
class ReducedDensity:
    """Plane-stress reduced density ``Q_2`` on tangential Voigt 3-vectors.

    ``schur_data["coupling"]`` holds ``Q_ff^{-1} Q_fp``: the optimal free
    components (33, 23, 13) are ``-coupling @ q``.
    """

    t_nodes: np.ndarray
    t_weights: np.ndarray
    q2mat: np.ndarray
    schur_data: dict
    source: Optional[QuadraticDensity] = None

    @property
    def grid(self) -> tuple:
        return self.q2mat.shape[:3]

    def flat(self):
        nt, m1, m2 = self.grid
        w = np.repeat(self.t_weights, m1 * m2) / (m1 * m2)
        return self.q2mat.reshape(-1, 3, 3), w

    def t_of_points(self) -> np.ndarray:
        nt, m1, m2 = self.grid
        return np.repeat(self.t_nodes, m1 * m2)


def plane_stress(qmat) -> tuple[np.ndarray, np.ndarray]:
    """Schur complement of the free block; returns ``(Q2, coupling)``."""
    qmat = np.asarray(qmat, dtype=float)
    Qpp = qmat[..., TANGENTIAL[:, None], TANGENTIAL]
    Qpf = qmat[..., TANGENTIAL[:, None], FREE]
    Qff = qmat[..., FREE[:, None], FREE]
    try:
        np.linalg.cholesky(Qff)
    except np.linalg.LinAlgError:
        raise SingularBlock("free (33, 23, 13) block of Q is not positive definite") from None
    coupling = np.linalg.solve(Qff, np.swapaxes(Qpf, -1, -2))
    Q2 = Qpp - Qpf @ coupling
    return 0.5 * (Q2 + np.swapaxes(Q2, -1, -2)), coupling


def reduce_q2(Q: QuadraticDensity) -> ReducedDensity:
    q2, coupling = plane_stress(Q.qmat)
    return ReducedDensity(Q.t_nodes, Q.t_weights, q2, {"coupling": coupling}, source=Q)


# microstructures --------------------------------------------------------------

FAMILIES = ("homogeneous", "laminate", "checkerboard", "cosine", "custom")


def phase_matrix(p) -> np.ndarray:
    if isinstance(p, dict):
        try:
            M = isotropic_qmat(float(p["lambda"]), float(p["mu"]))
        except KeyError as exc:
            raise BadSpec(f"isotropic phase needs 'lambda' and 'mu', missing {exc}") from None
    else:
        M = np.asarray(p, dtype=float)
        if isinstance(p, tuple) and M.shape == (2,):
            M = isotropic_qmat(*M)
    if M.shape != (6, 6) or not np.allclose(M, M.T, atol=1e-12):
        raise BadSpec(f"phase must be a symmetric 6x6 Voigt matrix or (lambda, mu), got shape {M.shape}")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise BadSpec("phase matrix is not positive definite")
    return M


@dataclass(frozen=True)
class MicrostructureSpec:
    """Periodic microstructure at the quadratic level.

    ``laminate`` layers phase A for ``y_dir < theta``; ``checkerboard`` puts A
    on the squares where ``(y1 < 1/2) == (y2 < 1/2)``; ``cosine`` blends
    ``(1 - s) A + s B`` with ``s = (1 - cos 2 pi y_dir)/2``.  ``custom`` takes
    ``custom(t, Y1, Y2) -> (M1, M2, 6, 6)``.  ``t_dependence="affine"``
    multiplies the density by ``1 + t_slope * t``.
    """

    family: str = "homogeneous"
    phases: tuple = ({"lambda": 1.0, "mu": 1.0},)
    direction: int = 1
    theta: float = 0.5
    t_dependence: str = "none"
    t_slope: float = 0.0
    custom: Optional[Callable] = None
    x_dependent: bool = False

    def validate(self):
        if self.family not in FAMILIES:
            raise BadSpec(f"unknown microstructure family {self.family!r}")
        if self.family == "custom":
            if self.custom is None:
                raise BadSpec("custom family needs a callable")
        else:
            need = 1 if self.family == "homogeneous" else 2
            if len(self.phases) < need:
                raise BadSpec(f"family {self.family!r} needs {need} phases")
            for p in self.phases[:need]:
                phase_matrix(p)
        if self.family == "laminate":
            if not 0.0 < self.theta < 1.0:
                raise BadSpec(f"volume fraction theta must lie in (0, 1), got {self.theta}")
            if self.direction not in (1, 2):
                raise BadSpec(f"laminate direction must be 1 or 2, got {self.direction}")
        if self.t_dependence not in ("none", "affine", "custom"):
            raise BadSpec(f"unknown t_dependence {self.t_dependence!r}")
        if self.t_dependence == "affine" and abs(self.t_slope) >= 2.0:
            raise BadSpec("affine t dependence needs |t_slope| < 2 to stay positive on I")
        return self

    def evaluate(self, t: float, Y1: np.ndarray, Y2: np.ndarray) -> np.ndarray:
        shape = Y1.shape
        if self.family == "custom":
            out = np.asarray(self.custom(t, Y1, Y2), dtype=float)
        else:
            A = phase_matrix(self.phases[0])
            if self.family == "homogeneous":
                out = np.broadcast_to(A, shape + (6, 6)).copy()
            else:
                B = phase_matrix(self.phases[1])
                yd = Y1 if self.direction == 1 else Y2
                if self.family == "laminate":
                    s = (yd >= self.theta).astype(float)
                elif self.family == "checkerboard":
                    s = ((Y1 < 0.5) != (Y2 < 0.5)).astype(float)
                else:
                    s = 0.5 * (1.0 - np.cos(2 * np.pi * yd))
                s = s[..., None, None]
                out = (1.0 - s) * A + s * B
        if self.t_dependence == "affine":
            out = out * (1.0 + self.t_slope * t)
        return out


def sample_cell(spec: MicrostructureSpec, x=None, grid=(4, 5, 5)) -> QuadraticDensity:
    """Sample ``spec`` on Gauss nodes in t and mid-cell points in y.

    ``x`` (a :class:`~shellhomog.geometry.SurfacePoint`) is passed to
    ``x``-dependent custom callables as ``custom(t, Y1, Y2, x)``.
    """
    spec.validate()
    nt, m1, m2 = (int(g) for g in grid)
    if min(nt, m1, m2) < 1:
        raise BadSpec(f"grid dimensions must be >= 1, got {grid}")
    tn, tw = gauss_nodes(nt)
    Y1, Y2 = np.meshgrid(cell_points(m1), cell_points(m2), indexing="ij")
    if spec.family == "custom" and spec.x_dependent:
        fn = spec.custom
        gen = lambda t, a, b: np.asarray(fn(t, a, b, x), dtype=float)  # noqa: E731
        spec = MicrostructureSpec(**{**spec.__dict__, "custom": gen, "x_dependent": False})
    gen = spec.evaluate
    qmat = np.stack([gen(t, Y1, Y2) for t in tn])
    if qmat.shape != (nt, m1, m2, 6, 6):
        raise BadSpec(f"density sampler returned shape {qmat.shape}")
    if not np.allclose(qmat, np.swapaxes(qmat, -1, -2), atol=1e-12):
        raise BadSpec("sampled density is not symmetric")
    ev = np.linalg.eigvalsh(qmat)
    if ev[..., 0].min() <= 0:
        raise BadSpec("sampled density is not positive definite")
    return QuadraticDensity(tn, tw, qmat, alpha=float(ev[..., 0].min()), beta=float(ev[..., -1].max()),
                            generator=gen, t_dependent=spec.t_dependence != "none",
                            meta={"family": spec.family, "grid": [nt, m1, m2]})


def density_from_qmat(qmat, grid=(4, 1, 1)) -> QuadraticDensity:
    """Homogeneous density with a fixed 6x6 Voigt matrix."""
    M = np.asarray(qmat, dtype=float)
    return sample_cell(MicrostructureSpec("custom", custom=lambda t, a, b: np.broadcast_to(M, a.shape + (6, 6))),
                       grid=grid)
