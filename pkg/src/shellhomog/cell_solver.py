"""Galerkin solvers for the cell problems defining the effective forms.

Corrector fields are expanded in a real Fourier basis in ``y`` (modes
``|k_i| <= N``) and, where the space has ``t``-dependence, in orthonormal
Legendre polynomials of degree ``<= P`` on ``I = (-1/2, 1/2)``.  Integrals
are evaluated on the sample grid of the :class:`QuadraticDensity` (Gauss
nodes in ``t``, mid-cell points in ``y``).  All tangential quantities refer
to the orthonormal frame at the surface point, where dual and covariant
frames coincide.

The effective form acts on ``(q1, q2)`` given as tangential Voigt vectors,
stacked into a 6-vector; ``qhat`` is the 6x6 matrix of that quadratic form.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import BadSpec, ScaleWarning, SolveFailure, UnsupportedRegime
from .geometry import TangentForm
from .material import (FREE, QuadraticDensity, ReducedDensity, SQ2, embed_tangential, reduce_q2,
                       tangential_to_voigt2)

log = logging.getLogger(__name__)

GAMMA_WINDOW = (1e-3, 1e3)
KINDS = ("gamma", "infinity", "zero-super", "zero-critical", "convex")


@dataclass(frozen=True)
class RegimeSpec:
    """Asymptotic regime.

    ``kind`` is one of ``gamma`` (finite ratio h/eps = ``gamma``),
    ``infinity``, ``zero-super``, ``zero-critical`` (with ``gamma`` holding
    gamma_1) and ``convex``.  ``weingarten_at_x`` is the Weingarten map in the
    orthonormal frame, needed by ``zero-critical`` (and used by ``convex`` for
    the convexity certificate).  It may be left unset on a template that
    :func:`shellhomog.assembly.assemble` fills in per surface point.
    """

    kind: str
    gamma: Optional[float] = None
    weingarten_at_x: Optional[TangentForm] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedRegime(f"unknown regime {self.kind!r}; choose from {KINDS}")
        if self.kind in ("gamma", "zero-critical"):
            g = self.gamma
            if g is None or not math.isfinite(g) or g <= 0:
                raise BadSpec(f"regime {self.kind} needs a finite positive gamma, got {g}")
            if not GAMMA_WINDOW[0] <= g <= GAMMA_WINDOW[1]:
                raise ScaleWarning(
                    f"gamma={g:g} outside {GAMMA_WINDOW}; use the 'infinity' or 'zero-super' regime instead")
        if self.weingarten_at_x is not None and self.weingarten_at_x.frame_tag != "orthonormal":
            raise BadSpec("weingarten_at_x must be given in the orthonormal frame")

    @classmethod
    def finite_gamma(cls, gamma: float) -> "RegimeSpec":
        return cls("gamma", float(gamma))

    @classmethod
    def infinity(cls) -> "RegimeSpec":
        return cls("infinity")

    @classmethod
    def zero_super(cls) -> "RegimeSpec":
        return cls("zero-super")

    @classmethod
    def zero_critical(cls, gamma1: float, weingarten=None) -> "RegimeSpec":
        return cls("zero-critical", float(gamma1), None if weingarten is None else _as_ortho(weingarten))

    @classmethod
    def zero_sub_convex(cls, weingarten=None) -> "RegimeSpec":
        return cls("convex", None, None if weingarten is None else _as_ortho(weingarten))

    def with_weingarten(self, weingarten) -> "RegimeSpec":
        return RegimeSpec(self.kind, self.gamma, _as_ortho(weingarten))

    @property
    def label(self) -> str:
        return f"{self.kind}({self.gamma:g})" if self.gamma is not None else self.kind


def _as_ortho(A) -> TangentForm:
    if isinstance(A, TangentForm):
        return A
    return TangentForm(np.asarray(A, dtype=float), "orthonormal")


@dataclass(frozen=True)
class CellDiscretization:
    N: int = 2
    P: int = 2
    solver: str = "cholesky"
    cg_tol: float = 1e-13
    cg_maxit: int = 20000

    def __post_init__(self):
        if self.N < 1 or self.P < 1:
            raise BadSpec(f"need N >= 1 and P >= 1, got N={self.N}, P={self.P}")
        if self.solver not in ("cholesky", "cg"):
            raise BadSpec(f"unknown solver {self.solver!r}")

    def default_grid(self) -> tuple:
        """``(Nt, M, M)`` with ``P + 2`` Gauss nodes and ``M = 2N + 2``."""
        m = 2 * self.N + 2
        return (self.P + 2, m, m)


# basis tables -----------------------------------------------------------------

def half_lattice(N: int) -> list[tuple[int, int]]:
    """Wave vectors ``k != 0`` with ``|k_i| <= N``, one of each ``{k, -k}``."""
    ks = []
    for k1 in range(0, N + 1):
        for k2 in range(-N, N + 1):
            if k1 == 0 and k2 <= 0:
                continue
            ks.append((k1, k2))
    return ks


def fourier_tables(N: int, m1: int, m2: int, order: int, include_constant: bool = False):
    """Real trigonometric basis on the mid-cell grid.

    Each function is ``sqrt2 cos(2 pi k.y)`` or ``sqrt2 sin(2 pi k.y)`` divided
    by ``(2 pi |k|)^order`` (so gradients for ``order=1`` and Hessians for
    ``order=2`` are of unit size).  Returns ``(labels, val, grad, hess)`` with
    shapes ``(nm, m1, m2)``, ``(nm, 2, m1, m2)``, ``(nm, 2, 2, m1, m2)``.
    """
    y1 = (np.arange(m1) + 0.5) / m1
    y2 = (np.arange(m2) + 0.5) / m2
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    labels, val, grad, hess = [], [], [], []
    if include_constant:
        labels.append(((0, 0), "const"))
        val.append(np.ones_like(Y1))
        grad.append(np.zeros((2,) + Y1.shape))
        hess.append(np.zeros((2, 2) + Y1.shape))
    for k in half_lattice(N):
        kv = 2 * np.pi * np.array(k, dtype=float)
        scale = SQ2 / np.linalg.norm(kv) ** order
        arg = kv[0] * Y1 + kv[1] * Y2
        c, s = np.cos(arg), np.sin(arg)
        labels.append((k, "cos"))
        val.append(scale * c)
        grad.append(scale * np.stack([-kv[0] * s, -kv[1] * s]))
        hess.append(scale * np.stack([np.stack([-kv[0] * kv[0] * c, -kv[0] * kv[1] * c]),
                                      np.stack([-kv[1] * kv[0] * c, -kv[1] * kv[1] * c])]))
        labels.append((k, "sin"))
        val.append(scale * s)
        grad.append(scale * np.stack([kv[0] * c, kv[1] * c]))
        hess.append(scale * np.stack([np.stack([-kv[0] * kv[0] * s, -kv[0] * kv[1] * s]),
                                      np.stack([-kv[1] * kv[0] * s, -kv[1] * kv[1] * s]), ]))
    return labels, np.array(val), np.array(grad), np.array(hess)


def legendre_tables(P: int, t: np.ndarray):
    """Orthonormal Legendre polynomials on ``I`` and their t-derivatives."""
    L = np.zeros((P + 1, t.size))
    dL = np.zeros((P + 1, t.size))
    from numpy.polynomial import legendre as leg
    for n in range(P + 1):
        c = np.zeros(n + 1)
        c[n] = np.sqrt(2 * n + 1)
        L[n] = leg.legval(2 * t, c)
        dL[n] = 2 * leg.legval(2 * t, leg.legder(c))
    return L, dL


def _row_to_voigt(c: int, cols: np.ndarray) -> np.ndarray:
    """Voigt vector of ``sym H`` where ``H`` has only row ``c`` = ``cols``."""
    out = np.zeros(cols.shape[:-1] + (6,))
    S = np.zeros(cols.shape[:-1] + (3, 3))
    S[..., c, :] += 0.5 * cols
    S[..., :, c] += 0.5 * cols
    for a, (i, j) in enumerate([(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]):
        out[..., a] = S[..., i, j] * (1.0 if i == j else SQ2)
    return out


def _sym_grad_tangential(alpha: int, grad: np.ndarray) -> np.ndarray:
    """Tangential Voigt of ``sym(e_alpha (x) grad f)``; ``grad`` is ``(..., 2)``."""
    out = np.zeros(grad.shape[:-1] + (3,))
    out[..., alpha] = grad[..., alpha]
    out[..., 2] = SQ2 * 0.5 * grad[..., 1 - alpha]
    return out


def _hess_tangential(hess: np.ndarray) -> np.ndarray:
    """Tangential Voigt of a 2x2 Hessian ``(..., 2, 2)``."""
    return np.stack([hess[..., 0, 0], hess[..., 1, 1], SQ2 * hess[..., 0, 1]], axis=-1)


@dataclass
class RelaxationBasis:
    """Discrete relaxation space.

    ``images[a]`` is the strain of basis field ``a`` on the flattened
    ``(t, y1, y2)`` sample grid, as 6-vectors (``space="full"``) or
    tangential 3-vectors (``space="tangential"``, free components eliminated).
    ``labels[a]`` is ``(field, component, k, kind, legendre_degree, t_node)``.
    ``blocks`` lists index sets that do not couple in the stiffness matrix.
    """

    regime: RegimeSpec
    disc: CellDiscretization
    space: str
    labels: list
    images: np.ndarray
    blocks: list
    grid: tuple
    counts: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.images.shape[0]

    def mask(self, field_name: str | None = None, oscillatory: bool | None = None) -> np.ndarray:
        keep = np.ones(self.size, dtype=bool)
        for a, lab in enumerate(self.labels):
            if field_name is not None and lab[0] != field_name:
                keep[a] = False
            if oscillatory is not None and (lab[2] != (0, 0)) != oscillatory:
                keep[a] = False
        return keep


def _check_grid(disc: CellDiscretization, grid: tuple):
    nt, m1, m2 = grid
    need = 2 * disc.N + 1
    if m1 < need or m2 < need:
        raise BadSpec(f"y grid {m1}x{m2} cannot resolve Fourier order N={disc.N} (need >= {need})")
    if nt < max(2, disc.P + 1):
        raise BadSpec(f"{nt} t-nodes cannot integrate Legendre order P={disc.P} (need >= {max(2, disc.P + 1)})")


def build_basis(regime: RegimeSpec, disc: CellDiscretization, grid: tuple | None = None,
                t_nodes: np.ndarray | None = None, eliminate_g: bool = True) -> RelaxationBasis:
    """Tabulate the strain images of the regime's relaxation space.

    ``grid`` and ``t_nodes`` default to the discretisation's default grid
    with Gauss nodes.  For the ``zero-*`` regimes ``eliminate_g`` chooses
    between the tangential space (the pointwise normal block is eliminated
    through ``Q_2``) and the full space with one nodal ``g`` field per
    quadrature point and free component.
    """
    if regime.kind == "convex":
        raise UnsupportedRegime("the convex regime is solved by shellhomog.convex_shell.convex_effective_form")
    if regime.kind == "zero-critical" and regime.weingarten_at_x is None:
        raise BadSpec("zero-critical regime needs the Weingarten map at x")
    grid = tuple(int(g) for g in (grid or disc.default_grid()))
    _check_grid(disc, grid)
    nt, m1, m2 = grid
    if t_nodes is None:
        from .material import gauss_nodes
        t_nodes = gauss_nodes(nt)[0]
    t_nodes = np.asarray(t_nodes, dtype=float)
    ny = m1 * m2
    nq = nt * ny
    N, P = disc.N, disc.P
    labels: list = []
    imgs: list = []

    if regime.kind == "gamma":
        inv_g = 1.0 / regime.gamma
        flab, fval, fgrad, _ = fourier_tables(N, m1, m2, order=1, include_constant=True)
        # constant mode used unscaled
        L, dL = legendre_tables(P, t_nodes)
        fval = fval.reshape(len(flab), ny)
        fgrad = fgrad.reshape(len(flab), 2, ny)
        for c in range(3):
            for m, (k, kind) in enumerate(flab):
                for n in range(P + 1):
                    if kind == "const" and n == 0:
                        continue
                    cols = np.zeros((nt, ny, 3))
                    cols[..., 0] = L[n][:, None] * fgrad[m, 0][None, :]
                    cols[..., 1] = L[n][:, None] * fgrad[m, 1][None, :]
                    cols[..., 2] = inv_g * dL[n][:, None] * fval[m][None, :]
                    imgs.append(_row_to_voigt(c, cols).reshape(nq, 6))
                    labels.append(("phi", c, k, kind, n, None))
        blocks = [np.arange(len(imgs))]
        space = "full"
    elif regime.kind == "infinity":
        flab, _, fgrad, _ = fourier_tables(N, m1, m2, order=1)
        fgrad = fgrad.reshape(len(flab), 2, ny)
        local, llab = [], []
        for alpha in range(2):
            for m, (k, kind) in enumerate(flab):
                cols = np.zeros((ny, 3))
                cols[:, :2] = fgrad[m].T
                local.append(_row_to_voigt(alpha, cols))
                llab.append(("zeta", alpha, k, kind))
        for m, (k, kind) in enumerate(flab):
            v = np.zeros((ny, 6))
            v[:, 4] = SQ2 * fgrad[m, 0]
            v[:, 3] = SQ2 * fgrad[m, 1]
            local.append(v)
            llab.append(("psi", 0, k, kind))
        for a, idx in enumerate((4, 3, 2)):
            v = np.zeros((ny, 6))
            v[:, idx] = SQ2 if idx != 2 else 1.0
            local.append(v)
            llab.append(("c", a, (0, 0), "const"))
        local = np.array(local)
        blocks = []
        for j in range(nt):
            start = len(imgs)
            for lv, lab in zip(local, llab):
                img = np.zeros((nt, ny, 6))
                img[j] = lv
                imgs.append(img.reshape(nq, 6))
                labels.append(lab + (None, j))
            blocks.append(np.arange(start, len(imgs)))
        space = "full"
    else:
        flab1, _, fgrad1, _ = fourier_tables(N, m1, m2, order=1)
        flab2, fval2, _, fhess2 = fourier_tables(N, m1, m2, order=2)
        fgrad1 = np.moveaxis(fgrad1.reshape(len(flab1), 2, ny), 1, -1)
        fval2 = fval2.reshape(len(flab2), ny)
        fhess2 = np.moveaxis(fhess2.reshape(len(flab2), 2, 2, ny), -1, 1)
        tang = []
        for alpha in range(2):
            for m, (k, kind) in enumerate(flab1):
                v = _sym_grad_tangential(alpha, fgrad1[m])
                tang.append(np.broadcast_to(v, (nt, ny, 3)))
                labels.append(("zeta", alpha, k, kind, None, None))
        A2 = None
        if regime.kind == "zero-critical":
            A2 = tangential_to_voigt2(regime.weingarten_at_x.coeffs)
        for m, (k, kind) in enumerate(flab2):
            v = -t_nodes[:, None, None] * _hess_tangential(fhess2[m])[None]
            if A2 is not None:
                v = v + (fval2[m][:, None] * A2[None, :])[None] / regime.gamma
            tang.append(np.broadcast_to(v, (nt, ny, 3)))
            labels.append(("varphi", 0, k, kind, None, None))
        tang = np.array(tang).reshape(-1, nq, 3)
        if eliminate_g:
            imgs = list(tang)
            space = "tangential"
        else:
            imgs = list(tang @ embed_tangential().T)
            for q in range(nq):
                for a in FREE:
                    v = np.zeros((nq, 6))
                    v[q, a] = 1.0
                    imgs.append(v)
                    labels.append(("g", int(a), None, "nodal", None, q))
            space = "full"
        blocks = [np.arange(len(imgs))]

    images = np.array(imgs)
    counts = {}
    for lab in labels:
        counts[lab[0]] = counts.get(lab[0], 0) + 1
    return RelaxationBasis(regime, disc, space, labels, images, blocks, grid, counts)


# solving ------------------------------------------------------------------------

@dataclass
class EffectiveForm:
    """Homogenised quadratic form and the data needed to evaluate correctors.

    ``corrector_operator`` maps a load 6-vector to basis coefficients (the
    discrete Pi operator).
    """

    qhat: np.ndarray
    regime: RegimeSpec
    disc: CellDiscretization
    basis: RelaxationBasis
    corrector_operator: np.ndarray
    cond_estimate: float
    jitter: float
    density: object
    meta: dict = field(default_factory=dict)

    def value(self, q1, q2) -> float:
        z = load_vector(q1, q2)
        return float(z @ self.qhat @ z)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.label,
            "qhat": self.qhat.tolist(),
            "N": self.disc.N,
            "P": self.disc.P,
            "solver": self.disc.solver,
            "basis_size": self.basis.size,
            "basis_counts": dict(sorted(self.basis.counts.items())),
            "cond_estimate": self.cond_estimate,
            "jitter": self.jitter,
            "grid": list(self.basis.grid),
            **self.meta,
        }


@dataclass
class MinimizerRecord:
    coefficients: np.ndarray
    strain: np.ndarray  # (Nt, M1, M2, 6) optimal corrector strain
    objective: float
    load: np.ndarray


def load_vector(q1, q2) -> np.ndarray:
    """Stack two tangential forms (orthonormal frame) into a load 6-vector."""
    parts = []
    for q in (q1, q2):
        if isinstance(q, TangentForm):
            if q.frame_tag != "orthonormal":
                raise BadSpec("loads must be given in the orthonormal frame")
            q = q.coeffs
        q = np.asarray(q, dtype=float)
        parts.append(q if q.shape == (3,) else tangential_to_voigt2(q))
    return np.concatenate(parts)


def _load_map(t: np.ndarray, d: int) -> np.ndarray:
    """``(Nq, d, 6)`` map from load vectors to the macroscopic strain ``q1 + t q2``."""
    base = embed_tangential() if d == 6 else np.eye(3)
    return np.concatenate([np.broadcast_to(base, (t.size, d, 3)), t[:, None, None] * base[None]], axis=2)


def _factor(K: np.ndarray):
    try:
        return scipy.linalg.cho_factor(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.trace(K))
        log.warning("stiffness not positive definite; retrying with jitter %.3e", jitter)
        try:
            return scipy.linalg.cho_factor(K + jitter * np.eye(K.shape[0]), lower=True), jitter
        except np.linalg.LinAlgError:
            raise SolveFailure("Cholesky factorisation failed even with jitter") from None


def _cg_solve(K: np.ndarray, F: np.ndarray, disc: CellDiscretization) -> np.ndarray:
    X = np.zeros_like(F)
    for j in range(F.shape[1]):
        rhs = F[:, j]
        if not np.any(rhs):
            continue
        x, info = scipy.sparse.linalg.cg(K, rhs, rtol=disc.cg_tol, atol=0.0, maxiter=disc.cg_maxit)
        if info != 0:
            raise SolveFailure(f"conjugate gradients did not converge (info={info})")
        X[:, j] = x
    return X


def solve_galerkin(images, qmats, weights, t_points, blocks, disc: CellDiscretization):
    """Minimise ``sum_q w_q (L z + U c)^T Q (L z + U c)`` over coefficients ``c``.

    Returns ``(qhat, Pi, cond, jitter, K)`` with ``c = Pi @ z`` the minimiser
    for the load vector ``z``.
    """
    nb, nq, d = images.shape
    L = _load_map(t_points, d)
    QL = np.einsum("qij,qjk->qik", qmats, L)
    A0 = np.einsum("qji,qjk,q->ik", L, QL, weights)
    Pi = np.zeros((nb, 6))
    qhat = A0.copy()
    cond, jitter = 1.0, 0.0
    K_full = np.zeros((nb, nb)) if nb else np.zeros((0, 0))
    for blk in blocks:
        if blk.size == 0:
            continue
        U = images[blk]
        wQU = np.einsum("qij,bqj->bqi", qmats, U) * weights[None, :, None]
        K = U.reshape(blk.size, -1) @ wQU.reshape(blk.size, -1).T
        K = 0.5 * (K + K.T)
        F = np.einsum("bqi,qik->bk", wQU, L)
        K_full[np.ix_(blk, blk)] = K
        dg = np.diag(K)
        if np.any(dg <= 0):
            raise SolveFailure("basis function with vanishing strain energy")
        D = 1.0 / np.sqrt(dg)
        Ks = K * D[:, None] * D[None, :]
        Fs = F * D[:, None]
        ev = np.linalg.eigvalsh(Ks)
        cond = max(cond, float(ev[-1] / max(ev[0], np.finfo(float).tiny)))
        if disc.solver == "cholesky":
            fac, jit = _factor(Ks)
            jitter = max(jitter, jit)
            X = scipy.linalg.cho_solve(fac, Fs)
        else:
            X = _cg_solve(Ks, Fs, disc)
        Pi[blk] = -D[:, None] * X
        qhat -= Fs.T @ X
    qhat = 0.5 * (qhat + qhat.T)
    return qhat, Pi, cond, jitter, K_full


def assemble_stiffness(density, basis: RelaxationBasis) -> np.ndarray:
    """Full Galerkin stiffness matrix (for inspection and tests)."""
    qm, w = _integrand(density, basis.space)
    U = basis.images
    wQU = np.einsum("qij,bqj->bqi", qm, U) * w[None, :, None]
    return U.reshape(U.shape[0], -1) @ wQU.reshape(U.shape[0], -1).T


def _integrand(density, space: str):
    if space == "tangential":
        if isinstance(density, QuadraticDensity):
            density = reduce_q2(density)
        return density.flat()
    if not isinstance(density, QuadraticDensity):
        raise BadSpec("the full relaxation space needs the unreduced density")
    return density.flat()


def _solve(density, regime, disc, basis) -> EffectiveForm:
    qm, w = _integrand(density, basis.space)
    t_pts = density.t_of_points()
    qhat, Pi, cond, jitter, _ = solve_galerkin(basis.images, qm, w, t_pts, basis.blocks, disc)
    log.info("%s N=%d P=%d basis=%d cond=%.3e", regime.label, disc.N, disc.P, basis.size, cond)
    return EffectiveForm(qhat, regime, disc, basis, Pi, cond, jitter, density,
                         meta={"space": basis.space})


def effective_form(Q: QuadraticDensity, regime: RegimeSpec, disc: CellDiscretization,
                   eliminate_g: bool = True) -> EffectiveForm:
    """Effective form over the regime's relaxation space, on ``Q``'s sample grid."""
    if regime.kind == "convex":
        from .convex_shell import convex_effective_form
        return convex_effective_form(reduce_q2(Q), disc, weingarten=regime.weingarten_at_x,
                                     eliminate_g=eliminate_g)
    if regime.kind in ("zero-super", "zero-critical") and eliminate_g:
        return reduced_zero_form(reduce_q2(Q), regime, disc)
    basis = build_basis(regime, disc, grid=Q.grid, t_nodes=Q.t_nodes, eliminate_g=eliminate_g)
    return _solve(Q, regime, disc, basis)


def reduced_zero_form(Q2: ReducedDensity, regime: RegimeSpec, disc: CellDiscretization) -> EffectiveForm:
    """Effective form over the tangential spaces with the ``Q_2`` integrand."""
    if regime.kind not in ("zero-super", "zero-critical"):
        raise UnsupportedRegime(f"reduced formula applies to the zero regimes, not {regime.kind}")
    basis = build_basis(regime, disc, grid=Q2.grid, t_nodes=Q2.t_nodes, eliminate_g=True)
    return _solve(Q2, regime, disc, basis)


def corrector(form: EffectiveForm, q1, q2) -> MinimizerRecord:
    """Optimal corrector for the load ``(q1, q2)`` (orthonormal frame)."""
    z = load_vector(q1, q2)
    c = form.corrector_operator @ z
    basis = form.basis
    U = np.tensordot(c, basis.images, axes=1)
    dens = form.density
    t = dens.t_of_points()
    if basis.space == "tangential":
        red = dens if isinstance(dens, ReducedDensity) else reduce_q2(dens)
        p = z[None, :3] + t[:, None] * z[None, 3:]
        coupling = red.schur_data["coupling"].reshape(-1, 3, 3)
        U6 = U @ embed_tangential().T
        U6[:, FREE] = -np.einsum("qij,qj->qi", coupling, p + U)
    else:
        U6 = U
    E = (z[None, :3] + t[:, None] * z[None, 3:]) @ embed_tangential().T + U6
    src = dens.source if isinstance(dens, ReducedDensity) else dens
    if src is not None:
        qm, w = src.flat()
        obj = float(np.einsum("q,qi,qij,qj->", w, E, qm, E))
    else:
        qm, w = dens.flat()
        Et = E[:, [0, 1, 5]]
        obj = float(np.einsum("q,qi,qij,qj->", w, Et, qm, Et))
    nt, m1, m2 = basis.grid
    return MinimizerRecord(c, U6.reshape(nt, m1, m2, 6), obj, z)


def optimality_residual(form: EffectiveForm, record: MinimizerRecord) -> float:
    """Largest Q-weighted inner product of the optimal strain with a basis image."""
    basis = form.basis
    qm, w = _integrand(form.density, basis.space)
    t = form.density.t_of_points()
    d = basis.images.shape[2]
    L = _load_map(t, d)
    E = np.einsum("qik,k->qi", L, record.load) + np.tensordot(record.coefficients, basis.images, axes=1)
    g = np.einsum("bqi,qij,qj,q->b", basis.images, qm, E, w)
    return float(np.max(np.abs(g))) if g.size else 0.0


def q_infinity_per_t(Q: QuadraticDensity, disc: CellDiscretization, t: float) -> np.ndarray:
    """Per-thickness effective form at a single ``t`` as a 6x6 matrix in ``(q1, q2)``."""
    sl = Q.slice_at(t)
    m1, m2 = sl.shape[:2]
    single = QuadraticDensity(np.array([t]), np.array([1.0]), sl[None], Q.alpha, Q.beta)
    basis = build_basis(RegimeSpec.infinity(), CellDiscretization(disc.N, 1, disc.solver, disc.cg_tol, disc.cg_maxit),
                        grid=(2, m1, m2), t_nodes=np.array([t, t]))
    # one node suffices: keep only the first block
    keep = basis.blocks[0]
    ny = m1 * m2
    images = basis.images[keep][:, :ny]
    qm, w = single.flat()
    qhat, *_ = solve_galerkin(images, qm, w, single.t_of_points(), [np.arange(keep.size)], disc)
    return qhat


def lower_band(Q) -> float:
    return Q.alpha / 24.0


def relative_gap(A: np.ndarray, B: np.ndarray, floor: float) -> float:
    """Largest entrywise ``|A - B| / max(|B|, floor)``."""
    return float(np.max(np.abs(A - B) / np.maximum(np.abs(B), floor)))


def psd_monotone(mats: list, tol: float = 1e-10) -> bool:
    """True if the sequence is monotone (either direction) in the PSD order."""
    diffs = [np.linalg.eigvalsh(b - a) for a, b in zip(mats, mats[1:])]
    inc = all(d[0] >= -tol for d in diffs)
    dec = all(d[-1] <= tol for d in diffs)
    return inc or dec


def gamma_limit_study(Q: QuadraticDensity, disc: CellDiscretization, gammas, tol: float = 0.02) -> dict:
    """Effective forms over a gamma sweep together with the two limit anchors."""
    gammas = [float(g) for g in gammas]
    if any(g <= 0 for g in gammas):
        raise BadSpec("gammas must be positive")
    if gammas != sorted(gammas):
        raise BadSpec("gammas must be sorted ascending")
    rows = []
    for g in gammas:
        f = effective_form(Q, RegimeSpec.finite_gamma(g), disc)
        rows.append({"gamma": g, "qhat": f.qhat, "cond_estimate": f.cond_estimate})
    inf = effective_form(Q, RegimeSpec.infinity(), disc)
    zero = effective_form(Q, RegimeSpec.zero_super(), disc)
    band = lower_band(Q)
    out = {
        "rows": rows,
        "anchors": {"infinity": inf.qhat, "zero": zero.qhat,
                    "infinity_cond": inf.cond_estimate, "zero_cond": zero.cond_estimate},
        "band": band,
        "tolerance": tol,
    }
    if rows:
        out["gap_high"] = relative_gap(rows[-1]["qhat"], inf.qhat, band)
        out["gap_low"] = relative_gap(rows[0]["qhat"], zero.qhat, band)
        out["within_tolerance"] = out["gap_high"] <= tol and out["gap_low"] <= tol
        out["psd_monotone"] = psd_monotone([r["qhat"] for r in rows])
    return out
