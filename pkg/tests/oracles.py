"""Independent reference computations and frozen values used by the tests.

The brute-force cell oracle rebuilds every strain field from the basis
labels alone (complex exponentials, ``numpy.polynomial.Legendre``, explicit
3x3 matrices) and minimises the energy with a least-squares solve, so it
shares no tabulation or factorisation code with the Galerkin solver.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg
from numpy.polynomial import Legendre

from shellhomog.material import MicrostructureSpec, isotropic_qmat, sym_to_voigt

# shipped test materials
HOMOGENEOUS = MicrostructureSpec("homogeneous", ({"lambda": 1.0, "mu": 1.0},))
LAMINATE = MicrostructureSpec("laminate", ((1.0, 1.0), (10.0, 10.0)), direction=1, theta=0.5)
CHECKERBOARD = MicrostructureSpec("checkerboard", ((1.0, 2.0), (3.0, 1.0)))
COSINE = MicrostructureSpec("cosine", ((1.0, 1.0), (4.0, 2.0)), direction=2)
GRADED = MicrostructureSpec("laminate", ((1.0, 1.0), (5.0, 3.0)), direction=2, theta=0.3,
                            t_dependence="affine", t_slope=0.8)

SHIPPED = {"homogeneous": HOMOGENEOUS, "laminate": LAMINATE, "checkerboard": CHECKERBOARD,
           "cosine": COSINE, "graded": GRADED}

# closed forms for lambda = mu = 1
Q2_UNIAXIAL = 8.0 / 3.0
Q2_IDENTITY = 20.0 / 3.0
BENDING_UNIAXIAL = Q2_UNIAXIAL / 12.0

# frozen from the brute-force QP study (laminate A=(1,1), B=(10,10), theta=1/2,
# direction 1, grid (6, 10, 10), N = P = 4); see test_cell_solver
LAMINATE_INFINITY_DIAG = (5.3763440860215, 14.0860215053764, 3.7364130434782,
                          0.4480286738351, 1.173835125448, 0.3113677536232)
LAMINATE_ZERO_DIAG = (4.9818840579711, 14.0613677536232, 3.7364130434782,
                      0.4151570048309, 1.1717806461353, 0.9166666666667)
# lower coercivity band: smallest qhat eigenvalue >= alpha / 24
BAND_FACTOR = 1.0 / 24.0


def isotropic_q2(lam: float, mu: float) -> np.ndarray:
    """Plane-stress matrix of an isotropic phase by hand: ``2 mu I + lam' m m^T``."""
    lp = 2 * mu * lam / (lam + 2 * mu)
    m = np.array([1.0, 1.0, 0.0])
    return 2 * mu * np.eye(3) + lp * np.outer(m, m)


def sym3(H):
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def mode_function(k, kind, Y1, Y2):
    """Value and gradient of ``cos`` or ``sin`` of ``2 pi k.y`` (unscaled)."""
    if kind == "const":
        return np.ones_like(Y1), np.zeros((2,) + Y1.shape), np.zeros((2, 2) + Y1.shape)
    kv = 2 * np.pi * np.asarray(k, dtype=float)
    e = np.exp(1j * (kv[0] * Y1 + kv[1] * Y2))
    f = e.real if kind == "cos" else e.imag
    ie = 1j * e
    g = np.stack([(kv[0] * ie), (kv[1] * ie)])
    g = g.real if kind == "cos" else g.imag
    hh = -np.einsum("i,j,...->ij...", kv, kv, e)
    hh = hh.real if kind == "cos" else hh.imag
    return f, g, hh


def oracle_strains(basis, t_nodes, weingarten=None, gamma=None):
    """Strain fields ``(nb, nq, 6)`` rebuilt from ``basis.labels`` only."""
    nt, m1, m2 = basis.grid
    y1 = (np.arange(m1) + 0.5) / m1
    y2 = (np.arange(m2) + 0.5) / m2
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    ny = m1 * m2
    out = []
    for lab in basis.labels:
        field, comp, k, kind, n, node = lab
        S = np.zeros((nt, m1, m2, 3, 3))
        if field == "g":
            i, j = {2: (2, 2), 3: (1, 2), 4: (0, 2)}[comp]
            Sf = np.zeros((nt * ny, 3, 3))
            Sf[node, i, j] = Sf[node, j, i] = 1.0
            out.append(sym_to_voigt(Sf))
            continue
        f, g, hh = mode_function(k, kind, Y1, Y2)
        if field == "phi":
            P = Legendre.basis(n, domain=[-0.5, 0.5])
            L, dL = P(t_nodes), P.deriv()(t_nodes)
            H = np.zeros_like(S)
            H[..., comp, 0] = L[:, None, None] * g[0]
            H[..., comp, 1] = L[:, None, None] * g[1]
            H[..., comp, 2] = dL[:, None, None] * f / gamma
            S = sym3(H)
        elif field == "zeta":
            H = np.zeros((m1, m2, 3, 3))
            H[..., comp, 0], H[..., comp, 1] = g[0], g[1]
            blk = sym3(H)
            if node is None:
                S[:] = blk
            else:
                S[node] = blk
        elif field == "psi":
            blk = np.zeros((m1, m2, 3, 3))
            blk[..., 0, 2] = blk[..., 2, 0] = g[0]
            blk[..., 1, 2] = blk[..., 2, 1] = g[1]
            S[node] = blk
        elif field == "c":
            blk = np.zeros((3, 3))
            if comp == 2:
                blk[2, 2] = 1.0
            else:
                blk[comp, 2] = blk[2, comp] = 1.0
            S[node] = blk
        elif field == "varphi":
            hess = np.moveaxis(hh, (0, 1), (-2, -1))
            S[..., :2, :2] = -t_nodes[:, None, None, None, None] * hess[None]
            if weingarten is not None:
                S[..., :2, :2] += (f[..., None, None] * weingarten)[None] / gamma
        elif field == "B":
            E = np.zeros((3, 3))
            i, j = [(0, 0), (1, 1), (0, 1)][comp]
            E[i, j] = E[j, i] = 1.0
            S[:] = f[..., None, None] * E
        else:
            raise ValueError(field)
        out.append(sym_to_voigt(S.reshape(-1, 3, 3)))
    return np.array(out)


def macro_strain(z, t_points):
    """``(nq, 6)`` Voigt strain of ``q1 + t q2`` for a load 6-vector ``z``."""
    def sym2(v):
        return np.array([[v[0], v[2] / np.sqrt(2)], [v[2] / np.sqrt(2), v[1]]])
    M = np.zeros((t_points.size, 3, 3))
    M[:, :2, :2] = sym2(z[:3])[None] + t_points[:, None, None] * sym2(z[3:])[None]
    return sym_to_voigt(M)


def brute_force_qhat(strains, qmats, weights, t_points):
    """Minimise ``sum w E.QE`` with ``E = macro + sum c_a S_a`` with one SVD projector, polarised."""
    R = np.array([scipy.linalg.cholesky(w * Qm, lower=False) for Qm, w in zip(qmats, weights)])
    A = np.einsum("qij,bqj->qib", R, strains).reshape(-1, strains.shape[0])

    if A.shape[1]:
        U, sv, _ = scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesvd")
        U = U[:, sv > 1e-13 * sv[0]]
    else:
        U = np.zeros((A.shape[0], 0))

    def value(z):
        b = np.einsum("qij,qj->qi", R, macro_strain(z, t_points)).ravel()
        r = b - U @ (U.T @ b)
        return float(r @ r)

    E = np.eye(6)
    diag = [value(E[i]) for i in range(6)]
    Qh = np.diag(diag)
    for i in range(6):
        for j in range(i + 1, 6):
            Qh[i, j] = Qh[j, i] = 0.5 * (value(E[i] + E[j]) - diag[i] - diag[j])
    return Qh


def dense_quadratic_value(qmat, G):
    """``Q(G)`` from a 6x6 Voigt matrix and a 3x3 matrix."""
    v = sym_to_voigt(sym3(np.asarray(G, dtype=float)))
    return float(v @ qmat @ v)


def brute_plane_stress(qmat, q2x2):
    """min over the free entries (33, 23, 13) of ``Q``, by assembling the 3-variable quadratic."""
    def energy(f):
        G = np.zeros((3, 3))
        G[:2, :2] = q2x2
        G[2, 2] = f[0]
        G[1, 2] = G[2, 1] = f[1]
        G[0, 2] = G[2, 0] = f[2]
        return dense_quadratic_value(qmat, G)
    e0 = energy(np.zeros(3))
    E = np.eye(3)
    grad = np.array([(energy(E[i]) - energy(-E[i])) / 2 for i in range(3)])
    H = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            H[i, j] = (energy(E[i] + E[j]) - energy(E[i]) - energy(E[j]) + e0) / 2 if i != j else \
                (energy(E[i]) + energy(-E[i]) - 2 * e0) / 2
    f = np.linalg.solve(H, -grad / 2)
    return energy(f)


def random_spd_voigt(rng, cond=20.0):
    Qm, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    ev = np.exp(rng.uniform(0, np.log(cond), size=6))
    return (Qm * ev) @ Qm.T


def homogeneous_reference() -> np.ndarray:
    """Expected effective matrix of isotropic lambda = mu = 1 in every regime."""
    q2 = isotropic_q2(1.0, 1.0)
    out = np.zeros((6, 6))
    out[:3, :3] = q2
    out[3:, 3:] = q2 / 12.0
    return out


def unit_isotropic():
    return isotropic_qmat(1.0, 1.0)
