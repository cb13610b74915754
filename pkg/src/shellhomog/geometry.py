"""Surface charts, moving frames and first-order shell operators.

Sign convention (used everywhere in the package): the unit normal is
``n = (tau_1 x tau_2) / |tau_1 x tau_2|`` and the Weingarten map is
``A = grad_tan n`` with coordinates ``A_ij = (A tau_j) . tau_i``.  With this
choice ``A_ij = -n . d_i d_j psi`` is the *negated* second fundamental form,
so the Gauss formula reads ``d_i d_j psi = Gamma^k_ij tau_k - A_ij n`` and an
outward-oriented unit sphere has ``A = +g``.

Displacements are functions of the chart coordinate ``xi``; derivatives
``dV[:, i]`` and ``d2V[:, i, j]`` are taken with respect to ``xi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateChart, OutOfDomain, SqrtDomain, TubularViolation

FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-4
TOL_ANALYTIC = 1e-8
TOL_FD = 1e-5

Vec = Callable[[np.ndarray], np.ndarray]


def hat(b) -> np.ndarray:
    """Skew matrix with ``hat(b) @ v == cross(b, v)``."""
    b1, b2, b3 = np.asarray(b, dtype=float)
    return np.array([[0.0, -b3, b2], [b3, 0.0, -b1], [-b2, b1, 0.0]])


def _fd_first(f: Vec, xi: np.ndarray, step: float) -> np.ndarray:
    cols = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = step
        cols.append((np.asarray(f(xi + e)) - np.asarray(f(xi - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def _fd_second(f: Vec, xi: np.ndarray, step: float) -> np.ndarray:
    f0 = np.asarray(f(xi), dtype=float)
    out = np.zeros(f0.shape + (2, 2))
    eye = np.eye(2) * step
    for i in range(2):
        for j in range(i, 2):
            if i == j:
                val = (np.asarray(f(xi + eye[i])) - 2 * f0 + np.asarray(f(xi - eye[i]))) / step**2
            else:
                val = (
                    np.asarray(f(xi + eye[i] + eye[j]))
                    - np.asarray(f(xi + eye[i] - eye[j]))
                    - np.asarray(f(xi - eye[i] + eye[j]))
                    + np.asarray(f(xi - eye[i] - eye[j]))
                ) / (4 * step**2)
            out[..., i, j] = val
            out[..., j, i] = val
    return out


class _Differentiable:
    """Shared evaluation logic for charts and displacement fields."""

    def _derivs(self, f, df, d2f, xi):
        x = np.asarray(f(xi), dtype=float)
        d1 = np.asarray(df(xi), dtype=float) if df is not None else _fd_first(f, xi, self.fd_step_first)
        if d2f is not None:
            d2 = np.asarray(d2f(xi), dtype=float)
        elif df is not None:
            # second derivatives from the analytic first ones
            d2 = _fd_first(df, xi, self.fd_step_first * 10)
            d2 = 0.5 * (d2 + np.swapaxes(d2, -1, -2))
        else:
            d2 = _fd_second(f, xi, self.fd_step_second)
        return x, d1, d2

    @property
    def derivative_mode(self) -> str:
        if self._has_analytic():
            return "analytic"
        return f"central-finite-difference({self.fd_step_first:g})"


@dataclass(frozen=True)
class Chart(_Differentiable):
    """Embedding ``psi : omega -> R^3`` of a rectangle ``omega``.

    ``d_psi`` returns the 3x2 matrix ``[tau_1 tau_2]`` and ``d2_psi`` the
    3x2x2 array of second derivatives.  Missing derivatives are replaced by
    central differences.
    """

    psi: Vec
    d_psi: Optional[Vec] = None
    d2_psi: Optional[Vec] = None
    domain: tuple = ((-np.inf, np.inf), (-np.inf, np.inf))
    name: str = "custom"
    eta_min: float = 1e-10
    params: dict = field(default_factory=dict)
    fd_step_first: float = FD_STEP_FIRST
    fd_step_second: float = FD_STEP_SECOND

    def _has_analytic(self) -> bool:
        return self.d_psi is not None and self.d2_psi is not None

    @property
    def tolerance(self) -> float:
        return TOL_ANALYTIC if self._has_analytic() else TOL_FD

    def contains(self, xi) -> bool:
        (a1, b1), (a2, b2) = self.domain
        return bool(a1 <= xi[0] <= b1 and a2 <= xi[1] <= b2)

    def evaluate(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (2,) or not np.all(np.isfinite(xi)):
            raise OutOfDomain(f"chart coordinate must be a finite 2-vector, got {xi!r}")
        if not self.contains(xi):
            raise OutOfDomain(f"xi={xi.tolist()} outside chart domain {self.domain}")
        return self._derivs(self.psi, self.d_psi, self.d2_psi, xi)

    def tube(self, xi, t: float) -> np.ndarray:
        """Point ``psi(xi) + t n(xi)`` of the tubular neighbourhood."""
        p = frame_at(self, xi)
        return p.x + t * p.n


@dataclass(frozen=True)
class DisplacementField(_Differentiable):
    """Displacement ``V`` along the chart, as a function of ``xi``."""

    V: Vec
    dV: Optional[Vec] = None
    d2V: Optional[Vec] = None
    name: str = "custom"
    fd_step_first: float = FD_STEP_FIRST
    fd_step_second: float = FD_STEP_SECOND

    def _has_analytic(self) -> bool:
        return self.dV is not None and self.d2V is not None

    def evaluate(self, xi):
        return self._derivs(self.V, self.dV, self.d2V, np.asarray(xi, dtype=float))


@dataclass(frozen=True)
class SurfacePoint:
    xi: np.ndarray
    x: np.ndarray
    tau: np.ndarray  # 3x2, columns tau_1, tau_2
    tau_dual: np.ndarray  # 3x2, columns tau^1, tau^2
    n: np.ndarray
    metric: np.ndarray
    weingarten: np.ndarray  # covariant A_ij
    christoffel: np.ndarray  # [k, i, j]
    ortho_frame: np.ndarray  # 3x2, Gram-Schmidt on (tau_1, tau_2)
    d2psi: np.ndarray
    dn: np.ndarray  # 3x2, columns d_i n

    @property
    def projector(self) -> np.ndarray:
        """Tangential projection ``T_S = I - n (x) n``."""
        return np.eye(3) - np.outer(self.n, self.n)

    @property
    def gs_matrix(self) -> np.ndarray:
        """Upper-triangular ``C`` with ``tau = ortho_frame @ C``."""
        return self.ortho_frame.T @ self.tau

    @property
    def weingarten_3d(self) -> np.ndarray:
        """Weingarten map as a 3x3 matrix, extended by ``A n = 0``."""
        return self.tau_dual @ self.weingarten @ self.tau_dual.T

    @property
    def weingarten_ortho(self) -> np.ndarray:
        return self.ortho_frame.T @ self.weingarten_3d @ self.ortho_frame

    @property
    def area_element(self) -> float:
        return float(np.sqrt(np.linalg.det(self.metric)))

    def embed(self, form: "TangentForm") -> np.ndarray:
        """``B(T_S, T_S)`` as a 3x3 matrix."""
        if form.frame_tag == "covariant":
            return self.tau_dual @ form.coeffs @ self.tau_dual.T
        return self.ortho_frame @ form.coeffs @ self.ortho_frame.T


@dataclass(frozen=True)
class TangentForm:
    """Symmetric bilinear form on a tangent plane.

    ``coeffs[i, j] = B(f_i, f_j)`` where ``f`` is the covariant frame
    ``(tau_1, tau_2)`` or the orthonormal Gram-Schmidt frame.
    """

    coeffs: np.ndarray
    frame_tag: str = "covariant"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (2, 2):
            raise ValueError(f"tangent form needs 2x2 coefficients, got shape {c.shape}")
        if self.frame_tag not in ("covariant", "orthonormal"):
            raise ValueError(f"unknown frame tag {self.frame_tag!r}")
        object.__setattr__(self, "coeffs", c)

    def to_orthonormal(self, point: SurfacePoint) -> "TangentForm":
        if self.frame_tag == "orthonormal":
            return self
        Ci = np.linalg.inv(point.gs_matrix)
        return TangentForm(Ci.T @ self.coeffs @ Ci, "orthonormal")

    def to_covariant(self, point: SurfacePoint) -> "TangentForm":
        if self.frame_tag == "covariant":
            return self
        C = point.gs_matrix
        return TangentForm(C.T @ self.coeffs @ C, "covariant")

    def __add__(self, other: "TangentForm") -> "TangentForm":
        if other.frame_tag != self.frame_tag:
            raise ValueError("cannot add forms given in different frames")
        return TangentForm(self.coeffs + other.coeffs, self.frame_tag)

    def __mul__(self, s: float) -> "TangentForm":
        return TangentForm(s * self.coeffs, self.frame_tag)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentForm":
        return TangentForm(-self.coeffs, self.frame_tag)


def frame_at(chart: Chart, xi) -> SurfacePoint:
    """Frame, metric, Weingarten map and Christoffel symbols at ``psi(xi)``."""
    x, T, D2 = chart.evaluate(xi)
    g = T.T @ T
    det = np.linalg.det(g)
    if not det >= chart.eta_min:
        raise DegenerateChart(f"det(metric)={det:.3e} < {chart.eta_min:g} at xi={list(map(float, xi))}")
    c = np.cross(T[:, 0], T[:, 1])
    n = c / np.linalg.norm(c)
    Td = T @ np.linalg.inv(g)
    A = -np.einsum("a,aij->ij", n, D2)
    A = 0.5 * (A + A.T)
    Gam = np.einsum("ak,aij->kij", Td, D2)
    dn = Td @ A
    e1 = T[:, 0] / np.linalg.norm(T[:, 0])
    v = T[:, 1] - (T[:, 1] @ e1) * e1
    e2 = v / np.linalg.norm(v)
    return SurfacePoint(
        xi=np.asarray(xi, dtype=float), x=x, tau=T, tau_dual=Td, n=n, metric=g,
        weingarten=A, christoffel=Gam, ortho_frame=np.stack([e1, e2], axis=1),
        d2psi=D2, dn=dn,
    )


@dataclass(frozen=True)
class _Kinematics:
    point: SurfacePoint
    V: np.ndarray
    D: np.ndarray
    D2: np.ndarray
    mu: np.ndarray
    dmu: np.ndarray

    @property
    def grad_tan(self) -> np.ndarray:
        return self.D @ self.point.tau_dual.T

    @property
    def grad_tan_mu(self) -> np.ndarray:
        return self.dmu @ self.point.tau_dual.T


def _kinematics(chart: Chart, xi, V: DisplacementField, point: SurfacePoint | None = None) -> _Kinematics:
    p = point if point is not None else frame_at(chart, xi)
    v, D, D2 = V.evaluate(p.xi)
    T, n, P = p.tau, p.n, p.projector
    c = np.cross(T[:, 0], T[:, 1])
    s = np.linalg.norm(c)
    m = np.cross(D[:, 0], T[:, 1]) + np.cross(T[:, 0], D[:, 1])
    mu = P @ m / s
    dmu = np.zeros((3, 2))
    for j in range(2):
        dt1, dt2 = p.d2psi[:, 0, j], p.d2psi[:, 1, j]
        dm = (np.cross(D2[:, 0, j], T[:, 1]) + np.cross(D[:, 0], dt2)
              + np.cross(dt1, D[:, 1]) + np.cross(T[:, 0], D2[:, 1, j]))
        dc = np.cross(dt1, T[:, 1]) + np.cross(T[:, 0], dt2)
        ds = n @ dc
        dP = -(np.outer(p.dn[:, j], n) + np.outer(n, p.dn[:, j]))
        dmu[:, j] = (dP @ m + P @ dm) / s - mu * ds / s
    return _Kinematics(p, v, D, D2, mu, dmu)


def q_form(chart: Chart, xi, V: DisplacementField, path: str = "direct") -> TangentForm:
    """First variation of the metric, ``q_V``, in the covariant frame.

    ``path="direct"`` evaluates ``sym(d_j psi . d_i V)``; ``path="christoffel"``
    uses the tangential components ``V_k = V . tau_k`` together with the
    Christoffel symbols and the normal component.
    """
    k = _kinematics(chart, xi, V)
    p = k.point
    if path == "direct":
        M = p.tau.T @ k.D
        return TangentForm(0.5 * (M + M.T))
    if path == "christoffel":
        Vbar = p.tau.T @ k.V
        # grad[i, j] = d_j (V . tau_i)
        grad = p.tau.T @ k.D + np.einsum("a,aij->ij", k.V, p.d2psi)
        sg = 0.5 * (grad + grad.T)
        gam = np.einsum("kij,k->ij", p.christoffel, Vbar)
        return TangentForm(sg - gam + (k.V @ p.n) * p.weingarten)
    raise ValueError(f"unknown path {path!r}")


def mu_field(chart: Chart, xi, V: DisplacementField) -> np.ndarray:
    """Tangent field ``mu_V`` with ``mu_V . tau = -n . d_tau V``."""
    return _kinematics(chart, xi, V).mu


def omega_field(chart: Chart, xi, V: DisplacementField) -> np.ndarray:
    k = _kinematics(chart, xi, V)
    return k.grad_tan + np.outer(k.mu, k.point.n)


def b_form(chart: Chart, xi, V: DisplacementField) -> TangentForm:
    """Linearised second fundamental form ``n . (d_ij V - Gamma^k_ij d_k V)``."""
    k = _kinematics(chart, xi, V)
    p = k.point
    hess = np.einsum("a,aij->ij", p.n, k.D2)
    corr = np.einsum("kij,k->ij", p.christoffel, p.n @ k.D)
    b = hess - corr
    return TangentForm(0.5 * (b + b.T))


def linearized_weingarten(chart: Chart, xi, V: DisplacementField) -> np.ndarray:
    """3x3 map ``grad_tan V A - grad_tan mu_V``."""
    k = _kinematics(chart, xi, V)
    return k.grad_tan @ k.point.weingarten_3d - k.grad_tan_mu


def b_frame(chart: Chart, xi, V: DisplacementField) -> np.ndarray:
    """Coefficients ``d_i psi . b_V d_j psi`` of the linearised Weingarten map.

    Agrees with :func:`b_form` for infinitesimal bendings only; the result
    is returned unsymmetrised.
    """
    p = frame_at(chart, xi)
    return p.tau.T @ linearized_weingarten(chart, xi, V) @ p.tau


def dv2_form(chart: Chart, xi, V: DisplacementField) -> TangentForm:
    _, D, _ = V.evaluate(np.asarray(xi, dtype=float))
    frame_at(chart, xi)
    return TangentForm(D.T @ D)


def _check_tube(p: SurfacePoint, t: float) -> np.ndarray:
    kappa = np.linalg.eigvalsh(p.weingarten_ortho)
    if abs(t) * np.max(np.abs(kappa)) >= 1.0:
        raise TubularViolation(f"|t|*|A| = {abs(t) * np.max(np.abs(kappa)):.3g} >= 1")
    M = np.eye(3) + t * p.weingarten_3d
    if np.min(np.abs(1.0 + t * kappa)) < 1e-12:
        raise TubularViolation("I + tA is singular")
    return np.linalg.inv(M)


def nabla_pi(chart: Chart, xi, t: float) -> np.ndarray:
    """Gradient of the nearest-point projection at ``psi(xi) + t n``."""
    p = frame_at(chart, xi)
    return p.projector @ _check_tube(p, t)


def ansatz_gradient(chart: Chart, xi, t: float, h: float, V: DisplacementField) -> np.ndarray:
    """Gradient of ``rho = V + t mu_V`` at ``psi(xi) + t n(xi)``.

    Evaluated through the closed form in ``Omega_V``, the 3x3 linearised
    Weingarten map and the correction ``(I + tA)^{-1} - (I - tA)``.
    """
    if abs(t) > h / 2 + 1e-15:
        raise TubularViolation(f"|t|={abs(t)} exceeds h/2={h / 2}")
    k = _kinematics(chart, xi, V)
    p = k.point
    A3 = p.weingarten_3d
    inv = _check_tube(p, t)
    Om = k.grad_tan + np.outer(k.mu, p.n)
    B3 = k.grad_tan @ A3 - k.grad_tan_mu
    corr = inv - (np.eye(3) - t * A3)
    return Om - t * B3 - t**2 * k.grad_tan_mu @ A3 + (k.grad_tan + t * k.grad_tan_mu) @ p.projector @ corr


def tube_jacobian(chart: Chart, xi, t: float) -> np.ndarray:
    """Jacobian of ``(xi, t) -> psi(xi) + t n(xi)``."""
    p = frame_at(chart, xi)
    return np.column_stack([p.tau[:, 0] + t * p.dn[:, 0], p.tau[:, 1] + t * p.dn[:, 1], p.n])


def ansatz_gradient_chain(chart: Chart, xi, t: float, V: DisplacementField) -> np.ndarray:
    """Chain-rule gradient of ``rho`` through the tube map (analytic)."""
    k = _kinematics(chart, xi, V)
    J = tube_jacobian(chart, xi, t)
    Drho = np.column_stack([k.D[:, 0] + t * k.dmu[:, 0], k.D[:, 1] + t * k.dmu[:, 1], k.mu])
    return Drho @ np.linalg.inv(J)


def ansatz_gradient_fd(chart: Chart, xi, t: float, V: DisplacementField, step: float) -> np.ndarray:
    """Central-difference gradient of ``rho`` composed with the tube map."""
    xi = np.asarray(xi, dtype=float)

    def lifted(z):
        p = frame_at(chart, z[:2])
        mu = _kinematics(chart, z[:2], V, point=p).mu
        v = V.evaluate(z[:2])[0]
        return p.x + z[2] * p.n, v + z[2] * mu

    z0 = np.array([xi[0], xi[1], t])
    J = np.zeros((3, 3))
    R = np.zeros((3, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        xp, rp = lifted(z0 + e)
        xm, rm = lifted(z0 - e)
        J[:, a] = (xp - xm) / (2 * step)
        R[:, a] = (rp - rm) / (2 * step)
    return R @ np.linalg.inv(J)


def sqrt_minus_identity(X: np.ndarray) -> np.ndarray:
    """``sqrt(I + X) - I`` for symmetric ``X``, without cancellation."""
    lam, Qv = np.linalg.eigh(0.5 * (X + X.T))
    if np.min(1.0 + lam) <= 0.0:
        raise SqrtDomain(f"I + X not positive definite (min eigenvalue {np.min(1.0 + lam):.3e})")
    f = lam / (np.sqrt(1.0 + lam) + 1.0)
    return (Qv * f) @ Qv.T


def strain_linearization_check(K, G, h: float):
    """Exact and linearised strain of ``I + hK + h^2 G``.

    Returns ``(E_exact, E_app, err)`` with ``E_exact = (sqrt(F^T F) - I)/h^2``,
    ``E_app = sym G - K^2 / 2`` and the Frobenius norm of their difference.
    """
    K = np.asarray(K, dtype=float)
    G = np.asarray(G, dtype=float)
    A = h * K + h**2 * G
    # F^T F - I expanded so that no O(1) identity is subtracted
    X = A + A.T + A.T @ A
    E_exact = sqrt_minus_identity(X) / h**2
    E_app = 0.5 * (G + G.T) - 0.5 * K @ K
    return E_exact, E_app, float(np.linalg.norm(E_exact - E_app))


def identity_residuals(chart: Chart, xi, V: DisplacementField, t: float | None = None,
                       bending: bool = False) -> dict[str, float]:
    """Residuals of the pointwise geometric identities at ``xi``.

    ``form2`` is included only when ``bending`` is set (the identity holds
    for infinitesimal bendings).  ``t`` selects the tube offset for the
    projection and ansatz checks; by default a quarter of the admissible
    radius is used.
    """
    k = _kinematics(chart, xi, V)
    p = k.point
    res: dict[str, float] = {}
    res["dual_frame"] = float(np.max(np.abs(p.tau_dual.T @ p.tau - np.eye(2))))
    res["normal"] = float(max(np.max(np.abs(p.n @ p.tau)), abs(np.linalg.norm(p.n) - 1.0)))
    gauss = p.d2psi - np.einsum("kij,ak->aij", p.christoffel, p.tau) + np.einsum("ij,a->aij", p.weingarten, p.n)
    res["gauss"] = float(np.max(np.abs(gauss)))
    res["weingarten_symmetry"] = float(np.max(np.abs(p.tau.T @ p.dn - (p.tau.T @ p.dn).T)))

    qd = q_form(chart, xi, V, "direct").coeffs
    qc = q_form(chart, xi, V, "christoffel").coeffs
    res["q_paths"] = float(np.max(np.abs(qd - qc)))

    P = p.projector
    Dtan = P @ k.D + np.stack([-(np.outer(p.dn[:, i], p.n) + np.outer(p.n, p.dn[:, i])) @ k.V for i in range(2)], axis=1)
    M = p.tau.T @ Dtan
    q_tan = 0.5 * (M + M.T)
    res["identity"] = float(np.max(np.abs(qd - q_tan - (k.V @ p.n) * p.weingarten)))

    Om = k.grad_tan + np.outer(k.mu, p.n)
    embed_q = p.tau_dual @ qd @ p.tau_dual.T
    res["irre"] = float(np.max(np.abs(0.5 * (Om + Om.T) - embed_q)))
    res["idp1"] = float(np.max(np.abs(k.mu @ p.tau + p.n @ k.D)))
    res["mu_tangent"] = float(abs(k.mu @ p.n))
    if bending:
        lhs = P @ Om @ Om @ P
        rhs = -p.tau_dual @ (k.D.T @ k.D) @ p.tau_dual.T
        res["form2"] = float(np.max(np.abs(lhs - rhs)))

    kappa = np.max(np.abs(np.linalg.eigvalsh(p.weingarten_ortho)))
    if t is None:
        t = 0.25 / max(kappa, 1.0)
    J = tube_jacobian(chart, xi, t)
    dpi_chain = np.column_stack([p.tau, np.zeros(3)]) @ np.linalg.inv(J)
    res["dpi"] = float(np.max(np.abs(nabla_pi(chart, xi, t) - dpi_chain)))
    res["ansatz"] = float(np.max(np.abs(ansatz_gradient(chart, xi, t, 2 * abs(t), V)
                                        - ansatz_gradient_chain(chart, xi, t, V))))
    return res
