"""Acceptance run: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines
inline; they are also printed without ``-s``.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (CHECKERBOARD, HOMOGENEOUS, LAMINATE, Q2_UNIAXIAL, SHIPPED, brute_force_qhat,
                     brute_plane_stress, homogeneous_reference, oracle_strains, random_spd_voigt)
from shellhomog import charts, config
from shellhomog.cell_solver import (CellDiscretization, RegimeSpec, build_basis, effective_form,
                                    gamma_limit_study, reduced_zero_form)
from shellhomog.cli import execute
from shellhomog.convex_shell import (ConvexityCertificate, FourierField, build_convex_basis,
                                     convex_effective_form, curlcurl_check, mode_det, solve_modes,
                                     reconstruction_residual)
from shellhomog.geometry import frame_at, identity_residuals, strain_linearization_check
from shellhomog.material import isotropic_qmat, plane_stress, reduce_q2, sample_cell, tangential_to_voigt2

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
A_TEST = np.array([[1.3, 0.2], [0.2, 0.7]])
FIVE_REGIMES = ["gamma", "infinity", "zero-super", "zero-critical", "convex"]


def regime_for(kind):
    return {"gamma": RegimeSpec.finite_gamma(0.7), "infinity": RegimeSpec.infinity(),
            "zero-super": RegimeSpec.zero_super(), "zero-critical": RegimeSpec.zero_critical(0.5, A_TEST),
            "convex": RegimeSpec.zero_sub_convex(A_TEST)}[kind]


@pytest.fixture
def verdict(capsys):
    t0 = time.perf_counter()

    def emit(n, title, ok, budget, detail=""):
        dt = time.perf_counter() - t0
        ok = bool(ok) and dt < budget
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}; {detail} ({dt:.2f}s of {budget:g}s)")
        return ok

    return emit


def test_criterion_01_geometry_identities(verdict, rng):
    worst = 0.0
    for name in sorted(charts.CHARTS):
        chart = charts.make_chart(name)
        (a1, b1), (a2, b2) = chart.domain
        for _ in range(20):
            xi = np.array([rng.uniform(a1 + 0.05, b1 - 0.05), rng.uniform(a2 + 0.05, b2 - 0.05)])
            res = identity_residuals(chart, xi, charts.random_polynomial(rng))
            res.update(identity_residuals(chart, xi, charts.rigid(chart, rng.normal(size=3), rng.normal(size=3)),
                                          bending=True))
            worst = max(worst, max(res.values()))
    assert verdict(1, "geometry identity suite", worst <= 1e-8, 5.0, f"max residual {worst:.2e}")


def test_criterion_02_plane_stress(verdict, rng):
    worst = 0.0
    for _ in range(50):
        Q = random_spd_voigt(rng)
        q2, _ = plane_stress(Q)
        q = rng.normal(size=(2, 2))
        q = q + q.T
        v = tangential_to_voigt2(q)
        ref = brute_plane_stress(Q, q)
        worst = max(worst, abs(v @ q2 @ v - ref) / abs(ref))
    q2, _ = plane_stress(isotropic_qmat(1.0, 1.0))
    u = tangential_to_voigt2(np.diag([1.0, 0.0]))
    iso_err = abs(u @ q2 @ u - Q2_UNIAXIAL)
    ok = worst <= 1e-10 and iso_err <= 1e-12
    assert verdict(2, "plane-stress oracle", ok, 1.0, f"rel err {worst:.2e}, 8/3 err {iso_err:.1e}")


def test_criterion_03_homogeneous_collapse(verdict):
    disc = CellDiscretization(2, 2)
    Q = sample_cell(HOMOGENEOUS, grid=disc.default_grid())
    ref = homogeneous_reference()
    errs = {k: float(np.abs(effective_form(Q, regime_for(k), disc).qhat - ref).max()) for k in FIVE_REGIMES}
    worst = max(errs.values())
    assert verdict(3, "homogeneous collapse", worst <= 1e-8, 10.0, f"max err {worst:.2e} over 5 regimes")


def test_criterion_04_full_vs_reduced(verdict):
    disc = CellDiscretization(3, 3)
    Q = sample_cell(LAMINATE, grid=disc.default_grid())
    rels = []
    for k in ("zero-super", "zero-critical"):
        reg = regime_for(k)
        full = effective_form(Q, reg, disc, eliminate_g=False)
        red = reduced_zero_form(reduce_q2(Q), reg, disc)
        rels.append(np.abs(full.qhat - red.qhat).max() / np.abs(red.qhat).max())
    worst = max(rels)
    assert verdict(4, "full vs reduced zero regimes", worst <= 1e-8, 30.0, f"rel diff {worst:.2e}")


def test_criterion_05_galerkin_vs_brute_force(verdict):
    disc = CellDiscretization(1, 1)
    Q = sample_cell(CHECKERBOARD, grid=disc.default_grid())
    qm, w = Q.flat()
    rels = {}
    for k in FIVE_REGIMES:
        reg = regime_for(k)
        if k == "convex":
            f = convex_effective_form(reduce_q2(Q), disc)
            b = build_convex_basis(disc, Q.grid, eliminate_g=False)
            S = oracle_strains(b, Q.t_nodes)
        else:
            f = effective_form(Q, reg, disc)
            b = build_basis(reg, disc, Q.grid, Q.t_nodes, eliminate_g=False)
            S = oracle_strains(b, Q.t_nodes, weingarten=A_TEST if k == "zero-critical" else None, gamma=reg.gamma)
        ref = brute_force_qhat(S, qm, w, Q.t_of_points())
        rels[k] = float(np.abs(f.qhat - ref).max() / np.abs(ref).max())
    worst = max(rels.values())
    assert verdict(5, "Galerkin vs dense QP", worst <= 1e-10, 10.0, f"rel diff {worst:.2e} over 5 regimes")


def test_criterion_06_regime_limits(verdict):
    disc = CellDiscretization(4, 4)
    Q = sample_cell(LAMINATE, grid=disc.default_grid())
    s = gamma_limit_study(Q, disc, [0.01, 0.1, 1.0, 10.0, 100.0], tol=0.02)
    ok = s["gap_high"] <= 0.02 and s["gap_low"] <= 0.02
    detail = f"gap(100, inf) {s['gap_high']:.2e}, gap(0.01, 0) {s['gap_low']:.2e}, " \
             f"PSD monotone (reported) {s['psd_monotone']}"
    assert verdict(6, "regime limits", ok, 120.0, detail)


def test_criterion_07_coercivity_band(verdict):
    disc = CellDiscretization(2, 2)
    worst_lo, worst_hi = np.inf, -np.inf
    for spec in SHIPPED.values():
        Q = sample_cell(spec, grid=disc.default_grid())
        for k in FIVE_REGIMES:
            ev = np.linalg.eigvalsh(effective_form(Q, regime_for(k), disc).qhat)
            worst_lo = min(worst_lo, ev[0] / (Q.alpha / 24))
            worst_hi = max(worst_hi, ev[-1] / Q.beta)
    ok = worst_lo >= 1.0 and worst_hi <= 1.0
    detail = f"min eig / (alpha/24) = {worst_lo:.3f}, max eig / beta = {worst_hi:.3f}"
    assert verdict(7, "coercivity band", ok, 30.0, detail)


def test_criterion_08_convex_fourier_solver(verdict, rng):
    maps = {"identity": np.eye(2), "diag(2,1)": np.diag([2.0, 1.0]),
            "sphere": frame_at(charts.sphere(), np.array([0.8, 0.6])).weingarten_ortho}
    rec = curl = 0.0
    ratio_ok = True
    for A in maps.values():
        B = FourierField.random(8, rng)
        cert = ConvexityCertificate.from_matrix(A)
        sol = solve_modes(A, B, cert)
        rec = max(rec, reconstruction_residual(A, B, sol))
        curl = max(curl, curlcurl_check(A, B, sol))
        ratio_ok &= bool((np.abs(sol.dets) / np.sum(sol.ks**2, axis=1)).min() >= cert.c_min / 4)
    det_err = max(abs(mode_det(np.eye(2), tuple(k)) - (k @ k) / 2) for k in solve_modes(np.eye(2), B).ks)
    ok = rec <= 1e-10 and curl <= 1e-10 and ratio_ok and det_err <= 1e-12
    detail = f"reconstruction {rec:.1e}, curl-curl {curl:.1e}, det bound {ratio_ok}, identity det err {det_err:.1e}"
    assert verdict(8, "convex Fourier solver", ok, 5.0, detail)


def test_criterion_09_strain_linearization(verdict, rng):
    K = 0.1 * np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0.0]])
    G = rng.normal(size=(3, 3))
    G = G + G.T
    hs = [1e-1, 1e-2, 1e-3, 1e-4]
    errs = [strain_linearization_check(K, G, h)[2] for h in hs]
    order = float((np.diff(np.log(errs)) / np.diff(np.log(hs))).min())
    ok = bool(np.all(np.diff(errs) < 0)) and order >= 0.9
    assert verdict(9, "strain linearization", ok, 1.0, f"observed order {order:.3f}")


def test_criterion_10_assembly_end_to_end(verdict):
    expected = {"rigid": 0.0, "membrane": 8 / 3, "bending": 2 / 9}
    errs, identical = {}, True
    for name, val in expected.items():
        texts = []
        for n in (1, 2, 8):
            cfg = config.load(CONFIGS / f"{name}.toml")
            cfg.run["threads"] = n
            code, text = execute(cfg)
            assert code == 0
            texts.append(text.encode())
        identical &= texts[0] == texts[1] == texts[2]
        errs[name] = abs(json.loads(texts[0])["total"] - val)
    worst = max(errs.values())
    ok = worst <= 1e-8 and identical
    assert verdict(10, "assembly end to end", ok, 30.0, f"max err {worst:.1e}, byte-identical {identical}")
