import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (CHECKERBOARD, HOMOGENEOUS, LAMINATE, LAMINATE_INFINITY_DIAG, LAMINATE_ZERO_DIAG, SHIPPED,
                     brute_force_qhat, homogeneous_reference, isotropic_q2, oracle_strains)
from shellhomog.cell_solver import (CellDiscretization, RegimeSpec, assemble_stiffness, build_basis, corrector,
                                    effective_form, gamma_limit_study, load_vector, optimality_residual,
                                    q_infinity_per_t, reduced_zero_form)
from shellhomog.convex_shell import build_convex_basis, convex_effective_form
from shellhomog.errors import BadSpec, ScaleWarning, UnsupportedRegime
from shellhomog.material import embed_tangential, reduce_q2, sample_cell, tangential_to_voigt2

A_TEST = np.array([[1.3, 0.2], [0.2, 0.7]])
REGIMES = [RegimeSpec.finite_gamma(0.7), RegimeSpec.infinity(), RegimeSpec.zero_super(),
           RegimeSpec.zero_critical(0.5, A_TEST)]
IDS = [r.label for r in REGIMES]
U1 = np.diag([1.0, 0.0])
Z = np.zeros((2, 2))


def density(spec, disc, grid=None):
    return sample_cell(spec, grid=grid or disc.default_grid())


def test_finite_gamma_basis_count():
    b = build_basis(RegimeSpec.finite_gamma(1.0), CellDiscretization(1, 1))
    assert b.size == 51
    assert b.counts == {"phi": 51}
    # y-constant, t-varying modes are present
    assert any(lab[2] == (0, 0) and lab[4] == 1 for lab in b.labels)


def test_infinity_stiffness_block_diagonal():
    disc = CellDiscretization(1, 2)
    Q = density(LAMINATE, disc)
    b = build_basis(RegimeSpec.infinity(), disc, Q.grid, Q.t_nodes)
    K = assemble_stiffness(Q, b)
    assert len(b.blocks) == Q.grid[0]
    mask = np.zeros_like(K, dtype=bool)
    for blk in b.blocks:
        mask[np.ix_(blk, blk)] = True
    assert np.abs(K[~mask]).max() == 0.0


def test_zero_super_phi_omits_constant():
    b = build_basis(RegimeSpec.zero_super(), CellDiscretization(1, 1))
    assert all(lab[2] != (0, 0) for lab in b.labels if lab[0] == "varphi")
    assert b.counts["varphi"] == 8


def test_strain_images_mean_zero_for_dotted_spaces():
    disc = CellDiscretization(2, 2)
    b = build_basis(RegimeSpec.finite_gamma(1.0), disc)
    # every Voigt image of a periodic field, integrated over y and t, vanishes
    Q = density(HOMOGENEOUS, disc)
    _, w = Q.flat()
    np.testing.assert_allclose(np.einsum("bqi,q->bi", b.images[:, :, :2], w), 0.0, atol=1e-13)


@pytest.mark.parametrize("regime", REGIMES + [RegimeSpec.zero_sub_convex()], ids=IDS + ["convex"])
def test_homogeneous_collapse(regime):
    disc = CellDiscretization(2, 2)
    Q = density(HOMOGENEOUS, disc)
    f = effective_form(Q, regime, disc)
    np.testing.assert_allclose(f.qhat, homogeneous_reference(), atol=1e-8)
    assert f.value(U1, Z) == pytest.approx(8 / 3, abs=1e-10)
    assert f.value(Z, U1) == pytest.approx(2 / 9, abs=1e-10)


@pytest.mark.parametrize("regime", REGIMES, ids=IDS)
def test_brute_force_oracle(regime):
    disc = CellDiscretization(1, 1)
    Q = density(CHECKERBOARD, disc)
    f = effective_form(Q, regime, disc)
    b = build_basis(regime, disc, Q.grid, Q.t_nodes, eliminate_g=False)
    S = oracle_strains(b, Q.t_nodes, weingarten=A_TEST if regime.kind == "zero-critical" else None,
                       gamma=regime.gamma)
    qm, w = Q.flat()
    ref = brute_force_qhat(S, qm, w, Q.t_of_points())
    np.testing.assert_allclose(f.qhat, ref, atol=1e-10 * np.abs(ref).max())


def test_brute_force_oracle_convex():
    disc = CellDiscretization(1, 1)
    Q = density(CHECKERBOARD, disc)
    f = convex_effective_form(reduce_q2(Q), disc)
    b = build_convex_basis(disc, Q.grid, eliminate_g=False)
    qm, w = Q.flat()
    ref = brute_force_qhat(oracle_strains(b, Q.t_nodes), qm, w, Q.t_of_points())
    np.testing.assert_allclose(f.qhat, ref, atol=1e-10 * np.abs(ref).max())


@pytest.mark.parametrize("regime", [RegimeSpec.zero_super(), RegimeSpec.zero_critical(0.5, A_TEST)],
                         ids=["zero-super", "zero-critical"])
def test_full_and_reduced_spaces_agree(regime):
    disc = CellDiscretization(3, 3)
    Q = density(LAMINATE, disc)
    full = effective_form(Q, regime, disc, eliminate_g=False)
    red = reduced_zero_form(reduce_q2(Q), regime, disc)
    assert full.basis.counts["g"] == 3 * np.prod(Q.grid)
    assert np.abs(full.qhat - red.qhat).max() <= 1e-8 * np.abs(red.qhat).max()


def test_t_independent_zero_super_decouples():
    disc = CellDiscretization(3, 2)
    f = effective_form(density(LAMINATE, disc), RegimeSpec.zero_super(), disc)
    assert np.abs(f.qhat[:3, 3:]).max() <= 1e-8


@pytest.mark.parametrize("regime", REGIMES, ids=IDS)
def test_symmetry_and_upper_bound(regime):
    disc = CellDiscretization(2, 2)
    Q = density(CHECKERBOARD, disc)
    f = effective_form(Q, regime, disc)
    assert np.abs(f.qhat - f.qhat.T).max() <= 1e-12
    qm, w = Q.flat()
    t = Q.t_of_points()
    for i in range(6):
        z = np.eye(6)[i]
        p = (z[:3][None] + t[:, None] * z[3:][None]) @ embed_tangential().T
        # U = 0 is admissible in every regime space
        bound = np.einsum("q,qi,qij,qj->", w, p, qm, p)
        assert f.qhat[i, i] <= bound + 1e-12


@pytest.mark.parametrize("name", sorted(SHIPPED))
def test_coercivity_band(name):
    disc = CellDiscretization(2, 2)
    Q = density(SHIPPED[name], disc)
    for regime in REGIMES + [RegimeSpec.zero_sub_convex(A_TEST)]:
        ev = np.linalg.eigvalsh(effective_form(Q, regime, disc).qhat)
        assert ev[0] >= Q.alpha / 24 and ev[-1] <= Q.beta


@pytest.mark.parametrize("regime", REGIMES, ids=IDS)
def test_refinement_monotone(regime):
    grid = (5, 8, 8)
    Q = sample_cell(CHECKERBOARD, grid=grid)
    a = effective_form(Q, regime, CellDiscretization(2, 2)).qhat
    b = effective_form(Q, regime, CellDiscretization(3, 3)).qhat
    assert np.linalg.eigvalsh(a - b)[0] >= -1e-10


def test_zero_load_gives_zero_corrector():
    disc = CellDiscretization(2, 2)
    f = effective_form(density(LAMINATE, disc), RegimeSpec.finite_gamma(1.0), disc)
    rec = corrector(f, Z, Z)
    assert rec.objective == 0.0
    assert np.all(rec.coefficients == 0.0)
    assert f.value(Z, Z) == 0.0


@pytest.mark.parametrize("regime", REGIMES, ids=IDS)
def test_corrector_linear_and_optimal(regime, rng):
    disc = CellDiscretization(2, 2)
    f = effective_form(density(CHECKERBOARD, disc), regime, disc)
    q = [rng.normal(size=(2, 2)) for _ in range(4)]
    q = [x + x.T for x in q]
    a, b = 0.7, -1.3
    r1, r2 = corrector(f, q[0], q[1]), corrector(f, q[2], q[3])
    r3 = corrector(f, a * q[0] + b * q[2], a * q[1] + b * q[3])
    np.testing.assert_allclose(r3.coefficients, a * r1.coefficients + b * r2.coefficients, atol=1e-8)
    assert r1.objective == pytest.approx(f.value(q[0], q[1]), rel=1e-9)
    assert optimality_residual(f, r1) <= 1e-9 * (1 + abs(r1.objective))


def test_homogeneous_corrector_only_normal_block():
    disc = CellDiscretization(2, 2)
    f = effective_form(density(HOMOGENEOUS, disc), RegimeSpec.zero_super(), disc, eliminate_g=False)
    rec = corrector(f, np.eye(2), Z)
    osc = np.array([lab[0] != "g" for lab in f.basis.labels])
    assert np.abs(rec.coefficients[osc]).max() <= 1e-10
    assert np.abs(rec.coefficients[~osc]).max() > 0.1


def test_homogeneous_reduced_corrector_reconstructs_normal_strain():
    disc = CellDiscretization(2, 2)
    f = effective_form(density(HOMOGENEOUS, disc), RegimeSpec.zero_super(), disc)
    rec = corrector(f, U1, Z)
    # optimal 33 strain of an isotropic plate under uniaxial stretch: -lambda/(lambda + 2mu)
    np.testing.assert_allclose(rec.strain[..., 2], -1 / 3, atol=1e-12)
    np.testing.assert_allclose(rec.strain[..., [0, 1, 5]], 0.0, atol=1e-12)
    assert rec.objective == pytest.approx(8 / 3, abs=1e-12)


def test_q_infinity_per_t_homogeneous(rng):
    disc = CellDiscretization(2, 2)
    Q = density(HOMOGENEOUS, disc)
    t = 0.3
    Qt = q_infinity_per_t(Q, disc, t)
    q1, q2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    q1, q2 = q1 + q1.T, q2 + q2.T
    z = load_vector(q1, q2)
    v = tangential_to_voigt2(q1 + t * q2)
    assert z @ Qt @ z == pytest.approx(v @ isotropic_q2(1, 1) @ v, rel=1e-10)
    # vanishes on loads with q1 + t q2 = 0
    z0 = load_vector(-t * q2, q2)
    assert abs(z0 @ Qt @ z0) <= 1e-10


@pytest.mark.parametrize("spec", [LAMINATE, SHIPPED["graded"]], ids=["laminate", "graded"])
def test_q_infinity_per_t_integrates_to_effective_form(spec):
    disc = CellDiscretization(2, 2)
    Q = density(spec, disc)
    total = sum(w * q_infinity_per_t(Q, disc, t) for t, w in zip(Q.t_nodes, Q.t_weights))
    ref = effective_form(Q, RegimeSpec.infinity(), disc).qhat
    assert np.abs(total - ref).max() <= 1e-10 * np.abs(ref).max()


def test_cg_matches_cholesky():
    Q = density(CHECKERBOARD, CellDiscretization(2, 2))
    a = effective_form(Q, RegimeSpec.finite_gamma(2.0), CellDiscretization(2, 2)).qhat
    b = effective_form(Q, RegimeSpec.finite_gamma(2.0), CellDiscretization(2, 2, solver="cg")).qhat
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_frozen_laminate_anchors():
    disc = CellDiscretization(4, 4)
    Q = density(LAMINATE, disc)
    np.testing.assert_allclose(np.diag(effective_form(Q, RegimeSpec.infinity(), disc).qhat),
                               LAMINATE_INFINITY_DIAG, rtol=1e-10)
    np.testing.assert_allclose(np.diag(effective_form(Q, RegimeSpec.zero_super(), disc).qhat),
                               LAMINATE_ZERO_DIAG, rtol=1e-10)


def test_gamma_study_homogeneous_rows_identical():
    disc = CellDiscretization(2, 2)
    s = gamma_limit_study(density(HOMOGENEOUS, disc), disc, [0.1, 1.0, 10.0])
    ref = homogeneous_reference()
    for row in s["rows"]:
        np.testing.assert_allclose(row["qhat"], ref, atol=1e-8)
    np.testing.assert_allclose(s["anchors"]["infinity"], ref, atol=1e-8)
    np.testing.assert_allclose(s["anchors"]["zero"], ref, atol=1e-8)
    assert s["within_tolerance"]


def test_gamma_study_anchors_only_and_validation():
    disc = CellDiscretization(1, 1)
    Q = density(LAMINATE, disc)
    s = gamma_limit_study(Q, disc, [])
    assert s["rows"] == [] and "gap_high" not in s
    with pytest.raises(BadSpec):
        gamma_limit_study(Q, disc, [10.0, 1.0])
    with pytest.raises(BadSpec):
        gamma_limit_study(Q, disc, [-1.0])


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3))
def test_scale_window(log_gamma):
    g = 10.0 ** log_gamma
    assert RegimeSpec.finite_gamma(g).gamma == g


@pytest.mark.parametrize("g", [1e-4, 1e4])
def test_scale_warning(g):
    with pytest.raises(ScaleWarning):
        RegimeSpec.finite_gamma(g)
    with pytest.raises(ScaleWarning):
        RegimeSpec.zero_critical(g, np.eye(2))


def test_invalid_specs():
    with pytest.raises(BadSpec):
        RegimeSpec("gamma", float("inf"))
    with pytest.raises(UnsupportedRegime):
        RegimeSpec("nonsense")
    with pytest.raises(UnsupportedRegime):
        build_basis(RegimeSpec.zero_sub_convex(), CellDiscretization(1, 1))
    with pytest.raises(BadSpec):
        build_basis(RegimeSpec.zero_super(), CellDiscretization(3, 1), grid=(3, 4, 4))
    with pytest.raises(BadSpec):
        build_basis(RegimeSpec("zero-critical", 1.0), CellDiscretization(1, 1))
    with pytest.raises(BadSpec):
        CellDiscretization(0, 1)
