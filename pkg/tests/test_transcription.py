import numpy as np
import pytest

from _toy import (
    constant_rate_ocp,
    dense_fd_hessian,
    dense_fd_jacobian,
    two_phase_linked_ocp,
    ydot_u_ocp,
)
from lgropt.derivest import StepRule
from lgropt.lgr import Mesh, map_time
from lgropt.problems import free_flying_robot, min_time_climb, space_station
from lgropt.transcription import (
    Detector,
    build_layout,
    eval_constraints,
    eval_objective,
    initial_guess,
    transcribe,
)

RULES = {
    "fd": StepRule.central_fd(),
    "bc": StepRule.bicomplex(),
    "hd": StepRule.hyper_dual(),
}


class TestLayout:
    def test_small_problem_size(self):
        layout = build_layout(ydot_u_ocp(), Mesh.uniform(1, 2))
        assert layout.n_z == 3 * 1 + 2 * 1 + 2 + 1  # Y + U + times + Q
        assert layout.n_con == 2 + 1  # defects + rho

    def test_free_flying_size(self):
        layout = build_layout(free_flying_robot(), Mesh.uniform(2, 5))
        assert layout.n_z == 11 * 6 + 10 * 4 + 2 + 1  # == 109

    def test_static_parameters_trail(self):
        ocp = ydot_u_ocp()
        ocp.n_s = 3
        ocp.s_lower = np.full(3, -1.0)
        ocp.s_upper = np.full(3, 1.0)
        layout = build_layout(ocp, Mesh.uniform(1, 2))
        assert layout.n_z == 7 + 1 + 3
        assert [layout.scol(k) for k in range(3)] == [8, 9, 10]

    def test_ranges_disjoint_and_contiguous(self):
        layout = build_layout(free_flying_robot(), Mesh.uniform(2, 5))
        pl = layout.phases[0]
        cols = ([pl.ycol(m, i) for m in range(6) for i in range(11)]
                + [pl.ucol(j, i) for j in range(4) for i in range(10)]
                + [pl.t0_index, pl.tf_index, pl.qcol(0)])
        assert sorted(cols) == list(range(layout.n_z))


class TestEvaluation:
    def test_constant_state_zero_dynamics(self):
        def dynamics(y, u, t, s):
            return [0.0]

        ocp = ydot_u_ocp()
        ocp.phases[0].dynamics = dynamics
        layout = build_layout(ocp, Mesh.uniform(2, 3))
        z = np.zeros(layout.n_z)
        pl = layout.phases[0]
        for i in range(pl.N + 1):
            z[pl.ycol(0, i)] = 4.2
        z[pl.tf_index] = 1.0
        out = eval_constraints(ocp, layout, z)
        np.testing.assert_allclose(out[:pl.N], 0.0, atol=1e-13)

    def test_linear_state_matches_unit_rate(self):
        ocp = constant_rate_ocp()
        layout = build_layout(ocp, Mesh.uniform(1, 3))
        pl = layout.phases[0]
        z = np.zeros(layout.n_z)
        z[pl.t0_index] = 0.0
        z[pl.tf_index] = 2.0
        for i in range(pl.N + 1):
            z[pl.ycol(0, i)] = map_time(pl.am.support[i], 0.0, 2.0)
        out = eval_constraints(ocp, layout, z)
        np.testing.assert_allclose(out[:pl.N], 0.0, atol=1e-13)

    def test_unit_integrand_residual(self):
        ocp = ydot_u_ocp(tf=3.0)
        ocp.phases[0].integrand = lambda y, u, t, s: [1.0]
        ocp.phases[0].tf_lower = ocp.phases[0].tf_upper = 3.0
        layout = build_layout(ocp, Mesh.uniform(2, 4))
        pl = layout.phases[0]
        z = np.zeros(layout.n_z)
        z[pl.tf_index] = 3.0
        z[pl.qcol(0)] = 3.0  # tf - t0
        out = eval_constraints(ocp, layout, z)
        assert out[pl.rho_offset] == pytest.approx(0.0, abs=1e-13)

    def test_objective_projections(self):
        ocp = min_time_climb()
        layout = build_layout(ocp, Mesh.uniform(1, 3))
        z = initial_guess(ocp, layout)
        z[layout.phases[0].tf_index] = 1800.0
        assert eval_objective(ocp, layout, z) == 1800.0

        ocp_q = ydot_u_ocp()
        layout_q = build_layout(ocp_q, Mesh.uniform(1, 3))
        z = initial_guess(ocp_q, layout_q)
        z[layout_q.phases[0].qcol(0)] = 7.5
        assert eval_objective(ocp_q, layout_q, z) == 7.5


class TestPatterns:
    def test_ydot_u_defect_row_structure(self):
        ocp = ydot_u_ocp()
        nlp = transcribe(ocp, Mesh.uniform(1, 2), Detector.EXACT)
        pl = nlp.layout.phases[0]
        for i in range(2):
            row_cols = nlp.jac_pattern.cols_of_row(pl.defect_row(0, i))
            expected = sorted([pl.ycol(0, 0), pl.ycol(0, 1), pl.ycol(0, 2),
                               pl.ucol(0, i), pl.t0_index, pl.tf_index])
            assert row_cols == expected
        assert nlp.continuous.dynamics[0].hess.nnz == 0

    @pytest.mark.parametrize("builder", [free_flying_robot, space_station])
    def test_exact_subset_of_overestimate(self, builder):
        ocp = builder()
        mesh = Mesh.uniform(1, 3)
        exact = transcribe(ocp, mesh, Detector.EXACT)
        over = transcribe(ocp, mesh, Detector.NAN_OVERESTIMATE)
        assert exact.jac_pattern.issubset(over.jac_pattern)
        assert exact.hess_pattern.issubset(over.hess_pattern)

    def test_two_phase_interior_decoupling(self):
        ocp = two_phase_linked_ocp()
        nlp = transcribe(ocp, [Mesh.uniform(1, 3), Mesh.uniform(1, 3)],
                         Detector.EXACT)
        p0, p1 = nlp.layout.phases
        phase0_rows = set(range(p0.defect_offset, p1.defect_offset))
        phase1_rows = set(range(p1.defect_offset, nlp.layout.event_offset))
        phase0_cols = set(range(p0.y_offset, p1.y_offset))
        phase1_cols = set(range(p1.y_offset, nlp.layout.s_offset))
        for (r, c) in nlp.jac_pattern.entries:
            if r in phase0_rows:
                assert c in phase0_cols
            elif r in phase1_rows:
                assert c in phase1_cols
        # the event row is the only coupler and touches endpoint columns only
        event_cols = nlp.jac_pattern.cols_of_row(nlp.layout.event_row(0))
        assert event_cols == sorted([p0.ycol(0, p0.N), p1.ycol(0, 0)])

    def test_pattern_serialization_deterministic(self):
        ocp = free_flying_robot()
        a = transcribe(ocp, Mesh.uniform(1, 3), Detector.EXACT)
        b = transcribe(ocp, Mesh.uniform(1, 3), Detector.EXACT)
        assert a.jac_pattern.serialize() == b.jac_pattern.serialize()
        assert a.hess_pattern.serialize() == b.hess_pattern.serialize()


def _feasible_test_point(nlp, rng, spread=0.3):
    z = initial_guess(nlp.ocp, nlp.layout)
    dz = rng.uniform(-spread, spread, size=len(z))
    z = z + dz
    # keep bounded coordinates strictly inside their box and times ordered
    z = np.clip(z, np.where(np.isfinite(nlp.zl), nlp.zl, -np.inf),
                np.where(np.isfinite(nlp.zu), nlp.zu, np.inf))
    for pl in nlp.layout.phases:
        t0, tf = z[pl.t0_index], z[pl.tf_index]
        if not tf > t0:
            z[pl.tf_index] = t0 + 1.0
    return z


@pytest.mark.parametrize("make", [
    lambda: ydot_u_ocp(),
    lambda: constant_rate_ocp(),
    lambda: free_flying_robot(),
])
@pytest.mark.parametrize("detector", [Detector.EXACT, Detector.NAN_OVERESTIMATE])
def test_dense_oracle_equivalence(make, detector):
    ocp = make()
    nlp = transcribe(ocp, Mesh.uniform(1, 3), detector)
    rng = np.random.default_rng(2)
    z = _feasible_test_point(nlp, rng)

    J_ref = dense_fd_jacobian(lambda v: eval_constraints(ocp, nlp.layout, v), z)
    lam = rng.uniform(-1.0, 1.0, nlp.m)
    sigma = 0.7

    def lagrangian(v):
        return sigma * nlp.objective(v) + lam @ nlp.constraints(v)

    H_ref = dense_fd_hessian(lagrangian, z)
    g_ref = dense_fd_jacobian(lambda v: [nlp.objective(v)], z)[0]

    for name, rule in RULES.items():
        J = nlp.jacobian(z, rule).toarray()
        assert np.max(np.abs(J - J_ref)) <= 1e-5, (name, "jacobian")
        H = nlp.hessian(z, sigma, lam, rule).toarray()
        H_full = H + H.T - np.diag(np.diag(H))
        assert np.max(np.abs(H_full - H_ref)) <= 1e-5, (name, "hessian")
        g = nlp.gradient(z, rule)
        assert np.max(np.abs(g - g_ref)) <= 1e-6, (name, "gradient")


def test_pattern_completeness_against_dense_fd():
    ocp = free_flying_robot()
    nlp = transcribe(ocp, Mesh.uniform(1, 3), Detector.EXACT)
    rng = np.random.default_rng(8)
    in_pattern = set(nlp.jac_pattern.entries)
    hess_entries = set(nlp.hess_pattern.entries)
    for _ in range(5):
        z = _feasible_test_point(nlp, rng)
        J_ref = dense_fd_jacobian(lambda v: eval_constraints(ocp, nlp.layout, v), z)
        for r, c in zip(*np.nonzero(np.abs(J_ref) > 1e-6)):
            assert (int(r), int(c)) in in_pattern
        lam = rng.uniform(-1.0, 1.0, nlp.m)
        H_ref = dense_fd_hessian(
            lambda v: nlp.objective(v) + lam @ nlp.constraints(v), z)
        for r, c in zip(*np.nonzero(np.abs(np.tril(H_ref)) > 1e-4)):
            assert (int(r), int(c)) in hess_entries


def test_linear_dynamics_jacobian_constant_and_engine_agreement():
    ocp = ydot_u_ocp()
    nlp = transcribe(ocp, Mesh.uniform(1, 3), Detector.EXACT)
    rng = np.random.default_rng(4)
    z1 = _feasible_test_point(nlp, rng)
    z2 = _feasible_test_point(nlp, rng)
    J_hd_1 = nlp.jacobian(z1, RULES["hd"]).toarray()
    J_hd_2 = nlp.jacobian(z2, RULES["hd"]).toarray()
    # defect rows are linear in (Y, U); only the t0/tf columns move
    pl = nlp.layout.phases[0]
    keep = [c for c in range(nlp.n) if c not in (pl.t0_index, pl.tf_index)]
    np.testing.assert_allclose(J_hd_1[:pl.N, keep], J_hd_2[:pl.N, keep], atol=1e-12)
    J_fd = nlp.jacobian(z1, RULES["fd"]).toarray()
    assert np.max(np.abs(J_hd_1 - J_fd)) <= 1e-9


def test_zero_multiplier_hessian_is_zero():
    ocp = free_flying_robot()
    nlp = transcribe(ocp, Mesh.uniform(1, 3), Detector.EXACT)
    z = initial_guess(ocp, nlp.layout)
    H = nlp.hessian(z, 0.0, np.zeros(nlp.m), RULES["hd"])
    assert H.nnz == 0 or np.max(np.abs(H.toarray())) == 0.0


def test_hessian_symmetry_by_construction():
    ocp = space_station()
    nlp = transcribe(ocp, Mesh.uniform(1, 3), Detector.EXACT)
    rng = np.random.default_rng(6)
    z = _feasible_test_point(nlp, rng, spread=0.05)
    lam = rng.uniform(-1.0, 1.0, nlp.m)
    H = nlp.hessian(z, 1.0, lam, RULES["hd"]).toarray()
    assert np.all(np.triu(H, 1) == 0.0)  # strictly lower storage
    H_full = H + H.T - np.diag(np.diag(H))
    np.testing.assert_array_equal(H_full, H_full.T)


def test_initial_guess_structure():
    ocp = free_flying_robot()
    layout = build_layout(ocp, Mesh.uniform(2, 5))
    z = initial_guess(ocp, layout)
    pl = layout.phases[0]
    assert z[pl.t0_index] == 0.0
    assert z[pl.tf_index] == 12.0
    assert z[pl.ycol(0, 0)] == -10.0
    assert z[pl.ycol(0, pl.N)] == 0.0
    # interior states interpolate linearly in time
    mid = z[pl.ycol(1, 5)]
    assert -10.0 < mid < 0.0
    np.testing.assert_array_equal(z[pl.ucol(0, 0):pl.ucol(3, pl.N - 1) + 1], 0.0)


def test_callback_failure_is_tagged():
    def bad_dynamics(y, u, t, s):
        raise RuntimeError("boom")

    ocp = ydot_u_ocp()
    ocp.phases[0].dynamics = bad_dynamics
    layout = build_layout(ocp, Mesh.uniform(1, 2))
    z = initial_guess(ocp, layout)
    with pytest.raises(Exception, match="phase 0.*dynamics|dynamics.*phase 0"):
        eval_constraints(ocp, layout, z)
