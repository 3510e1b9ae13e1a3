"""Normal extremal flow, shooting, multipliers, and regularity probes.

The double integrator gives closed forms for everything here: with
f0 = (y, 0) and one vertical channel the covector solves p1 = a,
p2 = b - a t, so y(t) = b t - a t^2 / 2, x(t) = b t^2 / 2 - a t^3 / 6,
and the cost of the arc is b^2 - a b + a^2 / 3.
"""

import math

import numpy as np
import pytest

import endmap as em
from endmap import ExplosionGuard
from endmap.extremal import ball_seeds, flow_steps


def di_endpoint(a, b):
    return np.array([b / 2.0 - a / 6.0, b - a / 2.0])


def di_cost(a, b):
    return b * b - a * b + a * a / 3.0


class TestNormalFlow:
    def test_double_integrator_closed_form(self, double_integrator):
        a, b = 1.3, -0.4
        arc = em.normal_flow(double_integrator, [a, b])
        assert np.allclose(arc.endpoint, di_endpoint(a, b), atol=1e-10)
        assert abs(arc.cost - di_cost(a, b)) < 1e-10
        # p1 is conserved, p2 decays linearly
        assert np.allclose(arc.covectors[:, 0], a, atol=1e-12)
        assert np.allclose(arc.covectors[:, 1], b - a * arc.times, atol=1e-10)

    def test_hamiltonian_is_conserved(self, working):
        arc = em.normal_flow(working, [-0.7, 1.1])
        H = arc.hamiltonian(working)
        assert np.abs(H - H[0]).max() < 1e-10

    def test_control_law_holds_on_samples(self, working):
        arc = em.normal_flow(working, [0.4, -0.9])
        # u = <p, f1> with f1 = (0, 1) here, so u equals p2 exactly
        assert np.abs(arc.controls[:, 0] - arc.covectors[:, 1]).max() == 0.0

    def test_exp_map_matches_flow(self, working):
        p0 = np.array([0.3, 0.8])
        assert np.allclose(em.exp_map(working, p0), em.normal_flow(working, p0).endpoint)

    def test_covector_length_checked(self, working):
        with pytest.raises(ValueError):
            em.normal_flow(working, [1.0, 2.0, 3.0])

    def test_guard_on_blowup_branch(self, working):
        with pytest.raises(ExplosionGuard):
            em.normal_flow(working, [1e9, 1e9])

    def test_flow_steps_policy(self, working):
        base = working.K * working.oversample
        assert flow_steps(working, np.zeros(2)) == base
        small = flow_steps(working, np.array([10.0, 0.0]))
        large = flow_steps(working, np.array([1e5, 0.0]))
        assert base <= small <= large


class TestPhi:
    def test_grid_projection_reaches_same_endpoint(self, working):
        p0 = np.array([-1.0, 0.6])
        u = em.phi(working, p0, K=128)
        assert u.K == 128
        x_grid = em.endpoint(working, u)
        x_flow = em.exp_map(working, p0)
        assert np.linalg.norm(x_grid - x_flow) < 1e-3

    def test_projection_refines_with_k(self, working):
        p0 = np.array([0.9, -0.5])
        x_flow = em.exp_map(working, p0)
        err = []
        for K in (16, 64):
            u = em.phi(working, p0, K=K)
            err.append(np.linalg.norm(em.endpoint(working, u) - x_flow))
        assert err[1] < err[0]


class TestConjugateScan:
    def test_oscillatory_arcs_count_crossings(self, working):
        # p1 > 0 makes the vertical block a linear oscillator with
        # frequency sqrt(2 p1).  Expected counts were integrated
        # independently (DOP853 on the closed-form Jacobi system); the
        # first crossing lags the half-period grid because the forcing
        # of the p1 column is resonant, so the count trails omega/pi.
        for px0, expected in ((128.0, 4), (50.0, 2), (392.0, 8)):
            p0 = np.array([px0, math.sqrt(2.0)])
            crossings, status = em.conjugate_scan(working, p0)
            assert status == "ok"
            assert crossings == expected
            w = math.sqrt(2.0 * px0)
            assert abs(crossings - w / math.pi) <= 1.5

    def test_hyperbolic_arc_is_clean(self, working):
        crossings, status = em.conjugate_scan(working, np.array([-5.0, 0.1]))
        assert (crossings, status) == (0, "ok")

    def test_straight_arcs_are_clean(self, working):
        crossings, status = em.conjugate_scan(working, np.array([0.0, 0.3]))
        assert (crossings, status) == (0, "ok")

    def test_exploding_arc_reports_status(self, working):
        crossings, status = em.conjugate_scan(working, np.array([1e9, 1e9]))
        assert status == "exploded"
        assert crossings == 0

    def test_length_checked(self, working):
        with pytest.raises(ValueError):
            em.conjugate_scan(working, [1.0])


class TestShoot:
    def test_unique_root_on_double_integrator(self, double_integrator):
        a, b = 1.2, 1.0
        target = di_endpoint(a, b)
        res = em.shoot(double_integrator, target)
        assert len(res.solutions) == 1
        sol = res.best
        assert np.allclose(sol.p0, [a, b], atol=1e-6)
        assert abs(sol.cost - di_cost(a, b)) < 1e-8
        assert sol.defect < 1e-8 * (1.0 + np.linalg.norm(target))
        assert np.allclose(sol.endpoint, target, atol=1e-7)

    def test_solutions_sorted_and_deduped(self, working):
        res = em.shoot(working, [1.25, 0.4])
        costs = [s.cost for s in res.solutions]
        assert costs == sorted(costs)
        for i, s in enumerate(res.solutions):
            for other in res.solutions[i + 1 :]:
                gap = np.linalg.norm(s.p0 - other.p0)
                assert gap >= 1e-6 * (1.0 + np.linalg.norm(s.p0))

    def test_explicit_seeds_without_sweep(self, double_integrator):
        a, b = -0.8, 0.5
        res = em.shoot(
            double_integrator,
            di_endpoint(a, b),
            seeds=[[a + 0.05, b - 0.05], [a + 0.05, b - 0.05]],
            sweep=False,
        )
        assert len(res.solutions) == 1
        assert np.allclose(res.best.p0, [a, b], atol=1e-6)

    def test_no_solutions_reports_best_defect(self, working):
        # x < 1 is out of reach, every residual stays bounded away from zero
        res = em.shoot(working, [0.5, 0.0], nseeds=6)
        assert res.solutions == []
        assert res.best is None
        assert res.best_defect > 0.1
        assert len(res) == 0

    def test_target_validation(self, working):
        with pytest.raises(ValueError):
            em.shoot(working, [1.0])
        with pytest.raises(ValueError):
            em.shoot(working, [math.inf, 0.0])

    def test_p0proj_decays_with_terminal_norm(self, double_integrator):
        res = em.shoot(double_integrator, di_endpoint(2.0, 1.5))
        sol = res.best
        expected = 0.5 / math.hypot(np.linalg.norm(sol.pT), 0.5)
        assert sol.p0proj == expected


class TestBallSeeds:
    def test_deterministic_and_in_ball(self):
        a = ball_seeds(3, 32, 5.0, seed=1)
        b = ball_seeds(3, 32, 5.0, seed=1)
        assert np.array_equal(a, b)
        assert (np.linalg.norm(a, axis=1) <= 5.0 + 1e-12).all()

    def test_seed_shifts_the_sweep(self):
        a = ball_seeds(2, 16, 5.0, seed=0)
        b = ball_seeds(2, 16, 5.0, seed=1)
        assert not np.allclose(a, b)

    def test_dimension_cap(self):
        with pytest.raises(ValueError):
            ball_seeds(12, 4, 1.0)


class TestMultipliers:
    def test_zero_control_is_abnormal(self, working):
        sols = em.lagrange_multipliers(working, working.zero_control())
        abnormal = [s for s in sols if s.classification == "abnormal"]
        assert abnormal
        top = abnormal[0]
        assert np.allclose(top.pT, [1.0, 0.0], atol=1e-12)
        assert abs(top.lam0) < 1e-12
        assert top.corank == 1
        assert top.residual < 1e-12
        assert np.allclose(top.vector, [1.0, 0.0, 0.0], atol=1e-12)

    def test_regular_control_round_trip(self, working):
        p0 = np.array([-1.0, 0.8])
        arc = em.normal_flow(working, p0)
        u = em.phi(working, p0, K=128)
        sols = em.lagrange_multipliers(working, u)
        reg = [s for s in sols if s.classification == "regular-consistent"]
        assert reg
        got = reg[0].pT / np.linalg.norm(reg[0].pT)
        want = arc.terminal_covector / np.linalg.norm(arc.terminal_covector)
        angle = math.acos(min(1.0, abs(float(got @ want))))
        assert angle < 1e-3

    def test_result_is_never_empty(self, double_integrator):
        # a regular control has no exact null direction, the smallest
        # singular direction is still reported
        u = double_integrator.constant_control(1.0)
        sols = em.lagrange_multipliers(double_integrator, u)
        assert len(sols) >= 1


class TestKalman:
    def test_verdicts(self, working, heisenberg, martinet, double_integrator):
        assert em.kalman_regularity(working) == "inapplicable"
        assert em.kalman_regularity(double_integrator) == "regular"
        assert em.kalman_regularity(heisenberg) == "abnormal-candidate"
        assert em.kalman_regularity(martinet) == "abnormal-candidate"


class TestPontryaginCone:
    def test_heisenberg_flags(self, heisenberg):
        rep = em.pontryagin_cone(heisenberg, 0.5, 2)
        assert np.allclose(rep.x, [0.5, 0.0, 0.0], atol=1e-12)
        assert rep.span_dim == 2
        # two bracket levels span the vertical plane, the n-1 test passes
        assert rep.H1 is True
        # [f2, [f2, f1]] vanishes identically, no growth
        assert rep.H2 is False
        assert rep.H3 is True
        assert np.allclose(rep.brackets[0], [0.0, 1.0, 0.25], atol=1e-12)
        assert np.allclose(rep.brackets[1], [0.0, 0.0, 1.0], atol=1e-10)

    def test_martinet_on_the_singular_line(self, martinet):
        # along y = 0 the first bracket vanishes and the span collapses
        rep = em.pontryagin_cone(martinet, 0.5, 2)
        assert rep.span_dim == 1
        assert rep.H1 is False

    def test_two_channel_requirement(self, working):
        with pytest.raises(ValueError):
            em.pontryagin_cone(working, 0.5, 1)

    def test_sample_time_range(self, heisenberg):
        with pytest.raises(ValueError):
            em.pontryagin_cone(heisenberg, 2.0, 1)
        rep = em.pontryagin_cone(heisenberg, 0.0, 1)
        assert np.allclose(rep.x, [0.0, 0.0, 0.0])
