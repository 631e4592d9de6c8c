import numpy as np
import pytest

from shadowbilliards import billiard, dls, scenarios
from shadowbilliards.billiard import (BilliardDomain, BoxWalls,
                                      GrazingEventError, ShadowSolveError,
                                      billiard_trajectory, expansion_residual,
                                      generating_eps, lyapunov_estimate, reflect,
                                      replay, shadow_error, shadow_solve)
from shadowbilliards.dynamics import ClassicalHamiltonian, PhaseState, euclidean


def torus_setup(code=((1, 0), (0, 1))):
    scn = scenarios.torus_point_scenario()
    return scn, scn.chain(list(code))


class TestReflect:
    def test_head_on(self):
        h = ClassicalHamiltonian(euclidean(2))
        p = reflect(h, np.zeros(2), np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
        assert np.allclose(p, [-1.0, 0.0])

    def test_mirror(self):
        h = ClassicalHamiltonian(euclidean(2))
        p0 = np.array([1.0, 1.0]) / np.sqrt(2)
        p = reflect(h, np.zeros(2), p0, np.array([-1.0, 0.0]))
        assert np.allclose(p, [-p0[0], p0[1]])

    def test_mass_metric_conserves_energy(self):
        h = ClassicalHamiltonian(euclidean(2), mass=[1.0, 4.0])
        q = np.array([0.3, 0.1])
        p0 = np.array([0.7, -1.3])
        n = np.array([0.6, 0.8])
        p1 = reflect(h, q, p0, n)
        assert abs(h.energy(q, p1) - h.energy(q, p0)) <= 1e-12
        dp = p1 - p0
        assert np.linalg.norm(dp - (dp @ n) * n / (n @ n)) <= 1e-12 * np.linalg.norm(dp)

    def test_batched_random_conservation(self):
        rng = np.random.default_rng(0)
        h = ClassicalHamiltonian(euclidean(3), mass=[1.0, 2.0, 0.5])
        B = 10_000
        q = rng.normal(size=(B, 3))
        p = rng.normal(size=(B, 3))
        n = rng.normal(size=(B, 3))
        p1 = reflect(h, q, p, n)
        minv = h.mass_inv
        e0 = 0.5 * np.einsum("bi,ij,bj->b", p, minv, p)
        e1 = 0.5 * np.einsum("bi,ij,bj->b", p1, minv, p1)
        assert np.max(np.abs(e1 - e0)) <= 1e-12 * max(1.0, np.max(np.abs(e0)))
        dp = p1 - p
        cross = dp[:, 0] * n[:, 1] - dp[:, 1] * n[:, 0]
        assert np.max(np.abs(cross) / np.linalg.norm(dp, axis=1)) <= 1e-10

    def test_tangential_incidence_raises(self):
        h = ClassicalHamiltonian(euclidean(2))
        with pytest.raises(GrazingEventError):
            reflect(h, np.zeros(2), np.array([0.0, 1.0]), np.array([1.0, 0.0]))


class TestTrajectory:
    def test_head_on_reversal(self):
        scn, _ = torus_setup()
        dom = BilliardDomain(scn.h, scn.scatterer, 0.05)
        s0 = PhaseState(np.array([0.5, 0.0]), np.array([-1.0, 0.0]))
        run = billiard_trajectory(dom, s0, 1)
        assert len(run.events) == 1
        assert np.allclose(run.events[0].p_after, [1.0, 0.0], atol=1e-9)

    def test_missing_the_ball(self):
        scn, _ = torus_setup()
        dom = BilliardDomain(scn.h, scn.scatterer, 0.05)
        s0 = PhaseState(np.array([0.5, 0.1]), np.array([-1.0, 0.0]))
        run = billiard_trajectory(dom, s0, 1, t_max=1.0)
        assert not run.events

    def test_long_run_energy(self):
        scn, _ = torus_setup()
        dom = BilliardDomain(scn.h, scn.scatterer, 0.15)
        s0 = PhaseState(np.array([0.5, 0.3]), np.array([0.8, 0.6]))
        E0 = scn.h.energy(s0.q, s0.p)
        run = billiard_trajectory(dom, s0, 1000, record_samples=False)
        assert len(run.events) == 1000
        drift = abs(scn.h.energy(run.final.q, run.final.p) - E0)
        assert drift <= 1e-7

    def test_grazing_rejected(self):
        scn, _ = torus_setup()
        eps = 0.1
        dom = BilliardDomain(scn.h, scn.scatterer, eps)
        b = eps * (1 - 1e-9)
        s0 = PhaseState(np.array([0.5, b]), np.array([-1.0, 0.0]))
        with pytest.raises(GrazingEventError):
            billiard_trajectory(dom, s0, 1, t_max=1.0)

    def test_box_wall_reflections(self):
        scn = scenarios.two_ball_box_scenario(masses=(1.0, 2.0))
        dom = BilliardDomain(scn.h, scn.scatterer, 0.01,
                             walls=BoxWalls(np.zeros(2), np.ones(2)))
        s0 = PhaseState(np.array([0.5, 0.9]), np.array([0.0, 2.0 * 0.7]))
        run = billiard_trajectory(dom, s0, 1)
        assert run.events[0].surface != 0
        assert run.events[0].p_after[1] == pytest.approx(-s0.p[1])


class TestGeneratingFunction:
    def test_exact_chord(self):
        # exact distance oracle between tube points across the winding
        scn, _ = torus_setup()
        eps = 1e-3
        s_m = np.array([1.0, 0.0])
        s_p = np.array([0.0, 1.0])
        got = generating_eps(scn.dl, (1, 0), 0, s_m, 0, s_p, eps)
        chord = np.array([1.0, 0.0]) + eps * s_p - eps * s_m
        assert got == pytest.approx(np.linalg.norm(chord), rel=1e-12)

    def test_eps_zero(self):
        scn, _ = torus_setup()
        s = np.array([1.0, 0.0])
        got = generating_eps(scn.dl, (2, 1), 0, s, 0, s, 0.0)
        assert got == pytest.approx(np.sqrt(5.0), rel=1e-14)

    def test_expansion_slope_two(self):
        scn, _ = torus_setup()
        s_m = np.array([0.6, 0.8])
        s_p = np.array([-0.8, 0.6])
        eps_list = np.logspace(-2, -4, 7)
        resid = [expansion_residual(scn.dl, (1, 0), 0, s_m, 0, s_p, e)
                 for e in eps_list]
        slope = np.polyfit(np.log(eps_list), np.log(resid), 1)[0]
        assert abs(slope - 2.0) <= 0.1


class TestShadowSolve:
    def test_alternating_code_converges_within_5eps(self):
        scn, chain = torus_setup()
        eps = 1e-3
        sc = shadow_solve(scn.dl, chain, eps)
        assert sc.residual_inf <= 1e-10 * np.sqrt(2 * scn.E)
        err = shadow_error(scn.dl, chain, sc)
        assert err <= 5 * eps

    def test_inadmissible_code_rejected(self):
        scn = scenarios.torus_point_scenario()
        chain = scn.chain([(1, 0), (2, 0)])
        with pytest.raises(ShadowSolveError):
            shadow_solve(scn.dl, chain, 1e-3)

    def test_box_fixed_endpoints_preserved(self):
        scn = scenarios.two_ball_box_scenario(masses=(1.0, 2.0))
        a, b = np.array([0.15, 0.85]), np.array([0.2, 0.8])
        code = [(0, 0), (-1, 1), (-1, 1), (0, 0)]
        dl = scenarios.box_fixed_lagrangian(scn, a, b, code)
        chain0 = scenarios.box_fixed_chain(code, [np.array([0.55]), np.array([0.7]),
                                                  np.array([0.6])])
        res = dls.newton_chain(dl, chain0)
        sc = shadow_solve(dl, res.chain, 1e-3)
        assert np.linalg.norm(sc.orbits[0].path[0] - a) <= 1e-9
        assert np.linalg.norm(sc.orbits[-1].path[-1] - b) <= 1e-9

    def test_uniqueness_within_predictor_basin(self):
        scn, chain = torus_setup()
        eps = 1e-3
        sc1 = shadow_solve(scn.dl, chain, eps, tol_factor=1e-12)
        # second start: slightly rotated tube directions
        rot = np.array([[np.cos(0.05), -np.sin(0.05)], [np.sin(0.05), np.cos(0.05)]])
        dirs = [rot @ bp.s for bp in sc1.boundary]
        sc2 = shadow_solve(scn.dl, chain, eps, tol_factor=1e-12,
                           initial_directions=dirs)
        gap = max(np.linalg.norm(b1.ambient - b2.ambient)
                  for b1, b2 in zip(sc1.boundary, sc2.boundary))
        assert gap <= 1e-9


class TestShadowError:
    def test_eps_sweep_slope(self):
        scn, chain = torus_setup()
        eps_list = [1e-2, 10**-2.5, 1e-3, 10**-3.5]
        errs = [shadow_error(scn.dl, chain, shadow_solve(scn.dl, chain, e))
                for e in eps_list]
        slope = np.polyfit(np.log(eps_list), np.log(errs), 1)[0]
        assert 0.9 <= slope <= 1.1

    def test_halving_ratio(self):
        scn, chain = torus_setup([(1, 0), (1, 1), (0, 1), (-1, 1)])
        e1 = shadow_error(scn.dl, chain, shadow_solve(scn.dl, chain, 2e-3))
        e2 = shadow_error(scn.dl, chain, shadow_solve(scn.dl, chain, 1e-3))
        assert 0.4 <= e2 / e1 <= 0.6

    def test_degenerate_eps_zero(self):
        scn, chain = torus_setup()
        sc = shadow_solve(scn.dl, chain, 1e-3)
        sc.eps = 0.0
        assert shadow_error(scn.dl, chain, sc) == 0.0


class TestReplayConsistency:
    def test_torus_replay(self):
        scn, chain = torus_setup([(1, 0), (0, 1), (1, 1), (0, -1)])
        eps = 1e-2
        sc = shadow_solve(scn.dl, chain, eps, tol_factor=1e-13)
        dom = BilliardDomain(scn.h, scn.scatterer, eps)
        run = replay(sc, dom, n_events=len(sc.orbits))
        seq = [*sc.boundary[1:], sc.boundary[0]]
        for ev, bp in zip(run.events, seq):
            assert np.linalg.norm(scn.h.space.centered(ev.q - bp.ambient)) <= 1e-6


class TestLyapunov:
    def setup_method(self):
        self.scn, self.chain = torus_setup()

    def solve_at(self, eps):
        sc = shadow_solve(self.scn.dl, self.chain, eps, tol_factor=1e-13)
        dom = BilliardDomain(self.scn.h, self.scn.scatterer, eps)
        return lyapunov_estimate(sc, dom)

    def test_log_eps_fit(self):
        eps_list = [1e-2, 10**-2.5, 1e-3, 10**-3.5]
        lams = [float(np.max(self.solve_at(e))) for e in eps_list]
        x = np.log(1.0 / np.asarray(eps_list))
        A = np.vstack([np.ones_like(x), x]).T
        (a, b), *_ = np.linalg.lstsq(A, np.asarray(lams), rcond=None)
        pred = A @ np.array([a, b])
        r2 = 1 - np.sum((lams - pred) ** 2) / np.sum((lams - np.mean(lams)) ** 2)
        assert b > 0
        assert r2 >= 0.98

    def test_large_count_equals_codimension(self):
        exps = self.solve_at(1e-3)
        big = np.sum(np.abs(exps) >= 0.5 * np.max(np.abs(exps)))
        assert big == self.scn.scatterer.codim == 2

    def test_plus_minus_pairs(self):
        exps = self.solve_at(1e-2)
        assert abs(exps[0] + exps[-1]) <= 1e-6
