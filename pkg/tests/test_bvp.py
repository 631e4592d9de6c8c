import numpy as np
import pytest

from shadowbilliards import bvp
from shadowbilliards.dynamics import (ClassicalHamiltonian, HarmonicPotential,
                                      KeplerPotential, euclidean, flat_torus)


def free_h(dim=2, mass=None):
    return ClassicalHamiltonian(euclidean(dim), mass=mass)


def torus_h():
    return ClassicalHamiltonian(flat_torus([1.0, 1.0]))


class TestConnect:
    def test_free_flight_unit(self):
        orb = bvp.connect(free_h(), [0.0, 0.0], [1.0, 0.0], 0.5)
        assert orb.action == pytest.approx(1.0, rel=1e-14)
        assert orb.tau == pytest.approx(1.0, rel=1e-14)
        assert np.allclose(orb.p_minus, [1.0, 0.0])
        assert np.allclose(orb.p_plus, [1.0, 0.0])

    def test_torus_rotation_vector(self):
        orb = bvp.connect(torus_h(), np.zeros(2), np.zeros(2), 0.5, label=(3, 4))
        assert orb.action == pytest.approx(5.0, abs=1e-12)

    def test_kepler_full_revolution(self):
        # circular-orbit quadrature oracle: at E = -1/2 the action of one
        # revolution is int v^2 dt = 1 * 2 pi
        h = ClassicalHamiltonian(euclidean(2), KeplerPotential())
        orb = bvp.connect(h, [1.0, 0.0], [1.0, 0.0], -0.5, label=(1, "short"))
        assert orb.action == pytest.approx(2 * np.pi, rel=1e-12)
        assert orb.tau == pytest.approx(2 * np.pi, rel=1e-12)

    def test_energy_on_boundary(self):
        for orb in (bvp.connect(free_h(), [0, 0], [0.3, 0.4], 2.0),
                    bvp.connect(torus_h(), np.zeros(2), np.zeros(2), 0.5, label=(1, 0))):
            h = orb.h
            assert abs(h.energy(orb.path[0], orb.p_minus) - orb.E) <= 1e-8
            assert abs(h.energy(orb.path[-1], orb.p_plus) - orb.E) <= 1e-8

    def test_shooting_harmonic_quarter(self):
        h = ClassicalHamiltonian(euclidean(2), HarmonicPotential())
        orb = bvp.connect(h, [1.0, 0.0], [0.0, 1.0], 1.0, backend="shooting",
                          guess={"direction": np.array([-0.2, 1.0]), "tau0": np.pi / 2})
        assert np.linalg.norm(orb.path[-1] - [0.0, 1.0]) < 1e-9

    def test_action_additivity(self):
        orb = bvp.connect(free_h(), [0, 0], [2.0, 1.0], 0.5)
        mid = orb.path[len(orb.path) // 2]
        s1 = bvp.connect(free_h(), orb.path[0], mid, 0.5).action
        s2 = bvp.connect(free_h(), mid, orb.path[-1], 0.5).action
        assert s1 + s2 == pytest.approx(orb.action, abs=1e-7)

    def test_reversed(self):
        orb = bvp.connect(free_h(), [0, 0], [1.0, 2.0], 0.5)
        rev = orb.reversed()
        assert rev.action == pytest.approx(orb.action, rel=1e-14)
        assert np.allclose(rev.p_minus, -orb.p_plus)


class TestBoundaryMomenta:
    def test_free_flight(self):
        orb = bvp.connect(free_h(), [0, 0], [1.0, 0.0], 0.5)
        rep = bvp.boundary_momenta_check(orb)
        assert rep.max_rel_deviation < 1e-7

    def test_torus_winding(self):
        orb = bvp.connect(torus_h(), np.zeros(2), np.zeros(2), 0.5, label=(1, 0))
        rep = bvp.boundary_momenta_check(orb)
        assert rep.max_rel_deviation < 1e-7

    def test_mass_metric(self):
        orb = bvp.connect(free_h(mass=[2.0, 3.0]), [0.1, -0.2], [0.7, 0.5], 1.3)
        rep = bvp.boundary_momenta_check(orb)
        assert rep.max_rel_deviation < 1e-7

    def test_reversal_negates_momenta(self):
        orb = bvp.connect(free_h(), [0, 0], [1.0, 1.0], 0.5)
        rev = orb.reversed()
        assert np.allclose(rev.p_minus, -orb.p_plus, atol=1e-12)
        assert rev.action == pytest.approx(orb.action, rel=1e-14)

    def test_kepler_arc(self):
        h = ClassicalHamiltonian(euclidean(2), KeplerPotential())
        orb = bvp.connect(h, [0.8, 0.0], [0.0, 0.9], -0.6, label=(0, "short"))
        rep = bvp.boundary_momenta_check(orb, fd_step=1e-6)
        assert rep.max_rel_deviation < 1e-5


class TestTwist:
    def test_free_flight_formula(self):
        # analytic oracle: B = sqrt(2E) (u u^T - I) / ell
        E = 0.5
        qm, qp = np.zeros(2), np.array([2.0, 0.0])
        orb = bvp.connect(free_h(), qm, qp, E)
        res = bvp.twist(orb)
        u = np.array([1.0, 0.0])
        expect = np.sqrt(2 * E) * (np.outer(u, u) - np.eye(2)) / 2.0
        assert np.allclose(res.B, expect, atol=1e-12)
        assert np.linalg.norm(res.B @ u) < 1e-12

    def test_degeneracy_directions(self):
        orb = bvp.connect(free_h(), [0.0, 0.0], [1.0, 1.0], 0.5)
        res = bvp.twist(orb)
        vm, vp = orb.v_minus, orb.v_plus
        Bn = np.linalg.norm(res.B)
        assert np.linalg.norm(res.B @ vm) <= 1e-6 * Bn * np.linalg.norm(vm)
        assert np.linalg.norm(res.B.T @ vp) <= 1e-6 * Bn * np.linalg.norm(vp)

    def test_restriction_to_line(self):
        # restriction to a direction transversal to the chord is nonzero
        orb = bvp.connect(free_h(), [0.0, 0.0], [1.0, 0.0], 0.5)
        line = np.array([[0.0], [1.0]])
        res = bvp.twist(orb, left_basis=line, right_basis=line)
        assert res.restricted.shape == (1, 1)
        assert abs(res.restricted[0, 0]) > 0.1
        assert res.det_restricted == pytest.approx(res.restricted[0, 0])

    def test_fd_matches_analytic_on_mass_metric(self):
        h = free_h(mass=[1.0, 4.0])
        orb = bvp.connect(h, [0.0, 0.0], [1.0, 0.5], 0.8)
        analytic = bvp.twist(orb).B
        orb_fd = bvp.CollisionOrbit(h, orb.E, orb.q_minus, orb.q_plus, orb.action,
                                    orb.tau, orb.p_minus, orb.p_plus, orb.path,
                                    backend="generic", reconnect=orb.reconnect)
        numeric = bvp.twist(orb_fd).B
        assert np.allclose(analytic, numeric, atol=1e-6)


class TestConjugate:
    def test_free_flight_nondegenerate(self):
        orb = bvp.connect(free_h(), [0, 0], [1.5, 0.2], 0.5)
        rep = bvp.conjugate_test(orb)
        assert rep.nondegenerate

    def test_harmonic_half_period_degenerate(self):
        # all unit-energy orbits from q0 refocus at -q0 after time pi
        h = ClassicalHamiltonian(euclidean(2), HarmonicPotential())
        orb = bvp.connect(h, [0.5, 0.0], [-0.5, 0.0], 1.0, backend="shooting",
                          guess={"direction": np.array([0.0, 1.0]), "tau0": np.pi})
        rep = bvp.conjugate_test(orb, conj_tol=1e-4)
        assert not rep.nondegenerate

    def test_kepler_revolution_degenerate(self):
        h = ClassicalHamiltonian(euclidean(2), KeplerPotential())
        orb = bvp.connect(h, [1.0, 0.0], [1.0, 0.0], -0.5, label=(1, "short"))
        rep = bvp.conjugate_test(orb, conj_tol=1e-4)
        assert not rep.nondegenerate
