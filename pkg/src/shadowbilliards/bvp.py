"""Fixed-energy two-point connectors and their first/second variations.

connect() returns a collision orbit between two configuration points at a
prescribed energy: its Maupertuis action, boundary momenta, travel time and
sampled path. Closed-form backends (straight chords on flat spaces, planar
Kepler arcs) are authoritative where they apply and are cross-checked against
the symplectic integrator; everything else goes through a shooting Newton
solve. Multiple connecting orbits between the same endpoints are never
searched for: the caller disambiguates with an explicit label (torus winding,
Kepler revolution count and arc branch).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from . import kepler as kp
from .dynamics import (ClassicalHamiltonian, DomainError, KeplerPotential,
                       PhaseState, Trajectory, _verlet_steps, flow_segment,
                       jacobi_action)


class ConnectError(RuntimeError):
    """Shooting Newton failed to join the endpoints at the requested energy."""


class ConjugateError(RuntimeError):
    """Endpoints conjugate along the extremal; the two-point problem degenerates."""


@dataclass
class CollisionOrbit:
    """Energy-E connecting orbit with boundary data and a sampled path."""

    h: ClassicalHamiltonian
    E: float
    q_minus: np.ndarray
    q_plus: np.ndarray
    action: float
    tau: float
    p_minus: np.ndarray
    p_plus: np.ndarray
    path: np.ndarray                      # cover coordinates, starts at q_minus
    label: object = None
    winding: Optional[np.ndarray] = None
    backend: str = "straight"
    reconnect: Optional[Callable] = None  # (q_minus, q_plus) -> CollisionOrbit

    def __post_init__(self):
        for name in ("q_minus", "q_plus", "p_minus", "p_plus"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.path = np.asarray(self.path, dtype=float)
        em = self.h.energy(self.path[0], self.p_minus)
        ep = self.h.energy(self.path[-1], self.p_plus)
        if max(abs(em - self.E), abs(ep - self.E)) > 1e-8 * max(1.0, abs(self.E)):
            raise ConnectError("boundary momenta violate the energy constraint")

    @property
    def v_minus(self) -> np.ndarray:
        return self.h.velocity(self.path[0], self.p_minus)

    @property
    def v_plus(self) -> np.ndarray:
        return self.h.velocity(self.path[-1], self.p_plus)

    def reversed(self) -> "CollisionOrbit":
        """Time-reversed orbit (valid for w == 0)."""
        wind = None if self.winding is None else -self.winding
        return CollisionOrbit(self.h, self.E, self.q_plus, self.q_minus,
                              self.action, self.tau, -self.p_plus, -self.p_minus,
                              self.path[::-1].copy(), self.label, wind, self.backend)


# ---------------------------------------------------------------------------
# Straight-chord backend (free flight on Euclidean space or flat torus)
# ---------------------------------------------------------------------------

def _straight_connect(h: ClassicalHamiltonian, qm, qp, E, winding=None,
                      label=None, cross_check: bool = True,
                      samples: int = 65) -> CollisionOrbit:
    if E <= 0:
        raise DomainError("free flight needs E > 0")
    qm = np.asarray(qm, dtype=float)
    qp = np.asarray(qp, dtype=float)
    disp = h.space.displacement(qm, qp, winding)
    ell = h.mass_norm(disp)
    if ell == 0:
        raise ConnectError("coincident endpoints with zero winding")
    speed = np.sqrt(2.0 * E)
    v = speed * disp / ell
    p = h.mass @ v
    tau = ell / speed
    ts = np.linspace(0.0, tau, samples)
    path = qm[None, :] + ts[:, None] * v[None, :]
    action = speed * ell

    if cross_check:
        traj = flow_segment(h, PhaseState(qm, p), tau)
        err = np.linalg.norm(traj.qs[-1] - (qm + disp))
        if err > 1e-9 * max(1.0, ell):
            raise ConnectError(f"integrator cross-check failed: endpoint error {err:.2e}")

    def redo(qm2, qp2):
        return _straight_connect(h, qm2, qp2, E, winding, label, cross_check=False,
                                 samples=samples)

    return CollisionOrbit(h, E, qm, qp, action, tau, p, p, path, label=label,
                          winding=None if winding is None else np.asarray(winding),
                          backend="straight", reconnect=redo)


# ---------------------------------------------------------------------------
# Kepler backend (planar, attracting center at the origin, mu = 1)
# ---------------------------------------------------------------------------

def _kepler_connect(h: ClassicalHamiltonian, qm, qp, E, label,
                    samples: int = 513) -> CollisionOrbit:
    pot = h.potential
    if not isinstance(pot, KeplerPotential) or abs(pot.mu - 1.0) > 1e-14:
        raise ConnectError("Kepler backend needs the unit-mu Kepler potential")
    if h.space.dim != 2 or h.space.is_torus or h.magnetic is not None:
        raise ConnectError("Kepler backend is planar Euclidean without magnetic terms")
    if E >= 0:
        raise DomainError("elliptic Kepler arcs need E < 0")
    n, arc = label if isinstance(label, tuple) else (label, "short")
    n = int(n)
    qm = np.asarray(qm, dtype=float)
    qp = np.asarray(qp, dtype=float)
    z = (qm, qp)

    degenerate = np.linalg.norm(qp - qm) < 1e-12
    if n == 0:
        if degenerate:
            raise ConnectError("zero-length arc with n = 0")
        scale = -2.0 * E
        arcs = kp.simple_arc_candidates(scale * qm, scale * qp)
        chosen = kp.select_arc(arcs, arc)
        action = (-2.0 * E) ** (-0.5) * chosen.action
        tau = (1.0 / (-2.0 * E)) ** 1.5 * chosen.mean_span
        vscale = np.sqrt(-2.0 * E)
        vm, vp = vscale * chosen.v_minus, vscale * chosen.v_plus
        a = 1.0 / (-2.0 * E)
        path = a * chosen.sample(samples)
    else:
        action = kp.J_n(E, z, n, arc)
        tau = kp.travel_time(E, z, n, arc)
        path = kp.sample_orbit(E, z, n, arc, num=samples)
        if degenerate:
            # Laplace-degenerate family: gauge velocity from the sampled ellipse
            vm = (path[1] - path[0])
            vm = vm / np.linalg.norm(vm) * np.sqrt(2.0 * (E - pot.value(qm)))
            vp = (path[-1] - path[-2])
            vp = vp / np.linalg.norm(vp) * np.sqrt(2.0 * (E - pot.value(qp)))
        else:
            vm, vp = kp.arc_endpoint_velocities(E, z, n, arc)

    def redo(qm2, qp2):
        return _kepler_connect(h, qm2, qp2, E, label, samples)

    return CollisionOrbit(h, E, qm, qp, float(action), float(tau), vm, vp, path,
                          label=label, backend="kepler", reconnect=redo)


# ---------------------------------------------------------------------------
# Shooting backend
# ---------------------------------------------------------------------------

def _flow_to(h: ClassicalHamiltonian, q0, p0, tau, steps_per_unit: float):
    nsteps = max(8, int(np.ceil(abs(tau) * steps_per_unit)))
    q, p, _, _ = _verlet_steps(h, q0, p0, tau / nsteps, nsteps, sample_every=nsteps)
    return q, p


def _shooting_connect(h: ClassicalHamiltonian, qm, qp, E, guess, label=None,
                      tol: float = 1e-10, max_iter: int = 60,
                      steps_per_unit: float = 2000.0, fd_step: float = 1e-6,
                      samples: int = 257) -> CollisionOrbit:
    """Newton on (p-, tau): reach the lifted endpoint on the energy shell."""
    qm = np.asarray(qm, dtype=float)
    qp = np.asarray(qp, dtype=float)
    d = h.dim
    if not (h.potential.value(qm) < E and h.potential.value(qp) < E):
        raise DomainError("endpoints outside the domain of possible motion")
    target = qm + h.space.displacement(qm, qp,
                                       None if not h.space.is_torus else
                                       (guess.get("winding") if isinstance(guess, dict) else None))

    if isinstance(guess, dict):
        p0 = guess.get("p0")
        tau0 = guess.get("tau0")
        direction = guess.get("direction")
    else:
        p0, tau0, direction = None, None, guess
    if p0 is None:
        if direction is None:
            direction = target - qm
        direction = np.asarray(direction, dtype=float)
        vnorm = h.mass_norm(direction)
        if vnorm == 0:
            raise ConnectError("guess direction must be nonzero")
        speed = np.sqrt(2.0 * max(E - h.potential.value(qm), 1e-12))
        v0 = speed * direction / vnorm
        p0 = h.momentum_from_velocity(qm, v0)
    p0 = np.asarray(p0, dtype=float)
    if tau0 is None:
        tau0 = np.linalg.norm(target - qm) / max(h.comass_norm(p0), 1e-12)

    p, tau = p0.copy(), float(tau0)
    scale = max(1.0, np.linalg.norm(target - qm))

    def residual(p, tau):
        q_end, _ = _flow_to(h, qm, p, tau, steps_per_unit)
        return np.concatenate([q_end - target, [h.energy(qm, p) - E]])

    r = residual(p, tau)
    for _ in range(max_iter):
        if np.linalg.norm(r[:d]) <= tol * scale and abs(r[d]) <= tol * max(1.0, abs(E)):
            break
        # Jacobian: batched finite differences in p-, analytic tau column
        P = np.repeat(p[None, :], 2 * d, axis=0)
        for i in range(d):
            P[2 * i, i] += fd_step
            P[2 * i + 1, i] -= fd_step
        Q0 = np.repeat(qm[None, :], 2 * d, axis=0)
        nsteps = max(8, int(np.ceil(abs(tau) * steps_per_unit)))
        Qe, Pe, _, _ = _verlet_steps(h, Q0, P, tau / nsteps, nsteps, sample_every=nsteps)
        J = np.zeros((d + 1, d + 1))
        for i in range(d):
            J[:d, i] = (Qe[2 * i] - Qe[2 * i + 1]) / (2 * fd_step)
            J[d, i] = (h.energy(qm, P[2 * i]) - h.energy(qm, P[2 * i + 1])) / (2 * fd_step)
        q_end, p_end = _flow_to(h, qm, p, tau, steps_per_unit)
        J[:d, d] = h.velocity(q_end, p_end)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise ConjugateError("singular shooting Jacobian (conjugate endpoints)") from exc
        lam = 1.0
        for _ in range(30):
            p_new = p + lam * step[:d]
            tau_new = tau + lam * step[d]
            if tau_new > 0:
                r_new = residual(p_new, tau_new)
                if np.linalg.norm(r_new) < np.linalg.norm(r):
                    break
            lam *= 0.5
        else:
            raise ConnectError("shooting Newton stalled (no descent step)")
        p, tau, r = p_new, tau_new, r_new
    else:
        raise ConnectError(f"shooting Newton did not converge: |r| = {np.linalg.norm(r):.2e}")

    traj = flow_segment(h, PhaseState(qm, p), tau,
                        steps_per_unit_time=max(steps_per_unit, 2000.0))
    idx = np.linspace(0, len(traj.qs) - 1, min(samples, len(traj.qs))).astype(int)
    path = traj.qs[idx]
    p_plus = traj.ps[-1]
    action = jacobi_action(h, traj.qs, E)

    def redo(qm2, qp2):
        return _shooting_connect(h, qm2, qp2, E, {"p0": p, "tau0": tau}, label,
                                 tol, max_iter, steps_per_unit, fd_step, samples)

    return CollisionOrbit(h, E, qm, qp, float(action), float(tau), p, p_plus, path,
                          label=label, backend="shooting", reconnect=redo)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def connect(h: ClassicalHamiltonian, q_minus, q_plus, E: float, guess=None,
            label=None, backend: str = "auto", **kw) -> CollisionOrbit:
    """Energy-E orbit from q_minus to q_plus for the branch named by the label.

    Labels: torus winding vector for free flight; (revolutions, arc) for the
    Kepler backend. backend='auto' picks the closed form when one applies.
    """
    if backend == "auto":
        if h.potential.is_zero and h.magnetic is None:
            backend = "straight"
        elif isinstance(h.potential, KeplerPotential) and E < 0 and h.dim == 2 \
                and not h.space.is_torus:
            backend = "kepler"
        else:
            backend = "shooting"
    if backend == "straight":
        winding = np.asarray(label, dtype=int) if (label is not None and h.space.is_torus) else None
        return _straight_connect(h, q_minus, q_plus, E, winding, label, **kw)
    if backend == "kepler":
        return _kepler_connect(h, q_minus, q_plus, E, label, **kw)
    if backend == "shooting":
        return _shooting_connect(h, q_minus, q_plus, E, guess, label, **kw)
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class MomentaReport:
    max_rel_deviation: float
    dS_minus: np.ndarray
    dS_plus: np.ndarray


def boundary_momenta_check(orbit: CollisionOrbit, fd_step: float = 1e-6) -> MomentaReport:
    """Central differences of the action in the endpoints against -p-, +p+."""
    if orbit.reconnect is None:
        raise ValueError("orbit does not carry a reconnect closure")
    d = orbit.q_minus.size
    gm = np.zeros(d)
    gp = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = fd_step
        gm[i] = (orbit.reconnect(orbit.q_minus + e, orbit.q_plus).action
                 - orbit.reconnect(orbit.q_minus - e, orbit.q_plus).action) / (2 * fd_step)
        gp[i] = (orbit.reconnect(orbit.q_minus, orbit.q_plus + e).action
                 - orbit.reconnect(orbit.q_minus, orbit.q_plus - e).action) / (2 * fd_step)
    scale = max(np.linalg.norm(orbit.p_minus), np.linalg.norm(orbit.p_plus), 1e-30)
    dev = max(np.linalg.norm(gm + orbit.p_minus), np.linalg.norm(gp - orbit.p_plus))
    return MomentaReport(float(dev / scale), gm, gp)


@dataclass(frozen=True)
class TwistResult:
    B: np.ndarray
    restricted: Optional[np.ndarray]
    det_restricted: Optional[float]


def twist(orbit: CollisionOrbit, left_basis=None, right_basis=None,
          fd_step: float = 1e-5) -> TwistResult:
    """Mixed second derivative B = D_{q-} D_{q+} S, optionally restricted.

    Analytic for straight chords; otherwise second-order central differences
    of the reconnect action. Restriction bases are (d, k) column matrices of
    tangent directions at the endpoints.
    """
    d = orbit.q_minus.size
    if orbit.backend == "straight":
        h = orbit.h
        disp = orbit.path[-1] - orbit.path[0]
        ell = h.mass_norm(disp)
        u = disp / ell
        Mu = h.mass @ u
        B = np.sqrt(2.0 * orbit.E) * (np.outer(Mu, Mu) - h.mass) / ell
    else:
        if orbit.reconnect is None:
            raise ValueError("orbit does not carry a reconnect closure")
        B = np.zeros((d, d))
        for i in range(d):
            for j in range(d):
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i] = fd_step
                ej[j] = fd_step
                spp = orbit.reconnect(orbit.q_minus + ei, orbit.q_plus + ej).action
                spm = orbit.reconnect(orbit.q_minus + ei, orbit.q_plus - ej).action
                smp = orbit.reconnect(orbit.q_minus - ei, orbit.q_plus + ej).action
                smm = orbit.reconnect(orbit.q_minus - ei, orbit.q_plus - ej).action
                B[i, j] = (spp - spm - smp + smm) / (4 * fd_step**2)
    restricted = None
    det_r = None
    if left_basis is not None and right_basis is not None:
        L = np.atleast_2d(np.asarray(left_basis, dtype=float))
        R = np.atleast_2d(np.asarray(right_basis, dtype=float))
        if L.shape[0] != d:
            L = L.T
        if R.shape[0] != d:
            R = R.T
        restricted = L.T @ B @ R
        if restricted.shape[0] == restricted.shape[1]:
            det_r = float(np.linalg.det(restricted))
    return TwistResult(B, restricted, det_r)


@dataclass(frozen=True)
class ConjugateReport:
    nondegenerate: bool
    sigma_min: float
    sigma_scale: float


def conjugate_test(orbit: CollisionOrbit, conj_tol: float = 1e-8,
                   fd_step: float = 1e-6,
                   steps_per_unit: float = 4000.0) -> ConjugateReport:
    """Smallest singular value of the shooting sensitivity at the orbit.

    The sensitivity is the Jacobian of (endpoint, energy) with respect to
    (initial momentum, travel time); a small sigma_min signals conjugate
    endpoints. The flow is re-integrated, so the test is backend independent.
    """
    h = orbit.h
    d = h.dim
    qm = orbit.path[0]
    p = orbit.p_minus
    tau = orbit.tau

    P = np.repeat(p[None, :], 2 * d, axis=0)
    for i in range(d):
        P[2 * i, i] += fd_step
        P[2 * i + 1, i] -= fd_step
    nsteps = max(8, int(np.ceil(tau * steps_per_unit)))
    Q0 = np.repeat(qm[None, :], 2 * d, axis=0)
    Qe, _, _, _ = _verlet_steps(h, Q0, P, tau / nsteps, nsteps, sample_every=nsteps)
    J = np.zeros((d + 1, d + 1))
    for i in range(d):
        J[:d, i] = (Qe[2 * i] - Qe[2 * i + 1]) / (2 * fd_step)
        J[d, i] = (h.energy(qm, P[2 * i]) - h.energy(qm, P[2 * i + 1])) / (2 * fd_step)
    q_end, p_end, _, _ = _verlet_steps(h, qm, p, tau / nsteps, nsteps, sample_every=nsteps)
    J[:d, d] = h.velocity(q_end, p_end)
    sig = np.linalg.svd(J, compute_uv=False)
    return ConjugateReport(bool(sig[-1] > conj_tol * sig[0]), float(sig[-1]), float(sig[0]))
