"""Flat ambient spaces, classical Hamiltonians, symplectic flows, Maupertuis action.

The configuration space is flat: Euclidean space or a flat torus. Generality
enters through the potential, an optional magnetic covector field, and a
constant mass matrix. Trajectories are integrated in the universal cover, so
sampled paths carry their winding explicitly and never wrap mid-flight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class DomainError(ValueError):
    """Configuration point outside the admissible domain (singular set or E <= W)."""


class StepUnderflowError(RuntimeError):
    """Integrator step control failed to meet the energy tolerance."""


# ---------------------------------------------------------------------------
# Ambient space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AmbientSpace:
    """Flat configuration space: Euclidean, or a torus with per-axis periods."""

    dim: int
    periods: Optional[np.ndarray] = None  # None -> Euclidean

    def __post_init__(self):
        if not (1 <= self.dim):
            raise ValueError("dimension must be positive")
        if self.periods is not None:
            p = np.asarray(self.periods, dtype=float)
            if p.shape != (self.dim,):
                raise ValueError("periods must have one entry per coordinate")
            if np.any(p <= 0):
                raise ValueError("torus periods must be strictly positive")
            object.__setattr__(self, "periods", p)

    @property
    def is_torus(self) -> bool:
        return self.periods is not None

    def wrap(self, q: np.ndarray) -> np.ndarray:
        """Representative in [0, L) per coordinate (identity on Euclidean space)."""
        q = np.asarray(q, dtype=float)
        if self.periods is None:
            return q
        return np.mod(q, self.periods)

    def centered(self, dq: np.ndarray) -> np.ndarray:
        """Shortest displacement representative, in [-L/2, L/2) per coordinate."""
        dq = np.asarray(dq, dtype=float)
        if self.periods is None:
            return dq
        return dq - self.periods * np.round(dq / self.periods)

    def displacement(self, q_from, q_to, winding=None) -> np.ndarray:
        """Displacement vector q_to - q_from.

        On the torus the winding (integer vector) selects the homotopy class;
        without it the shortest representative is returned.
        """
        d = np.asarray(q_to, dtype=float) - np.asarray(q_from, dtype=float)
        if self.periods is None:
            return d
        if winding is None:
            return self.centered(d)
        return self.centered(d) + np.asarray(winding, dtype=float) * self.periods

    def distance(self, qa, qb) -> float:
        return float(np.linalg.norm(self.displacement(qa, qb)))


def euclidean(dim: int) -> AmbientSpace:
    return AmbientSpace(dim)


def flat_torus(periods: Sequence[float]) -> AmbientSpace:
    p = np.asarray(periods, dtype=float)
    return AmbientSpace(len(p), p)


# ---------------------------------------------------------------------------
# Potentials and magnetic fields
# ---------------------------------------------------------------------------

class Potential:
    """Scalar potential with gradient; subclasses may declare a singular set."""

    def value(self, q: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return False


class ZeroPotential(Potential):
    def value(self, q):
        return 0.0

    def grad(self, q):
        return np.zeros_like(np.asarray(q, dtype=float))

    @property
    def is_zero(self):
        return True


class ConstantPotential(Potential):
    def __init__(self, c: float):
        self.c = float(c)

    def value(self, q):
        return self.c

    def grad(self, q):
        return np.zeros_like(np.asarray(q, dtype=float))


class HarmonicPotential(Potential):
    """W(q) = (k/2) |q - center|^2."""

    def __init__(self, k: float = 1.0, center=None):
        self.k = float(k)
        self.center = None if center is None else np.asarray(center, dtype=float)

    def _rel(self, q):
        q = np.asarray(q, dtype=float)
        return q if self.center is None else q - self.center

    def value(self, q):
        r = self._rel(q)
        return 0.5 * self.k * float(r @ r)

    def grad(self, q):
        return self.k * self._rel(q)


class KeplerPotential(Potential):
    """W(q) = -mu / |q - center|, singular at the center."""

    def __init__(self, mu: float = 1.0, center=None, r_min: float = 1e-12):
        self.mu = float(mu)
        self.center = center
        self.r_min = float(r_min)

    def _rel(self, q):
        q = np.asarray(q, dtype=float)
        return q if self.center is None else q - np.asarray(self.center, dtype=float)

    def value(self, q):
        r = np.linalg.norm(self._rel(q))
        if r <= self.r_min:
            raise DomainError(f"point within {self.r_min} of the Kepler center")
        return -self.mu / r

    def grad(self, q):
        rel = self._rel(q)
        r = np.linalg.norm(rel)
        if r <= self.r_min:
            raise DomainError(f"point within {self.r_min} of the Kepler center")
        return self.mu * rel / r**3


class CallablePotential(Potential):
    """Wrap plain callables; gradient by central differences if not supplied."""

    def __init__(self, fn: Callable[[np.ndarray], float], grad=None, h: float = 1e-6):
        self.fn = fn
        self._grad = grad
        self.h = h

    def value(self, q):
        return float(self.fn(np.asarray(q, dtype=float)))

    def grad(self, q):
        q = np.asarray(q, dtype=float)
        if self._grad is not None:
            return np.asarray(self._grad(q), dtype=float)
        g = np.empty_like(q)
        for i in range(q.size):
            e = np.zeros_like(q)
            e[i] = self.h
            g[i] = (self.fn(q + e) - self.fn(q - e)) / (2 * self.h)
        return g


class MagneticField:
    """Covector field w(q) with Jacobian Dw(q) (rows: components, cols: d/dq)."""

    def __init__(self, w: Callable[[np.ndarray], np.ndarray],
                 jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 h: float = 1e-6):
        self._w = w
        self._jac = jac
        self.h = h

    def value(self, q):
        return np.asarray(self._w(np.asarray(q, dtype=float)), dtype=float)

    def jac(self, q):
        q = np.asarray(q, dtype=float)
        if self._jac is not None:
            return np.asarray(self._jac(q), dtype=float)
        d = q.size
        J = np.empty((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = self.h
            J[:, i] = (self.value(q + e) - self.value(q - e)) / (2 * self.h)
        return J


# ---------------------------------------------------------------------------
# Classical Hamiltonian and phase states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have matching dimension")


class ClassicalHamiltonian:
    """H(q,p) = 1/2 |p - w(q)|^2 + W(q), norm induced by the inverse mass matrix."""

    def __init__(self, space: AmbientSpace, potential: Optional[Potential] = None,
                 mass=None, magnetic: Optional[MagneticField] = None):
        self.space = space
        self.potential = potential if potential is not None else ZeroPotential()
        d = space.dim
        if mass is None:
            M = np.eye(d)
        else:
            M = np.asarray(mass, dtype=float)
            if M.ndim == 1:
                M = np.diag(M)
            if M.shape != (d, d) or not np.allclose(M, M.T):
                raise ValueError("mass matrix must be symmetric d x d")
            if np.any(np.linalg.eigvalsh(M) <= 0):
                raise ValueError("mass matrix must be positive definite")
        self.mass = M
        self.mass_inv = np.linalg.inv(M)
        self.magnetic = magnetic

    @property
    def dim(self) -> int:
        return self.space.dim

    def w(self, q) -> np.ndarray:
        if self.magnetic is None:
            return np.zeros(self.dim)
        return self.magnetic.value(q)

    def kinetic_momentum(self, q, p) -> np.ndarray:
        return np.asarray(p, dtype=float) - self.w(q)

    def velocity(self, q, p) -> np.ndarray:
        """H_p(q, p) = M^{-1} (p - w(q))."""
        return self.mass_inv @ self.kinetic_momentum(q, p)

    def momentum_from_velocity(self, q, v) -> np.ndarray:
        return self.mass @ np.asarray(v, dtype=float) + self.w(q)

    def mass_norm(self, v) -> float:
        """Norm of a velocity vector in the kinetic metric."""
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(v @ self.mass @ v))

    def comass_norm(self, p) -> float:
        """Norm of a momentum covector in the inverse-mass metric."""
        p = np.asarray(p, dtype=float)
        return float(np.sqrt(p @ self.mass_inv @ p))

    def energy(self, q, p) -> float:
        pk = self.kinetic_momentum(q, p)
        return 0.5 * float(pk @ self.mass_inv @ pk) + self.potential.value(q)

    def grad_W(self, q) -> np.ndarray:
        return self.potential.grad(q)

    def jacobi_speed(self, q, E: float) -> float:
        """sqrt(2 (E - W(q))), the kinetic-metric speed at energy E."""
        gap = E - self.potential.value(q)
        if gap <= 0:
            raise DomainError(f"E <= W at q={np.asarray(q)}")
        return float(np.sqrt(2.0 * gap))


def eval_energy(h: ClassicalHamiltonian, state: PhaseState) -> float:
    """Total energy of a phase state; raises DomainError on the singular set."""
    return h.energy(state.q, state.p)


def in_domain(h: ClassicalHamiltonian, q, E: float) -> bool:
    """Strict membership W(q) < E in the domain of possible motion."""
    return h.potential.value(q) < E


# ---------------------------------------------------------------------------
# Trajectories and symplectic integration
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Sampled flow segment; positions live in the universal cover."""

    ts: np.ndarray
    qs: np.ndarray  # (n, d)
    ps: np.ndarray  # (n, d)

    def state(self, i: int) -> PhaseState:
        return PhaseState(self.qs[i], self.ps[i], float(self.ts[i]))

    @property
    def initial(self) -> PhaseState:
        return self.state(0)

    @property
    def final(self) -> PhaseState:
        return self.state(-1)

    def momentum_path_integral(self) -> float:
        """Midpoint-rule evaluation of the Maupertuis integral of p dq."""
        dq = np.diff(self.qs, axis=0)
        pm = 0.5 * (self.ps[1:] + self.ps[:-1])
        return float(np.sum(pm * dq))


DEFAULT_STEPS_PER_UNIT_TIME = 10_000


def _verlet_steps(h: ClassicalHamiltonian, q, p, dt: float, nsteps: int,
                  sample_every: int = 1):
    """Stormer-Verlet (kick-drift-kick) for w == 0; q, p may be batched (B, d)."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    minv = h.mass_inv
    grad = h.grad_W
    batched = q.ndim == 2
    qs, ps = [q.copy()], [p.copy()]

    def g(x):
        if not batched:
            return grad(x)
        return np.stack([grad(row) for row in x])

    for n in range(nsteps):
        p = p - 0.5 * dt * g(q)
        q = q + dt * (p @ minv.T if batched else minv @ p)
        p = p - 0.5 * dt * g(q)
        if (n + 1) % sample_every == 0 or n == nsteps - 1:
            qs.append(q.copy())
            ps.append(p.copy())
    return q, p, qs, ps


def _midpoint_steps(h: ClassicalHamiltonian, q, p, dt: float, nsteps: int,
                    sample_every: int = 1, tol: float = 1e-14, max_iter: int = 100):
    """Implicit midpoint for Hamiltonians with a magnetic covector."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    qs, ps = [q.copy()], [p.copy()]

    def rhs(qq, pp):
        pk = h.kinetic_momentum(qq, pp)
        v = h.mass_inv @ pk
        Dw = h.magnetic.jac(qq) if h.magnetic is not None else np.zeros((h.dim, h.dim))
        pdot = Dw.T @ v - h.grad_W(qq)
        return v, pdot

    for n in range(nsteps):
        qn, pn = q.copy(), p.copy()
        for _ in range(max_iter):
            vmid, fmid = rhs(0.5 * (q + qn), 0.5 * (p + pn))
            qn_new = q + dt * vmid
            pn_new = p + dt * fmid
            delta = max(np.max(np.abs(qn_new - qn)), np.max(np.abs(pn_new - pn)))
            qn, pn = qn_new, pn_new
            if delta < tol:
                break
        q, p = qn, pn
        if (n + 1) % sample_every == 0 or n == nsteps - 1:
            qs.append(q.copy())
            ps.append(p.copy())
    return q, p, qs, ps


def flow_segment(h: ClassicalHamiltonian, s0: PhaseState, duration: float,
                 steps_per_unit_time: float = DEFAULT_STEPS_PER_UNIT_TIME,
                 energy_tol: float = 1e-8, max_step_halvings: int = 6,
                 max_samples: int = 4096) -> Trajectory:
    """Integrate the Hamiltonian flow for the given duration.

    Stormer-Verlet splitting when the magnetic covector vanishes, implicit
    midpoint otherwise. The step is halved until the terminal energy drift
    meets energy_tol (relative to max(1, |H|)); StepUnderflowError if the
    halving budget runs out. Free flight is sampled exactly: with W == 0 and
    w == 0 every Verlet step is an exact translation.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    E0 = h.energy(s0.q, s0.p)

    if h.potential.is_zero and h.magnetic is None:
        n = min(max_samples, 256)
        ts = np.linspace(0.0, duration, n + 1)
        v = h.velocity(s0.q, s0.p)
        qs = s0.q[None, :] + ts[:, None] * v[None, :]
        ps = np.repeat(s0.p[None, :], n + 1, axis=0)
        return Trajectory(ts + s0.t, qs, ps)

    nsteps = max(1, int(np.ceil(duration * steps_per_unit_time)))
    for attempt in range(max_step_halvings + 1):
        dt = duration / nsteps
        sample_every = max(1, nsteps // max_samples)
        if h.magnetic is None:
            _, _, qs, ps = _verlet_steps(h, s0.q, s0.p, dt, nsteps, sample_every)
        else:
            _, _, qs, ps = _midpoint_steps(h, s0.q, s0.p, dt, nsteps, sample_every)
        qs = np.asarray(qs)
        ps = np.asarray(ps)
        drift = abs(h.energy(qs[-1], ps[-1]) - E0) / max(1.0, abs(E0))
        if drift <= energy_tol:
            k = len(qs)
            ts = np.empty(k)
            ts[:-1] = np.arange(k - 1) * (dt * sample_every)
            ts[-1] = duration
            return Trajectory(ts + s0.t, qs, ps)
        nsteps *= 2
    raise StepUnderflowError(
        f"energy drift {drift:.3e} above tolerance {energy_tol:.1e} "
        f"after {max_step_halvings} step halvings")


def jacobi_action(h: ClassicalHamiltonian, curve: np.ndarray, E: float) -> float:
    """Maupertuis action of a sampled curve at energy E.

    Integrates sqrt(2 (E - W)) |dq| + <w, dq> along the polyline through the
    samples, with the kinetic-metric norm. Midpoint quadrature per segment
    keeps the value independent of the parametrization of the samples.
    Raises DomainError naming the first sample with E <= W.
    """
    pts = np.asarray(curve, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("curve must be a sequence of at least two points")
    for i, qq in enumerate(pts):
        if h.potential.value(qq) >= E:
            raise DomainError(f"E <= W at curve sample {i}: q={qq}")
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        dq = b - a
        mid = 0.5 * (a + b)
        seg = h.mass_norm(dq)
        speed = np.sqrt(2.0 * (E - h.potential.value(mid)))
        total += speed * seg
        if h.magnetic is not None:
            # the fixed-energy metric must stay positive definite: |w| < speed
            if h.comass_norm(h.magnetic.value(mid)) >= speed:
                raise DomainError(
                    f"magnetic covector defeats metric positivity near q={mid}")
            total += float(h.magnetic.value(mid) @ dq)
    return float(total)
