"""Event-driven billiard in the complement of a thin tube, and its shadow chains.

The billiard domain removes an epsilon-tube around the scatterer (plus
optional box walls with the same inner margin). Trajectories flow between
events; events are located by certified sign-change bracketing on the
distance-to-boundary function followed by bisection. The generating function
of the tube billiard evaluates two-point actions between tube points; its
discrete action in the joint variables (base point, tube direction) is solved
by a damped Newton with the tube-direction spheres handled in moving local
charts, which realizes the shadowing construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import dls as dlsmod
from .bvp import CollisionOrbit
from .dynamics import ClassicalHamiltonian, PhaseState, _verlet_steps
from .scatterer import BoundaryPoint, Scatterer, SphereChart


class GrazingEventError(RuntimeError):
    """Event with near-tangential incidence; the link is rejected."""


class EventSearchError(RuntimeError):
    """Event bracketing or bisection failed."""


class ShadowSolveError(RuntimeError):
    """The shadowing Newton did not produce a critical chain."""


# ---------------------------------------------------------------------------
# Elastic reflection
# ---------------------------------------------------------------------------

def reflect(h: ClassicalHamiltonian, q, p, normal, tangency_floor: float = 1e-12):
    """Elastic reflection of the momentum at a surface with conormal `normal`.

    p' = p - 2 <p - w, n> n / ||n||^2 with inner products of the inverse-mass
    metric; conserves H exactly and jumps the momentum parallel to n.
    Supports batched inputs broadcast along the leading axis.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    n = np.asarray(normal, dtype=float)
    minv = h.mass_inv
    if p.ndim == 1:
        pk = p - h.w(q)
        nn = float(n @ minv @ n)
        pn = float(pk @ minv @ n)
        v = minv @ pk
        vnorm = np.linalg.norm(v)
        if abs(v @ n) <= tangency_floor * max(1.0, vnorm * np.linalg.norm(n)):
            raise GrazingEventError("tangential incidence: <H_p, n> = 0")
        return p - (2.0 * pn / nn) * n
    w = np.zeros_like(p)
    if h.magnetic is not None:
        w = np.stack([h.magnetic.value(row) for row in q])
    pk = p - w
    nn = np.einsum("bi,ij,bj->b", n, minv, n)
    pn = np.einsum("bi,ij,bj->b", pk, minv, n)
    return p - (2.0 * pn / nn)[:, None] * n


# ---------------------------------------------------------------------------
# Billiard domain and event-driven trajectories
# ---------------------------------------------------------------------------

@dataclass
class BoxWalls:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)


@dataclass
class BilliardDomain:
    """Complement of the eps-tube, with optional box walls at inner margin eps."""

    h: ClassicalHamiltonian
    scatterer: Scatterer
    eps: float
    walls: Optional[BoxWalls] = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("tube radius must be positive")
        if self.eps >= self.scatterer.declared_tube_radius():
            raise ValueError("eps at or above the declared tube radius")

    def surface_gaps(self, q: np.ndarray) -> np.ndarray:
        """Signed distances to all boundary pieces (positive inside the domain)."""
        gaps = [self.scatterer.distance(q) - self.eps]
        if self.walls is not None:
            gaps.extend(q - (self.walls.lo + self.eps))
            gaps.extend((self.walls.hi - self.eps) - q)
        return np.asarray(gaps, dtype=float)

    def surface_normal(self, q: np.ndarray, index: int):
        """Outward (into the domain) conormal of boundary piece `index` near q."""
        d = self.h.dim
        if index == 0:
            near = self.scatterer.nearest(q)
            base = self.scatterer.embed(near.x)
            n = self.h.space.centered(q - base)
            return n / np.linalg.norm(n), near
        i = index - 1
        if i < d:
            e = np.zeros(d)
            e[i] = 1.0
            return e, None
        e = np.zeros(d)
        e[i - d] = -1.0
        return e, None


@dataclass
class BilliardEvent:
    t: float
    q: np.ndarray
    p_before: np.ndarray
    p_after: np.ndarray
    surface: int               # 0 = tube, >= 1 wall index
    boundary: Optional[BoundaryPoint] = None


@dataclass
class BilliardRun:
    events: List[BilliardEvent]
    samples_t: np.ndarray
    samples_q: np.ndarray
    samples_p: np.ndarray
    final: PhaseState


class _FreeFlight:
    """Exact drift between events when the potential and magnetic terms vanish."""

    def __init__(self, h: ClassicalHamiltonian):
        self.h = h

    def position(self, state: PhaseState, dt: float) -> np.ndarray:
        return state.q + dt * self.h.velocity(state.q, state.p)

    def advance(self, state: PhaseState, dt: float) -> PhaseState:
        return PhaseState(self.position(state, dt), state.p, state.t + dt)


def _entry_times_free(dom: BilliardDomain, q: np.ndarray, v: np.ndarray,
                      dt: float, t_floor: float):
    """Earliest boundary-entry time of a drift segment, exactly per surface.

    The segment is assumed shorter than a quarter period on tori so a single
    centered image of each scatterer point is authoritative. Returns
    (surface index, entry time) or None. Outgoing rays never re-enter a
    convex piece, so times at or below t_floor are ignored.
    """
    from .scatterer import DiagonalScatterer, PointScatterer
    best = None
    scat = dom.scatterer
    mid = q + 0.5 * dt * v

    def tube_entry(w, dv):
        a2 = float(dv @ dv)
        if a2 == 0:
            return None
        a1 = 2.0 * float(w @ dv)
        a0 = float(w @ w) - dom.eps**2
        disc = a1 * a1 - 4 * a2 * a0
        if disc <= 0:
            return None
        root = (-a1 - np.sqrt(disc)) / (2 * a2)
        return root if t_floor < root <= dt else None

    if isinstance(scat, PointScatterer):
        for a in scat.points:
            w = dom.h.space.centered(mid - a) - 0.5 * dt * v
            t = tube_entry(w, v)
            if t is not None and (best is None or t < best[1]):
                best = (0, t)
    elif isinstance(scat, DiagonalScatterer):
        d = scat.factor_dim
        rel = dom.h.space.centered(np.concatenate([q[:d] - q[d:], np.zeros(d)]))[:d]
        t = tube_entry(rel / np.sqrt(2.0), (v[:d] - v[d:]) / np.sqrt(2.0))
        if t is not None:
            best = (0, t)
    else:
        return NotImplemented
    if dom.walls is not None:
        dim = dom.h.dim
        for i in range(dim):
            for sgn, bound, idx in ((1.0, dom.walls.lo[i] + dom.eps, 1 + i),
                                    (-1.0, dom.walls.hi[i] - dom.eps, 1 + dim + i)):
                gap0 = sgn * (q[i] - bound)
                rate = sgn * v[i]
                if rate < 0 and gap0 >= 0:
                    t = -gap0 / rate
                    if t_floor < t <= dt and (best is None or t < best[1]):
                        best = (idx, t)
    return best


class _VerletFlight:
    def __init__(self, h: ClassicalHamiltonian, micro_step: float):
        self.h = h
        self.micro = micro_step

    def position(self, state: PhaseState, dt: float) -> np.ndarray:
        return self.advance(state, dt).q

    def advance(self, state: PhaseState, dt: float) -> PhaseState:
        n = max(1, int(np.ceil(dt / self.micro)))
        q, p, _, _ = _verlet_steps(self.h, state.q, state.p, dt / n, n, sample_every=n)
        return PhaseState(q, p, state.t + dt)


def billiard_trajectory(dom: BilliardDomain, s0: PhaseState, n_bounces: int,
                        t_max: Optional[float] = None, grazing_tol: float = 1e-4,
                        locate_tol: float = 1e-12, record_samples: bool = True,
                        arm_gap: float = 1e-9, max_steps: int = 2_000_000) -> BilliardRun:
    """Flow-with-reflections for a fixed number of boundary events.

    Bracketing uses the global speed bound: the boundary gap is 1-Lipschitz in
    the position, so a step below gap / v_max cannot skip a crossing; near the
    boundary the step is floored at eps/10 path length, and each sign change
    is then bisected on the gap function.
    """
    h = dom.h
    analytic = False
    if h.potential.is_zero and h.magnetic is None:
        flight = _FreeFlight(h)
        v2max = float(np.linalg.norm(h.velocity(s0.q, s0.p)))
        analytic = _entry_times_free(dom, s0.q, h.velocity(s0.q, s0.p), 1e-9,
                                     0.0) is not NotImplemented
    else:
        E = h.energy(s0.q, s0.p)
        lam_min = float(np.min(np.linalg.eigvalsh(h.mass)))
        v2max = np.sqrt(max(2.0 * E - 0.0, 1e-12) / lam_min) * 2.0
        flight = _VerletFlight(h, micro_step=dom.eps / (20.0 * v2max))
    floor = dom.eps / (10.0 * v2max)
    step_cap = np.inf
    if h.space.is_torus:
        step_cap = float(np.min(h.space.periods)) / (4.0 * max(v2max, 1e-300))

    state = s0
    gaps = dom.surface_gaps(state.q)
    if np.min(gaps) < -1e-12:
        raise ValueError("initial state outside the billiard domain")

    events: List[BilliardEvent] = []
    ts, qs, ps = [state.t], [state.q.copy()], [state.p.copy()]
    armed = gaps > arm_gap

    def bisect_on_surface(idx, lo, hi):
        """Polish the crossing of surface idx inside [lo, hi] (gap sign change).

        Runs to machine-width intervals; locate_tol is the guaranteed minimum.
        """
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            g = dom.surface_gaps(flight.position(state, mid))[idx]
            if g < 0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 2 * np.spacing(max(abs(hi), 1.0)) and abs(g) <= locate_tol:
                return mid
        return 0.5 * (lo + hi)

    steps = 0
    while len(events) < n_bounces:
        steps += 1
        if steps > max_steps:
            raise EventSearchError("step budget exhausted before the requested events")
        if t_max is not None and state.t - s0.t > t_max:
            break

        if analytic:
            budget = min(step_cap,
                         (t_max - (state.t - s0.t) + 1e-9) if t_max is not None else 1e9)
            v = h.velocity(state.q, state.p)
            found = _entry_times_free(dom, state.q, v, budget, 1e-12)
            if found is None:
                state = flight.advance(state, budget)
                if record_samples:
                    ts.append(state.t)
                    qs.append(state.q.copy())
                    ps.append(state.p.copy())
                continue
            idx, t_entry = found
            lo = t_entry
            width = max(1e-12, 1e-9 * t_entry)
            for _ in range(60):
                if dom.surface_gaps(flight.position(state, lo))[idx] > 0:
                    break
                lo -= width
                width *= 4
            hi = t_entry
            width = max(1e-12, 1e-9 * t_entry)
            for _ in range(60):
                if dom.surface_gaps(flight.position(state, hi))[idx] < 0:
                    break
                hi += width
                width *= 4
            t_hit = bisect_on_surface(idx, lo, hi)
            hit = flight.advance(state, t_hit)
        else:
            gap_now = dom.surface_gaps(state.q)
            armed = armed | (gap_now > arm_gap)
            dt = max(floor, 0.8 * float(np.min(gap_now[armed])) / v2max
                     if np.any(armed) else floor)
            dt = min(dt, step_cap)
            nxt = flight.advance(state, dt)
            gap_next = dom.surface_gaps(nxt.q)
            crossing = np.where(armed & (gap_next < 0))[0]
            if crossing.size == 0:
                state = nxt
                if record_samples:
                    ts.append(state.t)
                    qs.append(state.q.copy())
                    ps.append(state.p.copy())
                continue

            lo, hi = 0.0, dt
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                g = dom.surface_gaps(flight.position(state, mid))
                bad = armed & (g < 0)
                if np.any(bad):
                    hi = mid
                else:
                    lo = mid
                if hi - lo < 1e-16 * max(1.0, dt):
                    break
            g_hi = dom.surface_gaps(flight.position(state, hi))
            idx = int(np.argmin(np.where(armed, g_hi, np.inf)))
            t_hit = bisect_on_surface(idx, lo, hi)
            hit = flight.advance(state, t_hit)
        normal, near = dom.surface_normal(hit.q, idx)
        v = h.velocity(hit.q, hit.p)
        if abs(v @ normal) < grazing_tol * np.linalg.norm(v) * np.linalg.norm(normal):
            raise GrazingEventError(f"grazing event at t = {hit.t:.6f} on surface {idx}")
        p_new = reflect(h, hit.q, hit.p, normal)
        boundary = None
        if idx == 0 and near is not None:
            s = dom.scatterer.normal_coordinates(near.x, normal)
            boundary = BoundaryPoint(near.x, s / np.linalg.norm(s), dom.eps, hit.q.copy())
        events.append(BilliardEvent(hit.t, hit.q.copy(), hit.p.copy(), p_new.copy(),
                                    idx, boundary))
        state = PhaseState(hit.q, p_new, hit.t)
        armed = dom.surface_gaps(state.q) > arm_gap  # re-arm away from this surface
        if record_samples:
            ts.append(state.t)
            qs.append(state.q.copy())
            ps.append(state.p.copy())

    return BilliardRun(events, np.asarray(ts), np.asarray(qs), np.asarray(ps), state)


# ---------------------------------------------------------------------------
# Generating function of the tube billiard
# ---------------------------------------------------------------------------

def generating_eps(dl: dlsmod.DiscreteLagrangian, k, xm, sm, xp, sp,
                   eps: float) -> float:
    """Two-point action of the tube billiard between boundary points.

    Evaluates the branch-k connecting orbit between f(x-, eps s-) and
    f(x+, eps s+). At eps = 0 this is the branch Lagrangian itself.
    """
    link = dl.link(k)
    scat = dl.scatterer
    qm = scat.tube_point(xm, sm, eps)
    qp = scat.tube_point(xp, sp, eps)
    if eps == 0.0:
        return link.value(np.atleast_1d(xm) if not np.isscalar(xm) else xm,
                          np.atleast_1d(xp) if not np.isscalar(xp) else xp) \
            if scat.dim > 0 else link.value(np.zeros(0), np.zeros(0))
    return float(link.ambient_connect(qm, qp, eps).action)


def expansion_residual(dl: dlsmod.DiscreteLagrangian, k, xm, sm, xp, sp,
                       eps: float) -> float:
    """|L^eps - L + eps <p-, s-> - eps <p+, s+>|, the quadratic remainder."""
    link = dl.link(k)
    scat = dl.scatterer
    x_m = np.zeros(0) if scat.dim == 0 else np.atleast_1d(np.asarray(xm, dtype=float))
    x_p = np.zeros(0) if scat.dim == 0 else np.atleast_1d(np.asarray(xp, dtype=float))
    L0 = link.value(x_m, x_p)
    p_minus, p_plus = link.momenta(x_m, x_p)
    _, nor_m = scat.frames(xm)
    _, nor_p = scat.frames(xp)
    corr = -eps * float(p_minus @ (nor_m @ np.asarray(sm, dtype=float))) \
        + eps * float(p_plus @ (nor_p @ np.asarray(sp, dtype=float)))
    Leps = generating_eps(dl, k, xm, sm, xp, sp, eps)
    return abs(Leps - L0 - corr)


# ---------------------------------------------------------------------------
# Joint-variable links and the shadow chain solver
# ---------------------------------------------------------------------------

class _SiteChart:
    """Chart of one shadow unknown: base chart coordinates plus a sphere chart.

    u = (dx, sigma) relative to the current base point and sphere center;
    Q(u) is the ambient tube point and columns of DQ(u) pair with momenta.
    """

    def __init__(self, scat: Scatterer, base_ref, s_center: np.ndarray, eps: float):
        self.scat = scat
        self.base_ref = base_ref          # chart point (array) or point id
        self.eps = eps
        self.sphere = SphereChart(np.asarray(s_center, dtype=float))
        self.x_dim = scat.dim
        self.s_dim = self.sphere.dim
        self.dim = self.x_dim + self.s_dim

    def split(self, u: np.ndarray):
        u = np.asarray(u, dtype=float)
        return u[:self.x_dim], u[self.x_dim:]

    def base_point(self, u):
        dx, _ = self.split(u)
        if self.x_dim == 0:
            return self.base_ref
        return np.asarray(self.base_ref, dtype=float) + dx

    def direction(self, u):
        _, sigma = self.split(u)
        return self.sphere.value(sigma)

    def ambient(self, u) -> np.ndarray:
        return self.scat.tube_point(self.base_point(u), self.direction(u), self.eps)

    def jacobian(self, u) -> np.ndarray:
        d = self.scat.space.dim
        J = np.empty((d, self.dim))
        _, sigma = self.split(u)
        x = self.base_point(u)
        _, nor = self.scat.frames(x)
        if self.x_dim:
            h = 1e-7
            for i in range(self.x_dim):
                e = np.zeros(self.dim)
                e[i] = h
                J[:, i] = (self.ambient(u + e) - self.ambient(u - e)) / (2 * h)
        J[:, self.x_dim:] = self.eps * nor @ self.sphere.jacobian(sigma)
        return J


class _FrozenChart:
    """Zero-dimensional slot pinned to a fixed ambient point (chain endpoints)."""

    def __init__(self, point: np.ndarray):
        self.point = np.asarray(point, dtype=float)
        self.dim = 0
        self.x_dim = 0
        self.s_dim = 0

    def ambient(self, u) -> np.ndarray:
        return self.point

    def jacobian(self, u) -> np.ndarray:
        return np.zeros((self.point.size, 0))


class TwoPointLink(dlsmod.LinkEvaluator):
    """Branch of the tube-billiard action in joint chart coordinates.

    The gradient is exact: boundary momenta of the connecting orbit pulled
    back through the endpoint charts. Second derivatives differentiate that
    gradient once by central differences.
    """

    def __init__(self, connector: Callable, left, right, eps: float,
                 fd_step: float = 1e-7):
        self.connector = connector
        self.left = left
        self.right = right
        self.eps = eps
        self.dim_minus = left.dim
        self.dim_plus = right.dim
        self.fd_step = fd_step

    def _orbit(self, um, up) -> CollisionOrbit:
        return self.connector(self.left.ambient(um), self.right.ambient(up), self.eps)

    def value(self, um, up):
        return float(self._orbit(um, up).action)

    def grad_minus(self, um, up):
        orb = self._orbit(um, up)
        return -self.left.jacobian(um).T @ orb.p_minus

    def grad_plus(self, um, up):
        orb = self._orbit(um, up)
        return self.right.jacobian(up).T @ orb.p_plus

    def momenta(self, um, up):
        orb = self._orbit(um, up)
        return orb.p_minus, orb.p_plus

    def hess(self, um, up):
        um = np.asarray(um, dtype=float)
        up = np.asarray(up, dtype=float)
        nm, npl = um.size, up.size
        J = np.empty((nm + npl, nm + npl))
        h = self.fd_step

        def pair(a, b):
            return np.concatenate([self.grad_minus(a, b), self.grad_plus(a, b)])

        for i in range(nm):
            e = np.zeros(nm)
            e[i] = h
            J[i] = (pair(um + e, up) - pair(um - e, up)) / (2 * h)
        for i in range(npl):
            e = np.zeros(npl)
            e[i] = h
            J[nm + i] = (pair(um, up + e) - pair(um, up - e)) / (2 * h)
        J = 0.5 * (J + J.T)
        return J[:nm, :nm], J[:nm, nm:], J[nm:, nm:]


@dataclass
class ShadowChain:
    """Converged critical point of the tube-billiard discrete action."""

    code: List[object]
    boundary: List[BoundaryPoint]
    orbits: List[CollisionOrbit]
    eps: float
    bc: str
    residual_inf: float
    joint_dl: dlsmod.DiscreteLagrangian
    joint_chain: dlsmod.ChainConfiguration
    diagnostics: dict = field(default_factory=dict)


def _predictor_directions(dl: dlsmod.DiscreteLagrangian, c: dlsmod.ChainConfiguration):
    """Unit tube directions maximizing <Delta p, s> per free site."""
    scat = dl.scatterer
    out = []
    for i, p_minus, p_plus in dlsmod.momentum_jumps(dl, c):
        dp = p_minus - p_plus
        x = c.points[i] if scat.dim > 0 else _site_base(dl, c, i)
        s = scat.normal_coordinates(x, dp)
        nrm = np.linalg.norm(s)
        if nrm == 0:
            raise ShadowSolveError(f"zero momentum jump at site {i}: inadmissible code")
        out.append(s / nrm)
    return out


def _site_base(dl, c, i):
    """Base reference of a site for zero-dimensional scatterers (point id)."""
    if dl.site_bases is not None:
        return dl.site_bases(c, i)
    return 0


def shadow_solve(dl: dlsmod.DiscreteLagrangian, c: dlsmod.ChainConfiguration,
                 eps: float, tol_factor: float = 1e-10, max_iter: int = 60,
                 initial_directions: Optional[Sequence[np.ndarray]] = None,
                 newton_tol: Optional[float] = None) -> ShadowChain:
    """Critical chain of the tube billiard near a critical chain of the limit.

    Starts from the convex predictor (tube directions aligned with the
    momentum jumps), then runs a damped Newton on the joint residual in the
    variables (base point, tube direction), re-centering the sphere charts at
    every step. Terminal sup-norm residual is tol_factor * sqrt(2E).
    """
    scat = dl.scatterer
    if scat is None:
        raise ValueError("the Lagrangian must carry its scatterer")
    reports = dlsmod.admissible(dl, c)
    bad = [r.site for r in reports if not r.admissible]
    if bad:
        raise ShadowSolveError(f"inadmissible code at sites {bad}: momentum jump below tolerance")

    E = dl.energy if dl.energy is not None else 0.5
    tol = newton_tol if newton_tol is not None else tol_factor * np.sqrt(2.0 * E)

    s_list = [np.asarray(s, dtype=float) for s in
              (initial_directions if initial_directions is not None
               else _predictor_directions(dl, c))]
    x_list = [c.points[i].copy() for i in range(c.n_free)]

    def build(charts):
        links = {}
        code = []
        n_sites = len(charts)
        for j, k in enumerate(c.code):
            if c.bc == "periodic":
                lc = charts[j % n_sites]
                rc = charts[(j + 1) % n_sites]
            else:
                lc = _FrozenChart(_ambient_endpoint(dl, c, "left")) if j == 0 else charts[j - 1]
                rc = _FrozenChart(_ambient_endpoint(dl, c, "right")) if j == c.n_links - 1 else charts[j]
            key = ("eps", j)
            links[key] = TwoPointLink(dl.link(k).ambient_connect, lc, rc, eps)
            code.append(key)
        jdl = dlsmod.DiscreteLagrangian(links, energy=E, scatterer=scat,
                                        name=(dl.name + f"/eps={eps:g}"))
        pts = [np.zeros(ch.dim) for ch in charts]
        if c.bc == "periodic":
            jc = dlsmod.ChainConfiguration(code, pts, "periodic")
        else:
            jc = dlsmod.ChainConfiguration(code, pts, "fixed",
                                           left=np.zeros(0), right=np.zeros(0))
        return jdl, jc

    def make_charts():
        return [_SiteChart(scat, (x_list[i] if scat.dim > 0 else _site_base(dl, c, i)),
                           s_list[i], eps) for i in range(c.n_free)]

    charts = make_charts()
    jdl, jc = build(charts)
    res = dlsmod.residual(jdl, jc)
    rn = dlsmod.residual_norm(res)
    for it in range(max_iter):
        if rn <= tol:
            break
        H = dlsmod.hessian(jdl, jc)
        try:
            step = H.solve([-r for r in res])
        except np.linalg.LinAlgError as exc:
            raise ShadowSolveError("singular joint Hessian") from exc
        lam = 1.0
        accepted = False
        for _ in range(40):
            trial_x, trial_s = [], []
            for i, ch in enumerate(charts):
                du = lam * step[i]
                dx, dsig = du[:ch.x_dim], du[ch.x_dim:]
                trial_x.append(x_list[i] + dx if ch.x_dim else x_list[i])
                trial_s.append(ch.sphere.value(dsig))
            save_x, save_s = x_list, s_list
            x_list, s_list = trial_x, trial_s
            charts_t = make_charts()
            jdl_t, jc_t = build(charts_t)
            try:
                res_t = dlsmod.residual(jdl_t, jc_t)
                rn_t = dlsmod.residual_norm(res_t)
            except Exception:
                rn_t = np.inf
            if rn_t < rn:
                charts, jdl, jc, res, rn = charts_t, jdl_t, jc_t, res_t, rn_t
                accepted = True
                break
            x_list, s_list = save_x, save_s
            lam *= 0.5
        if not accepted:
            raise ShadowSolveError(f"shadow Newton stalled at |r| = {rn:.3e}")
    else:
        raise ShadowSolveError(f"shadow Newton did not converge: |r| = {rn:.3e}")

    boundary = []
    for i in range(c.n_free):
        x = x_list[i] if scat.dim > 0 else _site_base(dl, c, i)
        boundary.append(scat.boundary_point(x, s_list[i], eps))
    orbits = []
    for j in range(c.n_links):
        key = ("eps", j)
        um, up = jc.link_endpoints(j)
        link = jdl.links[key]
        orbits.append(link._orbit(um, up))
    return ShadowChain(list(c.code), boundary, orbits, eps, c.bc, rn, jdl, jc,
                       diagnostics={"iterations": it, "tolerance": tol})


def _ambient_endpoint(dl, c, side):
    if dl.ambient_endpoints is None:
        raise ShadowSolveError("fixed chains need ambient endpoints on the Lagrangian")
    return dl.ambient_endpoints(c)[0 if side == "left" else 1]


# ---------------------------------------------------------------------------
# Shadowing error and Lyapunov estimates
# ---------------------------------------------------------------------------

def _point_segment_distance(space, pt, a, b) -> float:
    ab = b - a
    ap = space.centered(pt - a)
    denom = float(ab @ ab)
    t = np.clip(ap @ ab / denom, 0.0, 1.0) if denom > 0 else 0.0
    return float(np.linalg.norm(ap - t * ab))


def _path_deviation(space, path, ref_path) -> float:
    worst = 0.0
    for pt in path:
        best = np.inf
        for a, b in zip(ref_path[:-1], ref_path[1:]):
            best = min(best, _point_segment_distance(space, pt, a, b))
        worst = max(worst, best)
    return worst


def shadow_error(dl: dlsmod.DiscreteLagrangian, c: dlsmod.ChainConfiguration,
                 sc: ShadowChain) -> float:
    """Sup distance between the shadow chain and the limiting collision chain.

    Base-point mismatch at the collisions plus the per-link path deviation
    between the shadow orbit and the limiting connecting orbit.
    """
    if sc.eps == 0.0:
        return 0.0
    if list(sc.code) != list(c.code):
        raise ValueError("codes of the chain and shadow chain differ")
    scat = dl.scatterer
    space = scat.space
    base_err = 0.0
    for i in range(c.n_free):
        xc = c.points[i] if scat.dim > 0 else _site_base(dl, c, i)
        xs = sc.boundary[i].x
        base_err = max(base_err, float(np.linalg.norm(
            space.centered(scat.embed(xs) - scat.embed(xc)))))
    dev = 0.0
    for j in range(c.n_links):
        xm, xp = c.link_endpoints(j)
        ref = dl.link(c.code[j]).reference_path(xm, xp)
        dev = max(dev, _path_deviation(space, sc.orbits[j].path, ref))
    return float(base_err + dev)


def replay(sc: ShadowChain, dom: BilliardDomain, n_events: Optional[int] = None,
           t_margin: float = 0.5) -> BilliardRun:
    """Re-run the shadow chain as an actual billiard trajectory.

    Starts at the first physical point of the chain (a tube point for
    periodic chains, the frozen endpoint for fixed ones) with the outgoing
    momentum of the first link and plays the events forward over the chain's
    total flight time.
    """
    q0 = sc.orbits[0].path[0]
    p0 = sc.orbits[0].p_minus
    total_tau = float(sum(orb.tau for orb in sc.orbits))
    n = n_events if n_events is not None else 64 * len(sc.orbits)
    return billiard_trajectory(dom, PhaseState(q0, p0, 0.0), n,
                               t_max=total_tau * (1.0 + t_margin) if n_events is None else None,
                               record_samples=False)


def _section_lift(dom: BilliardDomain, chart: _SiteChart, xi: np.ndarray,
                  y: np.ndarray, E: float) -> PhaseState:
    q = chart.ambient(xi)
    J = chart.jacobian(xi)
    s_dir = chart.direction(xi)
    _, nor = dom.scatterer.frames(chart.base_point(xi))
    n_amb = nor @ s_dir
    G = J.T @ J
    coef = np.linalg.solve(G, y)
    p0 = J @ coef
    h = dom.h
    w = h.w(q)
    minv = h.mass_inv
    a = 0.5 * float(n_amb @ minv @ n_amb)
    b = float(n_amb @ minv @ (p0 - w))
    c0 = 0.5 * float((p0 - w) @ minv @ (p0 - w)) + h.potential.value(q) - E
    disc = b * b - 4 * a * c0
    if disc < 0:
        raise EventSearchError("section lift infeasible: energy shell unreachable")
    beta = (-b + np.sqrt(disc)) / (2 * a)
    return PhaseState(q, p0 + beta * n_amb, 0.0)


def _section_project(dom: BilliardDomain, chart: _SiteChart, q: np.ndarray,
                     p: np.ndarray):
    near = dom.scatterer.nearest(q) if chart.x_dim else None
    if chart.x_dim:
        x = np.asarray(near.x, dtype=float)
        dx = x - np.asarray(chart.base_ref, dtype=float)
        base = x
    else:
        dx = np.zeros(0)
        base = chart.base_ref
    n = dom.h.space.centered(q - dom.scatterer.embed(base))
    s = dom.scatterer.normal_coordinates(base, n / np.linalg.norm(n))
    sigma = chart.sphere.invert(s / np.linalg.norm(s))
    xi = np.concatenate([dx, sigma])
    J = chart.jacobian(xi)
    y = J.T @ p
    return xi, y


def lyapunov_estimate(sc: ShadowChain, dom: BilliardDomain,
                      fd_rel: float = 3e-3, closure_tol: float = 1e-6) -> np.ndarray:
    """Per-bounce Lyapunov exponents of a periodic shadow orbit.

    Assembles the monodromy of the period map from finite differences of the
    event-to-event map in boundary-section coordinates (chart of the boundary
    plus the conjugate momenta of that chart), in which the billiard map is
    symplectic, and returns sorted log-moduli of its eigenvalues divided by
    the number of bounces.
    """
    if sc.bc != "periodic":
        raise ValueError("Lyapunov estimate needs a periodic shadow chain")
    h = dom.h
    n = len(sc.boundary)
    E = h.energy(sc.boundary[0].ambient, sc.orbits[0].p_minus)
    charts = []
    for i, bp in enumerate(sc.boundary):
        base = bp.x
        charts.append(_SiteChart(dom.scatterer, base, bp.s, sc.eps))

    # reference section coordinates (post-reflection states)
    xs, ys = [], []
    for i in range(n):
        xi, y = _section_project(dom, charts[i], sc.boundary[i].ambient,
                                 sc.orbits[i].p_minus)
        xs.append(xi)
        ys.append(y)

    def bounce_map(i, xi, y):
        state = _section_lift(dom, charts[i], xi, y, E)
        run = billiard_trajectory(dom, state, 1, record_samples=False)
        if not run.events or run.events[-1].surface != 0:
            raise EventSearchError("bounce map left the tube section")
        ev = run.events[-1]
        return _section_project(dom, charts[(i + 1) % n], ev.q, ev.p_after)

    dim = charts[0].dim
    # closure check of the periodic orbit through the dynamical map
    xi_c, y_c = xs[0].copy(), ys[0].copy()
    for i in range(n):
        xi_c, y_c = bounce_map(i, xi_c, y_c)
    closure = np.linalg.norm(xi_c - xs[0]) + np.linalg.norm(y_c - ys[0]) / max(
        1.0, np.linalg.norm(ys[0]))
    if closure > closure_tol:
        raise EventSearchError(f"periodic orbit does not close: defect {closure:.2e}")

    # work in similarity-scaled coordinates (xi, y/eps) so both blocks are O(1)
    yscale = max(sc.eps, 1e-12)
    links: List[np.ndarray] = []
    out_target = 1e-3  # output displacement (chart units) the stencil aims for
    for i in range(n):
        D = np.empty((2 * dim, 2 * dim))
        z0 = np.concatenate([xs[i], ys[i] / yscale])

        def evaluate(z):
            xi1, y1 = bounce_map(i, z[:dim], z[dim:] * yscale)
            return np.concatenate([xi1, y1 / yscale])

        for a in range(2 * dim):
            # calibrate the step so the map's expansion stays in the linear range
            h = fd_rel * yscale
            delta = None
            for _ in range(60):
                e = np.zeros(2 * dim)
                e[a] = h
                try:
                    delta = np.linalg.norm(evaluate(z0 + 2 * e) - evaluate(z0 - 2 * e))
                except (ValueError, EventSearchError, GrazingEventError):
                    h *= 0.25
                    continue
                if delta > 4 * out_target:
                    h *= 0.5
                    continue
                break
            if delta is None:
                raise EventSearchError("could not calibrate a finite-difference step")
            if delta > 0:
                h = min(h, h * (4 * out_target / delta))
            e = np.zeros(2 * dim)
            e[a] = h
            vals = [evaluate(z0 + fac * e) for fac in (-2, -1, 1, 2)]
            D[:, a] = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
        links.append(D)

    # eigen-moduli of the period map via the cyclic block-companion matrix:
    # its spectrum consists of n-th roots of the monodromy eigenvalues, so the
    # ill-conditioned product is never formed and small moduli stay accurate
    m = 2 * dim
    C = np.zeros((n * m, n * m))
    for i in range(n):
        j = (i + 1) % n
        C[j * m:(j + 1) * m, i * m:(i + 1) * m] = links[i]
    mods = np.sort(np.log(np.abs(np.linalg.eigvals(C))))[::-1]
    exps = np.array([np.mean(mods[k * n:(k + 1) * n]) for k in range(m)])
    return exps
