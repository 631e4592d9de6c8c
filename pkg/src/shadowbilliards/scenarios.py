"""Shipped scenario families: concrete Lagrangian branches and chain builders.

Each family wires an ambient space, a Hamiltonian, a scatterer and the
closed-form branch Lagrangians of its collision orbits, and exposes helpers
to build chains. These are the configurations driven by the command line and
exercised by the verification suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import bvp, dls as dlsmod, symbolic
from .dynamics import ClassicalHamiltonian, euclidean, flat_torus
from .scatterer import DiagonalScatterer, PointScatterer


class _LazyLinks(dict):
    """Symbol table creating branch evaluators on first use."""

    def __init__(self, factory):
        super().__init__()
        self.factory = factory

    def __missing__(self, key):
        link = self.factory(key)
        self[key] = link
        return link


# ---------------------------------------------------------------------------
# Torus point scatterer
# ---------------------------------------------------------------------------

class TorusPointLink(dlsmod.LinkEvaluator):
    """Collision orbit of a point scatterer on the flat torus, one winding class."""

    def __init__(self, h: ClassicalHamiltonian, E: float, winding: Tuple[int, ...]):
        self.h = h
        self.E = E
        self.k = np.asarray(winding, dtype=int)
        if np.all(self.k == 0):
            raise ValueError("zero winding has no collision orbit")
        self.dim_minus = self.dim_plus = 0
        self._disp = self.k * h.space.periods
        ell = h.mass_norm(self._disp)
        self._speed = np.sqrt(2.0 * E)
        self._p = h.mass @ (self._speed * self._disp / ell)
        self._action = self._speed * ell

    def value(self, xm, xp):
        return float(self._action)

    def grad_minus(self, xm, xp):
        return np.zeros(0)

    def grad_plus(self, xm, xp):
        return np.zeros(0)

    def hess(self, xm, xp):
        z = np.zeros((0, 0))
        return z, z, z

    def momenta(self, xm, xp):
        return self._p.copy(), self._p.copy()

    def ambient_connect(self, qm, qp, eps):
        return bvp.connect(self.h, qm, qp, self.E, label=tuple(int(v) for v in self.k))

    def reference_path(self, xm, xp, num: int = 33):
        ts = np.linspace(0.0, 1.0, num)
        return ts[:, None] * self._disp[None, :]


@dataclass
class TorusPointScenario:
    h: ClassicalHamiltonian
    scatterer: PointScatterer
    dl: dlsmod.DiscreteLagrangian
    E: float

    def chain(self, code: Sequence[Tuple[int, ...]], bc: str = "periodic"):
        code = [tuple(int(v) for v in k) for k in code]
        pts = [np.zeros(0) for _ in range(len(code) if bc == "periodic" else len(code) - 1)]
        if bc == "periodic":
            return dlsmod.ChainConfiguration(code, pts, "periodic")
        return dlsmod.ChainConfiguration(code, pts, "fixed",
                                         left=np.zeros(0), right=np.zeros(0))


def torus_point_scenario(dim: int = 2, periods: Optional[Sequence[float]] = None,
                         E: float = 0.5) -> TorusPointScenario:
    periods = [1.0] * dim if periods is None else list(periods)
    space = flat_torus(periods)
    h = ClassicalHamiltonian(space)
    scat = PointScatterer(space, [np.zeros(dim)])
    links = _LazyLinks(lambda k: TorusPointLink(h, E, k))
    dl = dlsmod.DiscreteLagrangian(links, energy=E, scatterer=scat,
                                   name="torus_point",
                                   site_bases=lambda c, i: 0)
    dl.hamiltonian = h
    return TorusPointScenario(h, scat, dl, E)


# ---------------------------------------------------------------------------
# Two balls on a circle (torus factor), translation symmetric
# ---------------------------------------------------------------------------

class TwoBallTorusLink(dlsmod.LinkEvaluator):
    """Pair passage on the circle: each ball winds n_i times between collisions."""

    def __init__(self, h: ClassicalHamiltonian, E: float, masses, period: float,
                 windings: Tuple[int, int]):
        self.h = h
        self.E = E
        self.m = np.asarray(masses, dtype=float)
        self.L = float(period)
        self.n = np.asarray(windings, dtype=int)
        if self.n[0] == self.n[1]:
            raise ValueError("equal windings give a straight passage (no jump)")
        self.dim_minus = self.dim_plus = 1
        self._speed = np.sqrt(2.0 * E)

    def _lengths(self, xm, xp):
        delta = float(np.atleast_1d(xp)[0] - np.atleast_1d(xm)[0])
        return delta + self.n * self.L

    def value(self, xm, xp):
        ell = self._lengths(xm, xp)
        return float(self._speed * np.sqrt(np.sum(self.m * ell**2)))

    def grad_minus(self, xm, xp):
        ell = self._lengths(xm, xp)
        g = np.sqrt(np.sum(self.m * ell**2))
        return np.array([-self._speed * np.sum(self.m * ell) / g])

    def grad_plus(self, xm, xp):
        return -self.grad_minus(xm, xp)

    def momenta(self, xm, xp):
        ell = self._lengths(xm, xp)
        g = np.sqrt(np.sum(self.m * ell**2))
        p = self._speed * self.m * ell / g
        return p.copy(), p.copy()

    def ambient_connect(self, qm, qp, eps):
        return bvp.connect(self.h, qm, qp, self.E,
                           label=(int(self.n[0]), int(self.n[1])))

    def reference_path(self, xm, xp, num: int = 33):
        c0 = float(np.atleast_1d(xm)[0])
        ell = self._lengths(xm, xp)
        start = np.array([c0, c0])
        ts = np.linspace(0.0, 1.0, num)
        return start[None, :] + ts[:, None] * ell[None, :]


@dataclass
class TwoBallTorusScenario:
    h: ClassicalHamiltonian
    scatterer: DiagonalScatterer
    dl: dlsmod.DiscreteLagrangian
    E: float
    masses: np.ndarray
    period: float

    def chain(self, code, points):
        code = [tuple(int(v) for v in k) for k in code]
        return dlsmod.ChainConfiguration(code, [np.atleast_1d(p) for p in points],
                                         "periodic")

    def symmetry(self) -> dlsmod.ChartSymmetry:
        return dlsmod.ChartSymmetry(act=lambda th, x: np.atleast_1d(x) + th,
                                    generator=lambda x: np.ones(1))

    def reduced_mass(self) -> float:
        return float(self.masses[0] * self.masses[1] / np.sum(self.masses))


def two_ball_torus_scenario(masses=(1.0, 1.0), E: float = 0.5,
                            period: float = 1.0) -> TwoBallTorusScenario:
    space = flat_torus([period, period])
    m = np.asarray(masses, dtype=float)
    h = ClassicalHamiltonian(space, mass=np.diag(m))
    scat = DiagonalScatterer(space)
    links = _LazyLinks(lambda k: TwoBallTorusLink(h, E, m, period, k))
    dl = dlsmod.DiscreteLagrangian(links, energy=E, scatterer=scat,
                                   name="two_ball_torus")
    dl.hamiltonian = h
    return TwoBallTorusScenario(h, scat, dl, E, m, period)


# ---------------------------------------------------------------------------
# Two balls in a box (interval factor), wall reflections folded into branches
# ---------------------------------------------------------------------------

def _unfolded_image(y: float, m: int, lo: float, hi: float) -> Tuple[float, float]:
    """Image of y under m wall reflections of [lo, hi]; returns (image, parity)."""
    h = hi - lo
    xi = y - lo
    if m % 2 == 0:
        return lo + m * h + xi, 1.0
    return lo + (m + 1) * h - xi, -1.0


def _fold(y: float, lo: float, hi: float) -> float:
    h = hi - lo
    z = (y - lo) % (2 * h)
    return lo + (z if z <= h else 2 * h - z)


class TwoBallBoxLink(dlsmod.LinkEvaluator):
    """Pair passage on the interval with a per-ball wall-bounce pattern.

    The symbol (m1, m2) counts signed wall reflections of each ball between
    consecutive pair collisions; the connecting orbit is the straight chord
    in the unfolded cover. wall_margin shifts the walls inward (tube billiard
    geometry); the limiting chain uses margin zero.
    """

    def __init__(self, h: ClassicalHamiltonian, E: float, masses,
                 box: Tuple[float, float], pattern: Tuple[int, int],
                 wall_margin: float = 0.0):
        self.h = h
        self.E = E
        self.m = np.asarray(masses, dtype=float)
        self.box = box
        self.pattern = (int(pattern[0]), int(pattern[1]))
        self.margin = float(wall_margin)
        self.dim_minus = self.dim_plus = 1
        self._speed = np.sqrt(2.0 * E)

    def _walls(self):
        return self.box[0] + self.margin, self.box[1] - self.margin

    def _geometry(self, ym: np.ndarray, yp: np.ndarray):
        lo, hi = self._walls()
        ell = np.empty(2)
        par = np.empty(2)
        for i in range(2):
            img, pr = _unfolded_image(float(yp[i]), self.pattern[i], lo, hi)
            ell[i] = img - float(ym[i])
            par[i] = pr
        return ell, par

    def _pair_positions(self, x):
        c = float(np.atleast_1d(x)[0])
        return np.array([c, c])

    def value(self, xm, xp):
        ell, _ = self._geometry(self._pair_positions(xm), self._pair_positions(xp))
        return float(self._speed * np.sqrt(np.sum(self.m * ell**2)))

    def grad_minus(self, xm, xp):
        ell, _ = self._geometry(self._pair_positions(xm), self._pair_positions(xp))
        g = np.sqrt(np.sum(self.m * ell**2))
        return np.array([-self._speed * np.sum(self.m * ell) / g])

    def grad_plus(self, xm, xp):
        ell, par = self._geometry(self._pair_positions(xm), self._pair_positions(xp))
        g = np.sqrt(np.sum(self.m * ell**2))
        return np.array([self._speed * np.sum(self.m * ell * par) / g])

    def momenta(self, xm, xp):
        ell, par = self._geometry(self._pair_positions(xm), self._pair_positions(xp))
        g = np.sqrt(np.sum(self.m * ell**2))
        p_minus = self._speed * self.m * ell / g
        p_plus = self._speed * self.m * ell * par / g
        return p_minus, p_plus

    def in_domain(self, xm, xp):
        ym = self._pair_positions(xm)
        yp = self._pair_positions(xp)
        lo, hi = self._walls()
        if not (lo < ym[0] < hi and lo < yp[0] < hi):
            return False
        ell, _ = self._geometry(ym, yp)
        return bool(np.all(np.abs(ell) > 1e-12))

    def ambient_connect(self, qm, qp, eps):
        return self._connect_ambient(np.asarray(qm, dtype=float),
                                     np.asarray(qp, dtype=float), eps)

    def _connect_ambient(self, qm, qp, eps, samples: int = 129):
        lo, hi = self.box[0] + eps, self.box[1] - eps
        ell = np.empty(2)
        par = np.empty(2)
        for i in range(2):
            img, pr = _unfolded_image(float(qp[i]), self.pattern[i], lo, hi)
            ell[i] = img - float(qm[i])
            par[i] = pr
        g = np.sqrt(np.sum(self.m * ell**2))
        action = self._speed * g
        tau = g / self._speed
        p_minus = self._speed * self.m * ell / g
        p_plus = self._speed * self.m * ell * par / g
        ts = np.linspace(0.0, 1.0, samples)
        path = np.empty((samples, 2))
        for i in range(2):
            unfolded = qm[i] + ts * ell[i]
            path[:, i] = [_fold(u, lo, hi) for u in unfolded]
        return bvp.CollisionOrbit(self.h, self.E, qm, qp, float(action), float(tau),
                                  p_minus, p_plus, path, label=self.pattern,
                                  backend="unfolded")

    def reference_path(self, xm, xp, num: int = 129):
        orb = self._connect_ambient(self._pair_positions(xm),
                                    self._pair_positions(xp), 0.0, samples=num)
        return orb.path


@dataclass
class TwoBallBoxScenario:
    h: ClassicalHamiltonian
    scatterer: DiagonalScatterer
    E: float
    masses: np.ndarray
    box: Tuple[float, float]

    def lagrangian(self, wall_margin: float = 0.0,
                   endpoints: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        links = _LazyLinks(lambda k: TwoBallBoxLink(self.h, self.E, self.masses,
                                                    self.box, k, wall_margin))
        ends = None
        if endpoints is not None:
            a = np.asarray(endpoints[0], dtype=float)
            b = np.asarray(endpoints[1], dtype=float)
            ends = lambda c: (a, b)
        dl = dlsmod.DiscreteLagrangian(links, energy=self.E, scatterer=self.scatterer,
                                       name="two_ball_box", ambient_endpoints=ends)
        dl.hamiltonian = self.h
        return dl

    def periodic_chain(self, code, points):
        code = [tuple(int(v) for v in k) for k in code]
        return dlsmod.ChainConfiguration(code, [np.atleast_1d(p) for p in points],
                                         "periodic")

    def fixed_chain(self, code, points):
        """Fixed ambient endpoints; the boundary branches close over them."""
        code = [tuple(int(v) for v in k) for k in code]
        return dlsmod.ChainConfiguration(code, [np.atleast_1d(p) for p in points],
                                         "fixed", left=np.zeros(0), right=np.zeros(0))


def two_ball_box_scenario(masses=(1.0, 1.0), E: float = 0.5,
                          box: Tuple[float, float] = (0.0, 1.0)) -> TwoBallBoxScenario:
    space = euclidean(2)
    m = np.asarray(masses, dtype=float)
    h = ClassicalHamiltonian(space, mass=np.diag(m))
    scat = DiagonalScatterer(space)
    return TwoBallBoxScenario(h, scat, E, m, box)


class BoxBoundaryLink(TwoBallBoxLink):
    """End link of a fixed chain: one slot frozen at an ambient pair position."""

    def __init__(self, base: TwoBallBoxLink, side: str, anchor: np.ndarray):
        self.__dict__.update(base.__dict__)
        self.side = side
        self.anchor = np.asarray(anchor, dtype=float)
        if side == "left":
            self.dim_minus = 0
        else:
            self.dim_plus = 0

    def _resolve(self, xm, xp):
        ym = self.anchor if self.side == "left" else self._pair_positions(xm)
        yp = self.anchor if self.side == "right" else self._pair_positions(xp)
        return ym, yp

    def value(self, xm, xp):
        ym, yp = self._resolve(xm, xp)
        ell, _ = self._geometry(ym, yp)
        return float(self._speed * np.sqrt(np.sum(self.m * ell**2)))

    def grad_minus(self, xm, xp):
        if self.side == "left":
            return np.zeros(0)
        ym, yp = self._resolve(xm, xp)
        ell, _ = self._geometry(ym, yp)
        g = np.sqrt(np.sum(self.m * ell**2))
        return np.array([-self._speed * np.sum(self.m * ell) / g])

    def grad_plus(self, xm, xp):
        if self.side == "right":
            return np.zeros(0)
        ym, yp = self._resolve(xm, xp)
        ell, par = self._geometry(ym, yp)
        g = np.sqrt(np.sum(self.m * ell**2))
        return np.array([self._speed * np.sum(self.m * ell * par) / g])

    def momenta(self, xm, xp):
        ym, yp = self._resolve(xm, xp)
        ell, par = self._geometry(ym, yp)
        g = np.sqrt(np.sum(self.m * ell**2))
        return self._speed * self.m * ell / g, self._speed * self.m * ell * par / g

    def in_domain(self, xm, xp):
        ym, yp = self._resolve(xm, xp)
        lo, hi = self._walls()
        ok = lo < ym[0] < hi and lo < ym[1] < hi and lo < yp[0] < hi and lo < yp[1] < hi
        if not ok:
            return False
        ell, _ = self._geometry(ym, yp)
        return bool(np.all(np.abs(ell) > 1e-12))

    def ambient_connect(self, qm, qp, eps):
        qm = self.anchor if self.side == "left" else np.asarray(qm, dtype=float)
        qp = self.anchor if self.side == "right" else np.asarray(qp, dtype=float)
        return self._connect_ambient(qm, qp, eps)

    def reference_path(self, xm, xp, num: int = 129):
        ym, yp = self._resolve(xm, xp)
        return self._connect_ambient(ym, yp, 0.0, samples=num).path


def box_fixed_lagrangian(scn: TwoBallBoxScenario, a, b, code,
                         wall_margin: float = 0.0) -> dlsmod.DiscreteLagrangian:
    """Symbol table for a fixed chain a -> ... -> b with the given code.

    Interior links share the plain branches; the first and last symbols are
    boundary branches frozen at the ambient pair positions a, b.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    links: Dict[object, dlsmod.LinkEvaluator] = {}
    code = [tuple(int(v) for v in k) for k in code]
    for j, k in enumerate(code):
        base = TwoBallBoxLink(scn.h, scn.E, scn.masses, scn.box, k, wall_margin)
        if j == 0:
            links[("end", j, k)] = BoxBoundaryLink(base, "left", a)
        elif j == len(code) - 1:
            links[("end", j, k)] = BoxBoundaryLink(base, "right", b)
        else:
            links[("mid", j, k)] = base
    dl = dlsmod.DiscreteLagrangian(links, energy=scn.E, scatterer=scn.scatterer,
                                   name="two_ball_box_fixed",
                                   ambient_endpoints=lambda c: (a, b))
    dl.hamiltonian = scn.h
    return dl


def box_fixed_chain(code, points) -> dlsmod.ChainConfiguration:
    keys = []
    code = [tuple(int(v) for v in k) for k in code]
    for j, k in enumerate(code):
        if j == 0 or j == len(code) - 1:
            keys.append(("end", j, k))
        else:
            keys.append(("mid", j, k))
    return dlsmod.ChainConfiguration(keys, [np.atleast_1d(p) for p in points],
                                     "fixed", left=np.zeros(0), right=np.zeros(0))


# ---------------------------------------------------------------------------
# Planar n-center polygons
# ---------------------------------------------------------------------------

class SegmentLink(dlsmod.LinkEvaluator):
    """Straight collision orbit between two labeled centers."""

    def __init__(self, h: ClassicalHamiltonian, E: float, scat: PointScatterer,
                 pair: Tuple[int, int]):
        i, j = pair
        if i == j:
            raise ValueError("a segment needs distinct centers")
        self.h = h
        self.E = E
        self.pair = (int(i), int(j))
        self.a = scat.embed(i)
        self.b = scat.embed(j)
        self.dim_minus = self.dim_plus = 0
        disp = self.b - self.a
        ell = np.linalg.norm(disp)
        self._speed = np.sqrt(2.0 * E)
        self._p = self._speed * disp / ell
        self._action = self._speed * ell

    def value(self, xm, xp):
        return float(self._action)

    def grad_minus(self, xm, xp):
        return np.zeros(0)

    def grad_plus(self, xm, xp):
        return np.zeros(0)

    def hess(self, xm, xp):
        z = np.zeros((0, 0))
        return z, z, z

    def momenta(self, xm, xp):
        return self._p.copy(), self._p.copy()

    def ambient_connect(self, qm, qp, eps):
        return bvp.connect(self.h, qm, qp, self.E)

    def reference_path(self, xm, xp, num: int = 33):
        ts = np.linspace(0.0, 1.0, num)
        return self.a[None, :] + ts[:, None] * (self.b - self.a)[None, :]


@dataclass
class NCenterScenario:
    h: ClassicalHamiltonian
    scatterer: PointScatterer
    dl: dlsmod.DiscreteLagrangian
    E: float
    alphas: np.ndarray

    def chain(self, code: Sequence[Tuple[int, int]]):
        code = [(int(i), int(j)) for i, j in code]
        for j in range(len(code)):
            if code[j][1] != code[(j + 1) % len(code)][0]:
                raise ValueError(f"code does not concatenate at position {j}")
        pts = [np.zeros(0) for _ in code]
        return dlsmod.ChainConfiguration(code, pts, "periodic")

    def graph_vertices(self) -> List[symbolic.OrbitVertex]:
        out = []
        n = len(self.scatterer)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                link = self.dl.link((i, j))
                out.append(symbolic.OrbitVertex((i, j), i, j, link._p, link._p,
                                                link._p, link._p))
        return out


def ncenter_scenario(centers, alphas=None, E: float = 0.5) -> NCenterScenario:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    space = euclidean(centers.shape[1])
    h = ClassicalHamiltonian(space)
    scat = PointScatterer(space, centers)
    alphas = np.ones(len(centers)) if alphas is None else np.asarray(alphas, dtype=float)
    links = _LazyLinks(lambda pair: SegmentLink(h, E, scat, pair))

    def site_bases(c, i):
        return c.code[i][0] if c.bc == "periodic" else c.code[i][1]

    dl = dlsmod.DiscreteLagrangian(links, energy=E, scatterer=scat,
                                   name="ncenter", site_bases=site_bases)
    dl.hamiltonian = h
    return NCenterScenario(h, scat, dl, E, alphas)


def square_centers(side: float = 1.0) -> np.ndarray:
    return np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
