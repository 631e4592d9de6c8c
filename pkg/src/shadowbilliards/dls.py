"""Discrete Lagrangian systems over a scatterer: actions, Newton, certificates.

A multivalued Lagrangian assigns to each symbol k a two-point function L_k on
chart coordinates of the scatterer. Chains of symbols and points carry the
discrete action; its gradient vanishes exactly when the tangential part of
the momentum jump vanishes at every collision, and its Hessian is
block-tridiagonal (cyclic for periodic chains). Hyperbolicity is certified
through uniform sup-norm bounds on inverses of centered Dirichlet windows,
with the Green-function decay rate fitted as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .blocktri import (BlockTridiagonalFactor, SingularBlockError,
                       assemble_dense, inverse_inf_norm, solve_window,
                       split_blocks)


class ChainDomainError(ValueError):
    """A link of the chain left the domain of its Lagrangian branch."""


class NewtonError(RuntimeError):
    """Damped Newton on the chain residual failed."""


class RouthError(RuntimeError):
    """Routh nondegeneracy failed: no isolated critical group shift."""


# ---------------------------------------------------------------------------
# Link evaluators
# ---------------------------------------------------------------------------

def _fd_grad(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class LinkEvaluator:
    """Two-point Lagrangian branch; chart dimensions may differ per slot.

    Subclasses supply value(); gradients default to central differences and
    second derivatives to differences of gradients with one Richardson step.
    momenta() returns ambient boundary momenta when the backend knows them.
    """

    dim_minus: int
    dim_plus: int
    fd_step: float = 1e-6

    def value(self, xm: np.ndarray, xp: np.ndarray) -> float:
        raise NotImplementedError

    def in_domain(self, xm: np.ndarray, xp: np.ndarray) -> bool:
        return True

    def grad_minus(self, xm, xp) -> np.ndarray:
        return _fd_grad(lambda x: self.value(x, xp), np.asarray(xm, dtype=float), self.fd_step)

    def grad_plus(self, xm, xp) -> np.ndarray:
        return _fd_grad(lambda x: self.value(xm, x), np.asarray(xp, dtype=float), self.fd_step)

    def _grad_pair(self, xm, xp) -> np.ndarray:
        return np.concatenate([self.grad_minus(xm, xp), self.grad_plus(xm, xp)])

    def hess(self, xm, xp) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(D--, D-+, D++) second derivative blocks."""
        xm = np.asarray(xm, dtype=float)
        xp = np.asarray(xp, dtype=float)
        nm, npl = xm.size, xp.size

        def stacked(h):
            J = np.empty((nm + npl, nm + npl))
            for i in range(nm):
                e = np.zeros(nm)
                e[i] = h
                J[i] = (self._grad_pair(xm + e, xp) - self._grad_pair(xm - e, xp)) / (2 * h)
            for i in range(npl):
                e = np.zeros(npl)
                e[i] = h
                J[nm + i] = (self._grad_pair(xm, xp + e) - self._grad_pair(xm, xp - e)) / (2 * h)
            return J

        h = self.fd_step * 16
        J = (4.0 * stacked(h / 2) - stacked(h)) / 3.0
        J = 0.5 * (J + J.T)
        return J[:nm, :nm], J[:nm, nm:], J[nm:, nm:]

    def momenta(self, xm, xp) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError("this branch does not expose ambient momenta")

    def velocities(self, xm, xp) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class FunctionLink(LinkEvaluator):
    """Plain-function branch, mostly for synthetic systems in tests."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], float],
                 dim_minus: int, dim_plus: int,
                 grads: Optional[Callable] = None,
                 momenta_fn: Optional[Callable] = None,
                 domain: Optional[Callable] = None,
                 fd_step: float = 1e-6):
        self.fn = fn
        self.dim_minus = dim_minus
        self.dim_plus = dim_plus
        self._grads = grads
        self._momenta = momenta_fn
        self._domain = domain
        self.fd_step = fd_step

    def value(self, xm, xp):
        return float(self.fn(np.asarray(xm, dtype=float), np.asarray(xp, dtype=float)))

    def in_domain(self, xm, xp):
        return True if self._domain is None else bool(self._domain(xm, xp))

    def grad_minus(self, xm, xp):
        if self._grads is not None:
            return np.asarray(self._grads(xm, xp)[0], dtype=float)
        return super().grad_minus(xm, xp)

    def grad_plus(self, xm, xp):
        if self._grads is not None:
            return np.asarray(self._grads(xm, xp)[1], dtype=float)
        return super().grad_plus(xm, xp)

    def momenta(self, xm, xp):
        if self._momenta is None:
            raise NotImplementedError("no momenta on this branch")
        pm, pp = self._momenta(xm, xp)
        return np.asarray(pm, dtype=float), np.asarray(pp, dtype=float)


@dataclass
class DiscreteLagrangian:
    """Multivalued Lagrangian: one evaluator per symbol, plus metadata.

    energy and scatterer are optional but feed default jump tolerances and
    normal projections in admissibility reports. For zero-dimensional
    scatterers, site_bases(c, i) names the point id a chain visits at site i;
    ambient_endpoints(c) returns the frozen ambient ends of fixed chains.
    """

    links: Mapping[object, LinkEvaluator]
    energy: Optional[float] = None
    scatterer: object = None
    name: str = ""
    site_bases: Optional[Callable] = None
    ambient_endpoints: Optional[Callable] = None

    def link(self, k) -> LinkEvaluator:
        try:
            return self.links[k]
        except (KeyError, TypeError):
            return self.links[_key(k)]


def _key(k):
    if isinstance(k, np.ndarray):
        return tuple(int(v) for v in k)
    if isinstance(k, (list, tuple)):
        return tuple(_key(v) for v in k) if any(isinstance(v, (list, tuple, np.ndarray)) for v in k) else tuple(k)
    return k


# ---------------------------------------------------------------------------
# Chain configurations
# ---------------------------------------------------------------------------

@dataclass
class ChainConfiguration:
    """Symbol code plus scatterer points in chart coordinates.

    periodic: points[j] for j in 0..n-1, link j joins x_j to x_{j+1 mod n}.
    fixed: len(code) = len(points) + 1; frozen left/right coordinates feed the
    outermost slots (they may be empty arrays when a boundary branch closes
    over its ambient endpoint).
    """

    code: List[object]
    points: List[np.ndarray]
    bc: str = "periodic"
    left: Optional[np.ndarray] = None
    right: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = [np.atleast_1d(np.asarray(x, dtype=float)) for x in self.points]
        if self.bc == "periodic":
            if len(self.code) != len(self.points):
                raise ValueError("periodic chain needs one point per link")
        elif self.bc == "fixed":
            if len(self.code) != len(self.points) + 1:
                raise ValueError("fixed chain needs len(code) = len(points) + 1")
            self.left = np.atleast_1d(np.asarray(self.left if self.left is not None else [], dtype=float))
            self.right = np.atleast_1d(np.asarray(self.right if self.right is not None else [], dtype=float))
        else:
            raise ValueError("bc must be 'periodic' or 'fixed'")

    @property
    def n_links(self) -> int:
        return len(self.code)

    @property
    def n_free(self) -> int:
        return len(self.points)

    def link_endpoints(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        if self.bc == "periodic":
            n = len(self.points)
            return self.points[j % n], self.points[(j + 1) % n]
        left = self.left if j == 0 else self.points[j - 1]
        right = self.right if j == self.n_links - 1 else self.points[j]
        return left, right

    def with_points(self, new_points) -> "ChainConfiguration":
        return replace(self, points=[np.atleast_1d(np.asarray(x, dtype=float)) for x in new_points])


def _check_domains(dl: DiscreteLagrangian, c: ChainConfiguration):
    for j, k in enumerate(c.code):
        xm, xp = c.link_endpoints(j)
        if not dl.link(k).in_domain(xm, xp):
            raise ChainDomainError(f"link {j} (symbol {k}) left its domain")


def chain_action(dl: DiscreteLagrangian, c: ChainConfiguration) -> float:
    """Sum of branch Lagrangians over the chain with the boundary wrap applied."""
    _check_domains(dl, c)
    total = 0.0
    for j, k in enumerate(c.code):
        xm, xp = c.link_endpoints(j)
        total += dl.link(k).value(xm, xp)
    return float(total)


def _site_links(c: ChainConfiguration, i: int) -> Tuple[int, int]:
    """(incoming link, outgoing link) indices of free site i."""
    if c.bc == "periodic":
        n = c.n_free
        return (i - 1) % n, i
    return i, i + 1


def residual(dl: DiscreteLagrangian, c: ChainConfiguration) -> List[np.ndarray]:
    """Gradient of the discrete action at each free site.

    Site i collects D+ of its incoming branch and D- of its outgoing branch,
    i.e. the tangential projection of (p_i^+ - p_i^-); it vanishes exactly at
    the elastic-reflection (tangential momentum conservation) condition.
    """
    out = []
    for i in range(c.n_free):
        jin, jout = _site_links(c, i)
        xm_in, xp_in = c.link_endpoints(jin)
        xm_out, xp_out = c.link_endpoints(jout)
        g = dl.link(c.code[jin]).grad_plus(xm_in, xp_in) \
            + dl.link(c.code[jout]).grad_minus(xm_out, xp_out)
        out.append(np.asarray(g, dtype=float))
    return out


def residual_norm(res: Sequence[np.ndarray]) -> float:
    if not res or all(r.size == 0 for r in res):
        return 0.0
    return max(float(np.max(np.abs(r))) if r.size else 0.0 for r in res)


@dataclass
class BlockTridiagonalHessian:
    """Second variation of the chain action in block form.

    diag[i] couples site i with itself; offdiag[i] couples sites i and i+1.
    Periodic chains of three or more sites carry the cyclic corner block
    (n-1, 0); with two sites both links fold into the single offdiagonal.
    """

    diag: List[np.ndarray]
    offdiag: List[np.ndarray]
    corner: Optional[np.ndarray] = None
    periodic: bool = False

    @property
    def dims(self) -> List[int]:
        return [a.shape[0] for a in self.diag]

    def dense(self) -> np.ndarray:
        return assemble_dense(self.diag, self.offdiag, self.corner)

    def apply(self, u: Sequence[np.ndarray]) -> List[np.ndarray]:
        n = len(self.diag)
        out = []
        for i in range(n):
            v = self.diag[i] @ u[i]
            if i > 0:
                v = v + self.offdiag[i - 1].T @ u[i - 1]
            if i < n - 1:
                v = v + self.offdiag[i] @ u[i + 1]
            if self.corner is not None:
                if i == 0:
                    v = v + self.corner.T @ u[n - 1]
                elif i == n - 1:
                    v = v + self.corner @ u[0]
            out.append(v)
        return out

    def solve(self, rhs: Sequence[np.ndarray]) -> List[np.ndarray]:
        if self.corner is not None:
            M = self.dense()
            x = np.linalg.solve(M, np.concatenate([np.asarray(r) for r in rhs]))
            return split_blocks(x, self.dims)
        return solve_window(self.diag, self.offdiag, rhs)

    def smallest_singular_value(self) -> float:
        M = self.dense()
        if M.size == 0:
            return np.inf
        return float(np.linalg.svd(M, compute_uv=False)[-1])


def hessian(dl: DiscreteLagrangian, c: ChainConfiguration) -> BlockTridiagonalHessian:
    """Assemble the block-tridiagonal second variation at the chain."""
    n = c.n_free
    if n == 0:
        return BlockTridiagonalHessian([], [], None, c.bc == "periodic")
    H = [[None, None, None] for _ in range(c.n_links)]  # d11, d12, d22 per link
    for j, k in enumerate(c.code):
        xm, xp = c.link_endpoints(j)
        H[j] = list(dl.link(k).hess(xm, xp))

    diag = []
    for i in range(n):
        jin, jout = _site_links(c, i)
        if c.bc == "periodic" and n == 1:
            d11, d12, d22 = H[0]
            diag.append(d11 + d22 + d12 + d12.T)
            return BlockTridiagonalHessian(diag, [], None, True)
        diag.append(H[jin][2] + H[jout][0])

    if c.bc == "periodic":
        if n == 2:
            off = [H[0][1] + H[1][1].T]
            return BlockTridiagonalHessian(diag, off, None, True)
        off = [H[j][1] for j in range(n - 1)]
        corner = H[n - 1][1]
        return BlockTridiagonalHessian(diag, off, corner, True)
    off = [H[j + 1][1] for j in range(n - 1)]
    return BlockTridiagonalHessian(diag, off, None, False)


# ---------------------------------------------------------------------------
# Newton solver
# ---------------------------------------------------------------------------

@dataclass
class NewtonResult:
    chain: ChainConfiguration
    residual_inf: float
    smallest_singular_value: float
    iterations: int
    converged: bool


def newton_chain(dl: DiscreteLagrangian, c0: ChainConfiguration,
                 tol: float = 1e-10, max_iter: int = 60,
                 max_halvings: int = 40, allow_singular: bool = False) -> NewtonResult:
    """Damped Newton on the chain residual using the block structure.

    The step is halved until the sup-norm of the residual decreases. A chain
    without free coordinates is already critical and is returned unchanged.
    A singular Hessian raises unless allow_singular is set, in which case the
    minimal-norm step is taken (useful on unreduced symmetric systems, whose
    critical chains come in group orbits).
    """
    c = c0
    if c.n_free == 0 or all(x.size == 0 for x in c.points):
        return NewtonResult(c, 0.0, np.inf, 0, True)
    _check_domains(dl, c)
    res = residual(dl, c)
    rn = residual_norm(res)
    it = 0
    while rn > tol and it < max_iter:
        H = hessian(dl, c)
        try:
            step = H.solve([-r for r in res])
        except (np.linalg.LinAlgError, SingularBlockError) as exc:
            if not allow_singular:
                raise NewtonError(f"singular chain Hessian at iteration {it}") from exc
            flat, *_ = np.linalg.lstsq(H.dense(),
                                       -np.concatenate([r for r in res]), rcond=None)
            step = split_blocks(flat, H.dims)
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = c.with_points([x + lam * s for x, s in zip(c.points, step)])
            try:
                res_t = residual(dl, trial)
            except ChainDomainError:
                lam *= 0.5
                continue
            rn_t = residual_norm(res_t)
            if rn_t < rn:
                break
            lam *= 0.5
        else:
            raise NewtonError(f"no descent after {max_halvings} halvings (|r| = {rn:.2e})")
        c, res, rn = trial, res_t, rn_t
        it += 1
    sigma = hessian(dl, c).smallest_singular_value()
    return NewtonResult(c, rn, sigma, it, rn <= tol)


# ---------------------------------------------------------------------------
# Window certificates (sup-norm hyperbolicity) and Green-function decay
# ---------------------------------------------------------------------------

def _periodic_window_blocks(dl: DiscreteLagrangian, c: ChainConfiguration,
                            center: int, half_width: int):
    """Blocks of the Dirichlet window of the periodic extension of the chain."""
    if c.bc != "periodic":
        raise ValueError("window certificates act on periodic chains")
    n = c.n_free

    def link_data(j):
        k = c.code[j % n]
        xm, xp = c.points[j % n], c.points[(j + 1) % n]
        return dl.link(k).hess(xm, xp)

    sites = range(center - half_width, center + half_width + 1)
    hcache: Dict[int, tuple] = {}

    def hj(j):
        jj = j % n
        if jj not in hcache:
            hcache[jj] = link_data(jj)
        return hcache[jj]

    diag = []
    for i in sites:
        d_in = hj(i - 1)[2]
        d_out = hj(i)[0]
        diag.append(d_in + d_out)
    off = [hj(i)[1] for i in list(sites)[:-1]]
    return diag, off


@dataclass
class CertificateResult:
    windows: Tuple[int, ...]
    norms: Tuple[float, ...]
    stabilized: bool
    value: Optional[float]
    rel_change: float


def hyperbolicity_certificate(dl: DiscreteLagrangian, c: ChainConfiguration,
                              windows: Sequence[int] = (1, 2, 4, 8, 16),
                              center: int = 0, stab_tol: float = 0.05) -> CertificateResult:
    """Sup-norm bounds C_W of inverses of centered Dirichlet windows.

    The certificate is the stabilized value of C_W over a geometric range of
    half-widths W; growth without stabilization signals a kernel direction
    (an unreduced symmetry) or non-hyperbolicity.
    """
    norms = []
    for W in windows:
        diag, off = _periodic_window_blocks(dl, c, center, int(W))
        norms.append(inverse_inf_norm(diag, off))
    rel = abs(norms[-1] - norms[-2]) / max(norms[-2], 1e-300) if len(norms) > 1 else np.inf
    stab = rel <= stab_tol
    return CertificateResult(tuple(int(w) for w in windows), tuple(norms), stab,
                             norms[-1] if stab else None, float(rel))


@dataclass
class GreenDecayFit:
    C: float
    lam: float
    r_squared: float
    offsets: np.ndarray
    norms: np.ndarray


def green_decay(dl: DiscreteLagrangian, c: ChainConfiguration, j: int = 0,
                half_width: int = 24, floor: float = 1e-14) -> GreenDecayFit:
    """Exponential decay fit of the window Green function at block j.

    Solves the window system against unit loads at the center block, records
    block norms of the response, and fits log-norm against distance on the
    inner half of the window (edge effects excluded). lam > 0 with a good fit
    supports the hyperbolic verdict.
    """
    diag, off = _periodic_window_blocks(dl, c, j, half_width)
    dims = [a.shape[0] for a in diag]
    nwin = len(diag)
    centre = half_width
    m = dims[centre]
    responses = np.zeros((nwin,))
    for a in range(m):
        rhs = [np.zeros(d) for d in dims]
        rhs[centre] = np.zeros(m)
        rhs[centre][a] = 1.0
        x = solve_window(diag, off, rhs)
        responses = np.maximum(responses, np.array([np.linalg.norm(xi) for xi in x]))
    offsets = np.abs(np.arange(nwin) - centre)
    inner = offsets <= half_width // 2
    keep = inner & (responses > floor * max(responses.max(), 1e-300))
    xs = offsets[keep].astype(float)
    ys = np.log(responses[keep])
    if xs.size < 3 or np.ptp(xs) == 0:
        return GreenDecayFit(float("nan"), 0.0, 0.0, offsets, responses)
    A = np.vstack([np.ones_like(xs), -xs]).T
    coef, res_, *_ = np.linalg.lstsq(A, ys, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return GreenDecayFit(float(np.exp(coef[0])), float(coef[1]), r2, offsets, responses)


# ---------------------------------------------------------------------------
# Admissibility and symmetry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionReport:
    site: int
    jump_norm: float
    admissible: bool
    straight_reflection: bool
    delta_p: np.ndarray


def momentum_jumps(dl: DiscreteLagrangian, c: ChainConfiguration) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    """(site, p^-, p^+) ambient momenta around each free site."""
    out = []
    for i in range(c.n_free):
        jin, jout = _site_links(c, i)
        xm_in, xp_in = c.link_endpoints(jin)
        xm_out, xp_out = c.link_endpoints(jout)
        _, p_plus = dl.link(c.code[jin]).momenta(xm_in, xp_in)
        p_minus, _ = dl.link(c.code[jout]).momenta(xm_out, xp_out)
        out.append((i, p_minus, p_plus))
    return out


def admissible(dl: DiscreteLagrangian, c: ChainConfiguration,
               jump_tol: Optional[float] = None, angle_tol: float = 1e-6,
               attracting: bool = False) -> List[CollisionReport]:
    """Per-collision jump condition, with the head-on filter for attracting flows.

    The jump condition needs ||p^- - p^+|| above tolerance; attracting
    singular scenarios additionally reject straight reflections, where the
    normal projections of the velocities satisfy u^+ = -u^-.
    """
    if jump_tol is None:
        jump_tol = 1e-6 * np.sqrt(2.0 * dl.energy) if dl.energy else 1e-6
    reports = []
    for i, p_minus, p_plus in momentum_jumps(dl, c):
        dp = p_minus - p_plus
        jn = float(np.linalg.norm(dp))
        straight = False
        if jn >= jump_tol:
            um, up = p_minus, p_plus
            if dl.scatterer is not None and getattr(dl.scatterer, "dim", 0) > 0:
                x = c.points[i] if c.points[i].size else None
                if x is not None:
                    um = dl.scatterer.normal_coordinates(x, p_minus)
                    up = dl.scatterer.normal_coordinates(x, p_plus)
            num = float(np.linalg.norm(um)) * float(np.linalg.norm(up))
            if num > 0:
                cosang = float(um @ up) / num
                straight = bool(np.arccos(np.clip(-cosang, -1.0, 1.0)) < angle_tol)
        ok = jn >= jump_tol and not (attracting and straight)
        reports.append(CollisionReport(i, jn, ok, straight, dp))
    return reports


def tangent_momenta(dl: DiscreteLagrangian, c: ChainConfiguration) -> List[np.ndarray]:
    """y_i = D+ L at the incoming slot of each site (chart covectors)."""
    out = []
    for i in range(c.n_free):
        jin, _ = _site_links(c, i)
        xm, xp = c.link_endpoints(jin)
        out.append(dl.link(c.code[jin]).grad_plus(xm, xp))
    return out


def noether_values(dl: DiscreteLagrangian, c: ChainConfiguration,
                   generator: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """<u(x_i), y_i> per site; constant along critical chains of a symmetric DLS."""
    ys = tangent_momenta(dl, c)
    return np.array([float(np.asarray(generator(x)) @ y) for x, y in zip(c.points, ys)])


def symmetry_field(c: ChainConfiguration,
                   generator: Callable[[np.ndarray], np.ndarray]) -> List[np.ndarray]:
    return [np.asarray(generator(x), dtype=float) for x in c.points]


# ---------------------------------------------------------------------------
# Routh reduction
# ---------------------------------------------------------------------------

@dataclass
class ChartSymmetry:
    """One-parameter group acting on chart coordinates of the scatterer."""

    act: Callable[[float, np.ndarray], np.ndarray]
    generator: Callable[[np.ndarray], np.ndarray]


class RouthLink(LinkEvaluator):
    """Reduced branch: Legendre transform of the group shift at fixed level G."""

    def __init__(self, base: LinkEvaluator, symmetry: ChartSymmetry, G: float,
                 section_point: Optional[np.ndarray] = None,
                 section_basis: Optional[np.ndarray] = None,
                 theta0: float = 0.0, fd_step: float = 1e-6):
        self.base = base
        self.sym = symmetry
        self.G = float(G)
        self.theta0 = float(theta0)
        self.fd_step = fd_step
        self._x0 = section_point
        self._basis = section_basis
        if section_basis is not None:
            self.dim_minus = self.dim_plus = section_basis.shape[1]
        else:
            self.dim_minus = self.dim_plus = 0 if section_point is not None else base.dim_minus

    def _lift(self, x: np.ndarray) -> np.ndarray:
        if self._x0 is None:
            return np.asarray(x, dtype=float)
        if self._basis is None:
            return np.asarray(self._x0, dtype=float)
        return np.asarray(self._x0, dtype=float) + self._basis @ np.asarray(x, dtype=float)

    def critical_theta(self, xm, xp, tol: float = 1e-12, max_iter: int = 120) -> float:
        xm = self._lift(xm)
        xp = self._lift(xp)

        def dphi(theta):
            y = self.sym.act(theta, xp)
            g = self.base.grad_plus(xm, y)
            u = np.asarray(self.sym.generator(y), dtype=float)
            return float(g @ u) - self.G

        # flat group direction with G = 0: every shift is critical
        f0 = dphi(self.theta0)
        flat_tol = 1e-12 * max(1.0, abs(self.G))
        if abs(f0) <= flat_tol and abs(dphi(self.theta0 + 0.37)) <= flat_tol:
            if abs(self.G) > flat_tol:
                raise RouthError("flat group direction with nonzero level")
            return float(self.theta0)
        if f0 == 0.0:
            return float(self.theta0)
        span = 0.25
        lo = hi = None
        for _ in range(60):
            a, b = self.theta0 - span, self.theta0 + span
            fa, fb = dphi(a), dphi(b)
            if fa == 0.0:
                return float(a)
            if fb == 0.0:
                return float(b)
            if fa * f0 < 0:
                lo, hi = a, self.theta0
                break
            if fb * f0 < 0:
                lo, hi = self.theta0, b
                break
            span *= 1.6
        if lo is None:
            raise RouthError("no critical group shift found in the bracket")
        from scipy.optimize import brentq
        theta = brentq(dphi, lo, hi, xtol=tol, rtol=1e-15, maxiter=max_iter)
        return float(theta)

    def value(self, xm, xp):
        theta = self.critical_theta(xm, xp)
        return self.base.value(self._lift(xm), self.sym.act(theta, self._lift(xp))) \
            - self.G * theta

    def grad_minus(self, xm, xp):
        if self.dim_minus == 0:
            return np.zeros(0)
        theta = self.critical_theta(xm, xp)
        g = self.base.grad_minus(self._lift(xm), self.sym.act(theta, self._lift(xp)))
        return g if self._basis is None else self._basis.T @ g

    def grad_plus(self, xm, xp):
        if self.dim_plus == 0:
            return np.zeros(0)
        theta = self.critical_theta(xm, xp)
        y = self.sym.act(theta, self._lift(xp))
        g = self.base.grad_plus(self._lift(xm), y)
        # chain rule through the shifted point at the critical theta (envelope)
        h = 1e-7
        d = self._lift(xp).size
        Dact = np.empty((d, self.dim_plus))
        basis = self._basis if self._basis is not None else np.eye(d)
        for i in range(self.dim_plus):
            e = basis[:, i] * h
            Dact[:, i] = (self.sym.act(theta, self._lift(xp) + e)
                          - self.sym.act(theta, self._lift(xp) - e)) / (2 * h)
        return Dact.T @ g


class _WrappedLinks(dict):
    """Lazy view applying a wrapper to another Lagrangian's branches."""

    def __init__(self, base: DiscreteLagrangian, wrap: Callable):
        super().__init__()
        self.base = base
        self.wrap = wrap

    def __missing__(self, key):
        link = self.wrap(self.base.link(key))
        self[key] = link
        return link


def routh_reduce(dl: DiscreteLagrangian, symmetry: ChartSymmetry, G: float,
                 section_point: Optional[np.ndarray] = None,
                 section_basis: Optional[np.ndarray] = None) -> DiscreteLagrangian:
    """Reduced Lagrangian family on a cross-section of the group action.

    The cross-section defaults to a frozen reference point (orbit of the
    action covers the scatterer); pass a basis of the complement of the
    generator to keep residual coordinates. Requires the group-shift Hessian
    of each branch to be nonzero where evaluated.
    """
    reduced = _WrappedLinks(dl, lambda link: RouthLink(link, symmetry, G,
                                                       section_point, section_basis))
    return DiscreteLagrangian(reduced, energy=dl.energy, scatterer=dl.scatterer,
                              name=(dl.name + "/routh") if dl.name else "routh")


def variational_consistency(dl: DiscreteLagrangian, c: ChainConfiguration,
                            fd_step: float = 1e-6) -> Dict[str, float]:
    """Compare residual and Hessian against finite differences of chain_action.

    Returns relative errors and structural checks; used by scenario gates.
    """
    res = residual(dl, c)
    n = c.n_free
    dims = [x.size for x in c.points]
    grad_fd = []
    for i in range(n):
        g = np.zeros(dims[i])
        for a in range(dims[i]):
            pts = [x.copy() for x in c.points]
            pts[i][a] += fd_step
            fp = chain_action(dl, c.with_points(pts))
            pts[i][a] -= 2 * fd_step
            fm = chain_action(dl, c.with_points(pts))
            g[a] = (fp - fm) / (2 * fd_step)
        grad_fd.append(g)
    gnorm = max(1e-12, max((np.max(np.abs(g)) if g.size else 0.0) for g in grad_fd))
    grad_err = max((np.max(np.abs(g - r)) if g.size else 0.0)
                   for g, r in zip(grad_fd, res)) / gnorm

    H = hessian(dl, c)
    M = H.dense()
    N = M.shape[0]
    offs = np.concatenate([[0], np.cumsum(dims)])
    Mfd = np.zeros_like(M)
    flat = np.concatenate([x for x in c.points]) if N else np.zeros(0)

    def act(v):
        pts = split_blocks(v, dims)
        return chain_action(dl, c.with_points(pts))

    h2 = fd_step * 40
    for a in range(N):
        for b in range(a, N):
            ea = np.zeros(N)
            eb = np.zeros(N)
            ea[a] = h2
            eb[b] = h2
            val = (act(flat + ea + eb) - act(flat + ea - eb)
                   - act(flat - ea + eb) + act(flat - ea - eb)) / (4 * h2 * h2)
            Mfd[a, b] = Mfd[b, a] = val
    hnorm = max(np.max(np.abs(Mfd)), 1e-12)
    hess_err = float(np.max(np.abs(M - Mfd)) / hnorm)

    sym_err = float(np.max(np.abs(M - M.T))) if N else 0.0
    sparsity_ok = True
    ndiag = len(dims)
    for i in range(ndiag):
        for j in range(ndiag):
            gap = min(abs(i - j), ndiag - abs(i - j)) if c.bc == "periodic" else abs(i - j)
            if gap > 1:
                blk = M[offs[i]:offs[i + 1], offs[j]:offs[j + 1]]
                if blk.size and np.max(np.abs(blk)) > 0:
                    sparsity_ok = False
    return {"grad_rel_error": float(grad_err), "hess_rel_error": hess_err,
            "symmetry_error": sym_err, "tridiagonal": float(sparsity_ok)}
