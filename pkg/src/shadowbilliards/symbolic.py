"""Collision graph of labeled orbits and its topological Markov chain.

Vertices are collision-orbit labels carrying endpoint ids and boundary
momenta; a directed edge k -> k' needs matching endpoints and a genuine
momentum jump. Chain codes are paths in this graph; the entropy of the
subshift is the log spectral radius of the adjacency matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

NEG_INF = float("-inf")


@dataclass(frozen=True)
class OrbitVertex:
    """Labeled collision orbit reduced to its graph data."""

    label: object
    start: object            # endpoint id on the scatterer
    end: object
    p_minus: np.ndarray      # momentum leaving `start`
    p_plus: np.ndarray       # momentum arriving at `end`
    v_minus: Optional[np.ndarray] = None
    v_plus: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "p_minus", np.asarray(self.p_minus, dtype=float))
        object.__setattr__(self, "p_plus", np.asarray(self.p_plus, dtype=float))


@dataclass
class CollisionGraph:
    vertices: List[OrbitVertex]
    adjacency: np.ndarray     # integer (n, n), A[i, j] = edge i -> j

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.int64)

    @property
    def labels(self) -> List[object]:
        return [v.label for v in self.vertices]

    def index_of(self, label) -> int:
        for i, v in enumerate(self.vertices):
            if v.label == label:
                return i
        raise KeyError(label)

    def edges(self) -> List[Tuple[object, object]]:
        out = []
        n = len(self.vertices)
        for i in range(n):
            for j in range(n):
                if self.adjacency[i, j]:
                    out.append((self.vertices[i].label, self.vertices[j].label))
        return out

    def dump(self) -> str:
        lines = []
        for i, v in enumerate(self.vertices):
            succ = [str(self.vertices[j].label)
                    for j in range(len(self.vertices)) if self.adjacency[i, j]]
            lines.append(f"{v.label} -> {', '.join(succ) if succ else '(none)'}")
        return "\n".join(lines)


def build_graph(orbits: Sequence[OrbitVertex], jump_tol: float = 1e-9,
                no_straight_reflection: bool = False,
                angle_tol: float = 1e-6) -> CollisionGraph:
    """Adjacency by endpoint matching plus the momentum-jump condition.

    Edge k -> k' iff end(k) == start(k') (exact id comparison) and
    p_plus(k) != p_minus(k') beyond jump_tol. With no_straight_reflection,
    head-on continuations v_plus(k) = -v_minus(k') are removed as well
    (needed when the limit is an attracting singular flow).
    """
    n = len(orbits)
    A = np.zeros((n, n), dtype=np.int64)
    for i, a in enumerate(orbits):
        for j, b in enumerate(orbits):
            if a.end != b.start:
                continue
            if np.linalg.norm(a.p_plus - b.p_minus) <= jump_tol:
                continue
            if no_straight_reflection:
                va = a.v_plus if a.v_plus is not None else a.p_plus
                vb = b.v_minus if b.v_minus is not None else b.p_minus
                den = np.linalg.norm(va) * np.linalg.norm(vb)
                if den > 0:
                    cosang = float(va @ vb) / den
                    if np.arccos(np.clip(-cosang, -1.0, 1.0)) < angle_tol:
                        continue
            A[i, j] = 1
    return CollisionGraph(list(orbits), A)


@dataclass(frozen=True)
class EntropyReport:
    value: float
    spectral_radius: float
    reducible: bool
    iterations: int


def _power_iteration(A: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000):
    n = A.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    # small diagonal shift keeps the Perron root simple even on pure cycles
    shift = 0.5
    Bs = A.astype(float) + shift * np.eye(n)
    it = 0
    for it in range(1, max_iter + 1):
        y = Bs @ x
        lam_new = float(np.linalg.norm(y))
        if lam_new == 0:
            return 0.0, it
        y /= lam_new
        if abs(lam_new - lam) < tol * max(1.0, abs(lam_new)) and it > 3:
            lam, x = lam_new, y
            break
        lam, x = lam_new, y
    return max(lam - shift, 0.0), it


def entropy(g: CollisionGraph, tol: float = 1e-10) -> EntropyReport:
    """Topological entropy: log of the adjacency spectral radius.

    Power iteration with a dense-eigenvalue cross-check for up to 12 vertices
    (they must agree to 1e-9). Graphs without cycles have spectral radius 0
    and report entropy -inf ("no chain dynamics"); reducible graphs report
    the dominant component's value, flagged.
    """
    A = g.adjacency
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty graph")
    rho, it = _power_iteration(A, tol)
    if n <= 12:
        eig = np.linalg.eigvals(A.astype(float))
        rho_dense = float(np.max(np.abs(eig)))
        if abs(rho - rho_dense) > 1e-9 * max(1.0, rho_dense):
            rho = rho_dense  # dense eigensolve is authoritative at small sizes
    reducible = _is_reducible(A)
    if rho <= tol:
        return EntropyReport(NEG_INF, 0.0, reducible, it)
    return EntropyReport(float(np.log(rho)), float(rho), reducible, it)


def _is_reducible(A: np.ndarray) -> bool:
    n = A.shape[0]
    if n <= 1:
        return False
    R = (np.eye(n, dtype=bool) | (A > 0))
    for _ in range(int(np.ceil(np.log2(max(n, 2))))):
        R = R @ R
    return not bool(np.all(R & R.T))


class PathBudgetError(RuntimeError):
    """Enumeration would exceed the configured path budget."""


def count_paths(g: CollisionGraph, n: int) -> int:
    """Number of length-n edge paths: sum of entries of the n-th power."""
    A = g.adjacency.astype(object)  # exact integer arithmetic
    P = np.linalg.matrix_power(A, n)
    return int(np.sum(P))


def paths(g: CollisionGraph, length: Optional[int] = None,
          periodic: Optional[int] = None, budget: int = 2_000_000) -> List[Tuple]:
    """Exhaustive enumeration of codes: paths of a given edge length, or
    periodic codes of a given period (closed walks, counted with phase).

    Deterministic output order (lexicographic in vertex indices); raises
    PathBudgetError before materializing more than `budget` codes.
    """
    if (length is None) == (periodic is None):
        raise ValueError("pass exactly one of length or periodic")
    n = length if length is not None else periodic
    if n < 1:
        raise ValueError("n must be at least 1")
    A = g.adjacency
    if length is not None:
        expected = count_paths(g, n)
    else:
        expected = int(np.trace(np.linalg.matrix_power(A.astype(object), n)))
    if expected > budget:
        raise PathBudgetError(f"{expected} codes exceed the budget {budget}")

    nv = len(g.vertices)
    out: List[Tuple] = []

    def extend(prefix: List[int]):
        last = prefix[-1]
        if periodic is not None and len(prefix) == n:
            if A[last, prefix[0]]:
                out.append(tuple(g.vertices[i].label for i in prefix))
            return
        if length is not None and len(prefix) == n + 1:
            out.append(tuple(g.vertices[i].label for i in prefix))
            return
        for j in range(nv):
            if A[last, j]:
                extend(prefix + [j])

    for i in range(nv):
        extend([i])
    return out
