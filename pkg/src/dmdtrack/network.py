"""
Communication graphs and doubly stochastic mixing matrices.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EIG_SWITCH = 512
POWER_TOL = 1e-12
POWER_MAXITER = 100_000


class NetworkError(ValueError):
    pass


class ConnectivityError(NetworkError):
    pass


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset = field(default_factory=frozenset)
    name: str = "edges"

    def __post_init__(self):
        if self.n < 1:
            raise NetworkError("graph needs at least one node")
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise NetworkError(f"edge ({i}, {j}) out of range for n={self.n}")
            if i == j:
                raise NetworkError(f"self-loop at node {i}")

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self) -> list[list[int]]:
        nbrs = [[] for _ in range(self.n)]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def is_connected(self) -> bool:
        nbrs = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj


def _edge(i, j):
    i, j = int(i), int(j)
    return (i, j) if i < j else (j, i)


def grid_graph(rows, cols):
    """4-neighbour lattice, nodes numbered row-major."""
    if rows < 1 or cols < 1:
        raise NetworkError("grid needs rows, cols >= 1")
    edges = set()
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                edges.add((k, k + 1))
            if r + 1 < rows:
                edges.add((k, k + cols))
    return Graph(rows * cols, frozenset(edges), name=f"grid:{rows}x{cols}")


def complete_graph(n):
    return Graph(n, frozenset(_edge(i, j) for i in range(n) for j in range(i + 1, n)),
                 name=f"complete:{n}")


def ring_graph(n):
    if n < 3:
        return Graph(n, path_graph(n).edges, name=f"ring:{n}")
    return Graph(n, frozenset(_edge(i, (i + 1) % n) for i in range(n)), name=f"ring:{n}")


def path_graph(n):
    return Graph(n, frozenset(_edge(i, i + 1) for i in range(n - 1)), name=f"path:{n}")


def edge_list_graph(n, pairs):
    edges = set()
    for i, j in pairs:
        if i == j:
            raise NetworkError(f"self-loop at node {i}")
        edges.add(_edge(i, j))
    return Graph(n, frozenset(edges))


def read_edge_list(path, n=None):
    """Parse a plain-text edge list: one ``i j`` pair per line, 0-indexed.

    Blank lines and ``#`` comments are skipped. ``n`` defaults to one more
    than the largest index seen.
    """
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise NetworkError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise NetworkError(f"{path}:{lineno}: non-integer node index in {raw!r}") from None
        if i < 0 or j < 0:
            raise NetworkError(f"{path}:{lineno}: negative node index")
        pairs.append((i, j))
    if not pairs and n is None:
        raise NetworkError(f"{path}: empty edge list")
    top = max(max(p) for p in pairs) + 1 if pairs else 0
    n = top if n is None else n
    if top > n:
        raise NetworkError(f"{path}: node index {top - 1} out of range for n={n}")
    g = edge_list_graph(n, pairs)
    return Graph(g.n, g.edges, name=f"edges:{path}")


def build_graph(topology: str, n: int | None = None) -> Graph:
    """Build a graph from a topology string.

    Accepted forms: ``grid:RxC``, ``complete:N``, ``ring:N``, ``path:N`` and
    ``edges:FILE``.
    """
    kind, _, arg = topology.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "grid":
            r, _, c = arg.lower().partition("x")
            return grid_graph(int(r), int(c))
        if kind in ("complete", "ring", "path"):
            size = int(arg)
            if size < 1:
                raise NetworkError("graph needs at least one node")
            return {"complete": complete_graph, "ring": ring_graph, "path": path_graph}[kind](size)
    except ValueError as exc:
        if isinstance(exc, NetworkError):
            raise
        raise NetworkError(f"malformed topology {topology!r}") from None
    if kind == "edges":
        return read_edge_list(arg, n)
    raise NetworkError(f"unknown topology {topology!r}")


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    W: np.ndarray
    sigma2: float
    graph: Graph | None = None
    method: str = "given"

    @property
    def n(self) -> int:
        return self.W.shape[0]


def _freeze(W):
    W = np.array(W, dtype=float)
    W.setflags(write=False)
    return W


def metropolis_weights(g: Graph) -> WeightMatrix:
    """Metropolis-Hastings weights W_ij = 1 / (1 + max(deg_i, deg_j))."""
    if not g.is_connected():
        raise ConnectivityError(f"graph {g.name} is not connected")
    deg = g.degrees
    W = np.zeros((g.n, g.n))
    for i, j in g.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(g.n)] = 1.0 - W.sum(axis=1)
    W = _freeze(W)
    return WeightMatrix(W, sigma2(W), g, "metropolis")


def uniform_complete_weights(n: int) -> WeightMatrix:
    if n < 1:
        raise NetworkError("n must be positive")
    return WeightMatrix(_freeze(np.full((n, n), 1.0 / n)), 0.0, complete_graph(n), "uniform")


def _second_eig_exact(W):
    ev = np.sort(np.abs(np.linalg.eigvalsh(0.5 * (W + W.T))))[::-1]
    return float(ev[1]) if ev.size > 1 else 0.0


def _second_eig_power(W, tol=POWER_TOL, maxiter=POWER_MAXITER, seed=0):
    # deflate the consensus direction: W - 11^T/n has spectrum {sigma_i, i >= 2} u {0}
    n = W.shape[0]
    if n == 1:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x -= x.mean()
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(maxiter):
        # iterate with W^2 so that +/- lambda pairs do not make the iteration oscillate
        y = W @ (W @ x)
        y -= y.mean()
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        lam_new = float(np.sqrt(x @ y))
        x = y / ny
        if abs(lam_new - lam) <= tol * max(1.0, lam_new):
            lam = lam_new
            break
        lam = lam_new
    return lam


def sigma2(W, method="auto") -> float:
    """Second-largest eigenvalue magnitude of a symmetric stochastic matrix.

    ``method`` is ``"exact"`` (dense symmetric eigendecomposition),
    ``"power"`` (deflated power iteration) or ``"auto"``, which switches to
    power iteration above 512 nodes.
    """
    if isinstance(W, WeightMatrix):
        W = W.W
    W = np.asarray(W, dtype=float)
    if method == "auto":
        method = "exact" if W.shape[0] <= EIG_SWITCH else "power"
    if method == "exact":
        return _second_eig_exact(W)
    if method == "power":
        return _second_eig_power(W)
    raise ValueError(f"unknown eigenvalue method {method!r}")


def weights_for(g: Graph, kind: str = "metropolis") -> WeightMatrix:
    if kind == "metropolis":
        return metropolis_weights(g)
    if kind == "uniform":
        return uniform_complete_weights(g.n)
    raise NetworkError(f"unknown weight construction {kind!r}")


@dataclass
class Check:
    name: str
    passed: bool
    residual: float

    def __str__(self):
        return f"{self.name:<20} {'pass' if self.passed else 'FAIL'}  residual={self.residual:.3e}"


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        return "\n".join(str(c) for c in self.checks)


def validate(W, g: Graph | None = None) -> ValidationReport:
    """Check a mixing matrix against the network assumptions, never raising."""
    if isinstance(W, WeightMatrix):
        g = g if g is not None else W.graph
        W = W.W
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    checks = []
    sym = float(np.max(np.abs(W - W.T))) if n else 0.0
    checks.append(Check("symmetric", sym <= 1e-12, sym))
    rows = float(np.max(np.abs(W.sum(axis=1) - 1.0)))
    cols = float(np.max(np.abs(W.sum(axis=0) - 1.0)))
    checks.append(Check("doubly_stochastic", max(rows, cols) <= 1e-10, max(rows, cols)))
    neg = float(max(0.0, -W.min()))
    checks.append(Check("nonnegative", neg == 0.0, neg))
    diag = float(W.diagonal().min())
    checks.append(Check("positive_diagonal", diag > 0.0, diag))
    if g is not None:
        mask = g.adjacency() | np.eye(n, dtype=bool)
        stray = float(np.max(np.abs(W[~mask]))) if (~mask).any() else 0.0
        checks.append(Check("sparsity", stray == 0.0, stray))
        connected = g.is_connected()
    else:
        connected = _connected_from_support(W)
    checks.append(Check("connected", connected, 0.0 if connected else 1.0))
    if connected and n:
        s2 = sigma2(W)
        checks.append(Check("sigma2_below_one", s2 < 1.0, s2))
    return ValidationReport(checks)


def _connected_from_support(W):
    n = W.shape[0]
    support = (np.abs(W) > 0) | (np.abs(W.T) > 0)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(support[u]):
            if v not in seen:
                seen.add(int(v))
                queue.append(int(v))
    return len(seen) == n
