"""
Time-varying local losses f_{i,t} bound to a target trajectory.

Two families are provided:

* :class:`QuadraticTracking` -- f_{i,t}(x) = 1/2 ||x - x*_t||^2 for every agent,
  observed through the exact gradient plus a bounded zero-mean perturbation.
* :class:`QuarticSensor` -- agent i measures coordinate k_i of the target,
  z = x*_t(k_i) + w with w ~ U[-1, 1], and
  f_{i,t}(x) = 1/4 E[(z - x(k_i))^4] = 1/4 (u^4 + 2 u^2 + 1/5),  u = x*_t(k_i) - x(k_i).

Agents are indexed from 0 and rounds from 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import TargetTrajectory
from .geometry import EUCLIDEAN, MirrorMap, NonCompactSet, FeasibleSet

QUARTIC_W4 = 1.0 / 5.0   # E[w^4], w ~ U[-1, 1]
QUARTIC_W2 = 1.0 / 3.0   # E[w^2]


class LossError(ValueError):
    pass


@dataclass
class StochasticGradientSample:
    g: np.ndarray
    agent: int
    round: int
    clipped: bool = False


class LossOracle:
    """Common machinery: bookkeeping, clipping and the global average."""

    family = "abstract"

    def __init__(self, trajectory: TargetTrajectory, n: int, clip_L=None, mirror: MirrorMap | None = None):
        if n < 1:
            raise LossError("need at least one agent")
        self.trajectory = trajectory
        self.n = int(n)
        self.d = trajectory.d
        self.clip_L = None if clip_L is None else float(clip_L)
        self.mirror = mirror if mirror is not None else MirrorMap(EUCLIDEAN, self.d)
        self.clip_count = 0

    # -- index helpers -------------------------------------------------
    def _check(self, i, t):
        if not 0 <= i < self.n:
            raise LossError(f"agent index {i} out of range [0, {self.n})")
        if not 1 <= t <= self.trajectory.states.shape[0]:
            raise LossError(f"round {t} out of range [1, {self.trajectory.states.shape[0]}]")

    def target(self, t):
        return self.trajectory.states[t - 1]

    # -- batch kernels, implemented per family ----------------------------
    def values(self, t, X, agents):
        raise NotImplementedError

    def gradients(self, t, X, agents):
        raise NotImplementedError

    def _noisy_gradients(self, t, X, agents, rngs):
        raise NotImplementedError

    # -- public scalar API ---------------------------------------------
    def local_value(self, i, t, x):
        self._check(i, t)
        return float(self.values(t, np.atleast_2d(x), np.array([i]))[0])

    def exact_gradient(self, i, t, x):
        self._check(i, t)
        return self.gradients(t, np.atleast_2d(x), np.array([i]))[0]

    def stochastic_gradient(self, i, t, x, rng) -> StochasticGradientSample:
        self._check(i, t)
        G, clipped = self.sample_gradients(t, np.atleast_2d(x), np.array([i]), [rng])
        return StochasticGradientSample(G[0], int(i), int(t), bool(clipped[0]))

    def sample_gradients(self, t, X, agents, rngs, count=True):
        """Noisy gradients for rows of ``X`` held by ``agents``, clipped to L.

        Returns the gradient array and a boolean mask of clipped rows. With
        ``count`` the oracle's ``clip_count`` is incremented; the counter is
        not thread-safe, so concurrent callers pass ``count=False`` and sum
        the masks themselves.
        """
        G = self._noisy_gradients(t, np.asarray(X, dtype=float), np.asarray(agents), rngs)
        clipped = np.zeros(G.shape[0], dtype=bool)
        if self.clip_L is not None:
            norms = self.mirror.dual_norm(G)
            clipped = norms > self.clip_L
            if clipped.any():
                G[clipped] *= (self.clip_L / norms[clipped])[:, None]
                if count:
                    self.clip_count += int(clipped.sum())
        return G, clipped

    def global_value(self, t, x):
        """f_t(x) = mean of the local losses; ``x`` may be a batch of rows."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        agents = np.arange(self.n)
        # every row evaluated against every agent's local loss
        vals = np.stack([self.values(t, X, np.full(X.shape[0], i)) for i in agents])
        out = vals.mean(axis=0)
        return float(out[0]) if single else out

    def global_gradient(self, t, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        G = np.stack([self.gradients(t, X, np.full(X.shape[0], i)) for i in range(self.n)])
        out = G.mean(axis=0)
        return out[0] if np.asarray(x).ndim == 1 else out

    # -- envelope probes used by estimate_L --------------------------------
    def _gradient_extremes(self, t, X, agents):
        """Noisy-gradient dual norms at the noise extremes, shape (m,)."""
        raise NotImplementedError

    def representative_agents(self):
        """One agent per distinct local loss."""
        return [0]

    def describe(self) -> dict:
        return {"family": self.family, "n": self.n, "clip_L": self.clip_L}


class QuadraticTracking(LossOracle):
    family = "quadratic"

    def __init__(self, trajectory, n, grad_noise=0.0, clip_L=None, mirror=None):
        super().__init__(trajectory, n, clip_L, mirror)
        if grad_noise < 0:
            raise LossError("perturbation amplitude must be nonnegative")
        self.grad_noise = float(grad_noise)

    def values(self, t, X, agents):
        diff = X - self.target(t)
        return 0.5 * np.sum(diff * diff, axis=-1)

    def gradients(self, t, X, agents):
        return X - self.target(t)

    def _noisy_gradients(self, t, X, agents, rngs):
        G = X - self.target(t)
        if self.grad_noise > 0:
            for r, rng in enumerate(rngs):
                G[r] += self.grad_noise * rng.uniform(-1.0, 1.0, self.d)
        return G

    def global_value(self, t, x):
        out = self.values(t, np.atleast_2d(np.asarray(x, dtype=float)), None)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def _gradient_extremes(self, t, X, agents):
        diff = X - self.target(t)
        # the dual norm of diff + xi is largest when xi pushes each coordinate outward
        push = self.grad_noise * np.where(diff >= 0, 1.0, -1.0)
        return self.mirror.dual_norm(diff + push)

    def describe(self):
        return super().describe() | {"grad_noise": self.grad_noise}


def default_sensor_assignment(n, d):
    """Coordinate index per agent, cycling through the coordinates."""
    return np.arange(n) % d


class QuarticSensor(LossOracle):
    family = "quartic"

    def __init__(self, trajectory, n, coords=None, clip_L=None, mirror=None):
        super().__init__(trajectory, n, clip_L, mirror)
        coords = default_sensor_assignment(n, self.d) if coords is None else np.asarray(coords, dtype=int)
        if coords.shape != (self.n,) or coords.min() < 0 or coords.max() >= self.d:
            raise LossError("sensor coordinates must give one index in [0, d) per agent")
        self.coords = coords

    def _u(self, t, X, agents):
        k = self.coords[agents]
        rows = np.arange(X.shape[0])
        return self.target(t)[k] - X[rows, k], k

    def values(self, t, X, agents):
        u, _ = self._u(t, X, agents)
        u2 = u * u
        return 0.25 * (u2 * u2 + 6.0 * QUARTIC_W2 * u2 + QUARTIC_W4)

    def gradients(self, t, X, agents):
        u, k = self._u(t, X, agents)
        G = np.zeros_like(X, dtype=float)
        G[np.arange(X.shape[0]), k] = -(u ** 3 + 3.0 * QUARTIC_W2 * u)
        return G

    def _noisy_gradients(self, t, X, agents, rngs):
        k = self.coords[agents]
        rows = np.arange(X.shape[0])
        w = np.array([rng.uniform(-1.0, 1.0) for rng in rngs])
        z = self.target(t)[k] + w
        G = np.zeros_like(X, dtype=float)
        G[rows, k] = -(z - X[rows, k]) ** 3
        return G

    def global_value(self, t, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        u = self.target(t)[self.coords][None, :] - X[:, self.coords]
        u2 = u * u
        out = np.mean(0.25 * (u2 * u2 + 6.0 * QUARTIC_W2 * u2 + QUARTIC_W4), axis=1)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def representative_agents(self):
        _, first = np.unique(self.coords, return_index=True)
        return [int(i) for i in first]

    def _gradient_extremes(self, t, X, agents):
        u, _ = self._u(t, X, agents)
        return (np.abs(u) + 1.0) ** 3

    def describe(self):
        return super().describe() | {"coords": "".join(str(c) for c in self.coords)}


def _extreme_probe_points(fset: FeasibleSet, target):
    pts = [fset.vertices()]
    if fset.kind == "ball":
        off = fset.center - target
        nrm = np.linalg.norm(off)
        direction = off / nrm if nrm > 0 else np.eye(fset.dimension)[0]
        pts.append((fset.center + fset.radius * direction)[None, :])
    return np.vstack(pts)


def estimate_L(oracle: LossOracle, fset: FeasibleSet, budget=10_000, seed=0, max_extreme_rounds=2000):
    """Empirical Lipschitz/gradient envelope over a compact set.

    The supremum is taken over the extreme points of the set at every
    round (or an evenly spaced subset of at most ``max_extreme_rounds``
    rounds), with the gradient noise at its extremes, followed by
    ``budget`` random probes (agent, round, point, noise). The random
    probes come from fixed per-quantity streams, so increasing the budget
    only extends the probe sequence and the estimate never decreases.
    """
    if not fset.compact:
        raise NonCompactSet("Lipschitz envelope needs a compact set")
    if fset.dimension != oracle.d:
        raise LossError("set and oracle dimensions differ")
    n_rounds = oracle.trajectory.T if oracle.trajectory.T > 0 else 1
    rounds = np.unique(np.linspace(1, n_rounds, min(n_rounds, max_extreme_rounds)).round().astype(int))
    best = 0.0
    for t in rounds:
        P = _extreme_probe_points(fset, oracle.target(t))
        for i in oracle.representative_agents():
            agents = np.full(P.shape[0], i)
            best = max(best,
                       float(np.max(oracle.mirror.dual_norm(oracle.gradients(t, P, agents)))),
                       float(np.max(oracle._gradient_extremes(t, P, agents))))
    if budget > 0:
        ss = np.random.SeedSequence(seed)
        s_agent, s_round, s_point, s_noise = (np.random.default_rng(c) for c in ss.spawn(4))
        agents = s_agent.integers(0, oracle.n, budget)
        rnds = s_round.integers(1, n_rounds + 1, budget)
        pts = fset.sample(s_point, budget)
        noise_seeds = s_noise.integers(0, 2 ** 63, budget)
        saved = oracle.clip_L
        oracle.clip_L = None
        try:
            for a, t, x, ns in zip(agents, rnds, pts, noise_seeds):
                X = x[None, :]
                ag = np.array([a])
                g = oracle.gradients(t, X, ag)
                gs = oracle._noisy_gradients(t, X, ag, [np.random.default_rng(ns)])
                best = max(best, float(oracle.mirror.dual_norm(g)[0]), float(oracle.mirror.dual_norm(gs)[0]))
        finally:
            oracle.clip_L = saved
    return best


def quartic_box_envelope(fset: FeasibleSet) -> float:
    """Analytic cap (B + 1)^3 on quartic sensor gradients over a box, B the widest side."""
    if fset.kind != "box":
        raise LossError("analytic quartic envelope is defined for boxes")
    return float((np.max(fset.upper - fset.lower) + 1.0) ** 3)


def make_oracle(family, trajectory, n, clip_L=None, mirror=None, **params) -> LossOracle:
    if family == "quadratic":
        return QuadraticTracking(trajectory, n, clip_L=clip_L, mirror=mirror, **params)
    if family == "quartic":
        return QuarticSensor(trajectory, n, clip_L=clip_L, mirror=mirror, **params)
    raise LossError(f"unknown loss family {family!r}")
