"""
Decentralized online mirror descent for tracking a moving target.

Each synchronous round t executes, for every agent i,

1. propagate   x_{i,t} = A xhat_{i,t}
2. communicate y_{i,t} = sum_j W_ij x_{j,t}          (barrier)
3. observe     a stochastic gradient g_{i,t} at x_{i,t}
4. mirror step xhat_{i,t+1} = argmin_x eta_t <x, g_{i,t}> + D_R(x, y_{i,t})

Stages 1, 3 and 4 are row-wise and can be split across threads; the
random draws come from per-(agent, round) counter streams, so the result
is bit-identical for any number of workers.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import streams
from .dynamics import (ExpansiveDynamicsWarning, LinearDynamics, NoiseProcess, TargetTrajectory,
                       generate_trajectory, path_length)
from .geometry import (EUCLIDEAN, BregmanConstants, FeasibleSet, GeometryError, MirrorMap,
                       constants_of, mirror_step)
from .losses import LossOracle, estimate_L, make_oracle
from .network import Graph, WeightMatrix, uniform_complete_weights


class EngineError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


CONSTANT = "constant"
INVSQRT = "invsqrt"
STATIC_OPTIMAL = "static-optimal"


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes eta_t on t = 1..T+1, with eta_0 := eta_1.

    ``constant`` uses ``value`` for every round, ``invsqrt`` uses
    value / sqrt(t), and ``static-optimal`` uses sqrt((1 - sigma2) / T).
    """

    kind: str = CONSTANT
    value: float = 0.1

    def __post_init__(self):
        if self.kind not in (CONSTANT, INVSQRT, STATIC_OPTIMAL):
            raise ConfigError(f"unknown step schedule {self.kind!r}")
        if self.kind != STATIC_OPTIMAL and not self.value > 0:
            raise ConfigError("step size must be positive")

    def etas(self, T, sigma2=0.0) -> np.ndarray:
        t = np.arange(T + 2, dtype=float)
        if self.kind == CONSTANT:
            out = np.full(T + 2, float(self.value))
        elif self.kind == INVSQRT:
            t[0] = 1.0
            out = self.value / np.sqrt(t)
        else:
            if not 0.0 <= sigma2 < 1.0:
                raise ConfigError("static-optimal step needs sigma2 in [0, 1)")
            out = np.full(T + 2, np.sqrt((1.0 - sigma2) / max(T, 1)))
        out[0] = out[1]
        return out

    def describe(self):
        return self.kind if self.kind == STATIC_OPTIMAL else f"{self.kind}:{self.value!r}"


@dataclass(frozen=True)
class LossSpec:
    family: str = "quartic"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class RunConfig:
    T: int
    weights: WeightMatrix
    mirror: MirrorMap
    fset: FeasibleSet
    dynamics: LinearDynamics
    noise: NoiseProcess
    loss: LossSpec
    schedule: StepSchedule
    seed: int = 0
    record: str = "full"
    x0_target: np.ndarray | None = None
    init: np.ndarray | None = None
    clip_L: float | str | None = "auto"
    bound_set: FeasibleSet | None = None
    bound_margin: float = 1.0
    workers: int = 1
    L_budget: int = 2000
    echo: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.weights.n

    @property
    def d(self) -> int:
        return self.dynamics.d

    @property
    def graph(self) -> Graph | None:
        return self.weights.graph

    def validate(self):
        d = self.d
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.mirror.dimension != d or self.fset.dimension != d:
            raise ConfigError(f"dimension mismatch: dynamics d={d}, mirror map d={self.mirror.dimension}, "
                              f"feasible set d={self.fset.dimension}")
        if self.x0_target is not None and np.size(self.x0_target) != d:
            raise ConfigError("target initial state has the wrong dimension")
        if self.init is not None and np.size(self.init) != d:
            raise ConfigError("estimate initialization has the wrong dimension")
        if self.noise.kind == "scripted" and self.noise.sequence.shape[1] != d:
            raise ConfigError("scripted noise has the wrong dimension")
        if self.record not in ("full", "summary"):
            raise ConfigError("record must be 'full' or 'summary'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.bound_set is not None and self.bound_set.dimension != d:
            raise ConfigError("bound set has the wrong dimension")
        return self


@dataclass
class EngineState:
    t: int
    x_hat: np.ndarray


@dataclass
class RoundOutput:
    x: np.ndarray
    y: np.ndarray
    g: np.ndarray
    clipped: int


@dataclass(eq=False)
class RunRecord:
    """Everything needed to recompute regret, disagreement and the bound."""

    config: RunConfig
    trajectory: TargetTrajectory
    oracle: LossOracle
    etas: np.ndarray
    sigma2: float
    clip_L: float | None
    L_source: str
    bound_set: FeasibleSet | None
    bound_set_source: str
    constants: BregmanConstants | None
    agent_loss: np.ndarray
    opt_loss: np.ndarray
    max_disagreement: np.ndarray
    clip_count: int = 0
    x_hat: np.ndarray | None = None
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    wall_clock: float = 0.0

    @property
    def full(self) -> bool:
        return self.x is not None

    @property
    def T(self) -> int:
        return self.config.T

    @property
    def n(self) -> int:
        return self.config.n

    def hypotheses(self) -> dict:
        return {
            "compact": self.config.fset.compact,
            "non_expansive": self.config.dynamics.non_expansive,
        }

    @property
    def within_hypotheses(self) -> bool:
        return all(self.hypotheses().values())


def initial_point(config: RunConfig) -> np.ndarray:
    if config.init is not None:
        x0 = np.array(config.init, dtype=float).ravel()
        if config.mirror.kind != EUCLIDEAN and np.any(x0 <= 0):
            return config.fset.centroid()
        return x0
    zero = np.zeros(config.d)
    if config.mirror.kind == EUCLIDEAN and config.fset.contains(zero):
        return zero
    return config.fset.centroid()


def auto_bound_box(trajectory: TargetTrajectory, x_init, margin=1.0) -> FeasibleSet:
    """Box around the target envelope and the initial estimate."""
    lo = np.minimum(trajectory.states.min(axis=0), x_init) - margin
    hi = np.maximum(trajectory.states.max(axis=0), x_init) + margin
    return FeasibleSet.box(lo, hi)


def _propagate(A, X):
    # row-wise so the result does not depend on how rows are batched
    return np.sum(X[:, None, :] * A[None, :, :], axis=-1)


class Engine:
    """Stateful driver for one run; see :func:`run` for the usual entry point."""

    def __init__(self, config: RunConfig, trajectory: TargetTrajectory | None = None):
        self.config = config.validate()
        c = config
        if not c.dynamics.non_expansive:
            warnings.warn(f"dynamics spectral norm {c.dynamics.spectral_norm:.4f} > 1; "
                          "results fall outside the non-expansive regime",
                          ExpansiveDynamicsWarning, stacklevel=3)
        self.W = c.weights.W
        self.A = c.dynamics.A
        self.sigma2 = float(c.weights.sigma2)
        self.etas = c.schedule.etas(c.T, self.sigma2)
        self.x_init = initial_point(c)
        if trajectory is None:
            x0 = np.zeros(c.d) if c.x0_target is None else c.x0_target
            trajectory = generate_trajectory(c.dynamics, x0, c.noise, c.T,
                                             streams.run_stream(c.seed), warn=False)
        self.trajectory = trajectory
        self.oracle = make_oracle(c.loss.family, trajectory, c.n, mirror=c.mirror, **c.loss.params)
        self._resolve_constants()
        self.oracle.clip_L = self.clip_L
        self.clip_count = 0
        self._pool = ThreadPoolExecutor(c.workers) if c.workers > 1 else None
        self._chunks = [ch for ch in np.array_split(np.arange(c.n), c.workers) if ch.size]

    def _resolve_constants(self):
        c = self.config
        if c.fset.compact:
            self.bound_set, self.bound_set_source = c.fset, "feasible set"
        elif c.bound_set is not None:
            self.bound_set, self.bound_set_source = c.bound_set, "user box"
        elif c.mirror.kind == EUCLIDEAN:
            self.bound_set = auto_bound_box(self.trajectory, self.x_init, c.bound_margin)
            self.bound_set_source = f"target envelope box, margin {c.bound_margin!r}"
        else:
            self.bound_set, self.bound_set_source = None, "none"
        self.constants = constants_of(c.mirror, self.bound_set) if self.bound_set is not None else None
        if c.clip_L == "auto":
            if self.bound_set is None:
                self.clip_L, self.L_source = None, "unclipped"
            else:
                self.clip_L = estimate_L(self.oracle, self.bound_set, budget=c.L_budget, seed=c.seed)
                self.L_source = f"estimate_L over {self.bound_set_source}, budget {c.L_budget}"
        elif c.clip_L is None:
            self.clip_L, self.L_source = None, "unclipped"
        else:
            self.clip_L, self.L_source = float(c.clip_L), "configured"

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def init(self) -> EngineState:
        return EngineState(1, np.tile(self.x_init, (self.config.n, 1)))

    def _map(self, fn):
        if self._pool is None:
            return [fn(ch) for ch in self._chunks]
        return list(self._pool.map(fn, self._chunks))

    def step(self, state: EngineState) -> tuple[EngineState, RoundOutput]:
        c = self.config
        t = state.t
        if t > c.T:
            raise EngineError(f"round {t} beyond horizon T={c.T}")
        eta = float(self.etas[t])
        x_hat = state.x_hat
        X = np.empty_like(x_hat)
        for ch, block in zip(self._chunks, self._map(lambda ch: _propagate(self.A, x_hat[ch]))):
            X[ch] = block
        Y = self.W @ X

        def observe_and_step(ch):
            rngs = [streams.agent_stream(c.seed, i, t) for i in ch]
            G, clipped = self.oracle.sample_gradients(t, X[ch], ch, rngs, count=False)
            try:
                nxt = mirror_step(c.mirror, c.fset, Y[ch], G, eta)
            except GeometryError as exc:
                bad = self._locate_failure(ch, Y[ch], G, eta)
                raise EngineError(f"mirror step failed for agent {bad} at round {t}: {exc}") from exc
            return G, clipped, nxt

        x_next = np.empty_like(x_hat)
        G_all = np.empty_like(x_hat)
        clipped = 0
        for ch, (G, cl, nxt) in zip(self._chunks, self._map(observe_and_step)):
            x_next[ch] = nxt
            G_all[ch] = G
            clipped += int(cl.sum())
        self.clip_count += clipped
        return EngineState(t + 1, x_next), RoundOutput(X, Y, G_all, clipped)

    def _locate_failure(self, ch, Y, G, eta):
        for r, i in enumerate(ch):
            try:
                mirror_step(self.config.mirror, self.config.fset, Y[r], G[r], eta)
            except GeometryError:
                return int(i)
        return int(ch[0])

    def run(self) -> RunRecord:
        c = self.config
        T, n, d = c.T, c.n, c.d
        full = c.record == "full"
        start = time.perf_counter()
        state = self.init()
        xs = np.empty((T, n, d)) if full else None
        ys = np.empty((T, n, d)) if full else None
        xhs = np.empty((T + 1, n, d)) if full else None
        agent_loss = np.empty(T)
        opt_loss = np.empty(T)
        disagreement = np.empty(T)
        try:
            for t in range(1, T + 1):
                if full:
                    xhs[t - 1] = state.x_hat
                state, out = self.step(state)
                if full:
                    xs[t - 1] = out.x
                    ys[t - 1] = out.y
                agent_loss[t - 1] = float(np.mean(self.oracle.global_value(t, out.x)))
                opt_loss[t - 1] = self.oracle.global_value(t, self.trajectory.state(t))
                disagreement[t - 1] = float(np.max(c.mirror.norm(out.x - out.x.mean(axis=0))))
            if full:
                xhs[T] = state.x_hat
        finally:
            self.close()
        return RunRecord(
            config=c, trajectory=self.trajectory, oracle=self.oracle, etas=self.etas,
            sigma2=self.sigma2, clip_L=self.clip_L, L_source=self.L_source,
            bound_set=self.bound_set, bound_set_source=self.bound_set_source,
            constants=self.constants, agent_loss=agent_loss, opt_loss=opt_loss,
            max_disagreement=disagreement, clip_count=self.clip_count,
            x_hat=xhs, x=xs, y=ys, wall_clock=time.perf_counter() - start,
        )


def init(config: RunConfig) -> EngineState:
    return Engine(config).init()


def run(config: RunConfig, trajectory: TargetTrajectory | None = None) -> RunRecord:
    """Execute T synchronous rounds; deterministic in (config, seed)."""
    return Engine(config, trajectory).run()


def run_centralized_reference(config: RunConfig, trajectory: TargetTrajectory | None = None) -> RunRecord:
    """Same protocol over the complete graph with uniform weights (sigma2 = 0)."""
    return run(replace(config, weights=uniform_complete_weights(config.n)), trajectory)


def tracking_path_length(record: RunRecord) -> float:
    norm = "l2" if record.config.mirror.kind == EUCLIDEAN else "l1"
    return path_length(record.trajectory, norm)
