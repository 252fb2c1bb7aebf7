"""
Target dynamics x*_{t+1} = A x*_t + v_t and disturbance generators.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class DynamicsError(ValueError):
    pass


class ExpansiveDynamicsWarning(UserWarning):
    """A has spectral norm above one, outside the non-expansive regime."""


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    A: np.ndarray
    spectral_norm: float = field(init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DynamicsError("A must be square")
        if not np.all(np.isfinite(A)):
            raise DynamicsError("A has non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "spectral_norm", float(np.linalg.norm(A, 2)))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def non_expansive(self) -> bool:
        return self.spectral_norm <= 1.0 + 1e-12

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))


def ncv_dynamics(epsilon: float) -> LinearDynamics:
    """Near-constant-velocity model I_2 kron [[1, eps], [0, 1]].

    State order is (horizontal position, horizontal velocity, vertical
    position, vertical velocity).
    """
    if epsilon < 0:
        raise DynamicsError("sampling interval must be nonnegative")
    return LinearDynamics(np.kron(np.eye(2), np.array([[1.0, epsilon], [0.0, 1.0]])))


def ncv_block_cholesky(sigma_nu2, epsilon):
    """Closed-form lower Cholesky factor of sigma^2 [[e^3/3, e^2/2], [e^2/2, e]]."""
    s = np.sqrt(sigma_nu2)
    l11 = s * np.sqrt(epsilon ** 3 / 3.0)
    l21 = s * np.sqrt(3.0 * epsilon) / 2.0
    l22 = s * np.sqrt(epsilon) / 2.0
    return np.array([[l11, 0.0], [l21, l22]])


def ncv_covariance(sigma_nu2, epsilon):
    block = np.array([[epsilon ** 3 / 3.0, epsilon ** 2 / 2.0],
                      [epsilon ** 2 / 2.0, epsilon]])
    return sigma_nu2 * np.kron(np.eye(2), block)


def ncv_raw_draw(sigma_nu2, epsilon, rng, size=None):
    """Gaussian draw(s) nu ~ N(0, Sigma) before the l-inf scaling."""
    L = ncv_block_cholesky(sigma_nu2, epsilon)
    shape = (4,) if size is None else (size, 4)
    z = rng.standard_normal(shape)
    z = z.reshape(-1, 2, 2)
    nu = np.einsum("ij,bkj->bki", L, z).reshape(shape)
    return nu


def ncv_noise_step(sigma_nu2, epsilon, rng, return_raw=False):
    """One disturbance v = nu * ||nu||_inf."""
    if sigma_nu2 < 0 or epsilon <= 0:
        raise DynamicsError("sigma_nu2 must be >= 0 and epsilon > 0")
    nu = ncv_raw_draw(sigma_nu2, epsilon, rng)
    v = nu * np.max(np.abs(nu))
    return (v, nu) if return_raw else v


@dataclass(frozen=True, eq=False)
class NoiseProcess:
    """Disturbance source.

    kind is one of ``zero``, ``scripted`` (fixed sequence), ``ncv`` (the
    l-inf scaled near-constant-velocity draw) or ``custom`` (a callable
    ``fn(t, history, rng) -> v``).
    """

    kind: str
    sequence: np.ndarray | None = None
    sigma_nu2: float = 0.0
    epsilon: float = 0.0
    fn: Callable | None = None

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def scripted(cls, sequence):
        seq = np.array(sequence, dtype=float)
        if seq.ndim != 2:
            raise DynamicsError("scripted noise must be a (T, d) array")
        return cls("scripted", sequence=seq)

    @classmethod
    def ncv(cls, sigma_nu2, epsilon):
        if sigma_nu2 <= 0 or epsilon <= 0:
            raise DynamicsError("NCV noise needs sigma_nu2 > 0 and epsilon > 0")
        return cls("ncv", sigma_nu2=float(sigma_nu2), epsilon=float(epsilon))

    @classmethod
    def custom(cls, fn):
        return cls("custom", fn=fn)


@dataclass(frozen=True, eq=False)
class TargetTrajectory:
    """States x*_1..x*_{T+1} (rows 0..T) and disturbances v_1..v_T (rows 0..T-1)."""

    states: np.ndarray
    noises: np.ndarray
    dynamics: LinearDynamics

    @property
    def T(self) -> int:
        return self.noises.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def state(self, t):
        """x*_t for 1-based round t."""
        return self.states[t - 1]

    def residual(self) -> float:
        pred = self.states[:-1] @ self.dynamics.A.T + self.noises
        return float(np.max(np.abs(pred - self.states[1:]))) if self.T else 0.0


def generate_trajectory(dyn: LinearDynamics, x0, noise: NoiseProcess, T: int, rng=None,
                        warn=True) -> TargetTrajectory:
    x0 = np.array(x0, dtype=float).ravel()
    d = dyn.d
    if x0.size != d:
        raise DynamicsError(f"x0 has dimension {x0.size}, dynamics has {d}")
    if T < 0:
        raise DynamicsError("T must be nonnegative")
    if warn and not dyn.non_expansive:
        warnings.warn(f"dynamics spectral norm {dyn.spectral_norm:.4f} > 1",
                      ExpansiveDynamicsWarning, stacklevel=2)
    states = np.empty((T + 1, d))
    noises = np.zeros((T, d))
    states[0] = x0
    if noise.kind == "scripted":
        seq = noise.sequence
        if seq.shape[0] < T:
            raise DynamicsError(f"scripted noise has {seq.shape[0]} steps, need {T}")
        if seq.shape[1] != d:
            raise DynamicsError("scripted noise dimension mismatch")
        noises[:] = seq[:T]
    elif noise.kind == "ncv":
        if d != 4:
            raise DynamicsError("NCV noise is 4-dimensional")
        if rng is None:
            raise DynamicsError("NCV noise needs a random generator")
        for t in range(T):
            noises[t] = ncv_noise_step(noise.sigma_nu2, noise.epsilon, rng)
    elif noise.kind == "custom":
        if rng is None:
            raise DynamicsError("custom noise needs a random generator")
    elif noise.kind != "zero":
        raise DynamicsError(f"unknown noise kind {noise.kind!r}")
    A = dyn.A
    for t in range(T):
        if noise.kind == "custom":
            noises[t] = np.asarray(noise.fn(t + 1, states[: t + 1], rng), dtype=float)
        states[t + 1] = A @ states[t] + noises[t]
    return TargetTrajectory(states, noises, dyn)


def path_length(traj: TargetTrajectory, norm="l2") -> float:
    """Sum of ||v_t|| over t = 1..T."""
    ord_ = {"l2": 2, "l1": 1, 2: 2, 1: 1}[norm]
    if traj.T == 0:
        return 0.0
    return float(np.sum(np.linalg.norm(traj.noises, ord=ord_, axis=1)))


def _fmt(x):
    return format(float(x), ".17g")


def trajectory_to_csv(traj: TargetTrajectory) -> str:
    """CSV with header ``t,x1..xd,v1..vd``; the last row carries no disturbance."""
    d = traj.d
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)])
    for t in range(traj.T + 1):
        v = traj.noises[t] if t < traj.T else [""] * d
        w.writerow([t + 1] + [_fmt(x) for x in traj.states[t]]
                   + [(_fmt(x) if x != "" else "") for x in v])
    return buf.getvalue()


def trajectory_from_csv(text: str, dyn: LinearDynamics) -> TargetTrajectory:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DynamicsError("empty trajectory file")
    header = rows[0]
    d = (len(header) - 1) // 2
    if len(header) != 2 * d + 1 or header[0] != "t" or d != dyn.d:
        raise DynamicsError("trajectory header does not match the dynamics dimension")
    body = rows[1:]
    states = np.empty((len(body), d))
    noises = np.empty((max(len(body) - 1, 0), d))
    try:
        for k, row in enumerate(body):
            if len(row) != 2 * d + 1 or int(row[0]) != k + 1:
                raise DynamicsError(f"malformed trajectory row {k + 2}")
            states[k] = [float(x) for x in row[1:d + 1]]
            if k < len(body) - 1:
                noises[k] = [float(x) for x in row[d + 1:]]
    except ValueError:
        raise DynamicsError("non-numeric trajectory entry") from None
    return TargetTrajectory(states, noises, dyn)


def read_trajectory(path, dyn) -> TargetTrajectory:
    return trajectory_from_csv(Path(path).read_text(), dyn)
