"""
Bregman geometry: mirror maps, feasible sets and the mirror-descent step.

Two generating functions are supported:

* ``euclidean``  R(x) = 1/2 ||x||_2^2, strongly convex w.r.t. the l2 norm.
* ``entropy``    R(x) = sum_k x(k) log x(k) - x(k), strongly convex w.r.t.
  the l1 norm on the probability simplex.

All routines accept a single vector of shape ``(d,)`` or a batch of row
vectors of shape ``(m, d)``. Row-wise results never depend on the batch
size, which the engine relies on for serial/parallel bit-identity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

EUCLIDEAN = "euclidean"
ENTROPY = "entropy"

WHOLE = "whole"
BOX = "box"
BALL = "ball"
SIMPLEX = "simplex"

TOL = 1e-9


class GeometryError(ValueError):
    """Rejected input to a geometry routine."""


class UnsupportedCombination(GeometryError):
    """Mirror map and feasible set cannot be paired."""


class NonCompactSet(GeometryError):
    """An operation needs a compact feasible set."""


@dataclass(frozen=True)
class MirrorMap:
    kind: str
    dimension: int

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, ENTROPY):
            raise GeometryError(f"unknown mirror map kind {self.kind!r}")
        if int(self.dimension) < 1:
            raise GeometryError("dimension must be positive")

    @property
    def norm_ord(self) -> int:
        """Order of the primal norm the map is 1-strongly convex in."""
        return 2 if self.kind == EUCLIDEAN else 1

    @property
    def dual_ord(self) -> float:
        return 2 if self.kind == EUCLIDEAN else np.inf

    def norm(self, v, axis=-1):
        return np.linalg.norm(np.asarray(v, dtype=float), ord=self.norm_ord, axis=axis)

    def dual_norm(self, v, axis=-1):
        return np.linalg.norm(np.asarray(v, dtype=float), ord=self.dual_ord, axis=axis)

    def R(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == EUCLIDEAN:
            return 0.5 * np.sum(x * x, axis=-1)
        _check_positive(x)
        return np.sum(x * np.log(x) - x, axis=-1)

    def grad_R(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == EUCLIDEAN:
            return x.copy()
        _check_positive(x)
        return np.log(x)


@dataclass(frozen=True)
class FeasibleSet:
    """Convex feasible set.

    ``lower``/``upper`` are used by boxes, ``center``/``radius`` by balls and
    ``mu`` (uniform mixing weight) by the simplex.
    """

    kind: str
    dimension: int
    lower: np.ndarray | None = field(default=None, compare=False)
    upper: np.ndarray | None = field(default=None, compare=False)
    center: np.ndarray | None = field(default=None, compare=False)
    radius: float = 0.0
    mu: float = 0.0

    @classmethod
    def whole(cls, d):
        return cls(WHOLE, int(d))

    @classmethod
    def box(cls, lower, upper, d=None):
        if d is not None:
            lower = np.broadcast_to(np.asarray(lower, dtype=float), (d,))
            upper = np.broadcast_to(np.asarray(upper, dtype=float), (d,))
        lower = np.array(lower, dtype=float).ravel()
        upper = np.array(upper, dtype=float).ravel()
        if lower.shape != upper.shape or lower.size == 0:
            raise GeometryError("box bounds must be nonempty and of equal length")
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise GeometryError("box bounds must be finite")
        if np.any(lower > upper):
            raise GeometryError("box lower bound exceeds upper bound")
        return cls(BOX, lower.size, lower=lower, upper=upper)

    @classmethod
    def ball(cls, center, radius):
        center = np.array(center, dtype=float).ravel()
        if radius <= 0 or not np.isfinite(radius):
            raise GeometryError("ball radius must be positive and finite")
        return cls(BALL, center.size, center=center, radius=float(radius))

    @classmethod
    def simplex(cls, d, mu=0.01):
        if not 0.0 <= mu < 1.0:
            raise GeometryError("simplex mixing weight must lie in [0, 1)")
        return cls(SIMPLEX, int(d), mu=float(mu))

    @property
    def compact(self) -> bool:
        return self.kind != WHOLE

    def centroid(self):
        d = self.dimension
        if self.kind == BOX:
            return 0.5 * (self.lower + self.upper)
        if self.kind == BALL:
            return self.center.copy()
        if self.kind == SIMPLEX:
            return np.full(d, 1.0 / d)
        return np.zeros(d)

    def contains(self, x, tol=TOL) -> bool:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dimension:
            return False
        if self.kind == WHOLE:
            return bool(np.all(np.isfinite(x)))
        if self.kind == BOX:
            return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))
        if self.kind == BALL:
            return bool(np.all(np.linalg.norm(x - self.center, axis=-1) <= self.radius + tol))
        floor = self.mu / self.dimension
        return bool(np.all(x >= floor - tol) and np.all(np.abs(x.sum(-1) - 1.0) <= 1e-12 + tol))

    def project(self, v):
        """Euclidean projection onto the set (row-wise for batches)."""
        v = np.asarray(v, dtype=float)
        if self.kind == WHOLE:
            return v.copy()
        if self.kind == BOX:
            return np.clip(v, self.lower, self.upper)
        if self.kind == BALL:
            diff = v - self.center
            dist = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
            scale = np.where(dist > self.radius, self.radius / np.where(dist > 0, dist, 1.0), 1.0)
            return self.center + diff * scale
        floor = self.mu / self.dimension
        return floor + project_simplex(v - floor, 1.0 - self.mu)

    def vertices(self):
        """Extreme points of a polytope set, or axis extremes of a ball."""
        d = self.dimension
        if self.kind == BOX:
            return np.array([np.where(bits, self.upper, self.lower)
                             for bits in itertools.product([False, True], repeat=d)])
        if self.kind == SIMPLEX:
            return (1.0 - self.mu) * np.eye(d) + self.mu / d
        if self.kind == BALL:
            eye = np.eye(d) * self.radius
            return np.vstack([self.center + eye, self.center - eye])
        raise NonCompactSet("the whole space has no vertices")

    def sample(self, rng, size):
        """Uniform-ish random points of a compact set."""
        d = self.dimension
        if self.kind == BOX:
            return self.lower + (self.upper - self.lower) * rng.random((size, d))
        if self.kind == BALL:
            g = rng.standard_normal((size, d))
            g /= np.linalg.norm(g, axis=-1, keepdims=True)
            r = self.radius * rng.random(size) ** (1.0 / d)
            return self.center + g * r[:, None]
        if self.kind == SIMPLEX:
            p = rng.dirichlet(np.ones(d), size)
            return (1.0 - self.mu) * p + self.mu / d
        raise NonCompactSet("cannot sample the whole space")

    def diameter(self) -> float:
        if self.kind == BOX:
            return float(np.linalg.norm(self.upper - self.lower))
        if self.kind == BALL:
            return 2.0 * self.radius
        if self.kind == SIMPLEX:
            return float(np.sqrt(2.0) * (1.0 - self.mu)) if self.dimension > 1 else 0.0
        raise NonCompactSet("the whole space has infinite diameter")


@dataclass(frozen=True)
class BregmanConstants:
    Rsq: float
    K: float

    @property
    def R(self) -> float:
        return float(np.sqrt(self.Rsq))


def project_simplex(v, radius=1.0):
    """Euclidean projection of each row of ``v`` onto {x >= 0, sum x = radius}."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    d = V.shape[-1]
    U = -np.sort(-V, axis=-1)
    css = np.cumsum(U, axis=-1) - radius
    k = np.arange(1, d + 1)
    cond = U - css / k > 0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=-1)
    theta = css[np.arange(V.shape[0]), rho] / (rho + 1)
    out = np.maximum(V - theta[:, None], 0.0)
    return out[0] if single else out


def _check_positive(x):
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise GeometryError("negative-entropy map needs strictly positive coordinates")


def bregman(mmap: MirrorMap, x, y):
    """Bregman divergence D_R(x, y) = R(x) - R(y) - <x - y, grad R(y)>.

    Uses the closed forms 1/2 ||x - y||^2 and the generalized KL divergence
    sum x log(x / y) - x + y, which avoid cancellation between R(x), R(y).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != mmap.dimension or y.shape[-1] != mmap.dimension:
        raise GeometryError("dimension mismatch")
    if mmap.kind == EUCLIDEAN:
        diff = x - y
        return 0.5 * np.sum(diff * diff, axis=-1)
    _check_positive(x)
    _check_positive(y)
    return np.sum(x * np.log(x / y) - x + y, axis=-1)


def mirror_step(mmap: MirrorMap, fset: FeasibleSet, y, g, eta):
    """Minimizer of ``eta <x, g> + D_R(x, y)`` over the feasible set.

    Parameters
    ----------
    mmap : MirrorMap
    fset : FeasibleSet
    y : ndarray
        Prox center(s), shape ``(d,)`` or ``(m, d)``.
    g : ndarray
        Gradient(s), same shape as ``y``.
    eta : float
        Positive step size.

    Returns
    -------
    ndarray
        The unique minimizer, same shape as ``y``.
    """
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    if not eta > 0:
        raise GeometryError("step size must be positive")
    if not np.all(np.isfinite(g)):
        raise GeometryError("non-finite gradient")
    if y.shape != g.shape or y.shape[-1] != mmap.dimension or fset.dimension != mmap.dimension:
        raise GeometryError("dimension mismatch")
    if mmap.kind == EUCLIDEAN:
        return fset.project(y - eta * g)
    if fset.kind != SIMPLEX:
        raise UnsupportedCombination("negative entropy pairs only with the simplex")
    _check_positive(y)
    return _kl_simplex_step(y, g, eta, fset.mu)


def _kl_simplex_step(y, g, eta, mu):
    # unconstrained step, then KL projection onto {x >= mu/d, sum x = 1}:
    # x_k = max(mu/d, lam * q_k) with lam fixed by the sum constraint
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    G = np.atleast_2d(g)
    d = Y.shape[-1]
    shifted = -eta * G
    shifted -= shifted.max(axis=-1, keepdims=True)
    q = Y * np.exp(shifted)
    q /= q.sum(axis=-1, keepdims=True)
    if mu == 0.0:
        out = q
    else:
        floor = mu / d
        order = np.argsort(q, axis=-1)
        qs = np.take_along_axis(q, order, axis=-1)
        # try fixing the j smallest coordinates at the floor, j = 0..d-1
        tail = np.cumsum(qs[:, ::-1], axis=-1)[:, ::-1]
        j = np.arange(d)
        lam = (1.0 - j * floor) / tail
        ok = lam * qs >= floor
        jstar = np.argmax(ok, axis=-1)
        lam_star = lam[np.arange(Y.shape[0]), jstar]
        out = np.maximum(floor, lam_star[:, None] * q)
        out /= out.sum(axis=-1, keepdims=True)
    return out[0] if single else out


def constants_of(mmap: MirrorMap, fset: FeasibleSet) -> BregmanConstants:
    """Diameter constant R^2 = sup D_R and the Lipschitz constant K of D_R(., z)."""
    if not fset.compact:
        raise NonCompactSet("R^2 and K are unbounded on the whole space")
    if mmap.dimension != fset.dimension:
        raise GeometryError("dimension mismatch")
    if mmap.kind == EUCLIDEAN:
        diam = fset.diameter()
        return BregmanConstants(Rsq=0.5 * diam ** 2, K=diam)
    if fset.kind != SIMPLEX:
        raise UnsupportedCombination("negative entropy pairs only with the simplex")
    if fset.mu <= 0.0:
        raise GeometryError("KL constants need a positive mixing weight")
    # D_R is jointly convex, so its sup over the polytope sits on a vertex pair;
    # |log(x_k / z_k)| is extremal at the same pairs
    V = fset.vertices()
    X, Z = V[:, None, :], V[None, :, :]
    Rsq = float(np.max(bregman(mmap, X, Z)))
    K = float(np.max(np.abs(np.log(X / Z))))
    return BregmanConstants(Rsq=Rsq, K=K)
