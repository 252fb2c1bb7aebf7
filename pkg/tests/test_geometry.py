import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmdtrack.geometry import (ENTROPY, EUCLIDEAN, FeasibleSet, GeometryError, MirrorMap, NonCompactSet,
                               UnsupportedCombination, bregman, constants_of, mirror_step, project_simplex)

E2 = MirrorMap(EUCLIDEAN, 2)
KL2 = MirrorMap(ENTROPY, 2)


def bregman_by_definition(mmap, x, y):
    """R(x) - R(y) - <x - y, grad R(y)> evaluated literally."""
    return mmap.R(x) - mmap.R(y) - np.dot(x - y, mmap.grad_R(y))


def test_bregman_identity_is_zero():
    assert bregman(E2, [0.3, 0.7], [0.3, 0.7]) == 0.0


def test_bregman_unit_vector():
    assert bregman(E2, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5, abs=1e-15)


def test_kl_matches_definition_oracle():
    x, y = np.array([0.5, 0.5]), np.array([0.25, 0.75])
    oracle = bregman_by_definition(KL2, x, y)
    assert oracle == pytest.approx(0.5 * math.log(4 / 3), abs=1e-12)
    assert bregman(KL2, x, y) == pytest.approx(oracle, abs=1e-12)
    assert bregman(KL2, x, y) == pytest.approx(0.143841, abs=1e-6)


def test_kl_rejects_nonpositive():
    with pytest.raises(GeometryError):
        bregman(KL2, [1.0, 0.0], [0.5, 0.5])


def test_euclidean_step_whole_space():
    out = mirror_step(E2, FeasibleSet.whole(2), [0.5, 0.5], [1.0, 0.0], 0.1)
    np.testing.assert_array_equal(out, np.array([0.5, 0.5]) - 0.1 * np.array([1.0, 0.0]))
    np.testing.assert_allclose(out, [0.4, 0.5], atol=1e-15)


def test_euclidean_step_box_clamps():
    box = FeasibleSet.box([0, 0], [1, 1])
    np.testing.assert_allclose(mirror_step(E2, box, [0.05, 0.5], [1.0, 0.0], 0.1), [0.0, 0.5], atol=1e-15)


def _grid_argmin_1simplex(y, g, eta, mu, m=2_000_001):
    # brute-force minimization of eta<x,g> + KL(x, y) along the 1-simplex
    floor = max(mu / 2, 1e-9)
    p = np.linspace(floor, 1 - floor, m)
    X = np.stack([p, 1 - p], axis=1)
    obj = eta * X @ g + np.sum(X * np.log(X / y) - X + y, axis=1)
    k = np.argmin(obj)
    # refine with a parabola through the three grid points around the minimum
    if 0 < k < m - 1:
        h = p[1] - p[0]
        f0, f1, f2 = obj[k - 1], obj[k], obj[k + 1]
        shift = 0.5 * h * (f0 - f2) / (f0 - 2 * f1 + f2)
        return np.array([p[k] + shift, 1 - p[k] - shift])
    return X[k]


def test_kl_step_matches_grid_oracle():
    y, g = np.array([0.5, 0.5]), np.array([math.log(2), 0.0])
    oracle = _grid_argmin_1simplex(y, g, 1.0, 0.0)
    out = mirror_step(KL2, FeasibleSet.simplex(2, mu=0.0), y, g, 1.0)
    assert np.max(np.abs(out - oracle)) <= 1e-6
    np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-12)
    # the default mixing weight leaves this interior solution unchanged
    np.testing.assert_allclose(mirror_step(KL2, FeasibleSet.simplex(2), y, g, 1.0), [1 / 3, 2 / 3], atol=1e-12)


def test_kl_step_active_floor_matches_grid_oracle():
    y, g = np.array([0.5, 0.5]), np.array([8.0, 0.0])
    out = mirror_step(KL2, FeasibleSet.simplex(2, mu=0.2), y, g, 1.0)
    oracle = _grid_argmin_1simplex(y, g, 1.0, 0.2)
    assert np.max(np.abs(out - oracle)) <= 1e-6
    assert out[0] == pytest.approx(0.1, abs=1e-12)


def test_kl_step_needs_simplex():
    with pytest.raises(UnsupportedCombination):
        mirror_step(KL2, FeasibleSet.box([0, 0], [1, 1]), [0.5, 0.5], [1.0, 0.0], 0.1)


def test_step_rejects_nonfinite_gradient():
    with pytest.raises(GeometryError):
        mirror_step(E2, FeasibleSet.whole(2), [0.5, 0.5], [np.nan, 0.0], 0.1)


def test_constants_ball_and_box():
    c = constants_of(E2, FeasibleSet.ball([0, 0], 1.0))
    assert (c.Rsq, c.K) == (pytest.approx(2.0), pytest.approx(2.0))
    c = constants_of(MirrorMap(EUCLIDEAN, 1), FeasibleSet.box([0], [1]))
    assert (c.Rsq, c.K) == (pytest.approx(0.5), pytest.approx(1.0))


def test_constants_kl_against_grid_oracle():
    fs = FeasibleSet.simplex(2, mu=0.1)
    c = constants_of(KL2, fs)
    p = np.linspace(0.05, 0.95, 100)
    P = np.stack([p, 1 - p], axis=1)
    D = bregman(KL2, P[:, None, :], P[None, :, :])     # 10^4 pairs
    assert abs(c.Rsq - D.max()) <= 0.05 * D.max()
    # K dominates the observed difference quotients |D(x,z) - D(y,z)| / ||x - y||_1
    l1 = np.abs(P[:, None, 0] - P[None, :, 0]) * 2
    for z in (P[0], P[50], P[-1]):
        Dz = bregman(KL2, P, z)
        q = np.abs(Dz[:, None] - Dz[None, :])[l1 > 0] / l1[l1 > 0]
        assert q.max() <= c.K + 1e-9


def test_constants_reject_whole_space():
    with pytest.raises(NonCompactSet):
        constants_of(E2, FeasibleSet.whole(2))


def _random_simplex(rng, size, d, mu=0.01):
    return (1 - mu) * rng.dirichlet(np.ones(d), size) + mu / d


@pytest.mark.parametrize("kind", [EUCLIDEAN, ENTROPY])
def test_strong_convexity_10k_pairs(kind):
    rng = np.random.default_rng(1)
    d = 5
    mmap = MirrorMap(kind, d)
    if kind == EUCLIDEAN:
        X, Y = rng.normal(size=(10_000, d)), rng.normal(size=(10_000, d))
    else:
        X, Y = _random_simplex(rng, 10_000, d), _random_simplex(rng, 10_000, d)
    D = bregman(mmap, X, Y)
    assert np.all(D >= 0.5 * mmap.norm(X - Y) ** 2 - 1e-9)
    assert np.all(bregman(mmap, X, X) == 0.0)


@pytest.mark.parametrize("kind", [EUCLIDEAN, ENTROPY])
def test_separate_convexity_10k(kind):
    rng = np.random.default_rng(2)
    d, m = 4, 6
    mmap = MirrorMap(kind, d)
    for _ in range(10_000 // 100):
        if kind == EUCLIDEAN:
            x = rng.normal(size=(100, d))
            Ys = rng.normal(size=(100, m, d))
        else:
            x = _random_simplex(rng, 100, d)
            Ys = _random_simplex(rng, 100 * m, d).reshape(100, m, d)
        alpha = rng.dirichlet(np.ones(m), 100)
        mix = np.einsum("bm,bmd->bd", alpha, Ys)
        lhs = bregman(mmap, x, mix)
        rhs = np.sum(alpha * bregman(mmap, x[:, None, :], Ys), axis=1)
        assert np.all(lhs <= rhs + 1e-9)


@pytest.mark.parametrize("kind", [EUCLIDEAN, ENTROPY])
def test_grad_R_finite_differences(kind):
    rng = np.random.default_rng(3)
    mmap = MirrorMap(kind, 3)
    h = 1e-6
    for _ in range(50):
        x = rng.uniform(0.2, 1.0, 3)
        fd = np.array([(mmap.R(x + h * e) - mmap.R(x - h * e)) / (2 * h) for e in np.eye(3)])
        g = mmap.grad_R(x)
        assert np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1e-3)) <= 1e-5


def _objective(mmap, x, y, g, eta):
    return eta * (x @ g) + bregman(mmap, x, y)


@pytest.mark.parametrize("fset", [
    FeasibleSet.box([-1, 0], [0.5, 1]),
    FeasibleSet.ball([0.2, -0.1], 0.7),
    FeasibleSet.simplex(2, mu=0.0),
    FeasibleSet.simplex(2, mu=0.1),
])
def test_euclidean_step_optimal_against_samples(fset):
    rng = np.random.default_rng(4)
    cand = np.vstack([fset.sample(rng, 20_000), fset.vertices()])
    for _ in range(20):
        y = fset.project(rng.normal(size=2))
        g = rng.normal(size=2) * 3
        eta = rng.uniform(0.05, 2.0)
        x = mirror_step(E2, fset, y, g, eta)
        assert fset.contains(x)
        assert _objective(E2, x, y, g, eta) <= np.min(_objective(E2, cand, y, g, eta)) + 1e-8


@pytest.mark.parametrize("mu", [0.0, 0.05, 0.3])
def test_kl_step_optimal_against_samples(mu):
    rng = np.random.default_rng(5)
    d = 3
    mmap = MirrorMap(ENTROPY, d)
    fset = FeasibleSet.simplex(d, mu=mu)
    floor = max(mu / d, 1e-12)
    cand = np.vstack([fset.sample(rng, 50_000), np.clip(fset.vertices(), floor, None)])
    cand /= cand.sum(axis=1, keepdims=True)
    for _ in range(20):
        y = _random_simplex(rng, 1, d, max(mu, 0.01))[0]
        g = rng.normal(size=d) * 2
        x = mirror_step(mmap, fset, y, g, 1.0)
        assert fset.contains(x)
        assert _objective(mmap, x, y, g, 1.0) <= np.min(_objective(mmap, cand, y, g, 1.0)) + 1e-8


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(0.1, 5))
def test_project_simplex_properties(v, radius):
    v = np.array(v)
    p = project_simplex(v, radius)
    assert np.all(p >= 0)
    assert abs(p.sum() - radius) <= 1e-9 * max(1, radius)
    # variational inequality <v - p, q - p> <= 0 at the vertices q of the scaled simplex
    for q in radius * np.eye(v.size):
        assert (v - p) @ (q - p) <= 1e-7 * max(1.0, np.abs(v).max())


def test_batch_rows_independent_of_batch_size():
    rng = np.random.default_rng(6)
    fs = FeasibleSet.simplex(4, mu=0.02)
    mmap = MirrorMap(ENTROPY, 4)
    Y = _random_simplex(rng, 9, 4, 0.02)
    G = rng.normal(size=(9, 4))
    whole = mirror_step(mmap, fs, Y, G, 0.7)
    parts = np.vstack([mirror_step(mmap, fs, Y[a:b], G[a:b], 0.7) for a, b in ((0, 2), (2, 7), (7, 9))])
    np.testing.assert_array_equal(whole, parts)


def test_simplex_elements_sum_to_one():
    rng = np.random.default_rng(7)
    fs = FeasibleSet.simplex(5, mu=0.01)
    pts = fs.project(rng.normal(size=(100, 5)) * 10)
    assert np.all(np.abs(pts.sum(axis=1) - 1) <= 1e-12)
    assert fs.contains(pts)


def test_box_vertices_enumerate_corners():
    fs = FeasibleSet.box([0, -1, 2], [1, 1, 3])
    V = fs.vertices()
    assert V.shape == (8, 3)
    assert {tuple(v) for v in V} == set(itertools.product([0, 1], [-1, 1], [2, 3]))
