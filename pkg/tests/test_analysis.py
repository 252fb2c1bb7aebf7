import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmdtrack.analysis import (AnalysisError, allowed_violations, bound_for_record, check_bound, consensus_sums,
                               consensus_sums_naive, disagreement, disagreement_bound_series, dynamic_regret,
                               frequency_ok, lemma2_rhs, regret_from_estimates, theorem1_bound)
from dmdtrack.dynamics import LinearDynamics, NoiseProcess, generate_trajectory
from dmdtrack.engine import StepSchedule, run, run_centralized_reference
from dmdtrack.geometry import BregmanConstants
from dmdtrack.losses import QuadraticTracking
from dmdtrack.network import Graph, metropolis_weights

from conftest import make_config


def _static(d, T, target=1.0):
    return generate_trajectory(LinearDynamics.identity(d), np.full(d, target), NoiseProcess.zero(), T)


def test_regret_zero_at_target():
    traj = _static(2, 10)
    oracle = QuadraticTracking(traj, 3)
    x = np.tile(traj.states[:10, None, :], (1, 3, 1))
    rep = regret_from_estimates(x, traj, oracle)
    assert rep.cumulative == 0.0


def test_regret_single_agent_fixed_estimate():
    traj = _static(1, 10)
    rep = regret_from_estimates(np.zeros((10, 1, 1)), traj, QuadraticTracking(traj, 1))
    assert rep.cumulative == pytest.approx(5.0, abs=1e-15)
    assert rep.normalized == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(rep.cumulative_series, 0.5 * np.arange(1, 11))
    np.testing.assert_allclose(rep.normalized_series, 0.5)


def test_regret_report_invariants():
    rec = run(make_config("ncv-grid25", T=40, seed=1))
    rep = dynamic_regret(rec)
    assert abs(rep.cumulative - rep.increments.sum()) <= 1e-9
    assert rep.normalized == pytest.approx(rep.cumulative / 40)
    # summary records give the same numbers from the running aggregates
    summ = dynamic_regret(run(replace(rec.config, record="summary")))
    assert summ.cumulative == pytest.approx(rep.cumulative, rel=1e-12)


def test_regret_rejects_foreign_oracle():
    rec = run(make_config("static-quadratic", T=5))
    other = QuadraticTracking(_static(2, 5, target=0.1), 9)
    with pytest.raises(AnalysisError):
        dynamic_regret(rec, other)


def test_E_stoch_arithmetic():
    rep = theorem1_bound(BregmanConstants(1.0, 1.0), np.full(102, 0.1), _static(1, 100), 0.5, 4, 1.0,
                         math.exp(-1))
    assert rep.E_stoch == pytest.approx(80.0, abs=1e-12)


def test_E_net_collapses_for_complete_graph():
    rep = theorem1_bound(BregmanConstants(1.0, 1.0), np.full(12, 0.1), _static(1, 10), 0.0, 4, 1.0, 0.1)
    assert rep.E_net == pytest.approx(8.0, abs=1e-12)


def test_E_track_zero_noise():
    etas = StepSchedule("invsqrt", 0.5).etas(50)
    c = BregmanConstants(2.0, 3.0)
    rep = theorem1_bound(c, etas, _static(2, 50), 0.3, 9, 1.5, 0.1)
    assert rep.E_track == 2 * 2.0 / etas[51] + 1.5 ** 2 * np.sum(etas[1:51]) / 2
    assert lemma2_rhs(c, etas, _static(2, 50)) == 2 * 2.0 / etas[51]


def test_lemma2_constant_noise_closed_form():
    T, c_mag = 20, 0.3
    seq = np.zeros((T, 2))
    seq[:, 0] = c_mag
    traj = generate_trajectory(LinearDynamics.identity(2), [0, 0], NoiseProcess.scripted(seq), T)
    consts = BregmanConstants(1.5, 2.5)
    assert lemma2_rhs(consts, np.full(T + 2, 0.2), traj) == pytest.approx(2 * 1.5 / 0.2 + T * 2.5 * c_mag / 0.2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.floats(0, 0.999), st.integers(0, 2**32 - 1))
def test_E_net_recursion_matches_double_sum(T, s2, seed):
    etas = np.random.default_rng(seed).uniform(0.001, 1.0, T + 2)
    etas[0] = etas[1]
    fast, naive = consensus_sums(etas, s2, T), consensus_sums_naive(etas, s2, T)
    assert np.max(np.abs(fast - naive)) <= 1e-9 * max(1.0, np.abs(naive).max())


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0, 0.99), st.floats(0.01, 0.99))
def test_bound_terms_nonnegative_and_additive(Rsq, K, L, s2, delta):
    rng = np.random.default_rng(0)
    traj = generate_trajectory(LinearDynamics.identity(2), [0, 0], NoiseProcess.scripted(rng.normal(size=(30, 2))), 30)
    etas = StepSchedule("invsqrt", 1.0).etas(30)
    rep = theorem1_bound(BregmanConstants(Rsq, K), etas, traj, s2, 9, L, delta)
    assert min(rep.E_track, rep.E_net, rep.E_stoch) >= 0
    assert rep.total == rep.E_track + rep.E_net + rep.E_stoch
    # E_Track minus the tracking part is L^2 sum eta / 2
    assert rep.E_track - lemma2_rhs(BregmanConstants(Rsq, K), etas, traj) == pytest.approx(
        L ** 2 * np.sum(etas[1:31]) / 2, rel=1e-12)
    bigger = theorem1_bound(BregmanConstants(2 * Rsq, 2 * K), etas, traj, s2, 9, 2 * L, delta)
    rep.measured = bigger.measured = 1.0
    assert bigger.slack > rep.slack


def test_bound_input_errors():
    with pytest.raises(AnalysisError):
        theorem1_bound(BregmanConstants(1, 1), np.ones(12), _static(1, 10), 0.5, 4, 1.0, 1.0)
    with pytest.raises(AnalysisError):
        theorem1_bound(None, np.ones(12), _static(1, 10), 0.5, 4, 1.0, 0.1)


def test_binomial_allowance_oracle():
    # smallest k with P(Binomial(50, 0.1) <= k) >= 0.95, computed from the pmf directly
    cdf, k = 0.0, -1
    while cdf < 0.95:
        k += 1
        cdf += math.comb(50, k) * 0.1 ** k * 0.9 ** (50 - k)
    assert allowed_violations(50, 0.1) == k == 9
    assert frequency_ok(9, 50, 0.1) and not frequency_ok(10, 50, 0.1)


def test_verdict_labels():
    rec = run(make_config("ncv-grid25", T=30, seed=1, L_budget=20))
    v = check_bound(rec, bound_for_record(rec, 0.1))
    assert not v.within_hypotheses
    assert "outside hypotheses" in v.label
    assert not v.violation
    rec = run(make_config("static-quadratic", T=200, seed=1))
    rep = bound_for_record(rec, 0.1)
    v = check_bound(rec, rep)
    assert v.within_hypotheses and v.holds and v.label == "bound holds"
    assert rep.as_dict()["label"] == "within hypotheses"


def test_disagreement_complete_graph():
    rec = run_centralized_reference(make_config("ncv-grid25", T=50, seed=3, clip_L="5"))
    rep = disagreement(rec)
    np.testing.assert_allclose(rep.bound, 5 * 5 * 0.1)
    assert rep.violations == 0


def test_disagreement_identical_agents_is_zero():
    rec = run(make_config("static-quadratic", T=50, grad_noise="0"))
    assert np.max(disagreement(rec).measured) <= 1e-15


def test_disagreement_needs_full_record():
    rec = run(make_config("static-quadratic", T=5, record="summary"))
    with pytest.raises(AnalysisError):
        disagreement(rec)


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(2, 10))
    edges = {(draw(st.integers(0, v - 1)), v) for v in range(1, n)}
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=n))
    edges |= {(min(a, b), max(a, b)) for a, b in extra if a != b}
    return Graph(n, frozenset(edges))


@settings(max_examples=25, deadline=None)
@given(connected_graphs(), st.floats(0, 2 * np.pi), st.integers(0, 1000), st.floats(0.01, 0.5))
def test_disagreement_bound_under_rotation_dynamics(g, angle, seed, eta):
    # orthogonal A is non-expansive; the clip makes L an honest envelope
    c, s = np.cos(angle), np.sin(angle)
    cfg = make_config(T=60, seed=seed, d=2, dynamics="identity", noise="zero", x0="0.5,-0.5",
                      loss="quadratic", grad_noise="0.5", schedule="constant", eta=eta, clip_L="1.0")
    cfg = replace(cfg, weights=metropolis_weights(g), dynamics=LinearDynamics(np.array([[c, -s], [s, c]])),
                  init=None)
    rep = disagreement(run(cfg))
    assert rep.violations == 0
    np.testing.assert_allclose(rep.bound, disagreement_bound_series(run(cfg).etas, cfg.weights.sigma2, g.n, 1.0, 60))


def test_regret_nondecreasing_in_scripted_noise():
    means = []
    for mag in (0.0, 0.01, 0.02):
        vals = []
        for seed in range(10):
            dirs = np.random.default_rng(seed).normal(size=(300, 2))
            seq = mag * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
            cfg = make_config(T=300, seed=seed, d=2, topology="grid:3x3", dynamics="identity", x0="0,0",
                              loss="quadratic", grad_noise="0.5", schedule="constant", eta="0.1", clip_L="none")
            cfg = replace(cfg, noise=NoiseProcess.scripted(seq))
            vals.append(dynamic_regret(run(cfg)).normalized)
        means.append(np.mean(vals))
    assert means[0] <= means[1] <= means[2]
