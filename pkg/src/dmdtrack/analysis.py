"""
Dynamic regret, network disagreement and the high-probability regret bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from .dynamics import TargetTrajectory
from .engine import RunRecord
from .geometry import EUCLIDEAN, BregmanConstants
from .losses import LossOracle

OUTSIDE = "outside hypotheses"


class AnalysisError(ValueError):
    pass


@dataclass
class RegretReport:
    increments: np.ndarray
    agent_loss: np.ndarray
    opt_loss: np.ndarray

    @property
    def T(self) -> int:
        return self.increments.size

    @property
    def cumulative_series(self) -> np.ndarray:
        return np.cumsum(self.increments)

    @property
    def normalized_series(self) -> np.ndarray:
        """Reg_t / t for t = 1..T."""
        return self.cumulative_series / np.arange(1, self.T + 1)

    @property
    def cumulative(self) -> float:
        return float(np.sum(self.increments))

    @property
    def normalized(self) -> float:
        return self.cumulative / self.T


def dynamic_regret(record: RunRecord, oracle: LossOracle | None = None) -> RegretReport:
    """Reg_T = (1/n) sum_i sum_t f_t(x_{i,t}) - sum_t f_t(x*_t).

    Full records are re-evaluated from the stored estimates with the
    oracle's exact expected losses; summary records use the per-round
    aggregates written by the engine.
    """
    oracle = oracle if oracle is not None else record.oracle
    if oracle.trajectory.T < record.T or not np.array_equal(
            oracle.trajectory.states[: record.T], record.trajectory.states[: record.T]):
        raise AnalysisError("oracle is bound to a different trajectory than the record")
    if record.full:
        agent = np.array([np.mean(oracle.global_value(t, record.x[t - 1])) for t in range(1, record.T + 1)])
        opt = np.array([oracle.global_value(t, record.trajectory.state(t)) for t in range(1, record.T + 1)])
    else:
        agent, opt = record.agent_loss, record.opt_loss
    return RegretReport(agent - opt, agent, opt)


def regret_from_estimates(x, trajectory: TargetTrajectory, oracle: LossOracle) -> RegretReport:
    """Regret from a raw (T, n, d) array of estimates, e.g. read back from CSV."""
    T = x.shape[0]
    agent = np.array([np.mean(oracle.global_value(t, x[t - 1])) for t in range(1, T + 1)])
    opt = np.array([oracle.global_value(t, trajectory.state(t)) for t in range(1, T + 1)])
    return RegretReport(agent - opt, agent, opt)


def consensus_sums(etas, sigma2, T) -> np.ndarray:
    """S_t = sum_{tau=0}^{t-1} eta_tau sigma2^(t-1-tau) for t = 1..T.

    Computed through S_t = sigma2 S_{t-1} + eta_{t-1}, S_0 = 0.
    """
    S = np.empty(T)
    acc = 0.0
    for t in range(1, T + 1):
        acc = sigma2 * acc + etas[t - 1]
        S[t - 1] = acc
    return S


def consensus_sums_naive(etas, sigma2, T) -> np.ndarray:
    return np.array([sum(etas[tau] * sigma2 ** (t - 1 - tau) for tau in range(t)) for t in range(1, T + 1)])


@dataclass
class BoundReport:
    E_track: float
    E_net: float
    E_stoch: float
    L: float
    K: float
    Rsq: float
    delta: float
    sigma2: float
    n: int
    T: int
    schedule: str
    measured: float = float("nan")
    flags: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.E_track + self.E_net + self.E_stoch

    @property
    def slack(self) -> float:
        return self.total - self.measured

    @property
    def within_hypotheses(self) -> bool:
        return all(self.flags.values())

    def as_dict(self) -> dict:
        out = {
            "E_track": self.E_track, "E_net": self.E_net, "E_stoch": self.E_stoch,
            "total_bound": self.total, "measured_regret": self.measured, "slack": self.slack,
            "L": self.L, "K": self.K, "Rsq": self.Rsq, "delta": self.delta, "sigma2": self.sigma2,
            "n": self.n, "T": self.T, "schedule": self.schedule,
        }
        out.update({f"hypothesis.{k}": v for k, v in self.flags.items()})
        out["label"] = "within hypotheses" if self.within_hypotheses else OUTSIDE
        out.update(self.notes)
        return out


def _deviation_norms(trajectory: TargetTrajectory, norm_ord):
    return np.linalg.norm(trajectory.noises, ord=norm_ord, axis=1)


def lemma2_rhs(constants: BregmanConstants, etas, trajectory: TargetTrajectory, norm_ord=2) -> float:
    """2 R^2 / eta_{T+1} + sum_t K / eta_{t+1} ||x*_{t+1} - A x*_t||."""
    T = trajectory.T
    if constants is None:
        raise AnalysisError("missing Bregman constants")
    dev = _deviation_norms(trajectory, norm_ord)
    return float(2.0 * constants.Rsq / etas[T + 1] + np.sum(constants.K / etas[2:T + 2] * dev))


def theorem1_bound(constants: BregmanConstants, etas, trajectory: TargetTrajectory, sigma2, n, L,
                   delta, norm_ord=2, schedule="") -> BoundReport:
    """Evaluate E_Track + E_Net + E_Stoch.

    ``etas`` is indexed 0..T+1 (see :meth:`StepSchedule.etas`).
    """
    if not 0.0 < delta < 1.0:
        raise AnalysisError("delta must lie in (0, 1)")
    if constants is None or L is None:
        raise AnalysisError("bound needs L, K and R^2")
    T = trajectory.T
    etas = np.asarray(etas, dtype=float)
    if etas.size < T + 2:
        raise AnalysisError("step sizes must cover rounds 0..T+1")
    e_track = lemma2_rhs(constants, etas, trajectory, norm_ord) + L ** 2 * float(np.sum(etas[1:T + 1])) / 2.0
    e_net = 4.0 * L ** 2 * math.sqrt(n) * float(np.sum(consensus_sums(etas, sigma2, T)))
    e_stoch = 8.0 * L * math.sqrt(constants.Rsq) * math.sqrt(-T * math.log(delta))
    return BoundReport(e_track, e_net, e_stoch, float(L), constants.K, constants.Rsq, float(delta),
                       float(sigma2), int(n), int(T), schedule)


def bound_for_record(record: RunRecord, delta=0.1, L=None) -> BoundReport:
    mirror = record.config.mirror
    L = record.clip_L if L is None else L
    if record.constants is None or L is None:
        raise AnalysisError("record carries no compact bounding set; supply bound_set")
    rep = theorem1_bound(record.constants, record.etas, record.trajectory, record.sigma2,
                         record.n, L, delta, norm_ord=mirror.norm_ord,
                         schedule=record.config.schedule.describe())
    rep.measured = dynamic_regret(record).cumulative
    rep.flags = record.hypotheses()
    rep.notes = {"bound_set": record.bound_set_source, "L_source": record.L_source}
    return rep


@dataclass
class Verdict:
    holds: bool
    within_hypotheses: bool
    label: str

    @property
    def violation(self) -> bool:
        """A failure with every hypothesis of the bound satisfied."""
        return self.within_hypotheses and not self.holds


def check_bound(record: RunRecord | None, report: BoundReport) -> Verdict:
    if record is not None and math.isnan(report.measured):
        report.measured = dynamic_regret(record).cumulative
    holds = bool(report.measured <= report.total)
    within = report.within_hypotheses
    label = ("bound holds" if holds else "bound violated") + ("" if within else f" ({OUTSIDE})")
    return Verdict(holds, within, label)


def allowed_violations(runs: int, delta: float, confidence=0.95) -> int:
    """Largest violation count consistent with probability <= delta.

    The upper ``confidence`` quantile of Binomial(runs, delta).
    """
    return int(binom.ppf(confidence, runs, delta))


def frequency_ok(violations: int, runs: int, delta: float, confidence=0.95) -> bool:
    return violations <= allowed_violations(runs, delta, confidence)


@dataclass
class DisagreementReport:
    measured: np.ndarray        # (T,) max_i ||x_{i,t} - xbar_t||
    per_agent: np.ndarray       # (T, n)
    bound: np.ndarray           # (T,)
    violations: int
    tol: float = 1e-9


def disagreement_bound_series(etas, sigma2, n, L, T) -> np.ndarray:
    """L sqrt(n) sum_{tau=0}^{t-1} eta_tau sigma2^(t-1-tau) for rounds t = 1..T."""
    return L * math.sqrt(n) * consensus_sums(etas, sigma2, T)


def disagreement(record: RunRecord, L=None, tol=1e-9) -> DisagreementReport:
    if not record.full:
        raise AnalysisError("disagreement needs a full-granularity record")
    L = record.clip_L if L is None else L
    if L is None:
        raise AnalysisError("disagreement bound needs a gradient bound L")
    return disagreement_from_estimates(record.x, record.etas, record.sigma2, L,
                                       record.config.mirror.norm_ord, tol)


def disagreement_from_estimates(x, etas, sigma2, L, norm_ord=2, tol=1e-9) -> DisagreementReport:
    T, n, _ = x.shape
    dev = np.linalg.norm(x - x.mean(axis=1, keepdims=True), ord=norm_ord, axis=2)
    bound = disagreement_bound_series(etas, sigma2, n, L, T)
    viol = int(np.sum(dev > bound[:, None] + tol * np.maximum(1.0, bound[:, None])))
    return DisagreementReport(dev.max(axis=1), dev, bound, viol, tol)


def position_errors(record: RunRecord, coords=(0, 2)) -> np.ndarray:
    """(T, n) Euclidean error of the selected coordinates of x_{i,t} vs x*_t."""
    if not record.full:
        raise AnalysisError("position errors need a full record")
    coords = list(coords)
    target = record.trajectory.states[: record.T, coords]
    return np.linalg.norm(record.x[:, :, coords] - target[:, None, :], axis=2)


def norm_ord_of(record: RunRecord) -> int:
    return 2 if record.config.mirror.kind == EUCLIDEAN else 1
