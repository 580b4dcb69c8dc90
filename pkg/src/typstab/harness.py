"""Adaptive analyst sessions: an analyst submits k queries one at a time and
sees only the mechanism's answers, all computed on one dataset drawn at the
start of the session.

The harness measures, per query, the generalization error |q(X) - E q| and
the true error |E q - w|. It then compares violation rates with the
generalization bound (e^eta + 5) nu + tau.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .concentration import ConcentrationFunction, alpha_for, certify_concentration, gamma_of
from .core import (
    DataDistribution,
    EmpiricalOnly,
    QuerySpec,
    StabilityParams,
    Subgaussian,
    derive_seed,
    expected_value,
    linear_query,
    make_rng,
    sample_dataset,
)
from .errors import ArgumentError, ConfigurationError
from .mechanisms import GAUSSIAN, LAPLACE, CalibratedNoiseMechanism, draw_noise

NOISELESS = "noiseless"
MECHANISM_KINDS = (LAPLACE, GAUSSIAN, NOISELESS)

History = tuple[tuple[QuerySpec, float], ...]


@dataclass(frozen=True)
class RoundContext:
    """Public facts an analyst may use when choosing the next query."""

    n: int
    k: int
    round: int
    seed: int


class AnalystStrategy(ABC):
    kind: str = "custom_callback"

    @abstractmethod
    def next_query(self, history: History, ctx: RoundContext) -> QuerySpec:
        """Choose query ``ctx.round`` from past (query, answer) pairs only."""


@dataclass
class FixedListAnalyst(AnalystStrategy):
    queries: Sequence[QuerySpec]
    kind: str = "fixed_list"

    def next_query(self, history: History, ctx: RoundContext) -> QuerySpec:
        return self.queries[len(history) % len(self.queries)]


@dataclass
class CallbackAnalyst(AnalystStrategy):
    fn: Callable[[History, RoundContext], QuerySpec]
    kind: str = "custom_callback"

    def next_query(self, history: History, ctx: RoundContext) -> QuerySpec:
        return self.fn(history, ctx)


def _sign_round_query(n: int, j: int, seed: int, center: float, element_sigma: float) -> QuerySpec:
    signs = make_rng(seed).choice(np.array([-1.0, 1.0]), size=n)
    weights = signs / n
    return linear_query(
        f"sign-{j}", weights, -center * float(weights.sum()), Subgaussian(element_sigma / math.sqrt(n))
    )


def _fit_budget(weights: np.ndarray, element_sigma: float, budget: Optional[float]) -> np.ndarray:
    """Blend normalized weights toward uniform until element_sigma * ||w|| <= budget."""
    if budget is None or element_sigma * np.linalg.norm(weights) <= budget:
        return weights
    uniform = np.full(weights.size, 1.0 / weights.size)
    if element_sigma * np.linalg.norm(uniform) > budget:
        raise ConfigurationError("the sigma budget is below what a plain mean query needs")
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if element_sigma * np.linalg.norm(mid * weights + (1 - mid) * uniform) <= budget:
            lo = mid
        else:
            hi = mid
    return lo * weights + (1 - lo) * uniform


def _final_query(weights: np.ndarray, center: float, element_sigma: float, budget: Optional[float], k: int) -> QuerySpec:
    total = weights.sum()
    weights = weights / total if total > 0 else np.full(weights.size, 1.0 / weights.size)
    weights = _fit_budget(weights, element_sigma, budget)
    sigma = element_sigma * float(np.linalg.norm(weights))
    return linear_query(f"final-{k}", weights, 0.0, Subgaussian(sigma))


def sign_overfitter_next(
    history: History,
    n: int,
    k: int,
    seed: int,
    center: float = 0.5,
    element_sigma: float = 0.5,
    sigma_budget: Optional[float] = None,
) -> QuerySpec:
    """Next query of the sign-correlation overfitting attack.

    Rounds 1..k-1 ask q_j(x) = (1/n) sum_i s_ji (x_i - center) for fresh
    random signs s_j. The last round scores each coordinate by
    sum_j w_j s_ji and asks for the weighted mean of the coordinates with a
    positive score, weighted by that score. On the sample those coordinates
    lean above ``center``, while on fresh data the query averages to the
    population mean.
    """
    j = len(history) + 1
    if j > k:
        raise ArgumentError(f"history already holds {len(history)} of k={k} rounds")
    if j < k:
        return _sign_round_query(n, j, seed, center, element_sigma)
    score = np.zeros(n)
    for q, w in history:
        if q.linear is not None and q.id.startswith("sign-"):
            score += w * q.linear[0] * n
    return _final_query(np.maximum(score, 0.0), center, element_sigma, sigma_budget, k)


@dataclass
class SignOverfitter(AnalystStrategy):
    center: float = 0.5
    element_sigma: float = 0.5
    sigma_budget: Optional[float] = None
    kind: str = "sign_overfitter"

    def next_query(self, history: History, ctx: RoundContext) -> QuerySpec:
        return sign_overfitter_next(
            history, ctx.n, ctx.k, ctx.seed, self.center, self.element_sigma, self.sigma_budget
        )


@dataclass
class RandomNonadaptive(AnalystStrategy):
    """Same query shapes as :class:`SignOverfitter` but ignores every answer."""

    center: float = 0.5
    element_sigma: float = 0.5
    sigma_budget: Optional[float] = None
    kind: str = "random_nonadaptive"

    def next_query(self, history: History, ctx: RoundContext) -> QuerySpec:
        if ctx.round < ctx.k:
            return _sign_round_query(ctx.n, ctx.round, ctx.seed, self.center, self.element_sigma)
        scores = np.maximum(make_rng(ctx.seed).standard_normal(ctx.n), 0.0)
        return _final_query(scores, self.center, self.element_sigma, self.sigma_budget, ctx.k)


# ---------------------------------------------------------------------------
# Sessions


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    w: float
    value: float
    mu: float
    mu_stderr: float

    @property
    def generalization_error(self) -> float:
        return abs(self.value - self.mu)

    @property
    def true_error(self) -> float:
        return abs(self.mu - self.w)


@dataclass(frozen=True)
class SessionResult:
    records: tuple[QueryRecord, ...]
    alpha: float
    mechanism_kind: str
    eta: float
    nu: float
    tau: float
    flags: tuple[str, ...] = ()

    @property
    def worst_true_error(self) -> float:
        return max(r.true_error for r in self.records)

    @property
    def worst_generalization_error(self) -> float:
        return max(r.generalization_error for r in self.records)

    def violations(self, alpha: Optional[float] = None) -> int:
        level = self.alpha if alpha is None else alpha
        return sum(r.generalization_error > level for r in self.records)


def _consistent(q: QuerySpec, f: ConcentrationFunction, n: int, alpha: float) -> bool:
    if isinstance(q.class_params, EmpiricalOnly):
        return False
    fq = ConcentrationFunction.for_query(q, n)
    grid = alpha * np.geomspace(1e-3, 1e3, 61)
    return all(gamma_of(fq, a) >= gamma_of(f, a) * (1 - 1e-12) for a in grid)


def run_session(
    dist: DataDistribution,
    analyst: AnalystStrategy,
    k: int,
    eta: float,
    nu: float,
    f: ConcentrationFunction,
    mechanism_kind: str,
    seed: int,
    tau: float = 0.0,
    spot_check_trials: Optional[int] = None,
) -> SessionResult:
    """One run of the analyst-mechanism loop.

    Seeds: the dataset uses child stream 0, the analyst's round j stream
    (1, j), the noise for round j stream (2, j) and any Monte Carlo mean
    stream (3, j). ``mechanism_kind`` "noiseless" answers q(X) exactly and
    ignores eta. Every query must declare a concentration class at least
    as strong as ``f``. With ``spot_check_trials`` the first query's tail
    is certified by simulation and a failure is recorded in ``flags``.
    """
    if mechanism_kind not in MECHANISM_KINDS:
        raise ArgumentError(f"unknown mechanism kind {mechanism_kind!r}")
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ArgumentError(f"k must be a positive integer, got {k!r}")
    alpha = alpha_for(f, nu)
    mech = None
    if mechanism_kind != NOISELESS:
        mech = CalibratedNoiseMechanism(mechanism_kind, alpha, eta, tau)
    x = sample_dataset(dist, derive_seed(seed, 0))
    history: list[tuple[QuerySpec, float]] = []
    records = []
    flags = []
    for j in range(1, k + 1):
        ctx = RoundContext(dist.n, k, j, derive_seed(seed, 1, j))
        q = analyst.next_query(tuple(history), ctx)
        if not _consistent(q, f, dist.n, alpha):
            raise ConfigurationError(f"query {q.id!r} declares a class weaker than the session's concentration function")
        value = q(x)
        w = value if mech is None else value + draw_noise(mech.noise_kind, mech.scale, derive_seed(seed, 2, j))
        mu = expected_value(dist, q, seed=derive_seed(seed, 3, j))
        if spot_check_trials and j == 1:
            report = certify_concentration(dist, q, f, [alpha], spot_check_trials, derive_seed(seed, 4))
            if not report.passed:
                flags.append(f"round {j}: query {q.id!r} failed its concentration spot check")
        records.append(QueryRecord(q.id, w, value, mu.value, mu.stderr))
        history.append((q, w))
    return SessionResult(tuple(records), alpha, mechanism_kind, eta, nu, tau, tuple(flags))


def run_sessions(
    dist: DataDistribution,
    analyst: AnalystStrategy,
    k: int,
    eta: float,
    nu: float,
    f: ConcentrationFunction,
    mechanism_kind: str,
    sessions: int,
    seed: int,
    tau: float = 0.0,
    threads: int = 1,
) -> list[SessionResult]:
    """Independent sessions; session s uses child seed (seed, s)."""

    def one(s: int) -> SessionResult:
        return run_session(dist, analyst, k, eta, nu, f, mechanism_kind, derive_seed(seed, s), tau)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(sessions)))
    return [one(s) for s in range(sessions)]


def adaptive_settings(k: int, beta: float, alpha: float, f: ConcentrationFunction) -> tuple[float, float]:
    """eta = 1/sqrt(k ln(k/beta)) and nu = exp(-gamma_n(alpha ln^{3/2}(k/beta) / sqrt(k))).

    Hidden constants are all set to 1.
    """
    if not 0 < beta < 1:
        raise ArgumentError(f"beta must lie in (0, 1), got {beta}")
    log_kb = math.log(k / beta)
    eta = 1.0 / math.sqrt(k * log_kb)
    nu = math.exp(-gamma_of(f, alpha * log_kb ** 1.5 / math.sqrt(k)))
    if not 0 < nu < 1:
        raise ArgumentError(f"these settings give nu={nu}, outside (0, 1)")
    return eta, nu


# ---------------------------------------------------------------------------
# Comparison with the bounds


@dataclass(frozen=True)
class BoundsReport:
    alpha: float
    queries: int
    sessions: int
    violation_rate: float
    violation_ci: tuple[float, float]
    generalization_bound: float
    generalization_passed: bool
    worst_true_exceed_rate: float
    worst_true_ci: tuple[float, float]
    adaptive_shape: float


def _binomial_ci(hits: int, total: int) -> tuple[float, float]:
    p = hits / total
    sd = math.sqrt(p * (1 - p) / total)
    return max(p - 3 * sd, 0.0), min(p + 3 * sd, 1.0)


def evaluate_against_bounds(
    results: Union[SessionResult, Sequence[SessionResult]],
    alpha: float,
    beta: float,
    params: StabilityParams,
    f: Optional[ConcentrationFunction] = None,
) -> BoundsReport:
    """Empirical violation rates against the generalization bound.

    Per-query violations are |q_j(X) - E q_j| > alpha, compared with
    (e^eta + 5) nu + tau at three binomial sds. Sessions whose worst true
    error reaches alpha are counted too. ``adaptive_shape`` evaluates
    k^{3/4} ln^{1/4}(k/beta) exp(-gamma_n(alpha ln^{3/2}(k/beta)/sqrt(k))) + beta
    with unit constants, for reference only (requires ``f``).
    """
    if isinstance(results, SessionResult):
        results = [results]
    if not results:
        raise ArgumentError("no sessions to evaluate")
    if not 0 < beta < 1:
        raise ArgumentError(f"beta must lie in (0, 1), got {beta}")
    errors = np.array([r.generalization_error for res in results for r in res.records])
    hits = int(np.count_nonzero(errors > alpha))
    total = errors.size
    rate = hits / total
    bound = (math.exp(params.eta) + 5) * params.nu + params.tau
    sd = math.sqrt(max(rate * (1 - rate), min(bound, 1.0) * max(1 - bound, 0.0)) / total)
    worst_hits = sum(res.worst_true_error >= alpha for res in results)
    k = len(results[0].records)
    shape = math.nan
    if f is not None:
        log_kb = math.log(k / beta)
        shape = k ** 0.75 * log_kb ** 0.25 * math.exp(-gamma_of(f, alpha * log_kb ** 1.5 / math.sqrt(k))) + beta
    return BoundsReport(
        alpha=alpha,
        queries=total,
        sessions=len(results),
        violation_rate=rate,
        violation_ci=_binomial_ci(hits, total),
        generalization_bound=bound,
        generalization_passed=rate <= bound + 3 * sd,
        worst_true_exceed_rate=worst_hits / len(results),
        worst_true_ci=_binomial_ci(worst_hits, len(results)),
        adaptive_shape=shape,
    )
