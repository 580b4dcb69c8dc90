"""Concentration functions gamma_n for the supported query classes.

A query q is gamma_n-concentrated under P when
``P[|q(X) - E q| > alpha] < exp(-gamma_n(alpha))`` for every alpha > 0.
This module evaluates gamma_n, inverts it to get the confidence half-width
alpha for a target failure probability nu, and checks the tail statement
empirically for a given distribution and query.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    DataDistribution,
    DeltaSensitive,
    QuerySpec,
    Subexponential,
    Subgaussian,
    derive_seed,
    expected_value,
    query_samples,
)
from .errors import ArgumentError, ConfigurationError, InfeasibleError

AS_STATED = "as_stated"
STANDARD_BERNSTEIN = "standard_bernstein"

_REL_TOL = 1e-10
_MAX_DOUBLINGS = 1100
# deviations this close to alpha are ties (lattice statistics hit alpha exactly)
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class ConcentrationFunction:
    """A non-negative, non-decreasing gamma_n: R+ -> R+.

    ``form`` is ``mcdiarmid``, ``subgaussian``, ``subexponential`` or
    ``custom``. Build instances with the classmethods.
    """

    form: str
    delta: float = 0.0
    n: int = 0
    sigma: float = 0.0
    b: float = 0.0
    variant: str = AS_STATED
    table: Optional[tuple[tuple[float, ...], tuple[float, ...]]] = None

    @classmethod
    def mcdiarmid(cls, delta: float, n: int) -> "ConcentrationFunction":
        if not (delta > 0 and n >= 1):
            raise ArgumentError("mcdiarmid needs delta > 0 and n >= 1")
        return cls("mcdiarmid", delta=float(delta), n=int(n))

    @classmethod
    def subgaussian(cls, sigma: float) -> "ConcentrationFunction":
        if not sigma > 0:
            raise ArgumentError("subgaussian needs sigma > 0")
        return cls("subgaussian", sigma=float(sigma))

    @classmethod
    def subexponential(cls, sigma: float, b: float, variant: str = AS_STATED) -> "ConcentrationFunction":
        if not (sigma > 0 and b > 0):
            raise ArgumentError("subexponential needs sigma > 0 and b > 0")
        if variant not in (AS_STATED, STANDARD_BERNSTEIN):
            raise ArgumentError(f"unknown subexponential variant {variant!r}")
        return cls("subexponential", sigma=float(sigma), b=float(b), variant=variant)

    @classmethod
    def custom(cls, alphas: Sequence[float], gammas: Sequence[float]) -> "ConcentrationFunction":
        a = np.asarray(alphas, dtype=float)
        g = np.asarray(gammas, dtype=float)
        if a.ndim != 1 or a.shape != g.shape or a.size < 2:
            raise ArgumentError("custom table needs at least two (alpha, gamma) pairs")
        if np.any(np.diff(a) <= 0) or np.any(np.diff(g) < 0) or a[0] < 0:
            raise ArgumentError("custom table must have increasing alphas and non-decreasing gammas")
        return cls("custom", table=(tuple(a.tolist()), tuple(g.tolist())))

    @classmethod
    def for_query(cls, q: QuerySpec, n: Optional[int] = None) -> "ConcentrationFunction":
        """The closed form matching a query's declared class."""
        cp = q.class_params
        if isinstance(cp, Subgaussian):
            return cls.subgaussian(cp.sigma)
        if isinstance(cp, Subexponential):
            return cls.subexponential(cp.sigma, cp.b)
        if isinstance(cp, DeltaSensitive):
            if n is None:
                raise ArgumentError("a sensitivity certificate needs the dataset size")
            return cls.mcdiarmid(cp.delta, n)
        raise ConfigurationError(f"query {q.id!r} declares no concentration class")

    def __call__(self, alpha: float) -> float:
        return gamma_of(self, alpha)

    @property
    def supremum(self) -> float:
        """sup over alpha of gamma_n (inf when unbounded)."""
        if self.form == "custom":
            return max(self.table[1][-1], 0.0)
        if self.form == "subexponential" and self.variant == AS_STATED:
            return self.sigma ** 2 / (2 * self.b ** 2)
        return math.inf


def gamma_of(f: ConcentrationFunction, alpha: float) -> float:
    if alpha < 0 or math.isnan(alpha):
        raise ArgumentError(f"alpha must be non-negative, got {alpha}")
    if f.form == "mcdiarmid":
        return 2.0 * alpha ** 2 / (f.n * f.delta ** 2)
    if f.form == "subgaussian":
        return alpha ** 2 / (2.0 * f.sigma ** 2)
    if f.form == "subexponential":
        quad = alpha ** 2 / (2.0 * f.sigma ** 2)
        if f.variant == AS_STATED:
            return min(quad, f.sigma ** 2 / (2.0 * f.b ** 2))
        return min(quad, alpha / (2.0 * f.b))
    alphas, gammas = f.table
    return max(float(np.interp(alpha, alphas, gammas)), 0.0)


def alpha_for(f: ConcentrationFunction, nu: float) -> float:
    """Smallest alpha with gamma_n(alpha) >= ln(1/nu)."""
    if not 0 < nu < 1:
        raise ArgumentError(f"nu must lie in (0, 1), got {nu}")
    # the two roundings of ln(1/nu) can differ by an ulp; clear both
    target = max(-math.log(nu), math.log(1.0 / nu))
    if f.supremum < target:
        raise InfeasibleError(
            f"{f.form} concentration never reaches ln(1/nu) = {target:.6g} (sup gamma = {f.supremum:.6g})"
        )
    alpha = _closed_form_alpha(f, target)
    if alpha is None:
        return _bisect_alpha(f, target)
    # Round-off can land a hair below the target; step up to the first float that clears it.
    while gamma_of(f, alpha) < target:
        alpha = math.nextafter(alpha, math.inf)
    return alpha


def _closed_form_alpha(f: ConcentrationFunction, target: float) -> Optional[float]:
    if f.form == "mcdiarmid":
        return f.delta * math.sqrt(f.n * target / 2.0)
    if f.form == "subgaussian":
        return f.sigma * math.sqrt(2.0 * target)
    if f.form == "subexponential":
        if target <= f.sigma ** 2 / (2.0 * f.b ** 2):
            return f.sigma * math.sqrt(2.0 * target)
        # only the Bernstein variant gets here (the other is capped, checked above)
        return 2.0 * f.b * target
    return None


def _bisect_alpha(f: ConcentrationFunction, target: float) -> float:
    lo, hi = 0.0, 1.0
    for _ in range(_MAX_DOUBLINGS):
        if gamma_of(f, hi) >= target:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise InfeasibleError("no bracket found for alpha")
    while hi - lo > _REL_TOL * hi * 1e-2:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if gamma_of(f, mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Empirical certification


@dataclass(frozen=True)
class CertificateRow:
    alpha: float
    bound: float
    exceed_frequency: float
    ci_low: float
    ci_high: float
    passed: bool


@dataclass(frozen=True)
class ConcentrationReport:
    query_id: str
    mu: float
    mu_stderr: float
    trials: int
    rows: tuple[CertificateRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def certify_concentration(
    dist: DataDistribution,
    q: QuerySpec,
    f: ConcentrationFunction,
    alphas: Sequence[float],
    trials: int = 100_000,
    seed: int = 0,
    threads: int = 1,
) -> ConcentrationReport:
    """Compare empirical exceedance of |q(X) - E q| > alpha with exp(-gamma_n(alpha)).

    A grid point passes when the exceedance frequency is at most the bound
    plus three binomial standard deviations (the larger of the two
    sd estimates, at the observed and at the bounding rate). Deviations
    within 1e-9 of alpha count as ties rather than exceedances.
    """
    if trials < 10_000:
        raise ArgumentError(f"certification needs at least 10^4 trials, got {trials}")
    mu = expected_value(dist, q, seed=derive_seed(seed, 0))
    values = query_samples(dist, q, trials, derive_seed(seed, 1), threads)
    dev = np.abs(values - mu.value)
    rows = []
    for alpha in alphas:
        bound = math.exp(-gamma_of(f, float(alpha)))
        freq = float(np.count_nonzero(dev > alpha * (1 + _TIE_TOL) + _TIE_TOL)) / trials
        sd = math.sqrt(max(freq * (1 - freq), bound * (1 - bound)) / trials)
        own_sd = math.sqrt(freq * (1 - freq) / trials)
        rows.append(
            CertificateRow(
                alpha=float(alpha),
                bound=bound,
                exceed_frequency=freq,
                ci_low=max(freq - 3 * own_sd, 0.0),
                ci_high=min(freq + 3 * own_sd, 1.0),
                passed=freq <= bound + 3 * sd,
            )
        )
    return ConcentrationReport(q.id, mu.value, mu.stderr, trials, tuple(rows))
