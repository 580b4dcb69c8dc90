"""Shared domain types: datasets, data distributions, queries, stability
parameters, and the seeding contract used by every stochastic operation.

Seeding: every random operation takes an explicit unsigned 64-bit seed.
Sub-draws use :func:`derive_seed`, which mixes ``(seed, stream...)`` through
:class:`numpy.random.SeedSequence`, so trials can run in any order or in
parallel and still reproduce bit-for-bit.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ArgumentError, ConfigurationError

SEED_MASK = (1 << 64) - 1
_MC_CHUNK = 1 << 15
_TOL = 1e-12


# ---------------------------------------------------------------------------
# Seeding


def derive_seed(seed: int, *stream: int) -> int:
    """Child seed for ``stream`` under ``seed`` (counter-based splitting)."""
    if not stream:
        return int(seed) & SEED_MASK
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(s) for s in stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


def entropy_seed() -> int:
    """A fresh 64-bit seed from OS entropy."""
    return int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0])


def open_uniform(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform draws on the open interval (0, 1).

    Built from 53-bit integers as ``(k + 0.5) / 2**53`` so that both log
    transforms used by the noise samplers stay finite.
    """
    k = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (k + 0.5) * (2.0 ** -53)


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, immutable sequence of ``n >= 1`` scalar data points."""

    elements: np.ndarray

    def __post_init__(self):
        arr = np.array(self.elements, copy=True)
        if arr.ndim != 1 or arr.size < 1:
            raise ArgumentError("a dataset is a non-empty one-dimensional sequence")
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)

    @property
    def n(self) -> int:
        return int(self.elements.size)

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        return iter(self.elements.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.elements.dtype == other.elements.dtype and np.array_equal(
            self.elements, other.elements
        )

    def __hash__(self) -> int:
        return hash((str(self.elements.dtype), self.elements.tobytes()))

    def to_bytes(self) -> bytes:
        return np.ascontiguousarray(self.elements, dtype="<f8").tobytes()


def hamming_distance(x: Sequence, y: Sequence) -> int:
    """Number of positions at which two equal-length datasets differ."""
    a = np.asarray(x.elements if isinstance(x, Dataset) else x)
    b = np.asarray(y.elements if isinstance(y, Dataset) else y)
    if a.shape != b.shape:
        raise ArgumentError(f"hamming distance needs equal lengths, got {a.size} and {b.size}")
    return int(np.count_nonzero(a != b))


# ---------------------------------------------------------------------------
# Data distributions


@dataclass(frozen=True)
class DataDistribution:
    """A seeded sampler over datasets of size ``n``.

    ``kind`` is one of ``iid_bernoulli``, ``iid_gaussian``, ``markov_chain``
    or ``custom_table``. Use the constructors below rather than building the
    parameter mapping by hand.
    """

    kind: str
    n: int
    params: Mapping[str, object]
    analytic_means: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        _validate_distribution(self)

    # constructors ---------------------------------------------------------

    @classmethod
    def iid_bernoulli(cls, p: float, n: int, analytic_means=None) -> "DataDistribution":
        return cls("iid_bernoulli", n, {"p": float(p)}, dict(analytic_means or {}))

    @classmethod
    def iid_gaussian(cls, mean: float, sd: float, n: int, analytic_means=None) -> "DataDistribution":
        return cls("iid_gaussian", n, {"mean": float(mean), "sd": float(sd)}, dict(analytic_means or {}))

    @classmethod
    def markov_chain(cls, transition, initial, n: int, values=None, analytic_means=None) -> "DataDistribution":
        transition = np.array(transition, dtype=float)
        initial = np.array(initial, dtype=float)
        if values is None:
            values = np.arange(initial.size, dtype=float)
        params = {"transition": transition, "initial": initial, "values": np.array(values, dtype=float)}
        return cls("markov_chain", n, params, dict(analytic_means or {}))

    @classmethod
    def custom_table(cls, probabilities, n: int, values=None, analytic_means=None) -> "DataDistribution":
        """Each of the ``n`` points is drawn independently from a finite table."""
        probabilities = np.array(probabilities, dtype=float)
        if values is None:
            values = np.arange(probabilities.size, dtype=float)
        params = {"probabilities": probabilities, "values": np.array(values, dtype=float)}
        return cls("custom_table", n, params, dict(analytic_means or {}))

    # derived quantities ---------------------------------------------------

    @property
    def alphabet(self) -> Optional[np.ndarray]:
        """Finite support of a single data point, or None if continuous."""
        if self.kind == "iid_bernoulli":
            return np.array([0.0, 1.0])
        if self.kind in ("markov_chain", "custom_table"):
            return np.asarray(self.params["values"])
        return None

    def position_means(self) -> np.ndarray:
        """E[X_t] for each position t = 0..n-1."""
        kind, n = self.kind, self.n
        if kind == "iid_bernoulli":
            return np.full(n, self.params["p"])
        if kind == "iid_gaussian":
            return np.full(n, self.params["mean"])
        if kind == "custom_table":
            m = float(np.dot(self.params["probabilities"], self.params["values"]))
            return np.full(n, m)
        marg = np.asarray(self.params["initial"], dtype=float)
        trans = np.asarray(self.params["transition"])
        values = np.asarray(self.params["values"])
        out = np.empty(n)
        for t in range(n):
            out[t] = marg @ values
            marg = marg @ trans
        return out

    def element_subgaussian_scale(self) -> float:
        """Subgaussian constant of one centred iid data point."""
        if self.kind == "iid_gaussian":
            return float(self.params["sd"])
        if self.kind == "iid_bernoulli":
            return 0.5
        if self.kind == "custom_table":
            v = np.asarray(self.params["values"])[np.asarray(self.params["probabilities"]) > 0]
            return float(v.max() - v.min()) / 2.0
        raise ConfigurationError("subgaussian scale is only defined for iid distributions")

    def enumerate(self, max_atoms: int = 4096) -> Iterator[tuple[tuple, float]]:
        """Yield every dataset with its probability (finite alphabets only)."""
        alphabet = self.alphabet
        if alphabet is None:
            raise ConfigurationError(f"{self.kind} has no finite support to enumerate")
        m = alphabet.size
        if m ** self.n > max_atoms:
            raise ArgumentError(f"{m}^{self.n} datasets exceed the enumeration cap {max_atoms}")
        for idx in itertools.product(range(m), repeat=self.n):
            prob = self._index_probability(idx)
            yield tuple(float(alphabet[i]) for i in idx), prob

    def _index_probability(self, idx) -> float:
        if self.kind == "iid_bernoulli":
            p = self.params["p"]
            return math.prod(p if i == 1 else 1.0 - p for i in idx)
        if self.kind == "custom_table":
            probs = self.params["probabilities"]
            return math.prod(float(probs[i]) for i in idx)
        init, trans = self.params["initial"], self.params["transition"]
        prob = float(init[idx[0]])
        for a, b in zip(idx, idx[1:]):
            prob *= float(trans[a, b])
        return prob

    # sampling -------------------------------------------------------------

    def sample_batch(self, size: int, seed: int) -> np.ndarray:
        """``size`` independent datasets as rows of a ``(size, n)`` array."""
        rng = make_rng(seed)
        kind, n = self.kind, self.n
        if kind == "iid_bernoulli":
            return (rng.random((size, n)) < self.params["p"]).astype(float)
        if kind == "iid_gaussian":
            return self.params["mean"] + self.params["sd"] * rng.standard_normal((size, n))
        values = np.asarray(self.params["values"])
        if kind == "custom_table":
            cdf = np.cumsum(self.params["probabilities"])
            idx = _categorical(cdf, rng.random((size, n)))
            return values[idx]
        cdf_init = np.cumsum(self.params["initial"])
        cdf_trans = np.cumsum(self.params["transition"], axis=1)
        u = rng.random((size, n))
        idx = np.empty((size, n), dtype=np.int64)
        idx[:, 0] = _categorical(cdf_init, u[:, 0])
        for t in range(1, n):
            rows = cdf_trans[idx[:, t - 1]]
            idx[:, t] = np.minimum((u[:, t, None] >= rows).sum(axis=1), cdf_init.size - 1)
        return values[idx]


def _categorical(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)


def _validate_distribution(dist: DataDistribution) -> None:
    if not isinstance(dist.n, (int, np.integer)) or dist.n < 1:
        raise ConfigurationError(f"dataset size must be a positive integer, got {dist.n!r}")
    p = dist.params
    if dist.kind == "iid_bernoulli":
        if not 0.0 <= p["p"] <= 1.0:
            raise ConfigurationError(f"bernoulli p must lie in [0, 1], got {p['p']}")
    elif dist.kind == "iid_gaussian":
        if not (math.isfinite(p["mean"]) and p["sd"] > 0 and math.isfinite(p["sd"])):
            raise ConfigurationError("gaussian needs a finite mean and a positive sd")
    elif dist.kind == "custom_table":
        probs, values = p["probabilities"], p["values"]
        if probs.ndim != 1 or probs.size == 0 or probs.shape != values.shape:
            raise ConfigurationError("custom table needs matching 1-d probabilities and values")
        _check_row(probs, "custom table probabilities")
    elif dist.kind == "markov_chain":
        trans, init, values = p["transition"], p["initial"], p["values"]
        m = init.size
        if init.ndim != 1 or trans.shape != (m, m) or values.shape != (m,):
            raise ConfigurationError("markov chain needs an m-vector initial law and an m x m transition matrix")
        _check_row(init, "initial distribution")
        for i, row in enumerate(trans):
            _check_row(row, f"transition row {i}")
    else:
        raise ConfigurationError(f"unknown distribution kind {dist.kind!r}")


def _check_row(row: np.ndarray, what: str) -> None:
    if np.any(row < 0) or np.any(row > 1) or not np.all(np.isfinite(row)):
        raise ConfigurationError(f"{what} must be probabilities in [0, 1]")
    if abs(float(row.sum()) - 1.0) > _TOL:
        raise ConfigurationError(f"{what} sums to {row.sum()!r}, not 1")


def sample_dataset(dist: DataDistribution, seed: int) -> Dataset:
    return Dataset(dist.sample_batch(1, seed)[0])


# ---------------------------------------------------------------------------
# Queries


@dataclass(frozen=True)
class DeltaSensitive:
    delta: float


@dataclass(frozen=True)
class Subgaussian:
    sigma: float


@dataclass(frozen=True)
class Subexponential:
    sigma: float
    b: float


@dataclass(frozen=True)
class EmpiricalOnly:
    pass


ClassParams = Union[DeltaSensitive, Subgaussian, Subexponential, EmpiricalOnly]


@dataclass(frozen=True)
class AnalyticValue:
    value: float


@dataclass(frozen=True)
class MonteCarlo:
    trials: int = 100_000


@dataclass(frozen=True, eq=False)
class QuerySpec:
    """A real-valued statistic together with its concentration class.

    ``evaluator`` maps the element array of one dataset to a float. An
    optional ``batch_evaluator`` maps a ``(m, n)`` array of datasets to ``m``
    values and is used by Monte Carlo routines when present. ``linear`` holds
    ``(weights, offset)`` for statistics of the form ``weights @ x + offset``,
    which have exact means under every distribution here.
    """

    id: str
    evaluator: Callable[[np.ndarray], float]
    class_params: ClassParams = EmpiricalOnly()
    expected_value_method: Optional[Union[AnalyticValue, MonteCarlo]] = None
    batch_evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = None
    linear: Optional[tuple[np.ndarray, float]] = None

    def __post_init__(self):
        cp = self.class_params
        if isinstance(cp, DeltaSensitive) and not cp.delta > 0:
            raise ConfigurationError(f"query {self.id}: sensitivity must be positive")
        if isinstance(cp, Subgaussian) and not cp.sigma > 0:
            raise ConfigurationError(f"query {self.id}: subgaussian sigma must be positive")
        if isinstance(cp, Subexponential) and not (cp.sigma > 0 and cp.b > 0):
            raise ConfigurationError(f"query {self.id}: subexponential sigma and b must be positive")

    def __call__(self, x) -> float:
        elements = x.elements if isinstance(x, Dataset) else np.asarray(x)
        return float(self.evaluator(elements))

    def evaluate_batch(self, rows: np.ndarray) -> np.ndarray:
        if self.batch_evaluator is not None:
            return np.asarray(self.batch_evaluator(rows), dtype=float)
        return np.array([self.evaluator(r) for r in rows], dtype=float)


def linear_query(query_id: str, weights, offset: float = 0.0, class_params: ClassParams = EmpiricalOnly()) -> QuerySpec:
    """``q(x) = weights @ x + offset``."""
    w = np.array(weights, dtype=float)
    w.setflags(write=False)
    offset = float(offset)
    return QuerySpec(
        id=query_id,
        evaluator=lambda x: float(np.dot(w, x) + offset),
        class_params=class_params,
        batch_evaluator=lambda rows: rows @ w + offset,
        linear=(w, offset),
    )


def mean_query(n: int, query_id: str = "mean", class_params: ClassParams = EmpiricalOnly()) -> QuerySpec:
    return linear_query(query_id, np.full(n, 1.0 / n), 0.0, class_params)


@dataclass(frozen=True)
class MeanEstimate:
    """An expected value with its standard error (0 for exact values)."""

    value: float
    stderr: float = 0.0
    trials: int = 0
    method: str = "analytic"

    def __float__(self) -> float:
        return self.value


def expected_value(
    dist: DataDistribution,
    q: QuerySpec,
    seed: int = 0,
    method: Optional[Union[AnalyticValue, MonteCarlo]] = None,
) -> MeanEstimate:
    """E_{T ~ dist}[q(T)].

    Exact values are used when available: an ``AnalyticValue`` on the query,
    a registered entry in ``dist.analytic_means``, or a linear query.
    Otherwise the query's ``MonteCarlo`` method runs. Passing ``method``
    overrides the query's own setting.
    """
    chosen = method if method is not None else q.expected_value_method
    if isinstance(chosen, AnalyticValue):
        return MeanEstimate(float(chosen.value))
    if method is None:
        if q.id in dist.analytic_means:
            return MeanEstimate(float(dist.analytic_means[q.id]))
        if q.linear is not None:
            w, offset = q.linear
            return MeanEstimate(float(np.dot(w, dist.position_means()) + offset))
    if isinstance(chosen, MonteCarlo):
        return monte_carlo_mean(dist, q, chosen.trials, seed)
    raise ConfigurationError(f"query {q.id!r} has no way to compute its expected value")


def monte_carlo_mean(dist: DataDistribution, q: QuerySpec, trials: int, seed: int) -> MeanEstimate:
    if trials < 10_000:
        raise ArgumentError(f"Monte Carlo expected values need at least 10^4 trials, got {trials}")
    values = query_samples(dist, q, trials, seed)
    sd = float(values.std(ddof=1))
    return MeanEstimate(float(values.mean()), sd / math.sqrt(trials), trials, "monte_carlo")


def query_samples(dist: DataDistribution, q: QuerySpec, trials: int, seed: int, threads: int = 1) -> np.ndarray:
    """q evaluated on ``trials`` independent datasets.

    Datasets are drawn in fixed-size chunks with per-chunk child seeds, so
    the result does not depend on ``threads``.
    """
    starts = list(range(0, trials, _MC_CHUNK))

    def chunk(c: int) -> np.ndarray:
        size = min(_MC_CHUNK, trials - starts[c])
        return q.evaluate_batch(dist.sample_batch(size, derive_seed(seed, c)))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk, range(len(starts))))
    else:
        parts = [chunk(c) for c in range(len(starts))]
    return np.concatenate(parts) if parts else np.empty(0)


# ---------------------------------------------------------------------------
# Stability parameters


@dataclass(frozen=True)
class StabilityParams:
    """The triple (eta, tau, nu) of typical stability."""

    eta: float
    tau: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ArgumentError(f"eta must be positive, got {self.eta}")
        if not self.tau >= 0:
            raise ArgumentError(f"tau must be non-negative, got {self.tau}")
        if not 0 <= self.nu < 1:
            raise ArgumentError(f"nu must lie in [0, 1), got {self.nu}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.eta, self.tau, self.nu)
