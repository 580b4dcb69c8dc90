"""Noise mechanisms calibrated to a query's confidence interval.

The noise scale is driven by alpha, the half-width of the interval that
holds q(X) with probability at least 1 - nu, rather than by the query's
global sensitivity. Laplace noise with scale alpha/eta gives pure typical
stability. Gaussian noise with sd alpha*sqrt(2 ln(1.5/tau))/eta gives the
approximate version.

Noise transforms (fixed so that independent ports agree bit-for-bit): each
draw consumes two open uniforms u1, u2 from :func:`core.open_uniform`.

* Laplace(b):  v = u1 - 1/2,  N = -b * sign(v) * ln(1 - 2|v|)
* Gaussian(s): N = s * sqrt(-2 ln u1) * cos(2 pi u2)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .concentration import ConcentrationFunction, alpha_for
from .core import QuerySpec, make_rng, open_uniform
from .errors import ArgumentError, InfeasibleError

LAPLACE = "laplace"
GAUSSIAN = "gaussian"
NOISE_KINDS = (LAPLACE, GAUSSIAN)

_ROW_TOL = 1e-12
MAX_ATOMS = 16


# ---------------------------------------------------------------------------
# Noise sampling


def sample_noise(kind: str, scale: float, size: int, seed: int) -> np.ndarray:
    """``size`` centred noise draws of the given kind and scale."""
    u = open_uniform(make_rng(seed), (size, 2))
    if kind == LAPLACE:
        v = u[:, 0] - 0.5
        return -scale * np.sign(v) * np.log1p(-2.0 * np.abs(v))
    if kind == GAUSSIAN:
        return scale * np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
    raise ArgumentError(f"unknown noise kind {kind!r}")


def draw_noise(kind: str, scale: float, seed: int) -> float:
    return float(sample_noise(kind, scale, 1, seed)[0])


def laplace_tail(t: float, scale: float) -> float:
    """P[|Lap(scale)| >= t]."""
    return math.exp(-max(t, 0.0) / scale)


def gaussian_tail(t: float, sigma: float) -> float:
    """P[|N(0, sigma^2)| >= t]."""
    return math.erfc(max(t, 0.0) / (sigma * math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# Calibrated mechanisms


@dataclass(frozen=True)
class CalibratedNoiseMechanism:
    """Additive noise with scale set by the confidence half-width ``alpha``."""

    noise_kind: str
    alpha: float
    eta: float
    tau: float = 0.0

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ArgumentError(f"unknown noise kind {self.noise_kind!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ArgumentError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ArgumentError(f"eta must be positive and finite, got {self.eta}")
        if self.noise_kind == GAUSSIAN and not 0 < self.tau < 1:
            raise ArgumentError(f"the gaussian mechanism needs tau in (0, 1), got {self.tau}")

    @classmethod
    def calibrate(
        cls, kind: str, f: ConcentrationFunction, eta: float, nu: float, tau: float = 0.0
    ) -> "CalibratedNoiseMechanism":
        """Pick alpha as the smallest half-width with gamma_n(alpha) >= ln(1/nu)."""
        return cls(kind, alpha_for(f, nu), eta, tau)

    @property
    def scale(self) -> float:
        """Laplace scale b, or the Gaussian standard deviation."""
        if self.noise_kind == LAPLACE:
            return self.alpha / self.eta
        return self.alpha * math.sqrt(2.0 * math.log(1.5 / self.tau)) / self.eta

    @property
    def gaussian_certificate_valid(self) -> bool:
        """Whether the textbook Gaussian-mechanism argument covers this eta."""
        return self.noise_kind == LAPLACE or self.eta <= 1.0

    def noise(self, size: int, seed: int) -> np.ndarray:
        return sample_noise(self.noise_kind, self.scale, size, seed)

    def density(self, w, center: float) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        s = self.scale
        if self.noise_kind == LAPLACE:
            return np.exp(-np.abs(w - center) / s) / (2.0 * s)
        return np.exp(-0.5 * ((w - center) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))

    def log_density_ratio(self, w, center: float, reference: float) -> np.ndarray:
        """ln(density at ``w`` centred on ``center`` / centred on ``reference``)."""
        w = np.asarray(w, dtype=float)
        s = self.scale
        if self.noise_kind == LAPLACE:
            return (np.abs(w - reference) - np.abs(w - center)) / s
        return ((w - reference) ** 2 - (w - center) ** 2) / (2.0 * s * s)

    def release(self, q: QuerySpec, x, seed: int) -> "MechanismOutput":
        value = q(x)
        return MechanismOutput(value + draw_noise(self.noise_kind, self.scale, seed), q.id, seed, value)


@dataclass(frozen=True)
class ReleasedAnswer:
    """What an analyst may see: the noisy answer and which query it answers."""

    w: float
    query_id: str


@dataclass(frozen=True)
class MechanismOutput:
    w: float
    query_id: str
    noise_draw_seed: int
    true_query_value: float

    def released(self) -> ReleasedAnswer:
        return ReleasedAnswer(self.w, self.query_id)


def laplace_mechanism(
    q: QuerySpec, x, eta: float, nu: float, f: ConcentrationFunction, seed: int
) -> MechanismOutput:
    mech = CalibratedNoiseMechanism.calibrate(LAPLACE, f, eta, nu)
    return mech.release(q, x, seed)


def gaussian_mechanism(
    q: QuerySpec, x, eta: float, tau: float, nu: float, f: ConcentrationFunction, seed: int
) -> MechanismOutput:
    if not 0 < tau < 1:
        raise ArgumentError(f"the gaussian mechanism needs tau in (0, 1), got {tau}")
    mech = CalibratedNoiseMechanism.calibrate(GAUSSIAN, f, eta, nu, tau)
    return mech.release(q, x, seed)


def oracle_mechanism(mu_q: float, mech: CalibratedNoiseMechanism, seed: int, query_id: str = "oracle") -> MechanismOutput:
    """The dataset-free reference: the true mean plus the same kind of noise."""
    return MechanismOutput(mu_q + draw_noise(mech.noise_kind, mech.scale, seed), query_id, seed, mu_q)


# ---------------------------------------------------------------------------
# Closed-form bounds


def _check_beta(beta: float) -> None:
    if not 0 < beta < 1:
        raise ArgumentError(f"beta must lie in (0, 1), got {beta}")


def laplace_error_bound(alpha: float, eta: float, beta: float) -> float:
    """|w - q(x)| < alpha ln(1/beta) / eta with probability at least 1 - beta."""
    _check_beta(beta)
    if not (alpha > 0 and eta > 0):
        raise ArgumentError("alpha and eta must be positive")
    return alpha * math.log(1.0 / beta) / eta


def gaussian_error_bound(alpha: float, eta: float, tau: float, beta: float) -> float:
    """|w - q(x)| < 2 alpha sqrt(ln(1.5/tau) ln(1/beta)) / eta w.p. >= 1 - beta."""
    _check_beta(beta)
    if not (alpha > 0 and eta > 0):
        raise ArgumentError("alpha and eta must be positive")
    if not 0 < tau < 1:
        raise ArgumentError(f"tau must lie in (0, 1), got {tau}")
    return 2.0 * alpha * math.sqrt(math.log(1.5 / tau) * math.log(1.0 / beta)) / eta


def density_ratio_certificate(mech: CalibratedNoiseMechanism, offset: float) -> float:
    """Privacy level certified when |q(x) - E q| equals ``offset``.

    Laplace: the exact sup over outputs of |log density ratio| between the
    mechanism run on x and the oracle, (eta/alpha) * offset.

    Gaussian: the log ratio is unbounded, so this returns the effective eta
    at which the standard Gaussian-mechanism argument gives
    (eta_eff, tau)-indistinguishability for a shift of ``offset``; that is
    also (eta/alpha) * offset since sigma scales linearly with the shift.
    Check ``mech.gaussian_certificate_valid`` before relying on it, or use
    :func:`gaussian_shift_hockey_stick` for the exact value.
    """
    if offset < 0:
        raise ArgumentError(f"offset must be non-negative, got {offset}")
    return mech.eta * offset / mech.alpha


def gaussian_shift_hockey_stick(shift: float, sigma: float, eta: float) -> float:
    """Exact sup_O P[N(shift, s^2) in O] - e^eta P[N(0, s^2) in O]."""
    if shift <= 0:
        return 0.0
    a = shift / (2.0 * sigma)
    c = eta * sigma / shift
    return float(ndtr(a - c) - math.exp(eta) * ndtr(-a - c))


# ---------------------------------------------------------------------------
# Finite reference instances


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    """A mechanism on finitely many datasets and outputs, fully tabulated.

    ``conditional_table[i, z]`` is the probability of output z on dataset
    atom i; ``oracle_row[z]`` is the dataset-free reference distribution.
    """

    dataset_atoms: tuple
    dataset_probs: np.ndarray
    output_atoms: tuple
    conditional_table: np.ndarray
    oracle_row: np.ndarray

    def __post_init__(self):
        probs = np.array(self.dataset_probs, dtype=float)
        table = np.array(self.conditional_table, dtype=float)
        oracle = np.array(self.oracle_row, dtype=float)
        m, r = len(self.dataset_atoms), len(self.output_atoms)
        if not (1 <= m <= MAX_ATOMS and 1 <= r <= MAX_ATOMS):
            raise ArgumentError(f"instances are limited to {MAX_ATOMS} dataset and output atoms")
        if probs.shape != (m,) or table.shape != (m, r) or oracle.shape != (r,):
            raise ArgumentError("instance tables have inconsistent shapes")
        for name, rows in (("dataset probabilities", probs[None]), ("conditional table", table), ("oracle row", oracle[None])):
            if np.any(rows < 0) or np.any(rows > 1):
                raise ArgumentError(f"{name} must hold probabilities in [0, 1]")
            if np.any(np.abs(rows.sum(axis=1) - 1.0) > _ROW_TOL):
                raise ArgumentError(f"{name} rows must sum to 1")
        for arr in (probs, table, oracle):
            arr.setflags(write=False)
        object.__setattr__(self, "dataset_probs", probs)
        object.__setattr__(self, "conditional_table", table)
        object.__setattr__(self, "oracle_row", oracle)

    @property
    def n_datasets(self) -> int:
        return len(self.dataset_atoms)

    @property
    def n_outputs(self) -> int:
        return len(self.output_atoms)

    def log_ratios(self) -> np.ndarray:
        """ln(row_i(z) / oracle(z)); +-inf where supports disagree, 0 where both vanish."""
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(self.conditional_table) - np.log(self.oracle_row)[None, :]
        both_zero = (self.conditional_table == 0) & (self.oracle_row[None, :] == 0)
        out[both_zero] = 0.0
        return out

    def max_abs_log_ratio(self) -> np.ndarray:
        """Per dataset atom, the largest |log ratio| against the oracle row."""
        return np.abs(self.log_ratios()).max(axis=1)

    def remapped(self, mapping: Sequence[int], n_outputs: Optional[int] = None) -> "DiscreteInstance":
        """Post-process outputs through a deterministic map z -> mapping[z]."""
        mapping = np.asarray(mapping, dtype=int)
        r = int(n_outputs if n_outputs is not None else mapping.max() + 1)
        channel = np.zeros((self.n_outputs, r))
        channel[np.arange(self.n_outputs), mapping] = 1.0
        return DiscreteInstance(
            self.dataset_atoms,
            self.dataset_probs,
            tuple(range(r)),
            self.conditional_table @ channel,
            self.oracle_row @ channel,
        )


def certify_instance(instance: DiscreteInstance, eta_target: float) -> float:
    """Max |log ratio| over all atoms; raises if it exceeds ``eta_target``."""
    worst = float(instance.max_abs_log_ratio().max())
    if not worst <= eta_target + _ROW_TOL:
        raise InfeasibleError(f"instance reaches |log ratio| {worst:.6g} > eta_target {eta_target}")
    return worst


def discrete_reference_mechanism(bias: float, eta_target: float) -> DiscreteInstance:
    """Binary randomized response against a uniform oracle.

    Two equiprobable dataset atoms (0,) and (1,). On atom x the output
    equals x with probability 1 - 1/(2(1 + 2 bias)), so the light output has
    ratio 1/(1 + 2 bias) to the oracle and the heavy one stays below
    1 + 2 bias. The worst |log ratio| is therefore exactly ln(1 + 2 bias),
    e.g. ln 1.5 for bias 0.25 (rows (2/3, 1/3) and (1/3, 2/3)).
    """
    if not 0 < bias < 0.5:
        raise ArgumentError(f"bias must lie in (0, 0.5), got {bias}")
    if not eta_target > 0:
        raise ArgumentError(f"eta_target must be positive, got {eta_target}")
    light = 1.0 / (2.0 * (1.0 + 2.0 * bias))
    heavy = 1.0 - light
    instance = DiscreteInstance(
        dataset_atoms=((0.0,), (1.0,)),
        dataset_probs=np.array([0.5, 0.5]),
        output_atoms=(0, 1),
        conditional_table=np.array([[heavy, light], [light, heavy]]),
        oracle_row=np.array([0.5, 0.5]),
    )
    certify_instance(instance, eta_target)
    return instance
