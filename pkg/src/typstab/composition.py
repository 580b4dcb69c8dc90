"""Composition of typically stable mechanisms.

Three calculators are provided:

* :func:`non_adaptive_compose`: parameters add up linearly.
* :func:`pure_adaptive_compose`: k adaptively chosen (eta, 0, nu) steps.
* :func:`approx_adaptive_compose`: k adaptively chosen (eta, tau, nu) steps.

The adaptive calculators also return the per-step schedule (eta_j, tau_j,
nu_j), j = 1..k. The privacy-loss ledger in :mod:`typstab.verifier` uses
eta_j as its threshold. :func:`run_composition` runs the k-fold
adaptive game itself.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import Dataset, StabilityParams, derive_seed, make_rng
from .errors import ArgumentError, ContractViolationError
from .mechanisms import DiscreteInstance


@dataclass(frozen=True)
class ScheduleStep:
    eta: float
    tau: float
    nu: float


@dataclass(frozen=True)
class CompositionSchedule:
    """Per-step and final parameters of a k-fold adaptive composition."""

    k: int
    tau_prime: float
    base: tuple[float, float, float]
    per_step: tuple[ScheduleStep, ...]
    final: ScheduleStep

    @property
    def vacuous(self) -> bool:
        """True when the final tau* or nu* is at least 1 (no guarantee)."""
        return self.final.tau >= 1.0 or self.final.nu >= 1.0

    def threshold(self, j: int) -> float:
        """eta_j for 1-based step j."""
        return self.per_step[j - 1].eta


@dataclass(frozen=True)
class ApproxCompositionConstants:
    tau_hat: float
    psi_tau: float


def non_adaptive_compose(p: StabilityParams, k: int) -> StabilityParams:
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ArgumentError(f"k must be a positive integer, got {k!r}")
    if k * p.nu >= 1:
        raise ArgumentError(f"k * nu = {k * p.nu} is vacuous (must stay below 1)")
    return StabilityParams(k * p.eta, k * p.tau, k * p.nu)


def _check_k(k) -> None:
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ArgumentError(f"k must be a positive integer, got {k!r}")


def _sqrt_plus_exp(a: float, log_s: float) -> float:
    """sqrt(a + e^log_s) without overflowing the intermediate sum."""
    if log_s == -math.inf:
        return math.sqrt(a)
    if log_s < 700:
        return math.sqrt(a + math.exp(log_s))
    try:
        return math.exp(0.5 * log_s) * math.sqrt(1.0 + a * math.exp(-log_s))
    except OverflowError:
        return math.inf


def _tau_schedule(etas: Sequence[float], per_step_mass: float, nu_term: float) -> list[float]:
    """tau_1..tau_k for tau_j = (j m + c + sum_{t<j} e^{eta_t} c)^{1/2}, m = per_step_mass, c = nu_term.

    The e^{eta_t} sum is kept as a log so long schedules stay finite.
    """
    log_c = math.log(nu_term) if nu_term > 0 else -math.inf
    out, log_s = [], -math.inf
    for j, eta_t in enumerate(etas, start=1):
        out.append(_sqrt_plus_exp(j * per_step_mass + nu_term, log_s))
        log_s = float(np.logaddexp(log_s, eta_t + log_c))
    return out


def pure_adaptive_compose(eta: float, nu: float, k: int, tau_prime: float) -> CompositionSchedule:
    """k-fold adaptive composition of (eta, 0, nu)-typically stable steps.

    eta_j = sqrt(2 j ln(1/tau')) eta + j eta (e^eta - 1)
    tau_j = nu_j = (j tau'/eta + nu/eta + sum_{t<j} e^{eta_t} nu/eta)^{1/2}
    final: eta* = 3 eta_k, tau* = nu* = 5 tau_k.

    The guarantee is stated for k >= 2; k = 1 returns the same formulas.
    """
    _check_k(k)
    if not eta > 0:
        raise ArgumentError(f"eta must be positive, got {eta}")
    if not 0 <= nu < 1:
        raise ArgumentError(f"nu must lie in [0, 1), got {nu}")
    if not 0 < tau_prime < 1:
        raise ArgumentError(f"tau' must lie in (0, 1), got {tau_prime}")
    log_term = math.log(1.0 / tau_prime)
    drift = eta * math.expm1(eta)
    etas = [math.sqrt(2 * j * log_term) * eta + j * drift for j in range(1, k + 1)]
    taus = _tau_schedule(etas, tau_prime / eta, nu / eta)
    steps = tuple(ScheduleStep(e, t, t) for e, t in zip(etas, taus))

    # the final triple from its own closed form: 3 eta_k and 5 tau_k
    eta_star = 3 * math.sqrt(2 * k * log_term) * eta + 3 * k * drift
    tau_star = 5 * taus[-1]
    return CompositionSchedule(k, tau_prime, (eta, 0.0, nu), steps, ScheduleStep(eta_star, tau_star, tau_star))


def approx_constants(eta: float, tau: float) -> ApproxCompositionConstants:
    """tau_hat = 2 tau / (1 - e^-eta) and the second-order slack psi(tau)."""
    tau_hat = 2.0 * tau / -math.expm1(-eta)
    e1, e2 = math.exp(eta), math.exp(2 * eta)
    poly = 4 * e2 + 4 * e1 - 3 - 2 * math.exp(-eta) + math.exp(-2 * eta)
    psi = tau * (2 * e1 + 1) + tau ** 2 * (1 + 2 * e2 / math.expm1(eta) ** 2 * poly)
    return ApproxCompositionConstants(tau_hat, psi)


def approx_adaptive_compose(
    eta: float, tau: float, nu: float, k: int, tau_prime: float
) -> tuple[CompositionSchedule, ApproxCompositionConstants]:
    """k-fold adaptive composition of (eta, tau, nu)-typically stable steps.

    Valid for eta in (0, 3/2], tau in (0, eta/50], nu in (0, 1) and tau' in
    (0, 1); out-of-range inputs are rejected.

    eta_j = 2 sqrt(2 j ln(1/tau')) eta + j (2 eta (e^{2 eta}/(1 - tau_hat) - 1) + psi)
    tau_j = nu_j = (j (tau_hat + tau')/(2 eta) + nu/(2 eta) + sum_{t<j} e^{eta_t} nu/(2 eta))^{1/2}
    final: eta* = 3 eta_k, tau* = nu* = 5 tau_k.
    """
    _check_k(k)
    if not 0 < eta <= 1.5:
        raise ArgumentError(f"approximate composition requires 0 < eta <= 3/2, got eta={eta}")
    if not 0 < tau <= eta / 50:
        raise ArgumentError(f"approximate composition requires 0 < tau <= eta/50, got tau={tau}, eta/50={eta / 50}")
    if not 0 < nu < 1:
        raise ArgumentError(f"approximate composition requires 0 < nu < 1, got nu={nu}")
    if not 0 < tau_prime < 1:
        raise ArgumentError(f"approximate composition requires 0 < tau' < 1, got tau'={tau_prime}")
    consts = approx_constants(eta, tau)
    log_term = math.log(1.0 / tau_prime)
    drift = 2 * eta * (math.exp(2 * eta) / (1 - consts.tau_hat) - 1) + consts.psi_tau
    etas = [2 * math.sqrt(2 * j * log_term) * eta + j * drift for j in range(1, k + 1)]
    taus = _tau_schedule(etas, (consts.tau_hat + tau_prime) / (2 * eta), nu / (2 * eta))
    steps = tuple(ScheduleStep(e, t, t) for e, t in zip(etas, taus))

    eta_star = 6 * math.sqrt(2 * k * log_term) * eta + 3 * k * drift
    tau_star = 5 * taus[-1]
    schedule = CompositionSchedule(k, tau_prime, (eta, tau, nu), steps, ScheduleStep(eta_star, tau_star, tau_star))
    return schedule, consts


# ---------------------------------------------------------------------------
# The k-fold adaptive game


@runtime_checkable
class StepMechanism(Protocol):
    """One step of the game: a randomized map from the dataset to an output."""

    params: StabilityParams

    def __call__(self, x: Dataset, seed: int) -> Any: ...


@dataclass(frozen=True)
class DiscreteStepMechanism:
    """Samples from a tabulated instance's row for the given dataset."""

    instance: DiscreteInstance
    params: StabilityParams

    def __call__(self, x: Dataset, seed: int):
        atom = tuple(float(v) for v in x)
        try:
            i = self.instance.dataset_atoms.index(atom)
        except ValueError:
            raise ArgumentError(f"dataset {atom} is not an atom of this instance") from None
        u = make_rng(seed).random()
        cdf = np.cumsum(self.instance.conditional_table[i])
        z = min(int(np.searchsorted(cdf, u, side="right")), self.instance.n_outputs - 1)
        return self.instance.output_atoms[z]


@dataclass(frozen=True)
class ConstantStepMechanism:
    value: Any
    params: StabilityParams

    def __call__(self, x: Dataset, seed: int):
        return self.value


class Adversary(Protocol):
    def choose(self, outputs: tuple, log: list) -> StepMechanism: ...


@dataclass
class FixedListAdversary:
    """Ignores the outputs and plays a predetermined list of mechanisms."""

    mechanisms: Sequence[StepMechanism]

    def choose(self, outputs: tuple, log: list) -> StepMechanism:
        return self.mechanisms[len(outputs)]


@dataclass
class CallbackAdversary:
    """Wraps ``fn(outputs, log) -> StepMechanism``."""

    fn: Callable[[tuple, list], StepMechanism]

    def choose(self, outputs: tuple, log: list) -> StepMechanism:
        return self.fn(outputs, log)


@dataclass(frozen=True)
class TranscriptEntry:
    step: int
    mechanism: str
    output: Any


@dataclass(frozen=True)
class Transcript:
    entries: tuple[TranscriptEntry, ...]
    adversary_log: tuple = field(default_factory=tuple)

    @property
    def outputs(self) -> tuple:
        return tuple(e.output for e in self.entries)


# instances are immutable, so a verdict once reached holds for good
_VERIFIED: "weakref.WeakKeyDictionary[DiscreteInstance, set]" = weakref.WeakKeyDictionary()


def _check_declared(mech: StepMechanism, base: StabilityParams, step: int) -> None:
    declared = getattr(mech, "params", None)
    if not isinstance(declared, StabilityParams):
        raise ContractViolationError(f"step {step}: mechanism declares no stability parameters")
    if declared.eta > base.eta or declared.tau > base.tau or declared.nu > base.nu:
        raise ContractViolationError(
            f"step {step}: declared {declared.as_tuple()} exceeds the composition's {base.as_tuple()}"
        )
    instance = getattr(mech, "instance", None)
    if isinstance(instance, DiscreteInstance) and declared.as_tuple() not in _VERIFIED.get(instance, ()):
        from .verifier import estimate_typicality_violation

        mass = estimate_typicality_violation(instance, declared.eta, declared.tau)
        if mass > declared.nu + 1e-12:
            raise ContractViolationError(
                f"step {step}: atoms of mass {mass:.6g} break ({declared.eta}, {declared.tau})"
                f"-indistinguishability, more than nu={declared.nu}"
            )
        _VERIFIED.setdefault(instance, set()).add(declared.as_tuple())


def run_composition(
    x: Dataset, adversary: Adversary, k: int, base_params: StabilityParams, seed: int
) -> Transcript:
    """Play k rounds; round i runs the adversary's choice on x with child seed (seed, i).

    The adversary is handed only the outputs so far and its own log.
    """
    _check_k(k)
    outputs: list = []
    log: list = []
    entries = []
    for i in range(1, k + 1):
        mech = adversary.choose(tuple(outputs), log)
        _check_declared(mech, base_params, i)
        z = mech(x, derive_seed(seed, i))
        outputs.append(z)
        entries.append(TranscriptEntry(i, type(mech).__name__, z))
    return Transcript(tuple(entries), tuple(log))
