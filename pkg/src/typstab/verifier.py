"""Exact checks of indistinguishability and typical stability on finite tables,
plus a simulated privacy-loss ledger for adaptive composition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .composition import CompositionSchedule
from .core import derive_seed, make_rng
from .errors import ArgumentError, ContractViolationError
from .mechanisms import DiscreteInstance

_SLACK = 1e-12


def _as_table(p, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim < 1 or np.any(arr < 0):
        raise ArgumentError(f"{name} must be a table of non-negative probabilities")
    return arr


def hockey_stick(p, q, eta: float) -> float:
    """sup over events O of p(O) - e^eta q(O) = sum_z max(p(z) - e^eta q(z), 0)."""
    p = _as_table(p, "p")
    q = _as_table(q, "q")
    if p.shape != q.shape:
        raise ArgumentError(f"supports differ: {p.shape} vs {q.shape}")
    return float(np.maximum(p - math.exp(eta) * q, 0.0).sum())


def check_indistinguishable(p, q, eta: float, tau: float) -> bool:
    return max(hockey_stick(p, q, eta), hockey_stick(q, p, eta)) <= tau + _SLACK


def post_process(p, channel) -> np.ndarray:
    """Push a distribution through a row-stochastic channel (outputs x new outputs)."""
    return _as_table(p, "p") @ np.asarray(channel, dtype=float)


def failing_atoms(instance: DiscreteInstance, eta: float, tau: float) -> np.ndarray:
    """Boolean mask of dataset atoms whose row is not (eta, tau)-close to the oracle."""
    return np.array(
        [not check_indistinguishable(row, instance.oracle_row, eta, tau) for row in instance.conditional_table]
    )


def estimate_typicality_violation(instance: DiscreteInstance, eta: float, tau: float) -> float:
    """Exact mass of dataset atoms failing (eta, tau)-indistinguishability with the oracle."""
    return float(instance.dataset_probs[failing_atoms(instance, eta, tau)].sum())


def pairwise_typicality_violation(instance: DiscreteInstance, eta: float, tau: float) -> float:
    """Mass of independent pairs (X, Y) whose rows are not (eta, tau)-close to each other."""
    probs, table = instance.dataset_probs, instance.conditional_table
    mass = 0.0
    for i, pi in enumerate(probs):
        for j, pj in enumerate(probs):
            if not check_indistinguishable(table[i], table[j], eta, tau):
                mass += pi * pj
    return float(mass)


# ---------------------------------------------------------------------------
# Near independence of input and output


@dataclass(frozen=True)
class NearIndependenceReport:
    slack: float
    bound: float
    passed: bool
    joint: np.ndarray
    product: np.ndarray
    typical_mass: float
    pairwise_ok: bool
    conditional_slack: float
    conditional_passed: bool


def near_independence_check(instance: DiscreteInstance, eta: float, tau: float, nu: float) -> NearIndependenceReport:
    """Compare the joint law of (X, A(X)) with that of (X, A(Y)), Y an independent copy.

    ``slack`` is the exact sup over events of joint(O) - e^eta product(O);
    the check passes when it is at most tau + 5 nu. On the typical set S
    (atoms whose row is (eta, tau)-close to the oracle) the conditional
    version is also evaluated: when rows in S are pairwise (eta, tau)-close,
    the conditional slack must be at most tau.
    """
    if not eta < 1:
        raise ArgumentError(f"near independence needs eta < 1, got {eta}")
    if not 0 <= nu < 0.1:
        raise ArgumentError(f"near independence needs nu < 1/10, got {nu}")
    probs, table = instance.dataset_probs, instance.conditional_table
    joint = probs[:, None] * table
    marginal = probs @ table
    product = probs[:, None] * marginal[None, :]
    slack = hockey_stick(joint, product, eta)
    bound = tau + 5 * nu

    typical = ~failing_atoms(instance, eta, tau)
    s_mass = float(probs[typical].sum())
    pairwise_ok = all(
        check_indistinguishable(table[i], table[j], eta, tau)
        for i in np.flatnonzero(typical)
        for j in np.flatnonzero(typical)
    )
    if s_mass > 0:
        cond = np.where(typical, probs, 0.0) / s_mass
        cond_joint = cond[:, None] * table
        cond_product = cond[:, None] * (cond @ table)[None, :]
        cond_slack = hockey_stick(cond_joint, cond_product, eta)
    else:
        cond_slack = 0.0
    return NearIndependenceReport(
        slack=slack,
        bound=bound,
        passed=slack <= bound + _SLACK,
        joint=joint,
        product=product,
        typical_mass=s_mass,
        pairwise_ok=pairwise_ok,
        conditional_slack=cond_slack,
        conditional_passed=(not pairwise_ok) or cond_slack <= tau + _SLACK,
    )


# ---------------------------------------------------------------------------
# Privacy-loss ledger


StepSpec = Union[DiscreteInstance, Callable[[tuple], DiscreteInstance]]


@dataclass(frozen=True)
class LedgerReport:
    sessions: int
    k: int
    thresholds: tuple[float, ...]
    final_losses: np.ndarray
    exceed_frequency: float
    typicality_mass: float
    allowance: float
    binomial_sd: float
    passed: bool
    per_step_exceed: tuple[float, ...]


def _resolve(step: StepSpec, outputs: tuple) -> DiscreteInstance:
    return step if isinstance(step, DiscreteInstance) else step(outputs)


def _step_mass(instance: DiscreteInstance, eta: float) -> float:
    bad = instance.max_abs_log_ratio() > eta + _SLACK
    return float(instance.dataset_probs[bad].sum())


def ledger_run(
    steps: Sequence[StepSpec],
    schedule: CompositionSchedule,
    sessions: int,
    seed: int,
) -> LedgerReport:
    """Simulate k-fold composition and track F_j = sum_{i<=j} ln(row_x(z_i)/oracle_i(z_i)).

    Each step is a tabulated instance, or a callable that picks one from the
    outputs so far (adaptive). All steps share the first step's dataset
    atoms; X is drawn once per session. Every instance used is checked
    against the schedule's base eta: the mass of atoms whose worst
    |log ratio| exceeds it must stay within the base nu.

    Passes when the frequency of F_k > eta_k is at most tau' plus the
    accumulated atypical mass plus three binomial standard deviations.
    """
    k = schedule.k
    if len(steps) != k:
        raise ArgumentError(f"schedule has k={k} steps but {len(steps)} were given")
    if sessions < 1000:
        raise ArgumentError(f"the ledger needs at least 10^3 sessions, got {sessions}")
    eta, _, nu = schedule.base
    first = _resolve(steps[0], ())
    atoms, probs = first.dataset_atoms, first.dataset_probs
    cdf = np.cumsum(probs)
    checked: dict[int, tuple[DiscreteInstance, float]] = {}
    step_mass = [0.0] * k

    def use(instance: DiscreteInstance, i: int) -> DiscreteInstance:
        key = id(instance)
        if key not in checked:
            if instance.dataset_atoms != atoms or not np.array_equal(instance.dataset_probs, probs):
                raise ArgumentError("all ledger steps must share the same dataset atoms")
            mass = _step_mass(instance, eta)
            if mass > nu + _SLACK:
                raise ContractViolationError(
                    f"instance has atypical mass {mass:.6g} at eta={eta}, above nu={nu}"
                )
            checked[key] = (instance, mass)
        step_mass[i] = max(step_mass[i], checked[key][1])
        return instance

    thresholds = tuple(schedule.threshold(j) for j in range(1, k + 1))
    losses = np.zeros((sessions, k))
    for s in range(sessions):
        rng = make_rng(derive_seed(seed, s))
        x = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(atoms) - 1)
        outputs: tuple = ()
        total = 0.0
        for i, step in enumerate(steps):
            inst = use(_resolve(step, outputs), i)
            row = inst.conditional_table[x]
            z = min(int(np.searchsorted(np.cumsum(row), rng.random(), side="right")), inst.n_outputs - 1)
            total += math.log(row[z] / inst.oracle_row[z])
            losses[s, i] = total
            outputs = outputs + (inst.output_atoms[z],)

    per_step = tuple(float(np.mean(losses[:, j] > thresholds[j])) for j in range(k))
    freq = per_step[-1]
    typ_mass = min(sum(step_mass), 1.0)
    allowance = min(schedule.tau_prime + typ_mass, 1.0)
    sd = math.sqrt(max(allowance * (1 - allowance), freq * (1 - freq)) / sessions)
    return LedgerReport(
        sessions=sessions,
        k=k,
        thresholds=thresholds,
        final_losses=losses[:, -1].copy(),
        exceed_frequency=freq,
        typicality_mass=typ_mass,
        allowance=allowance,
        binomial_sd=sd,
        passed=freq <= allowance + 3 * sd,
        per_step_exceed=per_step,
    )
