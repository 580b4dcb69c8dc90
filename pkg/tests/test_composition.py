import itertools
import math

import numpy as np
import pytest

from typstab.composition import (
    CallbackAdversary,
    ConstantStepMechanism,
    DiscreteStepMechanism,
    FixedListAdversary,
    approx_adaptive_compose,
    approx_constants,
    non_adaptive_compose,
    pure_adaptive_compose,
    run_composition,
)
from typstab.core import Dataset, StabilityParams, derive_seed
from typstab.errors import ArgumentError, ContractViolationError
from typstab.mechanisms import discrete_reference_mechanism

import oracles

# frozen from the mpmath oracle (tests/oracles.py)
PURE_ETA_STAR = 1.9471176569529529  # eta=0.1, k=4, tau'=0.01, nu=1e-6
PURE_TAU_STAR = 0.031652102288446962  # eta=0.1, k=4, tau'=1e-6, nu=1e-9
TAU_HAT_1_001 = 0.031639534137386529  # eta=1, tau=0.01
APPROX_ETA_STAR = 88.164991412998472  # eta=0.5, tau=0.005, nu=1e-8, k=8, tau'=1e-6
APPROX_TAU_STAR = 309.62403679376976

PURE_GRID = list(itertools.product([0.01, 0.1, 0.5, 1.0], [0.0, 1e-9, 1e-4], [1, 2, 5, 10, 40], [1e-6, 0.01]))
APPROX_GRID = [
    (eta, eta * frac, nu, k, tp)
    for eta, frac, nu, k, tp in itertools.product([0.05, 0.3, 1.0, 1.5], [1e-4, 0.02], [1e-9, 1e-3], [1, 4, 16], [1e-6, 0.05])
]


def rel(a, b):
    """Relative error against an mpmath value; beyond the double range only inf matches."""
    if b > oracles.mp.mpf("1.7976931348623157e308"):
        return 0.0 if a == math.inf else math.inf
    b = float(b)
    return abs(a - b) / max(abs(b), 1e-300)


def test_grids_are_large_enough():
    assert len(PURE_GRID) >= 100 and len(APPROX_GRID) >= 50


@pytest.mark.parametrize("eta, nu, k, tp", PURE_GRID)
def test_pure_matches_oracle(eta, nu, k, tp):
    s = pure_adaptive_compose(eta, nu, k, tp)
    etas, taus, eta_star, tau_star = oracles.pure_schedule(eta, nu, k, tp)
    for step, e, t in zip(s.per_step, etas, taus):
        assert rel(step.eta, e) < 1e-9
        assert rel(step.tau, t) < 1e-9 and step.nu == step.tau
    assert rel(s.final.eta, eta_star) < 1e-9
    assert rel(s.final.tau, tau_star) < 1e-9 and s.final.nu == s.final.tau


@pytest.mark.parametrize("eta, tau, nu, k, tp", APPROX_GRID)
def test_approx_matches_oracle(eta, tau, nu, k, tp):
    s, c = approx_adaptive_compose(eta, tau, nu, k, tp)
    etas, taus, eta_star, tau_star, th, ps = oracles.approx_schedule(eta, tau, nu, k, tp)
    assert rel(c.tau_hat, th) < 1e-9
    assert rel(c.psi_tau, ps) < 1e-9
    for step, e, t in zip(s.per_step, etas, taus):
        assert rel(step.eta, e) < 1e-9
        assert rel(step.tau, t) < 1e-9
    assert rel(s.final.eta, eta_star) < 1e-9
    assert rel(s.final.tau, tau_star) < 1e-9


def test_worked_values():
    assert pure_adaptive_compose(0.1, 1e-6, 4, 0.01).final.eta == pytest.approx(PURE_ETA_STAR, rel=1e-12)
    assert pure_adaptive_compose(0.1, 1e-6, 4, 0.01).final.eta == pytest.approx(1.9471, abs=5e-5)
    s = pure_adaptive_compose(0.1, 1e-9, 4, 1e-6)
    assert s.final.tau == pytest.approx(PURE_TAU_STAR, rel=1e-12)
    assert s.final.tau == pytest.approx(0.03165, abs=5e-6)
    assert approx_constants(1.0, 0.01).tau_hat == pytest.approx(TAU_HAT_1_001, rel=1e-12)
    s, _ = approx_adaptive_compose(0.5, 0.005, 1e-8, 8, 1e-6)
    assert s.final.eta == pytest.approx(APPROX_ETA_STAR, rel=1e-12)
    assert s.final.tau == pytest.approx(APPROX_TAU_STAR, rel=1e-12)
    assert s.vacuous


def test_nu_zero_closed_form():
    for k, tp, eta in ((4, 1e-6, 0.1), (10, 0.01, 0.5)):
        s = pure_adaptive_compose(eta, 0.0, k, tp)
        assert s.final.tau == pytest.approx(5 * math.sqrt(k * tp / eta), rel=1e-14)


def test_tau_zero_limit():
    c = approx_constants(0.7, 0.0)
    assert c.tau_hat == 0.0 and c.psi_tau == 0.0


def test_final_is_three_times_last_step():
    for eta, nu, k, tp in PURE_GRID:
        s = pure_adaptive_compose(eta, nu, k, tp)
        assert s.final.eta == pytest.approx(3 * s.per_step[-1].eta, rel=1e-14)
    for args in APPROX_GRID:
        s, _ = approx_adaptive_compose(*args)
        assert s.final.eta == pytest.approx(3 * s.per_step[-1].eta, rel=1e-14)
        assert s.final.tau == pytest.approx(5 * s.per_step[-1].tau, rel=1e-14)


def test_schedule_strictly_increasing():
    s = pure_adaptive_compose(0.1, 1e-6, 20, 0.01)
    etas = [p.eta for p in s.per_step]
    assert all(b > a for a, b in zip(etas, etas[1:]))
    assert s.threshold(1) == etas[0]


def test_monotonicity():
    ks = range(1, 30)
    for eta in (0.05, 0.5):
        finals = [pure_adaptive_compose(eta, 1e-6, k, 0.01).final.eta for k in ks]
        assert all(b >= a for a, b in zip(finals, finals[1:]))
    by_eta = [pure_adaptive_compose(e, 1e-6, 5, 0.01).final.eta for e in np.linspace(0.01, 2, 50)]
    assert all(b >= a for a, b in zip(by_eta, by_eta[1:]))
    by_nu = [pure_adaptive_compose(0.2, nu, 5, 0.01).final.tau for nu in np.linspace(0, 0.5, 50)]
    assert all(b >= a for a, b in zip(by_nu, by_nu[1:]))
    by_tp = [pure_adaptive_compose(0.2, 0.0, 5, tp).final.tau for tp in np.geomspace(1e-9, 0.5, 50)]
    assert all(b >= a for a, b in zip(by_tp, by_tp[1:]))


def test_tau_star_not_monotone_in_tau_prime_when_nu_positive():
    # a larger tau' shrinks every eta_t, and with it the e^{eta_t} nu terms
    small = pure_adaptive_compose(0.2, 1e-6, 5, 1e-9).final.tau
    large = pure_adaptive_compose(0.2, 1e-6, 5, 1e-6).final.tau
    assert large < small
    assert float(oracles.pure_schedule(0.2, 1e-6, 5, 1e-6)[3]) < float(oracles.pure_schedule(0.2, 1e-6, 5, 1e-9)[3])


def test_approx_preconditions():
    with pytest.raises(ArgumentError, match="eta/50"):
        approx_adaptive_compose(0.5, 0.5, 1e-6, 4, 0.01)
    with pytest.raises(ArgumentError, match="3/2"):
        approx_adaptive_compose(2.0, 0.01, 1e-6, 4, 0.01)
    with pytest.raises(ArgumentError):
        approx_adaptive_compose(0.5, 0.005, 0.0, 4, 0.01)
    with pytest.raises(ArgumentError):
        approx_adaptive_compose(0.5, 0.005, 1e-6, 4, 1.0)
    with pytest.raises(ArgumentError):
        pure_adaptive_compose(0.5, 1e-6, 0, 0.01)


def test_non_adaptive():
    out = non_adaptive_compose(StabilityParams(0.1, 0.01, 0.001), 3)
    assert out.as_tuple() == pytest.approx((0.3, 0.03, 0.003), rel=1e-15)
    p = StabilityParams(0.4, 0.02, 0.05)
    assert non_adaptive_compose(p, 1) == p
    assert non_adaptive_compose(StabilityParams(0.2), 10).as_tuple() == pytest.approx((2.0, 0.0, 0.0))
    with pytest.raises(ArgumentError):
        non_adaptive_compose(StabilityParams(0.2, 0, 0.2), 5)


# ---------------------------------------------------------------------------
# the adaptive game

ETA = math.log(1.5)
BASE = StabilityParams(ETA, 0.0, 0.0)
STRONG = DiscreteStepMechanism(discrete_reference_mechanism(0.25, ETA), BASE)
WEAK = DiscreteStepMechanism(discrete_reference_mechanism(0.1, ETA), BASE)
ATOMS = (Dataset([0.0]), Dataset([1.0]))


def sign_following(outputs, log):
    log.append(len(outputs))
    return STRONG if not outputs or outputs[-1] == 1 else WEAK


def test_constant_mechanism_k1():
    t = run_composition(ATOMS[0], FixedListAdversary([ConstantStepMechanism("z", BASE)]), 1, BASE, 0)
    assert t.outputs == ("z",)


def test_fixed_list_equals_independent_runs():
    mechs = [STRONG, WEAK, STRONG, WEAK]
    t = run_composition(ATOMS[1], FixedListAdversary(mechs), 4, BASE, 123)
    assert t.outputs == tuple(m(ATOMS[1], derive_seed(123, i + 1)) for i, m in enumerate(mechs))


def test_adversary_never_sees_the_dataset():
    seen = []

    def spy(outputs, log):
        seen.append((outputs, list(log)))
        return STRONG

    run_composition(ATOMS[0], CallbackAdversary(spy), 5, BASE, 1)
    for outputs, log in seen:
        assert isinstance(outputs, tuple)
        assert not any(isinstance(v, (Dataset, np.ndarray)) for v in outputs + tuple(log))


def test_declared_parameters_enforced():
    loose = DiscreteStepMechanism(discrete_reference_mechanism(0.25, ETA), StabilityParams(1.0, 0.0, 0.0))
    with pytest.raises(ContractViolationError):
        run_composition(ATOMS[0], FixedListAdversary([loose]), 1, BASE, 0)
    lying = DiscreteStepMechanism(discrete_reference_mechanism(0.25, ETA), StabilityParams(0.1, 0.0, 0.0))
    with pytest.raises(ContractViolationError):
        run_composition(ATOMS[0], FixedListAdversary([lying]), 1, StabilityParams(0.1), 0)


def exact_marginals(k):
    """P[z_j = 1] for the sign-following adversary, by enumerating every transcript."""
    marg = np.zeros(k)
    for xi, px in enumerate((0.5, 0.5)):
        for path in itertools.product((0, 1), repeat=k):
            prob, outputs = px, ()
            for z in path:
                mech = sign_following(outputs, [])
                prob *= mech.instance.conditional_table[xi][z]
                outputs += (z,)
            marg += prob * np.array(path)
    return marg


def test_adaptive_transcript_marginals_match_enumeration():
    k, sessions = 6, 10_000
    exact = exact_marginals(k)
    counts = np.zeros(k)
    for s in range(sessions):
        x = ATOMS[s % 2]
        t = run_composition(x, CallbackAdversary(sign_following), k, BASE, derive_seed(99, s))
        counts += np.array(t.outputs)
    freq = counts / sessions
    sd = np.sqrt(exact * (1 - exact) / sessions)
    assert np.all(np.abs(freq - exact) <= 3 * sd)
