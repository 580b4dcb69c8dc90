import math

import numpy as np
import pytest

from typstab.concentration import (
    STANDARD_BERNSTEIN,
    ConcentrationFunction,
    alpha_for,
    certify_concentration,
    gamma_of,
)
from typstab.core import DataDistribution, DeltaSensitive, Subgaussian, linear_query, mean_query
from typstab.errors import ArgumentError, ConfigurationError, InfeasibleError

CLOSED_FORMS = [
    ConcentrationFunction.mcdiarmid(0.01, 100),
    ConcentrationFunction.subgaussian(0.7),
    ConcentrationFunction.subexponential(1.0, 0.2),
    ConcentrationFunction.subexponential(1.0, 0.2, STANDARD_BERNSTEIN),
]


def test_gamma_examples():
    assert gamma_of(ConcentrationFunction.mcdiarmid(0.01, 100), 0.1) == pytest.approx(2.0, rel=1e-12)
    assert gamma_of(ConcentrationFunction.subgaussian(1.0), 0.0) == 0.0
    assert gamma_of(ConcentrationFunction.subgaussian(1.0), 2.0) == 2.0


def test_subexponential_variants():
    as_stated = ConcentrationFunction.subexponential(1.0, 0.5)
    bern = ConcentrationFunction.subexponential(1.0, 0.5, STANDARD_BERNSTEIN)
    assert gamma_of(as_stated, 0.5) == gamma_of(bern, 0.5) == 0.125
    assert gamma_of(as_stated, 10.0) == 2.0
    assert gamma_of(bern, 10.0) == 10.0
    with pytest.raises(InfeasibleError):
        alpha_for(as_stated, math.exp(-3))
    assert alpha_for(bern, math.exp(-3)) == pytest.approx(3.0, rel=1e-12)


def test_alpha_examples():
    assert alpha_for(ConcentrationFunction.subgaussian(0.5), math.exp(-8)) == pytest.approx(2.0, rel=1e-12)
    assert alpha_for(ConcentrationFunction.mcdiarmid(1.0, 4), math.exp(-2)) == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("f", CLOSED_FORMS)
@pytest.mark.parametrize("nu", [0.5, 0.1, 1e-3, 0.15])
def test_alpha_is_the_infimum(f, nu):
    a = alpha_for(f, nu)
    target = math.log(1 / nu)
    assert gamma_of(f, a) >= target
    assert gamma_of(f, a * (1 - 1e-6)) < target


@pytest.mark.parametrize("f", CLOSED_FORMS)
def test_gamma_monotone_and_zero_at_origin(f):
    grid = np.linspace(0, 10, 100)
    values = [gamma_of(f, a) for a in grid]
    assert values[0] == 0.0
    assert all(v >= 0 for v in values)
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_custom_table_bisection():
    f = ConcentrationFunction.custom([0.0, 1.0, 2.0, 4.0], [0.0, 0.5, 3.0, 10.0])
    a = alpha_for(f, math.exp(-2.0))
    assert gamma_of(f, a) >= 2.0
    assert a == pytest.approx(1.6, rel=1e-9)
    with pytest.raises(InfeasibleError):
        alpha_for(f, math.exp(-11))
    with pytest.raises(ArgumentError):
        ConcentrationFunction.custom([0.0, 1.0], [1.0, 0.5])


def test_argument_errors():
    with pytest.raises(ArgumentError):
        gamma_of(ConcentrationFunction.subgaussian(1.0), -0.1)
    for nu in (0.0, 1.0, -0.5):
        with pytest.raises(ArgumentError):
            alpha_for(ConcentrationFunction.subgaussian(1.0), nu)
    with pytest.raises(ArgumentError):
        ConcentrationFunction.subgaussian(0.0)


def test_for_query():
    assert ConcentrationFunction.for_query(mean_query(10, class_params=Subgaussian(0.2))) == ConcentrationFunction.subgaussian(0.2)
    q = mean_query(10, class_params=DeltaSensitive(0.1))
    assert ConcentrationFunction.for_query(q, 10) == ConcentrationFunction.mcdiarmid(0.1, 10)
    with pytest.raises(ConfigurationError):
        ConcentrationFunction.for_query(mean_query(10))


def test_alpha_non_increasing_in_nu():
    for f in CLOSED_FORMS:
        alphas = [alpha_for(f, nu) for nu in np.geomspace(0.1, 0.99, 40)]
        assert all(b <= a for a, b in zip(alphas, alphas[1:]))


def test_subgaussian_certificate_is_weaker_than_mcdiarmid():
    for delta, n in ((0.01, 100), (0.5, 7), (2.0, 30)):
        sub = ConcentrationFunction.subgaussian(delta * math.sqrt(n) / 2)
        mcd = ConcentrationFunction.mcdiarmid(delta, n)
        for a in np.linspace(0, 5, 50):
            assert gamma_of(sub, a) <= gamma_of(mcd, a) * (1 + 1e-12)


def test_certify_bernoulli_mean():
    dist = DataDistribution.iid_bernoulli(0.5, 100)
    report = certify_concentration(dist, mean_query(100), ConcentrationFunction.mcdiarmid(0.01, 100),
                                   [0.05, 0.1, 0.2], trials=100_000, seed=1)
    assert report.passed
    assert report.mu == 0.5


def test_certify_gaussian_sum():
    dist = DataDistribution.iid_gaussian(0.0, 1.0, 25)
    q = linear_query("gsum", np.ones(25), class_params=Subgaussian(5.0))
    report = certify_concentration(dist, q, ConcentrationFunction.subgaussian(5.0), [2.0, 5.0, 10.0], 100_000, seed=2)
    assert report.passed
    # the exact tail erfc(a/(5 sqrt 2)) sits inside the reported interval
    for row in report.rows:
        exact = math.erfc(row.alpha / (5 * math.sqrt(2)))
        assert row.ci_low - 1e-3 <= exact <= row.ci_high + 1e-3


def test_certify_constant_query():
    dist = DataDistribution.iid_gaussian(0.0, 1.0, 5)
    q = linear_query("const", np.zeros(5), offset=3.0)
    report = certify_concentration(dist, q, ConcentrationFunction.subgaussian(0.01), [1e-3, 0.1], 10_000, seed=3)
    assert report.passed and all(r.exceed_frequency == 0 for r in report.rows)


def test_certify_detects_a_false_certificate():
    dist = DataDistribution.iid_gaussian(0.0, 1.0, 25)
    q = linear_query("gsum", np.ones(25))
    report = certify_concentration(dist, q, ConcentrationFunction.subgaussian(1.0), [2.0, 5.0], 20_000, seed=4)
    assert not report.passed


def test_certify_requires_enough_trials():
    with pytest.raises(ArgumentError):
        certify_concentration(DataDistribution.iid_bernoulli(0.5, 3), mean_query(3),
                              ConcentrationFunction.subgaussian(1.0), [0.1], trials=100)
