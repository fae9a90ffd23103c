import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochavg.numerics import gaussian_expectation
from stochavg.processes import (FiniteMarkov, IIDGaussian, JointProcess, SampledOU,
                                TruncatedGaussian, gaussian_sine_moment, make_process,
                                substream, truncated_noise_mass)

N = 10**6


def _mc_close(samples, expected, k=3.0):
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    return abs(samples.mean() - expected) <= k * se + 1e-15


def clipped_abs(x):
    return np.minimum(np.abs(x), 1.0)


TEST_FUNCTIONS = [np.sin, lambda x: np.sin(x) ** 2, clipped_abs]


# -- next_sample examples -------------------------------------------------

def test_truncated_samples_in_bound():
    p = TruncatedGaussian(0.2, 1.0, seed=123)
    x = p.sample(N)
    assert x.min() >= -1.0 and x.max() <= 1.0
    for _ in range(100):
        assert -1.0 <= p.next_sample() <= 1.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 5), st.floats(0, 3), st.integers(0, 2**64 - 1))
def test_truncated_bound_property(s1, m, seed):
    x = TruncatedGaussian(s1, m, seed=seed).sample(2000)
    assert np.all(np.abs(x) <= m)


def test_symmetric_markov_mean():
    p = FiniteMarkov([[0.5, 0.5], [0.5, 0.5]], [-1.0, 1.0], seed=0)
    assert np.allclose(p.stationary, [0.5, 0.5], atol=1e-14)
    assert abs(p.sample(N).mean()) < 3e-3


def test_iid_gaussian_sin_mean():
    y = IIDGaussian(2.0, seed=5).sample(N)
    assert _mc_close(np.sin(y), 0.0)


def test_next_sample_matches_block():
    a = SampledOU(1.5, 0.7, 0.1, seed=9)
    b = SampledOU(1.5, 0.7, 0.1, seed=9)
    one = np.array([a.next_sample() for _ in range(50)])
    assert np.array_equal(one, b.sample(50))
    m1 = FiniteMarkov([[0.1, 0.9], [0.6, 0.4]], [0.0, 3.0], seed=4)
    m2 = FiniteMarkov([[0.1, 0.9], [0.6, 0.4]], [0.0, 3.0], seed=4)
    assert np.array_equal([m1.next_sample() for _ in range(50)], m2.sample(50))


# -- construction checks --------------------------------------------------

def test_markov_rejects_bad_rows():
    with pytest.raises(ValueError):
        FiniteMarkov([[0.5, 0.5 + 1e-9], [0.5, 0.5]], [0, 1])


def test_markov_accepts_rows_within_tolerance():
    FiniteMarkov([[0.5, 0.5 + 1e-13], [0.5, 0.5]], [0, 1])


def test_markov_rejects_reducible():
    with pytest.raises(ValueError, match="irreducible"):
        FiniteMarkov([[1.0, 0.0], [0.5, 0.5]], [0, 1])


def test_markov_rejects_periodic():
    with pytest.raises(ValueError, match="periodic"):
        FiniteMarkov([[0.0, 1.0], [1.0, 0.0]], [0, 1])
    # period 3 cycle
    with pytest.raises(ValueError, match="periodic"):
        FiniteMarkov([[0, 1, 0], [0, 0, 1], [1, 0, 0]], [0, 1, 2])


def test_markov_aperiodic_with_odd_and_even_cycles():
    # cycles of length 2 and 3 -> gcd 1
    FiniteMarkov([[0, 1, 0], [0.5, 0, 0.5], [1, 0, 0]], [0, 1, 2])


def test_markov_stationary_solves_balance():
    p = np.array([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.0, 0.4, 0.6]])
    m = FiniteMarkov(p, [1, 2, 3])
    assert np.allclose(m.stationary @ p, m.stationary, atol=1e-14)
    assert m.stationary.sum() == pytest.approx(1.0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        IIDGaussian(0.0)
    with pytest.raises(ValueError):
        TruncatedGaussian(0.2, -1)
    with pytest.raises(ValueError):
        SampledOU(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SampledOU(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        substream(-1)
    with pytest.raises(ValueError):
        substream(2**64)


# -- ergodic averages against the declared invariant law -----------------

def _processes():
    return [
        IIDGaussian(2.0, seed=1),
        TruncatedGaussian(0.7, 1.0, seed=2),
        FiniteMarkov([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.0, 0.4, 0.6]], [-1.0, 0.5, 2.0],
                     seed=3),
        SampledOU(2.0, 1.5, 0.5, seed=4),
    ]


@pytest.mark.parametrize("proc", _processes(), ids=lambda p: p.kind)
@pytest.mark.parametrize("fi", range(3), ids=["sin", "sin2", "clipabs"])
def test_time_average_matches_invariant(proc, fi):
    fn = TEST_FUNCTIONS[fi]
    y = fn(proc.spawn(1).sample(N))
    target = proc.expect(fn)
    if isinstance(proc, (FiniteMarkov, SampledOU)):
        # correlated samples: batch-means standard error
        b = y.reshape(1000, -1).mean(axis=1)
        se = b.std(ddof=1) / math.sqrt(len(b))
        assert abs(y.mean() - target) <= 3 * se + 1e-15
    else:
        assert _mc_close(y, target)


def test_ou_stationary_variance():
    p = SampledOU(2.0, 1.5, 0.5, seed=11)
    assert p.stationary_std == pytest.approx(1.5 / 2.0)
    y = p.sample(N)
    assert y.var() == pytest.approx(0.5625, rel=0.02)
    # lag-one autocorrelation equals exp(-rate * period)
    r1 = np.corrcoef(y[:-1], y[1:])[0, 1]
    assert r1 == pytest.approx(math.exp(-1.0), abs=0.01)


def test_truncated_expectation_includes_atoms():
    m = 0.5
    p = TruncatedGaussian(1.0, m)
    # E[clip(Z, -m, m)^2] = (2 Phi(m) - 1) - 2 m phi(m) + 2 m^2 Phi-bar(m)
    phi = math.exp(-m * m / 2) / math.sqrt(2 * math.pi)
    tail = 0.5 * math.erfc(m / math.sqrt(2))
    exact = (1 - 2 * tail) - 2 * m * phi + 2 * m * m * tail
    assert p.expect(lambda x: x ** 2) == pytest.approx(exact, abs=1e-12)
    assert p.expect(lambda x: x) == pytest.approx(0.0, abs=1e-14)


def test_expect_handles_kinked_function():
    # E min(|Y|, 1) for Y ~ N(0, 1) = 2 (phi(0) - phi(1)) + 2 Phi-bar(1)
    phi0, phi1 = 1 / math.sqrt(2 * math.pi), math.exp(-0.5) / math.sqrt(2 * math.pi)
    exact = 2 * (phi0 - phi1) + math.erfc(1 / math.sqrt(2))
    assert IIDGaussian(1.0).expect(clipped_abs) == pytest.approx(exact, abs=1e-10)


# -- reproducibility ------------------------------------------------------

@pytest.mark.parametrize("proc", _processes(), ids=lambda p: p.kind)
def test_equal_seeds_identical(proc):
    a = proc.spawn(3).sample(10**4)
    b = proc.spawn(3).sample(10**4)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("proc", _processes(), ids=lambda p: p.kind)
def test_different_seeds_uncorrelated(proc):
    a = proc.spawn(0).sample(10**4)
    b = proc.spawn(1).sample(10**4)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_substream_independent_keys():
    a = substream(42, 0).normal(size=10**4)
    b = substream(42, 1).normal(size=10**4)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert np.array_equal(a, substream(42, 0).normal(size=10**4))


def test_joint_process_components_independent():
    j = JointProcess(IIDGaussian(1.0, seed=5, keys=(0,)), TruncatedGaussian(1.0, 2.0, seed=5,
                                                                               keys=(1,)))
    y = j.sample(10**4)
    assert y.shape == (10**4, 2)
    assert abs(np.corrcoef(y[:, 0], y[:, 1])[0, 1]) < 0.05
    assert np.array_equal(j.spawn(2).sample(5), j.spawn(2).sample(5))


def test_make_process_roundtrip():
    for proc in _processes():
        d = proc.to_dict()
        clone = make_process(d)
        assert np.array_equal(clone.sample(100), proc.spawn().sample(100))


def test_make_process_joint_and_unknown():
    j = make_process({"kind": "joint", "components": [{"kind": "iid-gaussian", "sigma": 1.0},
                                                      {"kind": "truncated-gaussian",
                                                       "sigma1": 0.2, "bound": 1.0}]}, seed=3)
    assert j.sample(4).shape == (4, 2)
    with pytest.raises(ValueError):
        make_process({"kind": "levy"})


# -- sine moments ---------------------------------------------------------

def test_sine_moment_examples():
    assert gaussian_sine_moment(2.0, 1) == 0.0
    assert gaussian_sine_moment(2.0, 3) == 0.0
    assert gaussian_sine_moment(2.0, 2) == pytest.approx(0.49983226868604874, rel=1e-15)
    assert gaussian_sine_moment(1.0, 4) == pytest.approx(0.30737429121018145, rel=1e-15)
    assert gaussian_sine_moment(1e-8, 2) < 1e-15


def test_sine_moment_errors():
    with pytest.raises(ValueError):
        gaussian_sine_moment(1.0, 5)
    with pytest.raises(ValueError):
        gaussian_sine_moment(0.0, 2)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_sine_moment_quadrature(sigma, order):
    quad = gaussian_expectation(lambda y: np.sin(y) ** order, sigma)
    assert abs(quad - gaussian_sine_moment(sigma, order)) < 1e-12


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_sine_moment_monte_carlo(sigma):
    v = IIDGaussian(sigma, seed=17).sample(N)
    assert _mc_close(np.sin(v) ** 2, gaussian_sine_moment(sigma, 2))


def test_truncated_noise_mass():
    up, down = truncated_noise_mass(0.2, 1.0)
    assert up == down
    assert up == pytest.approx(2.866515718791933e-07, rel=1e-12)
    assert truncated_noise_mass(1.0, 1e3) == (0.0, 0.0)
    up, down = truncated_noise_mass(1.0, 1e-12)
    assert up == pytest.approx(0.5, abs=1e-10)
    with pytest.raises(ValueError):
        truncated_noise_mass(1.0, 0.0)
