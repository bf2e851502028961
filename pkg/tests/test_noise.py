from __future__ import annotations

import numpy as np
import pytest

from fdibench.errors import ContractViolation
from fdibench.noise import (NoiseFamily, NoiseModel, native_var, sample_noise,
                            sample_process_noise, std_to_native)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def scalar_model(family, scale):
    return NoiseModel(family, np.zeros((1, 1)), np.array([scale]))


def test_gaussian_zero_scale_is_exactly_zero():
    nm = scalar_model(NoiseFamily.GAUSSIAN, 0.0)
    v = sample_noise(nm, rng(), 4)
    assert np.all(v == 0.0)


def test_laplacian_variance_matches_2b2():
    b = 0.7
    draws = sample_noise(scalar_model(NoiseFamily.LAPLACIAN, b), rng(3), 200000)
    assert np.var(draws) == pytest.approx(2 * b * b, rel=0.03)


def test_exponential_shifted_mean_zero_var_quarter():
    lam = 2.0
    draws = sample_noise(scalar_model(NoiseFamily.EXPONENTIAL, lam), rng(11), 200000)
    se = np.std(draws) / np.sqrt(draws.size)
    assert abs(np.mean(draws)) < 3 * se
    assert np.var(draws) == pytest.approx(1.0 / lam**2, rel=0.03)


@pytest.mark.parametrize("family", list(NoiseFamily))
def test_sample_mean_within_three_standard_errors(family):
    nm = NoiseModel.from_std(family, 0.0, np.array([0.5]), n=1)
    draws = sample_noise(nm, rng(42), 100000)
    se = np.std(draws) / np.sqrt(draws.size)
    assert abs(np.mean(draws)) < 3 * se


@pytest.mark.parametrize("family", list(NoiseFamily))
def test_fixed_seed_reproduces_bit_exactly(family):
    nm = NoiseModel.from_std(family, 0.01, np.array([0.5, 0.5, 0.5]), n=2)
    a = sample_noise(nm, rng(123), 3)
    b = sample_noise(nm, rng(123), 3)
    assert np.array_equal(a, b)
    wa = sample_process_noise(nm, rng(9))
    wb = sample_process_noise(nm, rng(9))
    assert np.array_equal(wa, wb)


def test_std_to_native_round_trips_variance():
    for family in NoiseFamily:
        s = std_to_native(family, 0.5)
        assert native_var(family, s) == pytest.approx(0.25, rel=1e-12)


def test_negative_scale_rejected():
    with pytest.raises(ContractViolation):
        scalar_model(NoiseFamily.GAUSSIAN, -1.0)
    with pytest.raises(ContractViolation):
        scalar_model(NoiseFamily.EXPONENTIAL, 0.0)


def test_non_diagonal_q_rejected_for_heavy_tails():
    q = np.array([[1.0, 0.5], [0.5, 1.0]])
    with pytest.raises(ContractViolation):
        NoiseModel(NoiseFamily.LAPLACIAN, q, np.array([1.0]))
    # gaussian takes the same Q fine
    nm = NoiseModel(NoiseFamily.GAUSSIAN, q, np.array([1.0]))
    w = sample_process_noise(nm, rng(1))
    assert w.shape == (2,)


def test_process_noise_covariance_matches_q():
    q = np.diag([0.04, 0.0, 0.09])
    nm = NoiseModel(NoiseFamily.EXPONENTIAL, q, np.array([1.0]))
    g = rng(5)
    draws = np.stack([sample_process_noise(nm, g) for _ in range(30000)])
    assert np.all(draws[:, 1] == 0.0)
    assert np.var(draws[:, 0]) == pytest.approx(0.04, rel=0.06)
    assert np.var(draws[:, 2]) == pytest.approx(0.09, rel=0.06)


def test_meas_cov_uses_family_variance():
    nm = NoiseModel.from_std(NoiseFamily.LAPLACIAN, 0.0, np.array([0.5, 0.05]), n=1)
    r = nm.meas_cov()
    assert np.allclose(np.diag(r), [0.25, 0.0025])
    assert np.count_nonzero(r - np.diag(np.diag(r))) == 0


def test_dim_mismatch_rejected():
    nm = NoiseModel.from_std(NoiseFamily.GAUSSIAN, 0.0, np.array([1.0, 2.0]), n=1)
    with pytest.raises(ContractViolation):
        sample_noise(nm, rng(), 3)
