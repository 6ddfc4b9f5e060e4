"""Shared fixtures: small schedules, stub denoisers, hypothesis profile."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from invlab import (
    Condition,
    ConstantDenoiser,
    LinearGaussianDenoiser,
    ScalingDenoiser,
    make_linear_schedule,
    make_uniform_grid,
)

settings.register_profile(
    "invlab",
    deadline=None,
    derandomize=True,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("invlab")


@pytest.fixture
def toy3():
    """Three-step schedule with constant beta 0.1; alpha_bars 0.9, 0.81, 0.729."""
    return make_linear_schedule(3, 0.1, 0.1)


@pytest.fixture
def default_sched():
    return make_linear_schedule(100, 1e-4, 0.05)


@pytest.fixture
def uncond():
    return Condition.unconditional()


@pytest.fixture
def stub0():
    return ConstantDenoiser(1, 0.0)


@pytest.fixture
def stub_half():
    return ScalingDenoiser(1, 0.5)


@pytest.fixture
def unit_gauss1(toy3):
    """Standard normal data prior in one dimension."""
    return LinearGaussianDenoiser(np.zeros(1), np.eye(1), toy3)


@pytest.fixture
def gauss_nd(default_sched):
    """Anisotropic 4-d Gaussian prior with a dense covariance."""
    rng = np.random.default_rng(7)
    a = rng.standard_normal((4, 4))
    sigma = a @ a.T + 0.5 * np.eye(4)
    mu = rng.standard_normal(4)
    return LinearGaussianDenoiser(mu, sigma, default_sched)


@pytest.fixture
def grid50(default_sched):
    return make_uniform_grid(default_sched, 50)
