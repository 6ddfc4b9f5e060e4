"""Forward noising and the deterministic backward/forward transition maps."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invlab import (
    Condition,
    ConstantDenoiser,
    DimensionError,
    InvalidParameterError,
    MissingNoiseError,
    ScalingDenoiser,
    TimestepGrid,
    coefficients,
    ddim_invert_step,
    ddim_invert_trajectory,
    forward_noise,
    forward_step,
    generate_step,
    generate_trajectory,
    make_linear_schedule,
    make_uniform_grid,
)

ONE = np.array([1.0])


def test_forward_noise_hand_values(toy3):
    # sqrt(0.81)*1 + sqrt(0.19)*1 and the noise-free case, frozen
    assert forward_noise(toy3, ONE, 2, ONE)[0] == pytest.approx(1.3358898943540674, abs=1e-15)
    assert forward_noise(toy3, ONE, 2, np.zeros(1))[0] == pytest.approx(0.9, abs=1e-15)
    # t=0 is the identity jump
    np.testing.assert_array_equal(forward_noise(toy3, ONE, 0, np.zeros(1)), ONE)


def test_forward_step_chain_matches_closed_form(toy3):
    # noise-free Markov chain: z1 = sqrt(0.9), z2 = sqrt(0.81) = 0.9
    z1 = forward_step(toy3, ONE, 1, np.zeros(1))
    assert z1[0] == pytest.approx(0.9486832980505138, abs=1e-15)
    z2 = forward_step(toy3, z1, 2, np.zeros(1))
    assert z2[0] == pytest.approx(0.9, abs=1e-14)


def test_forward_step_pure_noise(toy3):
    got = forward_step(toy3, np.zeros(1), 2, ONE)
    assert got[0] == pytest.approx(np.sqrt(0.1), abs=1e-15)


def test_forward_shapes_must_agree(toy3):
    with pytest.raises(DimensionError):
        forward_noise(toy3, np.zeros(2), 1, np.zeros(3))
    with pytest.raises(DimensionError):
        forward_step(toy3, np.zeros(2), 1, np.zeros(3))


def test_iterated_steps_equal_closed_form(default_sched):
    # acceptance-style identity at unit scale: eps = 0 throughout
    rng = np.random.default_rng(0)
    z0 = rng.standard_normal(3)
    z = z0.copy()
    for t in range(1, 101):
        z = forward_step(default_sched, z, t, np.zeros(3))
        closed = forward_noise(default_sched, z0, t, np.zeros(3))
        np.testing.assert_allclose(z, closed, atol=1e-12)


def test_generate_step_stub_zero(toy3, stub0, uncond):
    got = generate_step(stub0, toy3, ONE, 2, 1, uncond)
    assert got[0] == pytest.approx(1.0540925533894598, abs=1e-15)


def test_invert_step_stub_zero(toy3, stub0, uncond):
    got = ddim_invert_step(stub0, toy3, ONE, 1, 2, uncond)
    assert got[0] == pytest.approx(0.9486832980505138, abs=1e-15)


def test_constant_model_steps_are_exact_inverses(toy3, uncond):
    m = ConstantDenoiser(1, 0.35)
    z = np.array([0.8])
    back = generate_step(m, toy3, z, 3, 1, uncond)
    again = ddim_invert_step(m, toy3, back, 1, 3, uncond)
    np.testing.assert_allclose(again, z, atol=1e-12)
    fwd = ddim_invert_step(m, toy3, z, 0, 2, uncond)
    down = generate_step(m, toy3, fwd, 2, 0, uncond)
    np.testing.assert_allclose(down, z, atol=1e-12)


def test_state_dependent_model_breaks_the_identity(toy3, unit_gauss1, uncond):
    # inversion evaluates at the target step, so the round trip has a gap
    z = np.array([0.8])
    up = ddim_invert_step(unit_gauss1, toy3, z, 0, 2, uncond)
    down = generate_step(unit_gauss1, toy3, up, 2, 0, uncond)
    assert abs(down[0] - z[0]) > 1e-6


def test_eta_requires_noise(toy3, stub0, uncond):
    with pytest.raises(MissingNoiseError):
        generate_step(stub0, toy3, ONE, 2, 1, uncond, eta=0.5)


def test_eta_zero_ignores_eps(toy3, stub0, uncond):
    a = generate_step(stub0, toy3, ONE, 2, 1, uncond, eta=0.0)
    b = generate_step(stub0, toy3, ONE, 2, 1, uncond, eta=0.0, eps=np.full(1, 9.9))
    np.testing.assert_array_equal(a, b)


def test_eta_one_adds_scaled_noise(toy3, stub_half, uncond):
    co = coefficients(toy3, 2, 1, eta=1.0)
    eps = np.array([2.0])
    got = generate_step(stub_half, toy3, ONE, 2, 1, uncond, eta=1.0, eps=eps)
    expect = co.phi * 1.0 + co.psi * 0.5 + co.sigma * 2.0
    assert got[0] == pytest.approx(expect, abs=1e-15)


def test_generation_trajectory_telescopes(toy3, stub0, uncond):
    grid = make_uniform_grid(toy3, 3)
    traj = generate_trajectory(stub0, toy3, grid, ONE, uncond)
    assert traj.direction == "generation"
    assert traj.timesteps() == (3, 2, 1, 0)
    # F == 0: z0 = z_T * prod(phi) = z_T / sqrt(abar_T)
    prod_phi = np.prod([coefficients(toy3, t, p).phi for p, t in grid.transitions()])
    assert traj.end[0] == pytest.approx(prod_phi, abs=1e-14)
    assert traj.end[0] == pytest.approx(1.0 / np.sqrt(toy3.alpha_bar(3)), abs=1e-12)


def test_inversion_trajectory_structure(toy3, stub0, uncond):
    grid = make_uniform_grid(toy3, 3)
    traj = ddim_invert_trajectory(stub0, toy3, grid, ONE, uncond)
    assert traj.direction == "inversion"
    assert traj.timesteps() == (0, 1, 2, 3)
    np.testing.assert_array_equal(traj.start, ONE)
    np.testing.assert_array_equal(traj.latent_at(0), ONE)
    with pytest.raises(InvalidParameterError):
        traj.latent_at(99)


def test_single_step_grid(toy3, stub0, uncond):
    grid = make_uniform_grid(toy3, 1)
    up = ddim_invert_trajectory(stub0, toy3, grid, ONE, uncond)
    assert up.timesteps() == (0, 3)
    down = generate_trajectory(stub0, toy3, grid, up.end, uncond)
    assert down.timesteps() == (3, 0)
    np.testing.assert_allclose(down.end, ONE, atol=1e-12)


def test_trajectory_determinism(default_sched, grid50, uncond):
    m = ScalingDenoiser(2, 0.3)
    z = np.array([0.4, -0.9])
    a = ddim_invert_trajectory(m, default_sched, grid50, z, uncond)
    b = ddim_invert_trajectory(m, default_sched, grid50, z, uncond)
    for (ta, za), (tb, zb) in zip(a.entries, b.entries):
        assert ta == tb
        np.testing.assert_array_equal(za, zb)


def test_empty_grid_rejected(toy3, stub0, uncond):
    with pytest.raises(InvalidParameterError):
        generate_trajectory(stub0, toy3, TimestepGrid(()), ONE, uncond)
    with pytest.raises(InvalidParameterError):
        ddim_invert_trajectory(stub0, toy3, TimestepGrid(()), ONE, uncond)


def test_trajectory_json_round_keys(toy3, stub0, uncond):
    traj = generate_trajectory(stub0, toy3, make_uniform_grid(toy3, 3), ONE, uncond)
    d = traj.to_json_dict()
    assert d["direction"] == "generation"
    assert d["grid"] == [1, 2, 3]
    assert [e["t"] for e in d["entries"]] == [3, 2, 1, 0]


def test_constant_model_full_sweep_round_trip(default_sched, grid50, uncond):
    m = ConstantDenoiser(3, -0.2)
    rng = np.random.default_rng(5)
    z0 = rng.standard_normal(3)
    up = ddim_invert_trajectory(m, default_sched, grid50, z0, uncond)
    down = generate_trajectory(m, default_sched, grid50, up.end, uncond)
    np.testing.assert_allclose(down.end, z0, atol=1e-10)


@given(st.integers(2, 99), st.floats(-2, 2), st.floats(-1, 1))
def test_single_constant_transition_invertible(t, z0, fval):
    sched = make_linear_schedule(100, 1e-4, 0.05)
    m = ConstantDenoiser(1, fval)
    c = Condition.unconditional()
    z = np.array([z0])
    up = ddim_invert_step(m, sched, z, t - 1, t, c)
    back = generate_step(m, sched, up, t, t - 1, c)
    np.testing.assert_allclose(back, z, atol=1e-10)
