import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from applications import giga_hamamuki, one_d_gap
from hamiltonian_core import FacetFamily, FluxLimiter, Side, SideHamiltonian
from junction_pde import JunctionScheme, SchemeKind, solve_evolution
from solver_errors import (AdmissibilityError, ConfigurationError, DegeneratePairError,
                           NotStraddlingError, SpanError)
from trajectory_control import (InterfaceControl, JunctionControl, PolicyMode, SideControl,
                                cost_of_trajectory, dpp_residual, greedy_policy,
                                integrate_trajectory, interface_weights, junction_admissible_set,
                                resolve_control, trajectory_frame, value_iteration)


@pytest.fixture
def gh():
    return giga_hamamuki().problem


@pytest.fixture
def gap():
    return one_d_gap().problem


def test_interface_weights():
    mu1, mu2 = interface_weights(-1.0, 2.0)
    assert mu1 == pytest.approx(2.0 / 3.0)
    assert mu2 == pytest.approx(1.0 / 3.0)
    with pytest.raises(DegeneratePairError):
        interface_weights(1.0, 1.0)
    with pytest.raises(NotStraddlingError):
        interface_weights(1.0, 2.0)


def test_side_controls_checked(gh):
    assert resolve_control(gh, SideControl(Side.RIGHT, 0), 0.5, 0.0) == (-1.0, 0.0, 1.0)
    with pytest.raises(AdmissibilityError):
        resolve_control(gh, SideControl(Side.LEFT, 0), 0.5, 0.0)
    # leftward right-side velocity would leave the right edge at x = 0
    with pytest.raises(AdmissibilityError):
        resolve_control(gh, SideControl(Side.RIGHT, 0), 0.0, 0.0)
    with pytest.raises(AdmissibilityError):
        resolve_control(gh, SideControl(Side.JUNCTION, 0), 0.0, 0.0)
    with pytest.raises(AdmissibilityError):
        resolve_control(gh, SideControl(Side.RIGHT, 7), 0.5, 0.0)


def test_junction_and_mixture_controls(gap):
    with pytest.raises(AdmissibilityError):
        resolve_control(gap, JunctionControl(0), 0.1, 0.0)
    pull_pull = InterfaceControl((Side.RIGHT, 2), (Side.LEFT, 0))
    assert resolve_control(gap, pull_pull, 0.0, 0.0) == pytest.approx((0.0, 1.0, 0.0))
    with pytest.raises(AdmissibilityError):
        resolve_control(gap, InterfaceControl((Side.RIGHT, 2), (Side.LEFT, 0), mu=0.9), 0.0, 0.0)
    with pytest.raises(AdmissibilityError):
        resolve_control(gap, pull_pull, 0.2, 0.0)


def test_path_lands_on_junction(gh):
    def policy(t, x):
        return SideControl(Side.RIGHT, 0) if x > 0 else JunctionControl(0)

    traj = integrate_trajectory(gh, policy, 0.25, dt=0.1)
    assert 0.0 in traj.states
    assert traj.states[-1] == 0.0
    assert traj.times[-1] == pytest.approx(1.0)
    assert cost_of_trajectory(traj, lambda x: np.zeros_like(x), 1.0) == pytest.approx(0.25)


def test_short_trajectory_rejected(gh):
    traj = integrate_trajectory(gh, lambda t, x: SideControl(Side.RIGHT, 1), 0.5, dt=0.1,
                                duration=0.3)
    with pytest.raises(SpanError):
        cost_of_trajectory(traj, lambda x: np.zeros_like(x), 1.0)


def test_discount_enters_cost(gap):
    traj = integrate_trajectory(gap, lambda t, x: InterfaceControl((Side.RIGHT, 1), (Side.LEFT, 1), 0.5),
                                0.0, dt=0.01, duration=1.0)
    # the regular hold costs 1 per unit time at discount rate 1
    assert traj.discounts[-1] == pytest.approx(1.0)
    assert traj.costs[-1] == pytest.approx(1.0 - math.exp(-1.0), abs=1e-4)


def test_trajectory_frame_columns(gh):
    traj = integrate_trajectory(gh, lambda t, x: SideControl(Side.RIGHT, 2), 0.5, dt=0.25)
    frame = trajectory_frame(traj)
    assert isinstance(frame, pd.DataFrame)
    assert list(frame.columns) == ['t', 'X', 'D', 'L']
    assert frame['X'].iloc[-1] == pytest.approx(1.5)


def test_admissible_set_modes(gap):
    every = junction_admissible_set(gap, PolicyMode.ALL)
    regular = junction_admissible_set(gap, PolicyMode.REGULAR)
    hold_all = every.l[np.abs(every.b) < 1e-12]
    hold_regular = regular.l[np.abs(regular.b) < 1e-12]
    assert hold_all.min() == pytest.approx(0.0)
    assert hold_regular.min() == pytest.approx(1.0)
    assert every.origin.shape == (every.size, 4)


def test_admissible_set_needs_control_form(gap):
    with pytest.raises(ConfigurationError):
        junction_admissible_set(replace(gap, junction=FluxLimiter.kirchhoff()), PolicyMode.ALL)


def test_value_iteration_separates_gap(gap):
    lower = value_iteration(gap, PolicyMode.ALL, 0.01)
    upper = value_iteration(gap, PolicyMode.REGULAR, 0.01)
    assert lower.value(0.0, 1.0) == pytest.approx(0.0, abs=0.02)
    assert upper.value(0.0, 1.0) == pytest.approx(1.0 - math.exp(-1.0), abs=0.02)
    assert np.all(lower.values[-1] <= upper.values[-1] + 2 * 0.01)


def test_value_iteration_checks_time_step(gap):
    with pytest.raises(ConfigurationError):
        value_iteration(gap, 'all', 0.01, dt=0.05)


def test_value_iteration_reproduces_giga_hamamuki(gh):
    stack = value_iteration(gh, 'all', 0.02)
    x = stack.grid.nodes
    mask = np.abs(x) <= 2.0
    assert np.max(np.abs(stack.values[-1][mask] - np.minimum(np.abs(x[mask]), 1.0))) <= 0.02


def test_dpp_residual_vanishes_on_value_iteration(gap):
    stack = value_iteration(gap, 'regular', 0.02)
    theta = float(stack.times[1] - stack.times[0])
    points = [(x, stack.times[n]) for x in (-0.5, -0.2, 0.0, 0.3, 0.62) for n in (5, 20, 50)]
    assert dpp_residual(stack, gap, points, theta, mode='regular') <= 1e-9


def test_greedy_policy_recovers_value(gh):
    stack = value_iteration(gh, 'all', 0.01)
    policy = greedy_policy(stack, gh, 'all')
    traj = integrate_trajectory(gh, policy, 0.5, dt=0.01)
    cost = cost_of_trajectory(traj, lambda x: np.zeros_like(x), 1.0)
    assert cost == pytest.approx(0.5, abs=0.03)


@pytest.fixture
def gh_rising_cost(gh):
    """Giga-Hamamuki with running cost 1 + t; far from the junction U(x, t) = t + t^2/2"""
    fam = FacetFamily([-1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0],
                      cost_shift=lambda x, t: t)
    return replace(gh, right=SideHamiltonian(Side.RIGHT, facets=fam),
                   left=SideHamiltonian(Side.LEFT, facets=fam))


def test_value_iteration_follows_time_dependent_cost(gh_rising_cost):
    dx = 0.01
    stack = value_iteration(gh_rising_cost, 'all', dx)
    assert stack.value(2.0, 1.0) == pytest.approx(1.5, abs=2 * dx)
    assert stack.value(-2.0, 1.0) == pytest.approx(1.5, abs=2 * dx)
    # junction controls are free, so the junction value stays 0
    assert stack.value(0.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    pde = solve_evolution(gh_rising_cost,
                          JunctionScheme(SchemeKind.FLUX_LIMITED, gh_rising_cost.junction), dx)
    assert pde.value(2.0, 1.0) == pytest.approx(stack.value(2.0, 1.0), abs=2 * dx)


def test_dpp_and_greedy_path_with_time_dependent_cost(gh_rising_cost):
    stack = value_iteration(gh_rising_cost, 'all', 0.02)
    theta = float(stack.times[1] - stack.times[0])
    points = [(x, stack.times[n]) for x in (-1.5, 0.0, 0.4, 2.0) for n in (5, 25, 50)]
    assert dpp_residual(stack, gh_rising_cost, points, theta) <= 1e-9

    policy = greedy_policy(stack, gh_rising_cost, 'all')
    traj = integrate_trajectory(gh_rising_cost, policy, 2.0, dt=0.02, value_time=1.0)
    assert cost_of_trajectory(traj, lambda x: np.zeros_like(x), 1.0) == pytest.approx(1.5, abs=0.03)


@pytest.mark.parametrize("x0", [-0.7, 0.0, 0.35, 1.2])
def test_greedy_paths_are_lipschitz_and_discount_grows(gap, x0):
    stack = value_iteration(gap, 'regular', 0.02)
    policy = greedy_policy(stack, gap, 'regular')
    traj = integrate_trajectory(gap, policy, x0, dt=0.02)
    steps = np.diff(traj.times)
    assert np.all(steps >= 0)
    assert np.all(np.abs(np.diff(traj.states)) <= gap.speed * steps + 1e-12)
    assert np.all(np.diff(traj.discounts) >= 0.0)
    assert np.all(np.diff(traj.discounts) <= gap.max_discount * steps + 1e-12)


@pytest.mark.parametrize("mode", ['all', 'regular'])
def test_value_iteration_monotone_in_initial_data(gap, rng, mode):
    knots = np.linspace(-3.0, 3.0, 13)
    bump_values = rng.uniform(0.0, 0.5, size=knots.size)
    base = gap.initial_data
    raised = replace(gap, initial_data=lambda x: base(x) + np.interp(x, knots, bump_values))
    lower = value_iteration(gap, mode, 0.05)
    upper = value_iteration(raised, mode, 0.05)
    assert np.all(upper.values >= lower.values - 1e-12)
    # a constant lift c is carried with weight exp(-t) at most
    shifted = value_iteration(replace(gap, initial_data=lambda x: base(x) + 0.3), mode, 0.05)
    assert np.all(shifted.values - lower.values <= 0.3 + 1e-12)
