#!/usr/bin/env python3
"""
Controlled trajectories across the junction and the value functions U^- / U^+.

Trajectories follow X' = b with discount D' = c and cost L' = l*exp(-D).
A trajectory sitting on the junction uses a zero-velocity (Filippov)
combination of two side controls, or a junction-only control. Value
functions are computed by a backward semi-Lagrangian dynamic programming
scheme; the junction node admits all tangential combinations (U^-) or only
the push-push ones (U^+).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from grids import SolutionStack, UniformGrid
from hamiltonian_core import (SIDE_FROM_CODE, ZERO_VELOCITY, FacetFamily, FluxLimiter,
                              LimiterKind, RestrictMode, Side, SideHamiltonian,
                              balance_weights, restrict_facets)
from solver_errors import (AdmissibilityError, ConfigurationError, DegeneratePairError,
                           DomainError, NotStraddlingError, SpanError)

logger = logging.getLogger(__name__)


class PolicyMode(Enum):
    ALL = 'all'
    REGULAR = 'regular'


@dataclass(frozen=True, eq=False)
class JunctionProblem:
    """
    Two-sided (or half-line) junction problem.

    ``left`` is None for half-line problems on [0, x_max]; the junction node
    is then a boundary node carrying the junction controls.
    """
    right: SideHamiltonian
    left: Optional[SideHamiltonian]
    junction: FluxLimiter
    initial_data: Callable[[np.ndarray], np.ndarray]
    horizon: float
    window: Tuple[float, float]
    name: str = ''
    m_bound: Optional[float] = None

    def __post_init__(self):
        if self.horizon <= 0:
            raise DomainError("horizon must be positive")
        x_min, x_max = self.window
        if self.left is None:
            if x_min != 0.0 or x_max <= 0:
                raise DomainError("half-line problems live on [0, x_max]")
        elif not (x_min < 0.0 < x_max):
            raise DomainError("window must contain the junction in its interior")
        if self.right.side is not Side.RIGHT or (self.left is not None and
                                                 self.left.side is not Side.LEFT):
            raise DomainError("side tags do not match their slots")
        for H in self.sides():
            if not H.is_facets:
                raise DomainError("solvers need facet sides; convert profiles with profile_to_facets")
        if self.m_bound is not None and self.bound > self.m_bound:
            raise DomainError(f"facet data exceed M_bound={self.m_bound}")

    def sides(self) -> List[SideHamiltonian]:
        return [self.right] if self.left is None else [self.right, self.left]

    @property
    def is_half_line(self) -> bool:
        return self.left is None

    @property
    def speed(self) -> float:
        return max(H.facets.speed for H in self.sides())

    @property
    def max_discount(self) -> float:
        values = [H.facets.max_discount for H in self.sides()]
        if self.junction.facets is not None:
            values.append(self.junction.facets.max_discount)
        return max(0.0, *values)

    @property
    def bound(self) -> float:
        return max(H.facets.bound for H in self.sides())

    def family(self, side: Side) -> FacetFamily:
        if side is Side.RIGHT:
            return self.right.facets
        if side is Side.LEFT:
            if self.left is None:
                raise AdmissibilityError("half-line problem has no left side")
            return self.left.facets
        return self.junction.junction_facets()

    @property
    def time_dependent(self) -> bool:
        return any(H.facets.cost_shift is not None for H in self.sides())

    def left_at_junction(self, t: float = 0.0) -> FacetFamily:
        return FacetFamily.empty() if self.left is None else self.left.facets.at(0.0, t)


@dataclass(frozen=True)
class SideControl:
    side: Side
    index: int


@dataclass(frozen=True)
class InterfaceControl:
    """Zero-velocity mixture of two side controls; ``mu`` weights the first"""
    first: Tuple[Side, int]
    second: Tuple[Side, int]
    mu: Optional[float] = None


@dataclass(frozen=True)
class JunctionControl:
    index: int


Control = Union[SideControl, InterfaceControl, JunctionControl]
Policy = Callable[[float, float], Control]


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    discounts: np.ndarray
    costs: np.ndarray
    controls: List[Control] = field(default_factory=list)

    def __post_init__(self):
        n = self.times.shape[0]
        if not (self.states.shape[0] == self.discounts.shape[0] == self.costs.shape[0] == n):
            raise DomainError("trajectory arrays must share one length")


def interface_weights(b1: float, b2: float) -> Tuple[float, float]:
    """
    Weights balancing two velocities on the junction.

    Returns:
        (mu1, mu2) with mu1*b1 + mu2*b2 = 0 and 0 <= mu_i <= 1
    """
    if b1 == b2:
        raise DegeneratePairError(f"velocities coincide ({b1})")
    if b1 * b2 > 0:
        raise NotStraddlingError(f"velocities {b1} and {b2} point to the same side")
    mu1, mu2 = balance_weights(b1, b2)
    return float(mu1), float(mu2)


def _facet_at(problem: JunctionProblem, side: Side, index: int, x: float,
              t: float) -> Tuple[float, float, float]:
    fam = problem.family(side)
    if not 0 <= index < fam.size:
        raise AdmissibilityError(f"{side.value} control {index} does not exist")
    b, c, l = fam.arrays_at(np.array([x]), t)
    return float(b[index, 0]), float(c[index, 0]), float(l[index, 0])


def resolve_control(problem: JunctionProblem, control: Control, x: float,
                    t: float) -> Tuple[float, float, float]:
    """(b, c, l) of a control used at (x, t), checked for admissibility"""
    if isinstance(control, SideControl):
        if control.side is Side.JUNCTION:
            raise AdmissibilityError("junction controls use JunctionControl")
        b, c, l = _facet_at(problem, control.side, control.index, x, t)
        wrong_side = (x > 0 and control.side is Side.LEFT) or (x < 0 and control.side is Side.RIGHT)
        leaves_wrongly = x == 0 and ((control.side is Side.RIGHT and b < -ZERO_VELOCITY) or
                                     (control.side is Side.LEFT and b > ZERO_VELOCITY))
        if wrong_side or leaves_wrongly:
            raise AdmissibilityError(f"{control.side.value} control {control.index} used at x={x}")
    elif isinstance(control, JunctionControl):
        if x != 0:
            raise AdmissibilityError("junction control used away from the junction")
        b, c, l = _facet_at(problem, Side.JUNCTION, control.index, 0.0, t)
    else:
        if x != 0:
            raise AdmissibilityError("interface mixture used away from the junction")
        b1, c1, l1 = _facet_at(problem, control.first[0], control.first[1], 0.0, t)
        b2, c2, l2 = _facet_at(problem, control.second[0], control.second[1], 0.0, t)
        if control.mu is not None:
            mu1 = control.mu
            if abs(mu1 * b1 + (1.0 - mu1) * b2) > 1e-9 or not 0.0 <= mu1 <= 1.0:
                raise AdmissibilityError("mixture weight does not cancel the velocities")
        else:
            mu1, _ = interface_weights(b1, b2)
        b, c, l = 0.0, mu1 * c1 + (1.0 - mu1) * c2, mu1 * l1 + (1.0 - mu1) * l2
    if problem.m_bound is not None and max(abs(b), abs(c), abs(l)) > problem.m_bound:
        raise AdmissibilityError(f"control {control} exceeds M_bound")
    return b, c, l


def integrate_trajectory(problem: JunctionProblem, policy: Policy, x0: float,
                         t0: float = 0.0, dt: float = 1e-3,
                         duration: Optional[float] = None,
                         value_time: Optional[float] = None) -> Trajectory:
    """
    Explicit Euler path of the controlled dynamics.

    A step that would cross the junction is cut at the crossing so the path
    lands exactly on 0 and the policy is asked again there. Costs are
    accumulated with the trapezoidal rule in exp(-D).

    Args:
        problem: Junction problem supplying the control sets
        policy: Map (t, x) -> control
        x0: Start position
        t0: Start time
        dt: Step
        duration: Length of the path, default horizon - t0
        value_time: When given, costs at path time s are read at value_time - s,
            the clock of a value function evaluated at value_time
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    duration = problem.horizon - t0 if duration is None else duration
    if value_time is None:
        clock = lambda s: t0 + s
    else:
        clock = lambda s: max(value_time - s, 0.0)
    times, states, discounts, costs = [0.0], [float(x0)], [0.0], [0.0]
    used: List[Control] = []
    s, x, D, L = 0.0, float(x0), 0.0, 0.0
    if abs(x) < 1e-12:
        x = 0.0
        states[0] = 0.0

    while s < duration - 1e-12:
        h = min(dt, duration - s)
        control = policy(t0 + s, x)
        b, c, l = resolve_control(problem, control, x, clock(s))
        x_new = x + b * h
        if x != 0.0 and b != 0.0 and (x * x_new < 0.0 or abs(x_new) <= 1e-13):
            h = -x / b
            x_new = 0.0
        l_end = l
        if isinstance(control, SideControl) and x_new != x:
            # cost at the step end; no admissibility check there, the path may stop on 0
            l_end = _facet_at(problem, control.side, control.index, x_new, clock(s + h))[2]
        D_new = D + c * h
        L += 0.5 * h * (l * math.exp(-D) + l_end * math.exp(-D_new))
        s, x, D = s + h, x_new, D_new
        times.append(s)
        states.append(x)
        discounts.append(D)
        costs.append(L)
        used.append(control)

    return Trajectory(np.asarray(times), np.asarray(states), np.asarray(discounts),
                      np.asarray(costs), used)


def cost_of_trajectory(traj: Trajectory, terminal_cost: Callable[[np.ndarray], np.ndarray],
                       t: float) -> float:
    """L(t) + terminal_cost(X(t)) * exp(-D(t))"""
    if traj.times[-1] < t - 1e-12:
        raise SpanError(f"trajectory ends at {traj.times[-1]:.6g} < {t:.6g}")
    x = float(np.interp(t, traj.times, traj.states))
    D = float(np.interp(t, traj.times, traj.discounts))
    L = float(np.interp(t, traj.times, traj.costs))
    return L + float(np.asarray(terminal_cost(np.array([x])))[0]) * math.exp(-D)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    return pd.DataFrame({'t': traj.times, 'X': traj.states, 'D': traj.discounts,
                         'L': traj.costs})


def junction_admissible_set(problem: JunctionProblem, mode: PolicyMode,
                             t: float = 0.0) -> FacetFamily:
    """
    Controls available at the junction node at time t: velocities leaving into
    either side, the tangential combinations allowed by ``mode`` and the
    junction controls of the limiter. Origins identify the side controls used.
    """
    if problem.junction.kind is LimiterKind.GENERAL:
        raise ConfigurationError("a general junction function has no control form")
    right0 = problem.right.facets.at(0.0, t)
    left0 = problem.left_at_junction(t)
    restrict_mode = (RestrictMode.TANGENTIAL_ALL if mode is PolicyMode.ALL
                     else RestrictMode.TANGENTIAL_REGULAR)
    admissible = restrict_facets(left0, right0, RestrictMode.RIGHT_OUTGOING)
    admissible = admissible.concat(restrict_facets(left0, right0, RestrictMode.LEFT_OUTGOING))
    admissible = admissible.concat(restrict_facets(left0, right0, restrict_mode))
    junction_facets = problem.junction.junction_facets()
    if not junction_facets.is_empty:
        admissible = admissible.concat(junction_facets.tagged(Side.JUNCTION))
    return admissible


def _control_from_origin(row: np.ndarray, mu: float) -> Control:
    side_a, k_a, side_b, k_b = (int(v) for v in row)
    if SIDE_FROM_CODE[side_a] is Side.JUNCTION:
        return JunctionControl(k_a)
    if k_b < 0:
        return SideControl(SIDE_FROM_CODE[side_a], k_a)
    return InterfaceControl((SIDE_FROM_CODE[side_a], k_a), (SIDE_FROM_CODE[side_b], k_b), float(mu))


def _time_step(problem: JunctionProblem, dx: float, dt: Optional[float], cfl: float,
               horizon: float) -> Tuple[float, int]:
    speed, discount = problem.speed, problem.max_discount
    if dt is None:
        limits = [dx / speed if speed > 0 else horizon, 1.0 / discount if discount > 0 else horizon]
        dt = cfl * min(limits)
    steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    dt = horizon / steps
    if dt * speed > dx * (1.0 + 1e-9) or dt * discount > 1.0 + 1e-9:
        raise ConfigurationError(f"dt={dt:.3g} violates the CFL bound for dx={dx:.3g}")
    return dt, steps


def side_arrays(problem: JunctionProblem, grid: UniformGrid, t: float = 0.0):
    """(node mask, b, c, l) per side off the junction, the arrays shaped (facets, side nodes)"""
    slices = []
    for H, mask in ((problem.right, grid.nodes > 0), (problem.left, grid.nodes < 0)):
        if H is None or not mask.any():
            continue
        b, c, l = H.facets.arrays_at(grid.nodes[mask], t)
        slices.append((mask, np.asarray(b), np.asarray(c), np.asarray(l)))
    return slices


def _bellman_min(U: np.ndarray, nodes: np.ndarray, x: np.ndarray, b: np.ndarray,
                 c: np.ndarray, l: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    feet = x[None, :] + b * dt
    continuation = np.interp(feet.ravel(), nodes, U).reshape(feet.shape)
    q = l * dt + np.maximum(1.0 - c * dt, 0.0) * continuation
    k = np.argmin(q, axis=0)
    return q[k, np.arange(q.shape[1])], k


def _junction_sets(problem: JunctionProblem, mode: PolicyMode) -> Callable[[float], FacetFamily]:
    if not problem.time_dependent:
        fixed = junction_admissible_set(problem, mode)
        return lambda t: fixed
    return lambda t: junction_admissible_set(problem, mode, t)


def value_iteration(problem: JunctionProblem, mode: Union[PolicyMode, str], dx: float,
                    dt: Optional[float] = None, cfl: float = 1.0) -> SolutionStack:
    """
    Backward semi-Lagrangian dynamic programming.

    U^n(x) = min over admissible controls of l*dt + (1 - c*dt) U^{n-1}(x + b*dt)
    with linear interpolation; feet outside the window are clamped (outflow).
    Costs of step n are read at the previous slice time (n - 1)*dt.

    Returns:
        Stack of all time slices from the initial data to the horizon
    """
    mode = PolicyMode(mode)
    grid = UniformGrid(problem.window[0], problem.window[1], dx)
    dt, steps = _time_step(problem, dx, dt, cfl, problem.horizon)
    logger.debug("value iteration %s on %s: %d steps of %.3g", mode.value, grid, steps, dt)

    junction_sets = _junction_sets(problem, mode)
    x_j = np.zeros(1)

    U = np.asarray(problem.initial_data(grid.nodes), dtype=float)
    stack = [U]
    for n in range(steps):
        if n == 0 or problem.time_dependent:
            slices = side_arrays(problem, grid, n * dt)
            junction_set = junction_sets(n * dt)
            jb, jc, jl = junction_set.b[:, None], junction_set.c[:, None], junction_set.l[:, None]
        new = np.empty_like(U)
        for mask, b, c, l in slices:
            new[mask] = _bellman_min(U, grid.nodes, grid.nodes[mask], b, c, l, dt)[0]
        new[grid.junction] = _bellman_min(U, grid.nodes, x_j, jb, jc, jl, dt)[0][0]
        U = new
        stack.append(U)

    return SolutionStack(grid, np.linspace(0.0, problem.horizon, steps + 1), np.vstack(stack),
                         label=f"value_iteration[{mode.value}]")


def _candidates(problem: JunctionProblem, x: float, junction_set: FacetFamily,
                t: float = 0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[Control]]:
    if x == 0.0:
        controls = [_control_from_origin(row, mu)
                    for row, mu in zip(junction_set.origin, junction_set.mu)]
        return junction_set.b, junction_set.c, junction_set.l, controls
    side = Side.RIGHT if x > 0 else Side.LEFT
    b, c, l = problem.family(side).arrays_at(np.array([x]), t)
    controls = [SideControl(side, k) for k in range(b.shape[0])]
    return b[:, 0], c[:, 0], l[:, 0], controls


def dpp_residual(stack: SolutionStack, problem: JunctionProblem,
                 sample_points: Sequence[Tuple[float, float]], theta: float,
                 mode: Union[PolicyMode, str] = PolicyMode.ALL) -> float:
    """
    Largest gap |U(x,t) - min over one-step controls of (l*theta + (1 - c*theta) U(x + b*theta, t - theta))|.

    Points within half a cell of the junction use the junction controls; costs
    are read at t - theta.
    """
    mode = PolicyMode(mode)
    junction_sets = _junction_sets(problem, mode)
    half_cell = 0.5 * stack.grid.dx
    worst = 0.0
    for x, t in sample_points:
        if t < theta:
            raise DomainError(f"sample time {t} is shorter than theta={theta}")
        x = 0.0 if abs(x) < half_cell else float(x)
        b, c, l, _ = _candidates(problem, x, junction_sets(t - theta), t - theta)
        feet = np.clip(x + b * theta, stack.grid.x_min, stack.grid.x_max)
        continuation = np.array([stack.value(f, t - theta) for f in feet])
        best = float(np.min(l * theta + np.maximum(1.0 - c * theta, 0.0) * continuation))
        worst = max(worst, abs(stack.value(x, t) - best))
    return worst


def greedy_policy(stack: SolutionStack, problem: JunctionProblem,
                  mode: Union[PolicyMode, str] = PolicyMode.ALL,
                  horizon: Optional[float] = None) -> Policy:
    """
    Feedback policy picking the minimizer of the one-step Bellman formula
    against the stack, for a path started at time 0 with the given horizon.
    """
    mode = PolicyMode(mode)
    junction_sets = _junction_sets(problem, mode)
    horizon = stack.horizon if horizon is None else horizon
    step = float(stack.times[1] - stack.times[0])
    grid = stack.grid

    def policy(t: float, x: float) -> Control:
        remaining = max(horizon - t - step, 0.0)
        b, c, l, controls = _candidates(problem, x, junction_sets(remaining), remaining)
        feet = np.clip(x + b * step, grid.x_min, grid.x_max)
        continuation = np.array([stack.value(f, remaining) for f in feet])
        q = l * step + np.maximum(1.0 - c * step, 0.0) * continuation
        return controls[int(np.argmin(q))]

    return policy
