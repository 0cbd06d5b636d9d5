#!/usr/bin/env python3
"""
Monotone finite-difference solvers for the junction problem.

Interior nodes use a facet-wise upwind update of u_t + H(x, t, u, u_x) = 0.
The junction node is updated by a flux-limited formula (any FluxLimiter,
or the Kirchhoff condition through its equivalent limiter H_T^reg), by the
relaxed Ishii formula, or coupled by diffusion in the vanishing-viscosity
solver. Residual and comparison checkers work on any solution stack.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_banded

from grids import GridFunction, SolutionStack, UniformGrid
from hamiltonian_core import (FluxLimiter, LimiterKind, RestrictMode, junction_zero_level,
                              restrict_facets)
from solver_errors import ConfigurationError, DomainError, GridMismatchError
from trajectory_control import JunctionProblem, side_arrays

logger = logging.getLogger(__name__)

__all__ = ['GridFunction', 'SolutionStack', 'UniformGrid', 'SchemeKind', 'JunctionScheme',
           'ViscousConfig', 'ResidualKind', 'hyperbolic_time_step', 'step_interior',
           'junction_limiter', 'junction_update', 'kirchhoff_bracket', 'solve_evolution',
           'solve_vanishing_viscosity', 'residual_profile', 'residual_check',
           'comparison_gap', 'interior_truncation_error']

BRACKET_TOL = 1e-6


class SchemeKind(Enum):
    FLUX_LIMITED = 'flux_limited'
    KIRCHHOFF = 'kirchhoff'
    ISHII_RELAXED = 'ishii_relaxed'


class ResidualKind(Enum):
    SUB = 'subsolution'
    SUPER = 'supersolution'


@dataclass(frozen=True)
class JunctionScheme:
    """Junction treatment plus Courant factor; FLUX_LIMITED needs a limiter"""
    kind: SchemeKind
    limiter: Optional[FluxLimiter] = None
    cfl: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ConfigurationError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.kind is SchemeKind.FLUX_LIMITED and self.limiter is None:
            raise ConfigurationError("flux-limited scheme needs a limiter")


@dataclass(frozen=True)
class ViscousConfig:
    epsilon: float
    theta: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigurationError(f"theta must lie in [0, 1], got {self.theta}")


def hyperbolic_time_step(problem: JunctionProblem, dx: float, cfl: float,
                         horizon: float) -> Tuple[float, int]:
    """dt <= cfl / (B/dx + C), shrunk so that a whole number of steps reaches the horizon"""
    rate = problem.speed / dx + problem.max_discount
    base = cfl / rate if rate > 0 else horizon
    steps = max(1, int(math.ceil(horizon / base - 1e-9)))
    return horizon / steps, steps


def _check_cfl(problem: JunctionProblem, dx: float, dt: float) -> None:
    if dt * (problem.speed / dx + problem.max_discount) > 1.0 + 1e-9:
        raise ConfigurationError(f"dt={dt:.3g} violates the CFL bound for dx={dx:.3g}")


def _differences(values: np.ndarray, dx: float) -> Tuple[np.ndarray, np.ndarray]:
    """Forward and backward differences; edge padding gives outflow boundaries"""
    padded = np.pad(values, 1, mode='edge')
    return (padded[2:] - values) / dx, (values - padded[:-2]) / dx


def _upwind(b: np.ndarray, c: np.ndarray, l: np.ndarray, u: np.ndarray,
            dplus: np.ndarray, dminus: np.ndarray) -> np.ndarray:
    """max over facets of -b*D u + c*u - l with D = D^+ for b > 0, D^- otherwise"""
    if b.shape[0] == 0:
        return np.full(u.shape, -np.inf)
    grad = np.where(b > 0, dplus, dminus)
    return np.max(-b * grad + c * u - l, axis=0)


def step_interior(u: GridFunction, problem: JunctionProblem, dt: float,
                  t: float = 0.0) -> GridFunction:
    """
    One explicit upwind step at every node off the junction.

    The junction value is copied unchanged; junction_update provides it.
    """
    grid = u.grid
    _check_cfl(problem, grid.dx, dt)
    dplus, dminus = _differences(u.values, grid.dx)
    new = u.values.copy()
    for mask, b, c, l in side_arrays(problem, grid, t):
        v = u.values[mask]
        new[mask] = v - dt * _upwind(b, c, l, v, dplus[mask], dminus[mask])
    return GridFunction(grid, new)


def _junction_family(problem: JunctionProblem, mode: RestrictMode, t: float):
    right0 = problem.right.facets.at(0.0, t)
    left0 = problem.left_at_junction(t)
    return restrict_facets(left0, right0, mode)


def junction_limiter(problem: JunctionProblem,
                     scheme: JunctionScheme) -> Callable[[float, float], float]:
    """
    Limiter function (r, t) -> G(r) used at the junction node, combined with
    the junction control Hamiltonian H_0 of the limiter when it has facets.

    For facet sides H_T and H_T^reg are the sup of c*r - l over the
    tangential (resp. regular tangential) facet mixtures, so no min-formula
    is solved inside the time loop.
    """
    if scheme.kind is SchemeKind.ISHII_RELAXED:
        return lambda r, t: -np.inf
    limiter = scheme.limiter if scheme.kind is SchemeKind.FLUX_LIMITED else FluxLimiter(LimiterKind.HTREG)
    frozen = all(H.facets.is_constant for H in problem.sides())

    if limiter.kind in (LimiterKind.HT, LimiterKind.HTREG):
        mode = (RestrictMode.TANGENTIAL_ALL if limiter.kind is LimiterKind.HT
                else RestrictMode.TANGENTIAL_REGULAR)
        cache = {}

        def family(t):
            key = 0.0 if frozen else t
            if key not in cache:
                cache.clear()
                cache[key] = _junction_family(problem, mode, t)
            return cache[key]

        def base(r, t):
            fam = family(t)
            return float(np.max(fam.c * r - fam.l)) if fam.size else -np.inf
    elif limiter.kind is LimiterKind.CONSTANT:
        def base(r, t):
            return limiter.value
    elif limiter.kind is LimiterKind.FACETS:
        def base(r, t):
            return -np.inf
    else:
        if problem.left is None:
            raise ConfigurationError("a general junction function needs two sides")
        reuse = frozen and problem.max_discount == 0.0
        cached: Dict[str, float] = {}

        def base(r, t):
            if reuse and 'value' in cached:
                return cached['value']
            value = -junction_zero_level(limiter.general, problem.right, problem.left,
                                         r=r, x=0.0, t=t)
            cached['value'] = value
            return value

    if limiter.facets is None:
        return base

    def with_controls(r, t):
        fam = limiter.facets.at(0.0, t)
        return max(base(r, t), float(np.max(fam.c * r - fam.l)))
    return with_controls


def _junction_gradients(u: GridFunction) -> Tuple[float, float, Optional[float]]:
    grid = u.grid
    j = grid.junction
    u0 = float(u.values[j])
    dplus = (float(u.values[j + 1]) - u0) / grid.dx
    dminus = (u0 - float(u.values[j - 1])) / grid.dx if grid.has_left else None
    return u0, dplus, dminus


def _junction_arrays(problem: JunctionProblem, t: float):
    right = problem.right.facets.arrays_at(np.zeros(1), t)
    left = None if problem.left is None else problem.left.facets.arrays_at(np.zeros(1), t)
    return right, left


def _outgoing(arrays, u0: float, grad: float, sign: int) -> float:
    """Hamiltonian of the facets leaving into one side (sign*b > 0) at the junction"""
    if arrays is None:
        return -np.inf
    b, c, l = (a[:, 0] for a in arrays)
    keep = sign * b > 0
    if not keep.any():
        return -np.inf
    return float(np.max(-b[keep] * grad + c[keep] * u0 - l[keep]))


def _full_upwind(arrays, u0: float, dplus: float, dminus: Optional[float]) -> float:
    if arrays is None:
        return -np.inf
    b, c, l = arrays
    dminus = dplus if dminus is None else dminus
    return float(_upwind(b, c, l, np.array([u0]), np.array([dplus]), np.array([dminus]))[0])


def junction_update(u: GridFunction, scheme: JunctionScheme, problem: JunctionProblem,
                    dt: float, t: float = 0.0, limiter_value: Optional[float] = None) -> float:
    """
    New value at the junction node.

    FLUX_LIMITED / KIRCHHOFF: u0 - dt * max(G(u0), H1^+(D^+u), H2^-(D^-u)).
    ISHII_RELAXED: u0 - dt * min(H1, H2) with each side upwinded facet-wise.
    """
    u0, dplus, dminus = _junction_gradients(u)
    right, left = _junction_arrays(problem, t)
    if scheme.kind is SchemeKind.ISHII_RELAXED:
        if left is None:
            raise ConfigurationError("the relaxed Ishii scheme needs two sides")
        return u0 - dt * min(_full_upwind(right, u0, dplus, dminus),
                             _full_upwind(left, u0, dplus, dminus))
    if limiter_value is None:
        limiter_value = junction_limiter(problem, scheme)(u0, t)
    h_out = max(limiter_value, _outgoing(right, u0, dplus, 1),
                _outgoing(left, u0, dminus if dminus is not None else dplus, -1))
    if not np.isfinite(h_out):
        raise DomainError("junction Hamiltonian is empty")
    return u0 - dt * h_out


def scheme_step(u: GridFunction, problem: JunctionProblem, scheme: JunctionScheme, dt: float,
                t: float = 0.0, limiter_value: Optional[float] = None) -> np.ndarray:
    """One explicit step: upwind update off the junction, junction_update on it"""
    values = step_interior(u, problem, dt, t).values
    values[u.grid.junction] = junction_update(u, scheme, problem, dt, t, limiter_value)
    return values


def kirchhoff_bracket(u: GridFunction, problem: JunctionProblem, u_t: float,
                      t: float = 0.0) -> Tuple[float, float]:
    """
    min and max of (u_t + H1(D^+u), u_t + H2(D^-u), -D^+u + D^-u) at the
    junction; the discrete Kirchhoff condition holds when they bracket 0.
    """
    u0, dplus, dminus = _junction_gradients(u)
    if dminus is None:
        raise ConfigurationError("the Kirchhoff condition needs two sides")
    right, left = _junction_arrays(problem, t)
    r1 = u_t + float(np.max(-right[0][:, 0] * dplus + right[1][:, 0] * u0 - right[2][:, 0]))
    r2 = u_t + float(np.max(-left[0][:, 0] * dminus + left[1][:, 0] * u0 - left[2][:, 0]))
    terms = (r1, r2, -dplus + dminus)
    return min(terms), max(terms)


def solve_evolution(problem: JunctionProblem, scheme: JunctionScheme, dx: float,
                    horizon: Optional[float] = None, max_slices: Optional[int] = None,
                    lower_obstacle: Optional[float] = None) -> SolutionStack:
    """
    Forward time loop of step_interior + junction_update from the initial data.

    Args:
        problem: Junction problem
        scheme: Junction treatment and Courant factor
        dx: Grid spacing
        horizon: Final time, default the problem's
        max_slices: Keep at most this many time slices (all when None)
        lower_obstacle: Clip every step from below (variational inequality
            min(u_t + H, u - obstacle) = 0)

    Returns:
        Stack with diagnostics 'limiter' (junction limiter value per step) and,
        for the Kirchhoff scheme, 'kirchhoff_violation'
    """
    horizon = problem.horizon if horizon is None else horizon
    grid = UniformGrid(problem.window[0], problem.window[1], dx)
    if problem.is_half_line and scheme.kind is not SchemeKind.FLUX_LIMITED:
        raise ConfigurationError(f"{scheme.kind.value} needs two sides")
    dt, steps = hyperbolic_time_step(problem, dx, scheme.cfl, horizon)
    stride = 1 if max_slices is None else max(1, int(math.ceil(steps / max(max_slices - 1, 1))))
    logger.debug("%s on %s: %d steps of %.3g, keeping every %d", scheme.kind.value, grid,
                 steps, dt, stride)

    limiter = junction_limiter(problem, scheme)
    u = GridFunction(grid, np.asarray(problem.initial_data(grid.nodes), dtype=float))
    times, slices = [0.0], [u.values]
    limiter_trace, violation_trace = [np.nan], [0.0]
    worst_violation = 0.0

    for n in range(1, steps + 1):
        t = (n - 1) * dt
        g = limiter(u.junction_value, t)
        values = scheme_step(u, problem, scheme, dt, t, g)
        if scheme.kind is SchemeKind.KIRCHHOFF:
            low, high = kirchhoff_bracket(u, problem, (values[grid.junction] - u.junction_value) / dt, t)
            violation = max(low - BRACKET_TOL, -high - BRACKET_TOL, 0.0)
            worst_violation = max(worst_violation, violation)
        if lower_obstacle is not None:
            values = np.maximum(values, lower_obstacle)
        u = GridFunction(grid, values)
        if n % stride == 0 or n == steps:
            times.append(n * dt)
            slices.append(values)
            limiter_trace.append(g)
            if scheme.kind is SchemeKind.KIRCHHOFF:
                violation_trace.append(violation)

    if worst_violation > 0.0:
        logger.warning("Kirchhoff bracket missed by up to %.3g", worst_violation)
    diagnostics = {'limiter': np.asarray(limiter_trace, dtype=float)}
    if scheme.kind is SchemeKind.KIRCHHOFF:
        diagnostics['kirchhoff_violation'] = np.asarray(violation_trace)
    return SolutionStack(grid, np.asarray(times), np.vstack(slices),
                         label=scheme.kind.value, diagnostics=diagnostics)


def _diffusion_bands(size: int, weight: float) -> np.ndarray:
    """Banded form of I - weight * (Neumann Laplacian * dx^2)"""
    ab = np.zeros((3, size))
    ab[0, 1:] = -weight
    ab[1, :] = 1.0 + 2.0 * weight
    ab[2, :-1] = -weight
    ab[0, 1] = -2.0 * weight
    ab[2, -2] = -2.0 * weight
    return ab


def _laplacian(values: np.ndarray, dx: float) -> np.ndarray:
    padded = np.pad(values, 1, mode='reflect')
    return (padded[2:] - 2.0 * values + padded[:-2]) / dx ** 2


def solve_vanishing_viscosity(problem: JunctionProblem, cfg: ViscousConfig, dx: float,
                              horizon: Optional[float] = None, cfl: float = 0.5,
                              max_slices: Optional[int] = None) -> SolutionStack:
    """
    u_t - epsilon*u_xx + H(x, t, u, u_x) = 0 without any junction condition.

    The Hamiltonian is explicit and upwinded; the junction node uses
    (H1 + H2)/2. Diffusion is theta-implicit with reflecting ends.
    """
    if problem.is_half_line:
        raise ConfigurationError("vanishing viscosity needs two sides")
    horizon = problem.horizon if horizon is None else horizon
    grid = UniformGrid(problem.window[0], problem.window[1], dx)
    dt, steps = hyperbolic_time_step(problem, dx, cfl, horizon)
    ratio = cfg.epsilon * dt / dx ** 2
    if cfg.theta < 1.0:
        explicit_load = dt * (problem.speed / dx + problem.max_discount) + 2.0 * (1.0 - cfg.theta) * ratio
        if explicit_load > 1.0 + 1e-9:
            raise ConfigurationError(
                f"explicit diffusion unstable: 2*eps*dt/dx^2 = {2 * ratio:.3g} with theta={cfg.theta}")
    ab = _diffusion_bands(grid.size, cfg.theta * ratio) if cfg.theta > 0 else None
    stride = 1 if max_slices is None else max(1, int(math.ceil(steps / max(max_slices - 1, 1))))
    logger.debug("viscous eps=%g theta=%g on %s: %d steps of %.3g", cfg.epsilon, cfg.theta,
                 grid, steps, dt)

    u = GridFunction(grid, np.asarray(problem.initial_data(grid.nodes), dtype=float))
    times, slices = [0.0], [u.values]
    j = grid.junction
    for n in range(1, steps + 1):
        t = (n - 1) * dt
        rhs = step_interior(u, problem, dt, t).values
        u0, dplus, dminus = _junction_gradients(u)
        right, left = _junction_arrays(problem, t)
        h_mean = 0.5 * (_full_upwind(right, u0, dplus, dminus) + _full_upwind(left, u0, dplus, dminus))
        rhs[j] = u0 - dt * h_mean
        if cfg.theta < 1.0:
            rhs = rhs + (1.0 - cfg.theta) * cfg.epsilon * dt * _laplacian(u.values, dx)
        values = solve_banded((1, 1), ab, rhs) if ab is not None else rhs
        u = GridFunction(grid, values)
        if n % stride == 0 or n == steps:
            times.append(n * dt)
            slices.append(values)

    return SolutionStack(grid, np.asarray(times), np.vstack(slices),
                         label=f"viscous[eps={cfg.epsilon:g}]")


def _ishii_junction(u: GridFunction, problem: JunctionProblem, kind: ResidualKind,
                    dt: float, t: float) -> float:
    u0, dplus, dminus = _junction_gradients(u)
    right, left = _junction_arrays(problem, t)
    h1 = _full_upwind(right, u0, dplus, dminus)
    h2 = _full_upwind(left, u0, dplus, dminus)
    controls = problem.junction.junction_facets().at(0.0, t)
    h0 = float(np.max(controls.c * u0 - controls.l)) if controls.size else -np.inf
    if kind is ResidualKind.SUB:
        if left is None:
            h = min(h1, h0) if controls.size else h1
        else:
            h = min(h1, h2)
    else:
        h = max(h1, h2, h0)
    return u0 - dt * h


def _one_step(u: GridFunction, problem: JunctionProblem, kind: ResidualKind,
              scheme: Optional[JunctionScheme], limiter, dt: float, t: float) -> np.ndarray:
    if scheme is not None:
        return scheme_step(u, problem, scheme, dt, t, limiter(u.junction_value, t))
    values = step_interior(u, problem, dt, t).values
    values[u.grid.junction] = _ishii_junction(u, problem, kind, dt, t)
    return values


def residual_profile(stack: SolutionStack, problem: JunctionProblem,
                     kind: Union[ResidualKind, str],
                     junction_form: str = 'ishii') -> np.ndarray:
    """
    Per-node accumulated one-step defect of a stack.

    Between consecutive slices the monotone one-step operator S is applied
    (in CFL-sized substeps); the positive part of u^n - S(u^{n-1}) for
    subsolutions, or S(u^{n-1}) - u^n for supersolutions, is summed over n.
    """
    kind = ResidualKind(kind)
    if junction_form not in ('ishii', 'flux_limited'):
        raise DomainError(f"unknown junction form '{junction_form}'")
    scheme = limiter = None
    if junction_form == 'flux_limited':
        scheme = JunctionScheme(SchemeKind.FLUX_LIMITED, problem.junction)
        limiter = junction_limiter(problem, scheme)
    grid = stack.grid
    rate = problem.speed / grid.dx + problem.max_discount
    total = np.zeros(grid.size)
    for n in range(1, len(stack.times)):
        span = float(stack.times[n] - stack.times[n - 1])
        substeps = max(1, int(math.ceil(span * rate - 1e-9)))
        dt = span / substeps
        u = GridFunction(grid, stack.values[n - 1])
        for m in range(substeps):
            u = GridFunction(grid, _one_step(u, problem, kind, scheme, limiter, dt,
                                             float(stack.times[n - 1]) + m * dt))
        defect = stack.values[n] - u.values
        total += np.maximum(defect if kind is ResidualKind.SUB else -defect, 0.0)
    return total


def residual_check(stack: SolutionStack, problem: JunctionProblem,
                   kind: Union[ResidualKind, str], junction_form: str = 'ishii',
                   region: Optional[Tuple[float, float]] = None) -> float:
    """Worst accumulated defect over the nodes (of ``region``); 0 when nothing is violated"""
    profile = residual_profile(stack, problem, kind, junction_form)
    if region is not None:
        profile = profile[stack.grid.mask(*region)]
    return float(profile.max(initial=0.0))


def comparison_gap(u: SolutionStack, v: SolutionStack,
                   region: Optional[Tuple[float, float]] = None) -> float:
    """max of u - v over all slices (and the nodes of ``region``)"""
    if not u.grid.same_as(v.grid):
        raise GridMismatchError(f"{u.grid} vs {v.grid}")
    if u.times.shape != v.times.shape or not np.allclose(u.times, v.times):
        raise GridMismatchError("stacks use different time slices")
    return float(np.max(u.restricted(region) - v.restricted(region)))


def interior_truncation_error(problem: JunctionProblem, phi: Callable[[np.ndarray], np.ndarray],
                              dphi: Callable[[np.ndarray], np.ndarray], dx: float,
                              x_range: Tuple[float, float], t: float = 0.0) -> float:
    """
    max |H_upwind(x, phi, D^+phi, D^-phi) - H(x, phi, phi')| over nodes of
    ``x_range`` at least one cell away from the junction.
    """
    x = np.arange(x_range[0], x_range[1] + 0.5 * dx, dx)
    x = x[np.abs(x) >= dx]
    worst = 0.0
    for H, keep in ((problem.right, x > 0), (problem.left, x < 0)):
        if H is None or not keep.any():
            continue
        xs = x[keep]
        b, c, l = H.facets.arrays_at(xs, t)
        u = phi(xs)
        dplus = (phi(xs + dx) - u) / dx
        dminus = (u - phi(xs - dx)) / dx
        exact = np.max(-b * dphi(xs) + c * u - l, axis=0)
        worst = max(worst, float(np.max(np.abs(_upwind(b, c, l, u, dplus, dminus) - exact))))
    return worst
