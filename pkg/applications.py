#!/usr/bin/env python3
"""
Worked junction problems with reference solutions.

* Giga-Hamamuki nucleation: |u_t| + |u_x| = 1 type problem with a free junction control
* one_d_gap: the two-sided example where U^- and U^+ differ
* tanker: half-line non-uniqueness example
* kpp: front propagation with a reaction rate jumping at x = 1
* cell problem: effective Hamiltonian of a plane with one fast line
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq, minimize_scalar
from scipy.sparse.linalg import spsolve

from grids import SolutionStack
from hamiltonian_core import FacetFamily, FluxLimiter, LimiterKind, Side, SideHamiltonian
from junction_pde import JunctionScheme, SchemeKind, solve_evolution
from solver_errors import DomainError, IterationError, UnknownPresetError
from trajectory_control import JunctionProblem

logger = logging.getLogger(__name__)

KPP_SHIFT = 1.0


@dataclass(frozen=True)
class KppParams:
    """
    Reaction rates c1 on x < 1 and c2 on x >= 1; the initial support is (-inf, 0].

    Args:
        c1: Rate left of the discontinuity
        c2: Rate right of the discontinuity
        horizon: Final time of the variational solve
        cap: Value replacing +inf outside the support (default 10*c_max*horizon)
        v_max: Largest sampled velocity
        n_velocities: Number of sampled velocities
    """
    c1: float = 0.5
    c2: float = 2.0
    horizon: float = 1.2
    cap: Optional[float] = None
    v_max: float = 4.0
    n_velocities: int = 41

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise DomainError("reaction rates must be positive")
        if self.horizon <= 0:
            raise DomainError("horizon must be positive")
        if self.cap is not None and self.cap <= 0:
            raise DomainError("cap must be positive")

    @property
    def c_max(self) -> float:
        return max(self.c1, self.c2)

    @property
    def effective_cap(self) -> float:
        return self.cap if self.cap is not None else 10.0 * self.c_max * self.horizon


@dataclass(frozen=True)
class KppFrontTimes:
    t1: float
    t2: float
    first_arrival: float
    new_front: bool


@dataclass(frozen=True)
class CellProblemParams:
    m: float = 1.0
    M: float = 2.0
    p: Tuple[float, float] = (0.0, 1.0)
    alpha: float = 1e-3
    n_cells: int = 64
    n_angles: int = 64
    max_iters: int = 200

    def __post_init__(self):
        if not self.M >= self.m > 0:
            raise DomainError("speeds need M >= m > 0")
        if self.alpha <= 0:
            raise DomainError("alpha must be positive")
        if len(self.p) != 2:
            raise DomainError("p has a tangential and an along-line component")


# KPP

def _two_phase_cost(d_fast: float, d_slow: float, t: float, params: KppParams) -> float:
    """
    Cheapest path spending time tau in the c2 region (distance d_fast there)
    and t - tau in the c1 region (distance d_slow), straight runs in each.
    """
    def cost(tau):
        slow = t - tau
        fast_part = d_fast ** 2 / (2.0 * tau) if d_fast > 0 else 0.0
        slow_part = d_slow ** 2 / (2.0 * slow) if d_slow > 0 else 0.0
        return fast_part - params.c2 * tau + slow_part - params.c1 * slow

    eps = 1e-12 * max(1.0, t)
    lo = eps if d_fast > 0 else 0.0
    hi = t - eps if d_slow > 0 else t
    candidates = [cost(lo), cost(hi)]
    result = minimize_scalar(cost, bounds=(lo, hi), method='bounded',
                             options={'xatol': 1e-12 * max(1.0, t)})
    candidates.append(float(result.fun))
    return float(min(candidates))


def kpp_action_J(x: float, t: float, params: KppParams) -> float:
    """
    Least action inf of the integral of |y'|^2/2 - c(y) over paths from
    (-inf, 0] to x in time t.
    """
    if t <= 0:
        raise DomainError("kpp_action_J needs t > 0")
    if x <= 0:
        direct = -params.c1 * t
    elif x <= KPP_SHIFT:
        direct = x ** 2 / (2.0 * t) - params.c1 * t
    else:
        direct = math.inf
    if x <= KPP_SHIFT:
        # run to the jump from the edge of the support, wait there, come back
        detour = _two_phase_cost(0.0, 2.0 * KPP_SHIFT - x, t, params)
    else:
        detour = _two_phase_cost(x - KPP_SHIFT, KPP_SHIFT, t, params)
    return float(min(direct, detour))


def kpp_J_at_one(t: float, params: KppParams) -> float:
    """Closed form of kpp_action_J at the discontinuity"""
    if t <= 0:
        raise DomainError("kpp_J_at_one needs t > 0")
    gap = params.c2 - params.c1
    if gap <= 0 or t <= 1.0 / math.sqrt(2.0 * gap):
        return 1.0 / (2.0 * t) - params.c1 * t
    return math.sqrt(2.0) * math.sqrt(gap) - params.c2 * t


def kpp_rate_function(x: float, t: float, params: KppParams) -> float:
    return max(kpp_action_J(x, t, params), 0.0)


def kpp_front_times(params: KppParams) -> KppFrontTimes:
    """
    Arrival times at x = 1 of the front coming from the support (t1) and of
    the front nucleated by the faster reaction (t2). t2 < t1 whenever
    c2 != 2*c1, but it only describes the arrival when c2 > 2*c1.
    """
    t1 = 1.0 / math.sqrt(2.0 * params.c1)
    gap = params.c2 - params.c1
    t2 = math.sqrt(2.0) * math.sqrt(gap) / params.c2 if gap > 0 else math.inf
    new_front = params.c2 > 2.0 * params.c1
    return KppFrontTimes(t1, t2, t2 if new_front else t1, new_front)


def kpp_front_time_oracle(params: KppParams) -> float:
    """Zero of t -> J(1, t) located by brentq on the closed form"""
    hi = 1.0
    while kpp_J_at_one(hi, params) > 0:
        hi *= 2.0
    return float(brentq(lambda t: kpp_J_at_one(t, params), 1e-9, hi, xtol=1e-14))


def _velocity_family(params: KppParams, rate: float) -> FacetFamily:
    v = np.linspace(-params.v_max, params.v_max, params.n_velocities)
    v[np.abs(v) < 1e-12] = 0.0
    return FacetFamily(v, np.zeros_like(v), 0.5 * v ** 2 - rate)


def kpp_problem(params: KppParams, window: Tuple[float, float] = (-3.0, 3.0)) -> JunctionProblem:
    """
    Junction problem in the shifted variable xi = x - 1, so the rate jump
    sits at the junction. I0 = 0 on the support, the cap elsewhere.
    """
    cap = params.effective_cap

    def initial(xi):
        xi = np.asarray(xi, dtype=float)
        return np.where(xi + KPP_SHIFT <= 0.0, 0.0, cap)

    return JunctionProblem(
        right=SideHamiltonian(Side.RIGHT, facets=_velocity_family(params, params.c2)),
        left=SideHamiltonian(Side.LEFT, facets=_velocity_family(params, params.c1)),
        junction=FluxLimiter(LimiterKind.HT),
        initial_data=initial, horizon=params.horizon, window=window, name='kpp')


def kpp_solve_variational(params: KppParams, dx: float, horizon: Optional[float] = None,
                          window: Tuple[float, float] = (-3.0, 3.0), cfl: float = 0.5,
                          max_slices: Optional[int] = 1201) -> SolutionStack:
    """
    min(I_t + H(x, I_x), I) = 0 in the shifted variable, by the flux-limited
    scheme with limiter H_T (= c_max) followed by clipping at 0.
    """
    problem = kpp_problem(params, window)
    scheme = JunctionScheme(SchemeKind.FLUX_LIMITED, problem.junction, cfl=cfl)
    stack = solve_evolution(problem, scheme, dx, horizon, max_slices=max_slices,
                            lower_obstacle=0.0)
    return SolutionStack(stack.grid, stack.times, stack.values, label='kpp',
                         diagnostics=stack.diagnostics)


def kpp_front_arrival(stack: SolutionStack, x: float = KPP_SHIFT, level: float = 0.0) -> float:
    """First stored time at which I(x, .) <= level; inf when the front never arrives"""
    xi = x - KPP_SHIFT
    for t in stack.times:
        if stack.value(xi, t) <= level + 1e-12:
            return float(t)
    return math.inf


# Cell problem

def _cell_controls(params: CellProblemParams) -> np.ndarray:
    angles = 2.0 * math.pi * np.arange(params.n_angles) / params.n_angles
    v = np.column_stack([np.cos(angles), np.sin(angles)])
    v[np.abs(v) < 1e-12] = 0.0
    return np.vstack([v, np.zeros((1, 2))])


def _transition(feet: np.ndarray, n: int, dx: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Periodic linear interpolation weights: (left index, right index, right weight)"""
    pos = (feet / dx) % n
    left = np.floor(pos).astype(int) % n
    weight = pos - np.floor(pos)
    return left, (left + 1) % n, weight


def cell_problem_effective_H(params: CellProblemParams) -> float:
    """
    Effective Hamiltonian H(p) = -alpha*w(0) from the discounted cell problem
    alpha*w + R(x)|p + w' e1| = 0 on the periodic cell [0, 1), R = M on the
    fast line x = 0 and m elsewhere, solved by policy iteration on the
    semi-Lagrangian discretization.
    """
    n = params.n_cells
    dx = 1.0 / n
    dt = dx / params.M
    x = np.arange(n) * dx
    R = np.full(n, params.m)
    R[0] = params.M
    v = _cell_controls(params)
    p = np.asarray(params.p, dtype=float)

    # controls x nodes
    b = R[None, :] * v[:, 0:1]
    cost = R[None, :] * (v @ p)[:, None] * dt
    left, right, weight = _transition(x[None, :] + b * dt, n, dx)
    decay = 1.0 - params.alpha * dt
    rows = np.arange(n)

    w = np.zeros(n)
    policy = np.full(n, -1)
    for iteration in range(params.max_iters):
        tol = 1e-10 * (1.0 + np.abs(w).max())
        q = cost + decay * ((1.0 - weight) * w[left] + weight * w[right])
        improved = np.argmin(q, axis=0)
        # keep the current control on ties
        if iteration > 0:
            stay = q[policy, rows] <= q[improved, rows] + tol
            improved = np.where(stay, policy, improved)
            if np.array_equal(improved, policy):
                logger.debug("cell problem converged after %d policy updates", iteration)
                return float(-params.alpha * w[0])
        policy = improved
        P = sp.csr_matrix(((1.0 - weight[policy, rows]), (rows, left[policy, rows])), shape=(n, n))
        P = P + sp.csr_matrix((weight[policy, rows], (rows, right[policy, rows])), shape=(n, n))
        A = sp.identity(n, format='csr') - decay * P
        w = spsolve(A.tocsc(), cost[policy, rows])
    raise IterationError(f"policy iteration did not settle in {params.max_iters} iterations")


# Presets

@dataclass(frozen=True, eq=False)
class PresetBundle:
    """
    A configured problem with its reference solution.

    ``extras`` holds further closed forms keyed by name (U_minus, U_plus,
    rogue_subsolution). ``solver`` names the solver the reference is checked
    against. ``valid(nodes, t)`` masks the nodes where ``exact`` applies.
    """
    name: str
    problem: Optional[JunctionProblem]
    exact: Optional[Callable[[float, float], float]] = None
    extras: Dict[str, Callable[[float, float], float]] = field(default_factory=dict)
    solver: str = 'flux_limited'
    description: str = ''
    valid: Optional[Callable[[np.ndarray, float], np.ndarray]] = None


def _eikonal_facets(cost: float = 1.0) -> FacetFamily:
    return FacetFamily([-1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [cost, cost, cost])


def giga_hamamuki(window: Tuple[float, float] = (-3.0, 3.0), horizon: float = 1.0) -> PresetBundle:
    problem = JunctionProblem(
        right=SideHamiltonian(Side.RIGHT, facets=_eikonal_facets()),
        left=SideHamiltonian(Side.LEFT, facets=_eikonal_facets()),
        junction=FluxLimiter(LimiterKind.FACETS, facets=FacetFamily([0.0], [0.0], [0.0])),
        initial_data=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        horizon=horizon, window=window, name='giga_hamamuki')
    return PresetBundle('giga_hamamuki', problem,
                        exact=lambda x, t: min(abs(x), t),
                        extras={'rogue_subsolution': lambda x, t: t},
                        description="unit speed, unit cost, free junction control; U = min(|x|, t)")


def _gap_shift(x, t):
    return np.minimum(np.abs(x), 1.0)


def _gap_u_plus(x: float, t: float) -> float:
    return abs(x) + 1.0 - math.exp(-t)


def _gap_u_minus(x: float, t: float) -> float:
    return abs(x) + 1.0 - math.exp(-min(abs(x), t))


def one_d_gap(window: Tuple[float, float] = (-3.0, 3.0), horizon: float = 1.0,
              junction: str = 'HTreg') -> PresetBundle:
    """
    Controls a in {-1, 0, 1} with b = a, discount 1 and costs
    1 - a + min(|x|, 1) on the right, 1 + a + min(|x|, 1) on the left.
    The closed forms hold on |x| + t <= 1.
    """
    alpha = np.array([-1.0, 0.0, 1.0])
    right = FacetFamily(alpha, np.ones(3), 1.0 - alpha, cost_shift=_gap_shift)
    left = FacetFamily(alpha, np.ones(3), 1.0 + alpha, cost_shift=_gap_shift)
    problem = JunctionProblem(
        right=SideHamiltonian(Side.RIGHT, facets=right),
        left=SideHamiltonian(Side.LEFT, facets=left),
        junction=FluxLimiter(LimiterKind(junction)),
        initial_data=lambda x: np.minimum(np.abs(np.asarray(x, dtype=float)), 1.0),
        horizon=horizon, window=window, name='one_d_gap')
    exact = _gap_u_plus if problem.junction.kind is LimiterKind.HTREG else _gap_u_minus
    return PresetBundle('one_d_gap', problem, exact=exact,
                        extras={'U_minus': _gap_u_minus, 'U_plus': _gap_u_plus},
                        description="two-sided example with U^-(0,t) = 0 < U^+(0,t) = 1 - exp(-t)",
                        valid=lambda x, t: np.abs(x) + t <= 1.0 + 1e-12)


def tanker(g: float = -1.0, g_rogue: float = -0.5, x_max: float = 3.0,
           horizon: float = 1.0) -> PresetBundle:
    """
    Half-line problem on [0, x_max]; the boundary node carries the junction
    control (0, 0, 1 + g). U = t + g(t - x)^+ and the rogue V uses g_rogue.
    """
    if g > 0:
        raise DomainError("the closed form needs g <= 0")
    problem = JunctionProblem(
        right=SideHamiltonian(Side.RIGHT, facets=_eikonal_facets()),
        left=None,
        junction=FluxLimiter(LimiterKind.FACETS, facets=FacetFamily([0.0], [0.0], [1.0 + g])),
        initial_data=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        horizon=horizon, window=(0.0, x_max), name='tanker')
    return PresetBundle('tanker', problem,
                        exact=lambda x, t: t + g * max(t - abs(x), 0.0),
                        extras={'rogue_subsolution': lambda x, t: t + g_rogue * max(t - abs(x), 0.0)},
                        description=f"half-line boundary cost 1+g with g={g}; V uses g'={g_rogue}")


def kpp(c1: float = 0.5, c2: float = 2.0, horizon: float = 1.2,
        window: Tuple[float, float] = (-3.0, 3.0), cap: Optional[float] = None) -> PresetBundle:
    params = KppParams(c1=c1, c2=c2, horizon=horizon, cap=cap)

    def exact(xi, t):
        return kpp_rate_function(xi + KPP_SHIFT, t, params) if t > 0 else 0.0

    return PresetBundle('kpp', kpp_problem(params, window), exact=exact, solver='kpp',
                        description=f"rate {c1} on x<1, {c2} on x>=1 (shifted so x=1 is the junction)")


def chessboard_stub() -> PresetBundle:
    """Stratification of the plane cut by both axes; data model only, no solver"""
    strata = ["four open quadrants with their own Hamiltonians",
              "four half-axes (codimension-one interfaces)",
              "the origin (codimension-two stratum)"]
    return PresetBundle('chessboard_stub', None, solver='none',
                        description="; ".join(strata))


PRESETS: Dict[str, Callable[..., PresetBundle]] = {
    'giga_hamamuki': giga_hamamuki,
    'one_d_gap': one_d_gap,
    'tanker': tanker,
    'kpp': kpp,
    'chessboard_stub': chessboard_stub,
}


def preset(name: str, **kwargs) -> PresetBundle:
    """Build a catalog problem by name; keyword arguments go to its builder"""
    builder = PRESETS.get(name)
    if builder is None:
        raise UnknownPresetError(f"unknown preset '{name}' (known: {', '.join(PRESETS)})")
    return builder(**kwargs)


def preset_catalog() -> List[Tuple[str, str]]:
    return [(name, builder().description) for name, builder in PRESETS.items()]
