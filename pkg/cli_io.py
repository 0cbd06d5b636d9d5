#!/usr/bin/env python3
"""
Run documents, solver dispatch and CSV output for the stratahj command line.

A run document is a JSON object with the sections problem, scheme, grid,
horizon, outputs and the optional viscous / kpp / cell parameter blocks.
"""

import inspect
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from applications import (PRESETS, CellProblemParams, KppParams, PresetBundle,
                          cell_problem_effective_H, kpp_front_arrival, kpp_front_times,
                          kpp_solve_variational, preset)
from grids import GridFunction, SolutionStack, UniformGrid, report_window
from hamiltonian_core import (PROFILE_PRESETS, ZERO_VELOCITY, FacetFamily, FluxLimiter,
                              LimiterKind, Side, SideHamiltonian, profile_to_facets)
from junction_pde import (JunctionScheme, ResidualKind, SchemeKind, ViscousConfig,
                          hyperbolic_time_step, interior_truncation_error, residual_profile,
                          scheme_step, solve_evolution, solve_vanishing_viscosity)
from solver_errors import ConfigError, StrataError, require
from trajectory_control import JunctionProblem, PolicyMode, value_iteration

logger = logging.getLogger(__name__)

PDE_KINDS = ('flux_limited', 'kirchhoff', 'ishii_relaxed')
SOLVER_KINDS = PDE_KINDS + ('value_iteration', 'viscous', 'kpp', 'cell')
JUNCTION_KINDS = ('constant', 'HT', 'HTreg', 'facets', 'kirchhoff')
RATE_RANGE = (0.8, 1.2)

INITIAL_DATA: Dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    'zero': lambda x, v: np.zeros_like(x),
    'constant': lambda x, v: np.full_like(x, v),
    'abs': lambda x, v: np.abs(x),
    'min_abs': lambda x, v: np.minimum(np.abs(x), 1.0),
}


def _triples(rows) -> Tuple[Tuple[float, float, float], ...]:
    return tuple(tuple(float(v) for v in row) for row in rows)


@dataclass(frozen=True)
class SideSpec:
    """One side: a facet list, a named profile or an x-tabulated facet table"""
    facets: Tuple[Tuple[float, float, float], ...] = ()
    profile: Optional[str] = None
    profile_params: Dict[str, float] = field(default_factory=dict)
    x_samples: Tuple[float, ...] = ()
    facet_lists: Tuple[Tuple[Tuple[float, float, float], ...], ...] = ()
    n_controls: int = 41


@dataclass(frozen=True)
class ProblemSpec:
    preset: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)
    right: Optional[SideSpec] = None
    left: Optional[SideSpec] = None
    junction: str = 'HTreg'
    junction_value: float = 0.0
    junction_facets: Tuple[Tuple[float, float, float], ...] = ()
    initial_data: str = 'zero'
    initial_value: float = 0.0
    m_bound: Optional[float] = None

    def __post_init__(self):
        if (self.preset is None) == (self.right is None):
            raise ConfigError('problem', "give either a preset or an inline right side")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError('problem.preset', f"unknown preset '{self.preset}'")
        if self.junction not in JUNCTION_KINDS:
            raise ConfigError('problem.junction', f"expected one of {', '.join(JUNCTION_KINDS)}")
        if self.initial_data not in INITIAL_DATA:
            raise ConfigError('problem.initial_data', f"expected one of {', '.join(INITIAL_DATA)}")
        if any(abs(row[0]) > ZERO_VELOCITY for row in self.junction_facets):
            raise ConfigError('problem.junction_facets', "junction facets need b = 0")
        for name, side in (('right', self.right), ('left', self.left)):
            if side is not None:
                _check_side(side, f'problem.{name}')


def _check_side(side: SideSpec, path: str) -> None:
    given = [bool(side.facets), side.profile is not None, bool(side.facet_lists)]
    if sum(given) != 1:
        raise ConfigError(path, "give exactly one of facets, profile, facet_lists")
    if side.profile is not None and side.profile not in PROFILE_PRESETS:
        raise ConfigError(f'{path}.profile', f"unknown profile '{side.profile}'")
    if any(len(row) != 3 for row in side.facets):
        raise ConfigError(f'{path}.facets', "facets are [b, c, l] triples")
    if side.facet_lists and len(side.facet_lists) != len(side.x_samples):
        raise ConfigError(f'{path}.x_samples', "one facet list per sample")


@dataclass(frozen=True)
class SchemeSpec:
    kind: str = 'flux_limited'
    mode: str = 'regular'
    limiter: Optional[str] = None

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ConfigError('scheme.kind', f"expected one of {', '.join(SOLVER_KINDS)}")
        if self.mode not in ('all', 'regular'):
            raise ConfigError('scheme.mode', "expected 'all' or 'regular'")
        if self.limiter is not None and self.limiter not in JUNCTION_KINDS:
            raise ConfigError('scheme.limiter', f"expected one of {', '.join(JUNCTION_KINDS)}")


@dataclass(frozen=True)
class GridSpec:
    dx: float = 2e-3
    cfl: float = 0.5
    window: Tuple[float, float] = (-4.0, 4.0)

    def __post_init__(self):
        if not self.dx > 0:
            raise ConfigError('grid.dx', f"must be positive, got {self.dx}")
        if not 0 < self.cfl <= 1:
            raise ConfigError('grid.cfl', f"must lie in (0, 1], got {self.cfl}")
        if len(self.window) != 2 or not (self.window[0] <= 0.0 < self.window[1]):
            raise ConfigError('grid.window', "window must contain 0")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = 'results'
    stack: bool = True
    junction_trace: bool = True
    residual: bool = False
    exact: bool = True
    convergence_dx: Tuple[float, ...] = ()
    max_slices: int = 201

    def __post_init__(self):
        steps = zip(self.convergence_dx, self.convergence_dx[1:])
        require(all(b < a for a, b in steps), "outputs.convergence_dx", "dx values must strictly decrease")
        require(all(dx > 0 for dx in self.convergence_dx), "outputs.convergence_dx",
                "dx values must be positive")
        require(self.max_slices >= 2, "outputs.max_slices", "keep at least two slices")


@dataclass(frozen=True)
class RunConfig:
    problem: Optional[ProblemSpec] = None
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    horizon: float = 1.0
    outputs: OutputSpec = field(default_factory=OutputSpec)
    viscous: Optional[ViscousConfig] = None
    kpp: Optional[KppParams] = None
    cell: Optional[CellProblemParams] = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError('horizon', f"must be positive, got {self.horizon}")
        if self.problem is None and self.scheme.kind not in ('kpp', 'cell'):
            raise ConfigError('problem', f"required for scheme '{self.scheme.kind}'")
        if self.scheme.kind == 'viscous' and self.viscous is None:
            raise ConfigError('viscous', "the viscous solver needs an epsilon")


def _section(cls, data: Any, path: str, strict: bool,
             convert: Optional[Dict[str, Callable]] = None):
    """Build one dataclass section, dropping (or rejecting) unknown keys"""
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name for f in fields(cls)}
    for key in sorted(set(data) - names):
        if strict:
            raise ConfigError(f'{path}.{key}', "unknown key")
        logger.warning("ignoring unknown key %s.%s", path, key)
    kwargs = {k: v for k, v in data.items() if k in names}
    for key, fn in (convert or {}).items():
        if kwargs.get(key) is not None:
            kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (StrataError, TypeError, ValueError) as e:
        raise ConfigError(path, str(e))


def _side_section(data, path, strict) -> SideSpec:
    return _section(SideSpec, data, path, strict, {
        'facets': _triples,
        'x_samples': lambda v: tuple(float(x) for x in v),
        'facet_lists': lambda v: tuple(_triples(rows) for rows in v),
        'profile_params': dict,
    })


def parse_config(text: str, strict: bool = False) -> RunConfig:
    """
    Parse and validate a JSON run document.

    Args:
        text: Document text
        strict: Reject unknown keys instead of logging them

    Returns:
        RunConfig with defaults filled in
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError('document', f"not valid JSON ({e})")
    if not isinstance(data, dict):
        raise ConfigError('document', "expected an object")

    top = {f.name for f in fields(RunConfig)}
    for key in sorted(set(data) - top):
        if strict:
            raise ConfigError(key, "unknown key")
        logger.warning("ignoring unknown key %s", key)

    kwargs: Dict[str, Any] = {}
    if data.get('problem') is not None:
        raw = data['problem']
        kwargs['problem'] = _section(ProblemSpec, raw, 'problem', strict, {
            'right': lambda v: _side_section(v, 'problem.right', strict),
            'left': lambda v: _side_section(v, 'problem.left', strict),
            'junction_facets': _triples,
            'params': dict,
        })
    if 'scheme' in data:
        kwargs['scheme'] = _section(SchemeSpec, data['scheme'], 'scheme', strict)
    if 'grid' in data:
        kwargs['grid'] = _section(GridSpec, data['grid'], 'grid', strict,
                                  {'window': lambda v: tuple(float(x) for x in v)})
    if 'horizon' in data:
        kwargs['horizon'] = data['horizon']
    if 'outputs' in data:
        kwargs['outputs'] = _section(OutputSpec, data['outputs'], 'outputs', strict,
                                     {'convergence_dx': lambda v: tuple(float(x) for x in v)})
    if data.get('viscous') is not None:
        kwargs['viscous'] = _section(ViscousConfig, data['viscous'], 'viscous', strict)
    if data.get('kpp') is not None:
        kwargs['kpp'] = _section(KppParams, data['kpp'], 'kpp', strict)
    if data.get('cell') is not None:
        kwargs['cell'] = _section(CellProblemParams, data['cell'], 'cell', strict,
                                  {'p': lambda v: tuple(float(x) for x in v)})
    try:
        return RunConfig(**kwargs)
    except TypeError as e:
        raise ConfigError('document', str(e))


def serialize_config(config: RunConfig) -> str:
    return json.dumps(asdict(config), indent=2)


def load_config(path: str, strict: bool = False) -> RunConfig:
    with open(path, 'r') as f:
        return parse_config(f.read(), strict)


# Problem construction

def _side_hamiltonian(spec: SideSpec, side: Side) -> SideHamiltonian:
    if spec.facets:
        fam = FacetFamily.from_facets(spec.facets)
    elif spec.profile is not None:
        fam = profile_to_facets(PROFILE_PRESETS[spec.profile](**spec.profile_params),
                                spec.n_controls)
    else:
        fam = FacetFamily.from_table(spec.x_samples, spec.facet_lists)
    return SideHamiltonian(side, facets=fam)


def _junction(kind: str, value: float, facets) -> FluxLimiter:
    extra = FacetFamily.from_facets(facets) if facets else None
    if kind == 'kirchhoff':
        limiter = FluxLimiter.kirchhoff()
        return limiter if extra is None else replace(limiter, facets=extra)
    return FluxLimiter(LimiterKind(kind), value=value, facets=extra)


def build_problem(config: RunConfig) -> PresetBundle:
    """Problem (with reference solution when the preset has one) for a run document"""
    spec = config.problem
    if spec.preset is not None:
        builder = PRESETS[spec.preset]
        accepted = inspect.signature(builder).parameters
        kwargs = dict(spec.params)
        if 'window' in accepted:
            kwargs.setdefault('window', tuple(config.grid.window))
        if 'x_max' in accepted:
            kwargs.setdefault('x_max', config.grid.window[1])
        if 'horizon' in accepted:
            kwargs.setdefault('horizon', config.horizon)
        bundle = preset(spec.preset, **kwargs)
        if bundle.problem is None:
            raise ConfigError('problem.preset', f"'{spec.preset}' has no solver")
    else:
        init = INITIAL_DATA[spec.initial_data]
        value = spec.initial_value
        problem = JunctionProblem(
            right=_side_hamiltonian(spec.right, Side.RIGHT),
            left=None if spec.left is None else _side_hamiltonian(spec.left, Side.LEFT),
            junction=_junction(spec.junction, spec.junction_value, spec.junction_facets),
            initial_data=lambda x: init(np.asarray(x, dtype=float), value),
            horizon=config.horizon, window=tuple(config.grid.window),
            name='inline', m_bound=spec.m_bound)
        bundle = PresetBundle('inline', problem, solver=config.scheme.kind)

    lo, hi = report_window(bundle.problem.window, bundle.problem.speed, config.horizon)
    if lo >= hi:
        logger.warning("window %s is too narrow: boundary data reach every node before t=%g",
                           bundle.problem.window, config.horizon)
    return bundle


def report_region(bundle: PresetBundle, horizon: float) -> Tuple[float, float]:
    problem = bundle.problem
    return report_window(problem.window, problem.speed, horizon)


# Solving

def solve(config: RunConfig, bundle: PresetBundle) -> SolutionStack:
    """Dispatch to the solver named by ``config.scheme.kind``"""
    kind = config.scheme.kind
    grid = config.grid
    problem = bundle.problem
    if kind in PDE_KINDS:
        limiter = problem.junction
        if config.scheme.limiter is not None:
            limiter = _junction(config.scheme.limiter, 0.0, ())
        scheme = JunctionScheme(SchemeKind(kind), limiter, cfl=grid.cfl)
        return solve_evolution(problem, scheme, grid.dx, config.horizon,
                               max_slices=config.outputs.max_slices)
    if kind == 'value_iteration':
        return value_iteration(problem, PolicyMode(config.scheme.mode), grid.dx, cfl=1.0)
    if kind == 'viscous':
        return solve_vanishing_viscosity(problem, config.viscous, grid.dx, config.horizon,
                                         cfl=grid.cfl, max_slices=config.outputs.max_slices)
    if kind == 'kpp':
        params = config.kpp or KppParams(horizon=config.horizon)
        return kpp_solve_variational(params, grid.dx, config.horizon,
                                     window=tuple(grid.window), cfl=grid.cfl)
    raise ConfigError('scheme.kind', f"'{kind}' does not produce a solution stack")


def exact_on_grid(exact: Callable[[float, float], float], nodes: np.ndarray,
                  t: float) -> np.ndarray:
    return np.array([exact(float(x), float(t)) for x in nodes])


def sup_error(stack: SolutionStack, exact: Callable[[float, float], float],
              region: Optional[Tuple[float, float]] = None,
              valid: Optional[Callable[[np.ndarray, float], np.ndarray]] = None) -> float:
    """max |u - exact| over stored slices and the nodes of ``region`` where ``valid`` holds"""
    mask = np.ones(stack.grid.size, dtype=bool) if region is None else stack.grid.mask(*region)
    nodes = stack.grid.nodes[mask]
    worst = 0.0
    for t, row in zip(stack.times, stack.values):
        keep = np.ones(nodes.shape, dtype=bool) if valid is None else valid(nodes, t)
        if not keep.any():
            continue
        err = np.abs(row[mask][keep] - exact_on_grid(exact, nodes[keep], t))
        worst = max(worst, float(err.max()))
    return worst


# CSV output

def write_frame(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, float_format='%.12g')
    print(f"Saved: {path}")
    return path


def stack_frame(stack: SolutionStack,
                exact: Optional[Callable[[float, float], float]] = None) -> pd.DataFrame:
    n_t, n_x = stack.values.shape
    frame = pd.DataFrame({'t': np.repeat(stack.times, n_x),
                          'x': np.tile(stack.grid.nodes, n_t),
                          'u': stack.values.ravel()})
    if exact is not None:
        frame['exact'] = np.concatenate([exact_on_grid(exact, stack.grid.nodes, t)
                                         for t in stack.times])
    return frame


def junction_frame(stack: SolutionStack) -> pd.DataFrame:
    frame = pd.DataFrame({'t': stack.times, 'u0': stack.junction_trace()})
    limiter = stack.diagnostics.get('limiter')
    if limiter is not None and limiter.shape == stack.times.shape:
        frame['G'] = limiter
    violation = stack.diagnostics.get('kirchhoff_violation')
    if violation is not None and violation.shape == stack.times.shape:
        frame['kirchhoff_violation'] = violation
    return frame


def residual_frame(stack: SolutionStack, problem: JunctionProblem,
                   junction_form: str = 'ishii') -> pd.DataFrame:
    return pd.DataFrame({
        'x': stack.grid.nodes,
        'sub': residual_profile(stack, problem, ResidualKind.SUB, junction_form),
        'super': residual_profile(stack, problem, ResidualKind.SUPER, junction_form),
    })


def load_stack_csv(path: str, label: str = '') -> SolutionStack:
    """Rebuild a stack from (t, x, u) rows"""
    df = pd.read_csv(path)
    times = np.sort(df['t'].unique())
    nodes = np.sort(df['x'].unique())
    if len(nodes) < 2:
        raise ConfigError('stack', f"{path} holds fewer than two nodes")
    dx = float(np.round(np.diff(nodes).mean(), 12))
    grid = UniformGrid(float(nodes[0]), float(nodes[-1]), dx)
    table = df.pivot_table(index='t', columns='x', values='u').reindex(index=times, columns=nodes)
    return SolutionStack(grid, times, table.to_numpy(dtype=float), label=label or os.path.basename(path))


@dataclass(frozen=True)
class ConvergenceRow:
    dx: float
    sup_error: float
    rate: float


@dataclass(frozen=True)
class ConvergenceReport:
    rows: Tuple[ConvergenceRow, ...]

    def __post_init__(self):
        if any(b.dx >= a.dx for a, b in zip(self.rows, self.rows[1:])):
            raise ConfigError('outputs.convergence_dx', "dx values must strictly decrease")

    @property
    def rates(self) -> List[float]:
        return [row.rate for row in self.rows[1:]]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=['dx', 'sup_error', 'rate'])


def convergence_study(config: RunConfig, dx_list) -> ConvergenceReport:
    """Sup errors against the reference solution over a decreasing dx sequence"""
    bundle = build_problem(config)
    if bundle.exact is None:
        raise ConfigError('problem', "a convergence study needs a reference solution")
    rows: List[ConvergenceRow] = []
    for dx in dx_list:
        run_config = replace(config, grid=replace(config.grid, dx=float(dx)))
        stack = solve(run_config, bundle)
        err = sup_error(stack, bundle.exact, report_region(bundle, config.horizon), bundle.valid)
        rate = math.nan
        if rows:
            prev = rows[-1]
            rate = math.log(prev.sup_error / err) / math.log(prev.dx / dx) if err > 0 else math.inf
        rows.append(ConvergenceRow(float(dx), err, rate))
        logger.info("dx=%g sup error %.3e rate %.3f", dx, err, rate)
    return ConvergenceReport(tuple(rows))


@dataclass
class RunResult:
    stack: Optional[SolutionStack] = None
    files: List[str] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)


def run(config: RunConfig) -> RunResult:
    """
    Solve one run document and write the requested CSV files.

    A convergence rate outside RATE_RANGE or a missed Kirchhoff bracket is
    recorded in ``failures``; the files are written regardless.

    Returns:
        Stack, written paths, a summary of scalar results and failed gates
    """
    out = config.outputs
    os.makedirs(out.directory, exist_ok=True)
    result = RunResult()
    kind = config.scheme.kind

    if kind == 'cell':
        params = config.cell or CellProblemParams()
        h_bar = cell_problem_effective_H(params)
        result.summary['H_bar'] = h_bar
        frame = pd.DataFrame([{'p1': params.p[0], 'p2': params.p[1], 'm': params.m,
                               'M': params.M, 'alpha': params.alpha, 'H_bar': h_bar}])
        result.files.append(write_frame(frame, os.path.join(out.directory, 'cell_problem.csv')))
        return result

    if kind == 'kpp':
        params = config.kpp or KppParams(horizon=config.horizon)
        bundle = preset('kpp', c1=params.c1, c2=params.c2, horizon=config.horizon,
                        window=tuple(config.grid.window), cap=params.cap)
    else:
        bundle = build_problem(config)
    stem = os.path.join(out.directory, f"{bundle.name}_{kind}")
    stack = solve(config, bundle)
    result.stack = stack

    if kind == 'kpp':
        times = kpp_front_times(params)
        result.summary.update({'front_arrival': kpp_front_arrival(stack), 't1': times.t1,
                               't2': times.t2, 'first_arrival': times.first_arrival})
    exact = bundle.exact if out.exact and bundle.solver != 'kpp' else None
    if exact is not None:
        result.summary['sup_error'] = sup_error(stack, exact, report_region(bundle, config.horizon),
                                                bundle.valid)
    result.summary['u0_final'] = float(stack.junction_trace()[-1])
    violation = stack.diagnostics.get('kirchhoff_violation')
    if violation is not None:
        result.summary['kirchhoff_violation'] = float(violation.max())
        if violation.max() > 0.0:
            result.failures.append(f"Kirchhoff bracket missed by {violation.max():.3g}")

    if out.stack:
        result.files.append(write_frame(stack_frame(stack, exact), f"{stem}_solution.csv"))
    if out.junction_trace:
        result.files.append(write_frame(junction_frame(stack), f"{stem}_junction.csv"))
    if out.residual:
        form = 'flux_limited' if kind in ('flux_limited', 'kirchhoff') else 'ishii'
        result.files.append(write_frame(residual_frame(stack, bundle.problem, form),
                                        f"{stem}_residual.csv"))
    if out.convergence_dx:
        report = convergence_study(config, out.convergence_dx)
        result.files.append(write_frame(report.frame(), f"{stem}_convergence.csv"))
        low, high = RATE_RANGE
        if report.rates:
            result.summary['min_rate'] = min(report.rates)
        for rate in report.rates:
            if not low <= rate <= high:
                result.failures.append(f"convergence rate {rate:.3g} outside [{low}, {high}]")
    return result


# Verification suites

@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    detail: str


def _gate(name: str, value: float, limit: float, label: str) -> CheckOutcome:
    return CheckOutcome(name, bool(value <= limit), f"{label}={value:.4g} (limit {limit:.4g})")


def _check_thresholds() -> CheckOutcome:
    from hamiltonian_core import eikonal_profile, shifted_eikonal_profile, thresholds_m1_m2
    cases = [(eikonal_profile(), eikonal_profile(), (0.0, 0.0)),
             (shifted_eikonal_profile(1.0), shifted_eikonal_profile(-1.0), (-1.0, 1.0))]
    worst = 0.0
    for right, left, expected in cases:
        m1, m2 = thresholds_m1_m2(SideHamiltonian(Side.RIGHT, profile=right),
                                  SideHamiltonian(Side.LEFT, profile=left))
        worst = max(worst, abs(m1 - expected[0]), abs(m2 - expected[1]))
    return _gate('thresholds_m1_m2 examples', worst, 1e-8, 'worst deviation')


def _random_side(rng, side: Side) -> SideHamiltonian:
    k = int(rng.integers(2, 6))
    b = rng.uniform(-2, 2, size=k)
    b[0], b[1] = -abs(b[0]) - 0.1, abs(b[1]) + 0.1
    return SideHamiltonian(side, facets=FacetFamily(b, np.zeros(k), rng.uniform(-1, 1, size=k)))


def _check_tangential_oracle(samples: int = 200) -> CheckOutcome:
    from hamiltonian_core import RestrictMode, restrict_facets, tangential_HT, tangential_HTreg
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(samples):
        H1, H2 = _random_side(rng, Side.RIGHT), _random_side(rng, Side.LEFT)
        for mode, fn in ((RestrictMode.TANGENTIAL_ALL, tangential_HT),
                         (RestrictMode.TANGENTIAL_REGULAR, tangential_HTreg)):
            fam = restrict_facets(H2.facets, H1.facets, mode)
            worst = max(worst, abs(fn(H1, H2) - float(np.max(-fam.l))))
    return _gate('tangential min-formula vs facet sup', worst, 1e-8, 'worst gap')


def _check_kirchhoff_zero(samples: int = 50) -> CheckOutcome:
    from hamiltonian_core import general_junction_to_flux_limiter, kirchhoff_G, tangential_HTreg
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(samples):
        H1, H2 = _random_side(rng, Side.RIGHT), _random_side(rng, Side.LEFT)
        level = tangential_HTreg(H1, H2)
        worst = max(worst, abs(general_junction_to_flux_limiter(kirchhoff_G, H1, H2, -level)))
    return _gate('Kirchhoff reduction vanishes at -H_T^reg', worst, 1e-7, 'worst |A|')


def _check_gap(dx: float = 2e-3) -> CheckOutcome:
    bundle = preset('one_d_gap')
    lower = value_iteration(bundle.problem, PolicyMode.ALL, dx).value(0.0, 1.0)
    upper = value_iteration(bundle.problem, PolicyMode.REGULAR, dx).value(0.0, 1.0)
    worst = max(abs(lower), abs(upper - (1.0 - math.exp(-1.0))))
    return _gate('U^-(0,1) = 0 and U^+(0,1) = 1-1/e', worst, 0.02, 'worst error')


def _check_flux_limited_vs_dp(dx: float = 1e-2) -> CheckOutcome:
    worst = 0.0
    for kind, mode in (('HT', PolicyMode.ALL), ('HTreg', PolicyMode.REGULAR)):
        bundle = preset('one_d_gap', junction=kind)
        problem = bundle.problem
        region = report_region(bundle, problem.horizon)
        pde = solve_evolution(problem, JunctionScheme(SchemeKind.FLUX_LIMITED, problem.junction), dx)
        dp = value_iteration(problem, mode, dx)
        mask = pde.grid.mask(*region)
        worst = max(worst, float(np.max(np.abs(pde.values[-1][mask] - dp.values[-1][mask]))))
    return _gate('flux-limited PDE vs dynamic programming', worst, 3 * dx, 'sup gap')


def _check_kirchhoff_equivalence(dx: float = 1e-2) -> CheckOutcome:
    worst = 0.0
    for name in ('giga_hamamuki', 'one_d_gap'):
        problem = preset(name).problem
        kc = solve_evolution(problem, JunctionScheme(SchemeKind.KIRCHHOFF), dx)
        fl = solve_evolution(problem, JunctionScheme(SchemeKind.FLUX_LIMITED,
                                                     FluxLimiter(LimiterKind.HTREG)), dx)
        worst = max(worst, float(np.max(np.abs(kc.values - fl.values))))
    return _gate('Kirchhoff vs flux limiter H_T^reg', worst, 1e-10, 'sup gap')


def _check_viscosity(dx: float = 2e-3) -> CheckOutcome:
    problem = preset('one_d_gap').problem
    target = 1.0 - math.exp(-1.0)
    errors = [abs(solve_vanishing_viscosity(problem, ViscousConfig(eps), dx, max_slices=2)
                  .final().junction_value - target) for eps in (0.1, 0.05, 0.025)]
    monotone = all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    detail = ", ".join(f"{e:.4g}" for e in errors)
    return CheckOutcome('vanishing viscosity tends to U^+', monotone and errors[-1] <= 0.05,
                        f"errors {detail} (last limit 0.05)")


def _check_giga_hamamuki(dx: float = 2e-3) -> CheckOutcome:
    bundle = preset('giga_hamamuki')
    problem = replace(bundle.problem, junction=FluxLimiter.constant(0.0))
    stack = solve_evolution(problem, JunctionScheme(SchemeKind.FLUX_LIMITED, problem.junction), dx,
                            max_slices=101)
    return _gate('Giga-Hamamuki min(|x|, t)', sup_error(stack, bundle.exact, (-2.0, 2.0)), 0.02,
                 'sup error')


def _check_kpp(dx: float = 2e-3) -> CheckOutcome:
    params = KppParams(c1=0.5, c2=2.0)
    times = kpp_front_times(params)
    closed = max(abs(times.t1 - 1.0), abs(times.t2 - math.sqrt(3.0) / 2.0))
    arrival = kpp_front_arrival(kpp_solve_variational(params, dx))
    ok = closed < 5e-5 and abs(arrival - math.sqrt(3.0) / 2.0) <= 0.02
    return CheckOutcome('KPP front reaches x=1 at sqrt(3)/2', ok,
                        f"arrival={arrival:.4f}, t1={times.t1:.4f}, t2={times.t2:.4f}")


def _check_cell() -> CheckOutcome:
    cases = (((0.0, 1.0), 2.0, 0.05), ((1.0, 0.0), 1.0, 0.05), ((3.0, 4.0), 8.0, 0.1))
    misses = []
    for p, expected, tol in cases:
        value = cell_problem_effective_H(CellProblemParams(m=1.0, M=2.0, p=p))
        if abs(value - expected) > tol:
            misses.append(f"p={p}: {value:.4f}")
    return CheckOutcome('cell problem effective Hamiltonian', not misses,
                        "; ".join(misses) or "all three gradients within tolerance")


def _check_tanker(dx: float = 1e-2) -> CheckOutcome:
    bundle = preset('tanker', g=-1.0, g_rogue=-0.5)
    problem = bundle.problem
    U = solve_evolution(problem, JunctionScheme(SchemeKind.FLUX_LIMITED, problem.junction), dx)
    rogue = bundle.extras['rogue_subsolution']
    V = SolutionStack(U.grid, U.times, np.vstack([exact_on_grid(rogue, U.grid.nodes, t)
                                                  for t in U.times]))
    region = report_region(bundle, problem.horizon)
    violation = float(residual_profile(V, problem, ResidualKind.SUB)[U.grid.mask(*region)].max())
    gap = float(np.max(V.values[-1] - U.values[-1]))
    return CheckOutcome('tanker rogue subsolution lies above U', violation <= 3 * dx and gap >= 0.4,
                        f"sub violation={violation:.3g}, max(V-U)={gap:.3f}")


def _check_level_solver(samples: int = 100) -> CheckOutcome:
    from hamiltonian_core import solve_monotone_level
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(samples):
        k = int(rng.integers(1, 5))
        fam = FacetFamily(-rng.uniform(0.2, 2.0, size=k), np.zeros(k), rng.uniform(-1, 1, size=k))
        target = float(rng.uniform(-2.0, 2.0))
        s = solve_monotone_level(lambda v: fam.hamiltonian(0.0, v), target)
        worst = max(worst, abs(float(fam.hamiltonian(0.0, s)) - target))
        if not float(fam.hamiltonian(0.0, s - 1e-6)) < target:
            worst = math.inf
    return _gate('monotone level solver on random profiles', worst, 1e-8, 'worst |h(s) - target|')


def _check_eval_facets(samples: int = 200) -> CheckOutcome:
    from hamiltonian_core import eval_facets
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(samples):
        k = int(rng.integers(1, 6))
        fam = FacetFamily(rng.uniform(-2, 2, size=k), rng.uniform(0, 1, size=k),
                          rng.uniform(-1, 1, size=k))
        r = float(rng.uniform(-1, 1))
        p, q = rng.uniform(-3, 3, size=2)
        lam = float(rng.uniform())
        hp, hq = eval_facets(fam, r, p), eval_facets(fam, r, q)
        convexity = eval_facets(fam, r, lam * p + (1 - lam) * q) - (lam * hp + (1 - lam) * hq)
        lipschitz = abs(hp - hq) - float(np.abs(fam.b).max()) * abs(p - q)
        worst = max(worst, convexity, lipschitz)
    return _gate('facet Hamiltonian convex and Lipschitz in p', worst, 1e-12, 'worst excess')


def _check_split_reproduction(samples: int = 100) -> CheckOutcome:
    from hamiltonian_core import monotone_split
    rng = np.random.default_rng(29)
    s = np.linspace(-5.0, 5.0, 201)
    worst = 0.0
    for _ in range(samples):
        H = _random_side(rng, Side.RIGHT if rng.uniform() < 0.5 else Side.LEFT)
        split = monotone_split(H)
        rebuilt = np.maximum(split.increasing(s), split.decreasing(s))
        worst = max(worst, float(np.max(np.abs(rebuilt - H.facets.hamiltonian(0.0, s)))))
    return _gate('max(H^-, H^+) = H', worst, 1e-12, 'worst gap')


def _check_scheme_monotone(samples: int = 25, dx: float = 0.05) -> CheckOutcome:
    rng = np.random.default_rng(31)
    grid = UniformGrid(-1.0, 1.0, dx)
    worst = 0.0
    for kind, junction in ((SchemeKind.FLUX_LIMITED, 'HT'), (SchemeKind.FLUX_LIMITED, 'HTreg'),
                           (SchemeKind.KIRCHHOFF, 'HTreg'), (SchemeKind.ISHII_RELAXED, 'HTreg')):
        problem = preset('one_d_gap', window=(-1.0, 1.0), junction=junction).problem
        limiter = problem.junction if kind is SchemeKind.FLUX_LIMITED else None
        scheme = JunctionScheme(kind, limiter)
        dt, _ = hyperbolic_time_step(problem, dx, scheme.cfl, 0.2)
        for _ in range(samples):
            u = rng.uniform(-1, 1, size=grid.size)
            bump = rng.uniform(0, 0.5, size=grid.size)
            low = scheme_step(GridFunction(grid, u), problem, scheme, dt)
            high = scheme_step(GridFunction(grid, u + bump), problem, scheme, dt)
            worst = max(worst, float(np.max(low - high)))
    return _gate('scheme monotone under raised data', worst, 1e-12, 'worst decrease')


def _check_consistency_order(dx_list: Tuple[float, ...] = (0.04, 0.02, 0.01)) -> CheckOutcome:
    problem = preset('giga_hamamuki').problem
    errors = [interior_truncation_error(problem, np.sin, np.cos, dx, (-2.0, 2.0)) for dx in dx_list]
    slope = float(np.polyfit(np.log(dx_list), np.log(errors), 1)[0])
    low, high = RATE_RANGE
    return CheckOutcome('interior truncation error is first order', low <= slope <= high,
                        f"log-log slope={slope:.3f} (range {low}-{high})")


def _check_discrete_comparison(samples: int = 50, dx: float = 0.05) -> CheckOutcome:
    rng = np.random.default_rng(37)
    knots = np.linspace(-1.0, 1.0, 9)
    worst = 0.0
    for _ in range(samples):
        heights = rng.uniform(-1, 1, size=knots.size)
        problem = JunctionProblem(right=_random_side(rng, Side.RIGHT),
                                  left=_random_side(rng, Side.LEFT),
                                  junction=FluxLimiter(LimiterKind.HT),
                                  initial_data=lambda x, h=heights: np.interp(x, knots, h),
                                  horizon=0.2, window=(-1.0, 1.0))
        lifted = replace(problem, initial_data=lambda x, h=heights: np.interp(x, knots, h) + 0.3)
        scheme = JunctionScheme(SchemeKind.FLUX_LIMITED, problem.junction)
        U = solve_evolution(problem, scheme, dx)
        V = solve_evolution(lifted, scheme, dx)
        worst = max(worst, float(np.max(U.values - V.values)),
                    float(np.max(V.values - U.values)) - 0.3)
    return _gate('flux limiter H_T keeps u0 <= u0 + 0.3 ordered', worst, 1e-12, 'worst excess')


def _check_lower_below_upper(dx: float = 0.05) -> CheckOutcome:
    worst, names = -math.inf, []
    for name in PRESETS:
        problem = preset(name).problem
        if problem is None or problem.is_half_line or problem.junction.kind is LimiterKind.GENERAL:
            continue
        lower = value_iteration(problem, PolicyMode.ALL, dx)
        upper = value_iteration(problem, PolicyMode.REGULAR, dx)
        worst = max(worst, float(np.max(lower.values - upper.values)))
        names.append(name)
    outcome = _gate('U^- <= U^+ on two-sided presets', worst, 2 * dx, 'max(U^- - U^+)')
    return replace(outcome, detail=f"{outcome.detail} over {', '.join(names)}")


def _check_value_iteration_monotone(dx: float = 0.05) -> CheckOutcome:
    rng = np.random.default_rng(41)
    problem = preset('one_d_gap').problem
    knots = np.linspace(*problem.window, 13)
    bump = rng.uniform(0.0, 0.5, size=knots.size)
    base = problem.initial_data
    raised = replace(problem, initial_data=lambda x: base(x) + np.interp(x, knots, bump))
    worst = 0.0
    for mode in PolicyMode:
        lower = value_iteration(problem, mode, dx)
        upper = value_iteration(raised, mode, dx)
        worst = max(worst, float(np.max(lower.values - upper.values)))
    return _gate('value iteration monotone in u0', worst, 1e-12, 'worst decrease')


SUITES: Dict[str, List[Callable[[], CheckOutcome]]] = {
    'core': [_check_thresholds, _check_tangential_oracle, _check_kirchhoff_zero,
             _check_level_solver, _check_eval_facets, _check_split_reproduction,
             _check_scheme_monotone, _check_consistency_order],
    'examples': [_check_gap, _check_flux_limited_vs_dp, _check_kirchhoff_equivalence,
                 _check_viscosity, _check_giga_hamamuki, _check_kpp, _check_cell, _check_tanker,
                 _check_discrete_comparison, _check_lower_below_upper,
                 _check_value_iteration_monotone],
}


def _run_check(check: Callable[[], CheckOutcome]) -> CheckOutcome:
    try:
        return check()
    except StrataError as e:
        return CheckOutcome(check.__name__, False, f"raised {type(e).__name__}: {e}")


def verify(suite: str = 'all', threads: Optional[int] = None) -> int:
    """
    Run a verification suite in a thread pool and print one status line per check.

    Returns:
        0 when every check passes, 1 otherwise
    """
    if suite == 'all':
        checks = SUITES['core'] + SUITES['examples']
    elif suite in SUITES:
        checks = SUITES[suite]
    else:
        raise ConfigError('suite', f"expected core, examples or all, got '{suite}'")
    if threads is None:
        threads = int(os.environ.get('STRATAHJ_THREADS', os.cpu_count() or 1))
    workers = max(1, min(threads, len(checks)))

    print(f"🔍 Running {len(checks)} checks ({suite}) on {workers} worker(s)")
    print("=" * 50)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(_run_check, checks))
    for outcome in outcomes:
        mark = "✅" if outcome.passed else "❌"
        print(f"{mark} {outcome.name}: {outcome.detail}")
    failed = [o for o in outcomes if not o.passed]
    print("=" * 50)
    if failed:
        print(f"❌ {len(failed)} of {len(outcomes)} checks failed")
        return 1
    print(f"🎉 All {len(outcomes)} checks passed")
    return 0
