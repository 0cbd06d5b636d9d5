import json
import logging
import math
import os
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

import cli_io
from applications import CellProblemParams, KppParams
from cli_io import (SUITES, ConvergenceReport, ConvergenceRow, GridSpec, OutputSpec, ProblemSpec,
                    RunConfig, SchemeSpec, SideSpec, build_problem, convergence_study,
                    load_config, load_stack_csv, parse_config, run, serialize_config, verify)
from junction_pde import ViscousConfig
from solver_errors import ConfigError
from stratahj import main

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')


def gh_config(tmp_path, dx=0.02, **outputs):
    return RunConfig(problem=ProblemSpec(preset='giga_hamamuki'),
                     grid=GridSpec(dx=dx, window=(-3.0, 3.0)),
                     outputs=OutputSpec(directory=str(tmp_path), **outputs))


def test_defaults_filled_in():
    config = parse_config('{"problem": {"preset": "giga_hamamuki"}}')
    assert config.grid == GridSpec(dx=2e-3, cfl=0.5, window=(-4.0, 4.0))
    assert config.scheme.kind == 'flux_limited'
    assert config.horizon == 1.0


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIG_DIR)))
def test_shipped_documents_round_trip(name):
    config = load_config(os.path.join(CONFIG_DIR, name), strict=True)
    assert parse_config(serialize_config(config), strict=True) == config


def test_unknown_key_strict_and_lenient(caplog):
    text = '{"problem": {"preset": "giga_hamamuki"}, "grid": {"dxx": 0.1}}'
    with pytest.raises(ConfigError) as err:
        parse_config(text, strict=True)
    assert err.value.field == 'grid.dxx'
    with caplog.at_level(logging.WARNING):
        config = parse_config(text)
    assert config.grid.dx == 2e-3
    assert 'grid.dxx' in caplog.text


@pytest.mark.parametrize("doc, field", [
    ('{"problem": {"preset": "giga_hamamuki"}, "grid": {"dx": -1}}', 'grid.dx'),
    ('{"problem": {"preset": "giga_hamamuki"}, "grid": {"cfl": 1.5}}', 'grid.cfl'),
    ('{"problem": {"preset": "giga_hamamuki"}, "grid": {"window": [1, 2]}}', 'grid.window'),
    ('{"problem": {"preset": "nowhere"}}', 'problem.preset'),
    ('{"scheme": {"kind": "flux_limited"}}', 'problem'),
    ('{"problem": {"preset": "one_d_gap"}, "scheme": {"kind": "viscous"}}', 'viscous'),
    ('{"problem": {"preset": "one_d_gap"}, "scheme": {"mode": "some"}}', 'scheme.mode'),
    ('{"problem": {"preset": "one_d_gap"}, "horizon": 0}', 'horizon'),
    ('{"problem": {"preset": "one_d_gap"}, "outputs": {"convergence_dx": [0.01, 0.02]}}',
     'outputs.convergence_dx'),
    ('{"problem": {"right": {"facets": [[1, 0]]}}}', 'problem.right.facets'),
    ('{"problem": {"right": {"facets": [[1, 0, 0]]}, "junction_facets": [[1, 0, 0]]}}',
     'problem.junction_facets'),
    ('{"scheme": {"kind": "kpp"}, "kpp": {"c1": -1}}', 'kpp'),
    ('[1, 2]', 'document'),
    ('{not json', 'document'),
])
def test_invalid_documents_name_their_field(doc, field):
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.field == field


def test_inline_problem_built_from_facets_and_profile():
    config = load_config(os.path.join(CONFIG_DIR, 'inline_facets.json'))
    bundle = build_problem(config)
    problem = bundle.problem
    assert bundle.exact is None
    assert problem.right.facets.size == 3
    assert problem.left.facets.size == 2
    assert problem.junction.junction_facets().l.tolist() == [0.5]
    assert problem.initial_data(np.array([-0.5, 0.25])).tolist() == [0.5, 0.25]


def test_preset_receives_grid_window():
    config = parse_config('{"problem": {"preset": "tanker"}, "grid": {"window": [0, 2]}}')
    assert build_problem(config).problem.window == (0.0, 2.0)


def test_run_writes_csv_files(tmp_path):
    result = run(gh_config(tmp_path))
    names = sorted(os.path.basename(f) for f in result.files)
    assert names == ['giga_hamamuki_flux_limited_junction.csv',
                     'giga_hamamuki_flux_limited_solution.csv']
    assert result.summary['sup_error'] <= 3 * 0.02
    frame = pd.read_csv(tmp_path / 'giga_hamamuki_flux_limited_solution.csv')
    assert list(frame.columns) == ['t', 'x', 'u', 'exact']
    trace = pd.read_csv(tmp_path / 'giga_hamamuki_flux_limited_junction.csv')
    assert list(trace.columns) == ['t', 'u0', 'G']
    assert np.allclose(trace['u0'], 0.0)


def test_stack_csv_loads_back(tmp_path):
    result = run(gh_config(tmp_path, junction_trace=False))
    stack = load_stack_csv(result.files[0])
    assert stack.grid.same_as(result.stack.grid)
    assert np.allclose(stack.times, result.stack.times)
    assert np.allclose(stack.values, result.stack.values, atol=1e-10)


def test_residual_output(tmp_path):
    config = load_config(os.path.join(CONFIG_DIR, 'tanker.json'))
    config = replace(config, outputs=replace(config.outputs, directory=str(tmp_path), stack=False))
    result = run(config)
    residual = pd.read_csv(result.files[-1])
    assert list(residual.columns) == ['x', 'sub', 'super']
    assert (residual[['sub', 'super']] >= 0).all().all()


def test_convergence_rate_is_first_order(tmp_path):
    report = convergence_study(gh_config(tmp_path), [0.04, 0.02, 0.01])
    assert [row.dx for row in report.rows] == [0.04, 0.02, 0.01]
    assert math.isnan(report.rows[0].rate)
    for rate in report.rates:
        assert 0.8 <= rate <= 1.2
    assert list(report.frame().columns) == ['dx', 'sup_error', 'rate']


def test_convergence_report_needs_decreasing_dx():
    with pytest.raises(ConfigError):
        ConvergenceReport((ConvergenceRow(0.01, 0.1, math.nan), ConvergenceRow(0.02, 0.2, 1.0)))


def test_convergence_needs_reference(tmp_path):
    config = load_config(os.path.join(CONFIG_DIR, 'inline_facets.json'))
    with pytest.raises(ConfigError):
        convergence_study(config, [0.02, 0.01])


def test_cell_run(tmp_path):
    config = RunConfig(scheme=SchemeSpec(kind='cell'), outputs=OutputSpec(directory=str(tmp_path)))
    result = run(config)
    assert result.summary['H_bar'] == pytest.approx(2.0, abs=0.05)
    frame = pd.read_csv(result.files[0])
    assert frame['H_bar'].iloc[0] == pytest.approx(result.summary['H_bar'])


def test_value_iteration_run(tmp_path):
    text = json.dumps({'problem': {'preset': 'one_d_gap'},
                       'scheme': {'kind': 'value_iteration', 'mode': 'regular'},
                       'grid': {'dx': 0.02, 'window': [-3, 3]},
                       'outputs': {'directory': str(tmp_path), 'stack': False}})
    result = run(parse_config(text))
    assert result.summary['u0_final'] == pytest.approx(1.0 - math.exp(-1.0), abs=0.03)
    assert result.summary['sup_error'] <= 0.05


def test_verify_core_suite(capsys):
    assert verify('core', threads=2) == 0
    out = capsys.readouterr().out
    assert '✅' in out and '❌' not in out


def test_verify_rejects_unknown_suite():
    with pytest.raises(ConfigError):
        verify('everything')


def test_cli_presets_and_errors(tmp_path, capsys):
    assert main(['presets']) == 0
    assert 'giga_hamamuki' in capsys.readouterr().out
    assert main(['solve', '--config', str(tmp_path / 'missing.json')]) == 1
    bad = tmp_path / 'bad.json'
    bad.write_text('{"problem": {"preset": "giga_hamamuki"}, "grid": {"dx": 0}}')
    assert main(['solve', '--config', str(bad)]) == 1
    assert 'grid.dx' in capsys.readouterr().err


def test_cli_solve_with_overrides(tmp_path, capsys):
    cfg = tmp_path / 'gh.json'
    cfg.write_text('{"problem": {"preset": "giga_hamamuki"}, "grid": {"window": [-2, 2]}}')
    out_dir = tmp_path / 'out'
    assert main(['solve', '--config', str(cfg), '--dx', '0.05', '--out', str(out_dir)]) == 0
    assert (out_dir / 'giga_hamamuki_flux_limited_solution.csv').exists()
    assert 'Saved:' in capsys.readouterr().out


def test_stub_preset_is_not_solvable():
    config = parse_config('{"problem": {"preset": "chessboard_stub"}}')
    with pytest.raises(ConfigError) as err:
        build_problem(config)
    assert err.value.field == 'problem.preset'


def random_config(rng):
    def floats(n, lo=-1.0, hi=1.0):
        return tuple(float(v) for v in rng.uniform(lo, hi, size=n))

    def side():
        pick = int(rng.integers(3))
        if pick == 0:
            return SideSpec(facets=tuple(floats(3) for _ in range(int(rng.integers(1, 4)))))
        if pick == 1:
            return SideSpec(profile='shifted_eikonal',
                            profile_params={'shift': float(rng.uniform(-1, 1))},
                            n_controls=int(rng.integers(5, 50)))
        samples = tuple(sorted(floats(2, 0.0, 2.0)))
        return SideSpec(x_samples=samples, facet_lists=tuple((floats(3),) for _ in samples))

    if rng.uniform() < 0.5:
        problem = ProblemSpec(preset=str(rng.choice(['giga_hamamuki', 'one_d_gap', 'tanker'])),
                              params={'horizon': float(rng.uniform(0.5, 2.0))})
    else:
        problem = ProblemSpec(right=side(), left=side() if rng.uniform() < 0.7 else None,
                              junction=str(rng.choice(cli_io.JUNCTION_KINDS)),
                              junction_value=float(rng.uniform(-1, 1)),
                              junction_facets=((0.0,) + floats(2, 0.0, 1.0),),
                              initial_data=str(rng.choice(list(cli_io.INITIAL_DATA))),
                              initial_value=float(rng.uniform()),
                              m_bound=None if rng.uniform() < 0.5 else float(rng.uniform(2, 5)))
    kind = str(rng.choice(cli_io.SOLVER_KINDS))
    dx = float(rng.uniform(1e-3, 0.1))
    return RunConfig(
        problem=problem,
        scheme=SchemeSpec(kind=kind, mode=str(rng.choice(['all', 'regular'])),
                          limiter=None if rng.uniform() < 0.5 else 'HT'),
        grid=GridSpec(dx=dx, cfl=float(rng.uniform(0.1, 1.0)),
                      window=(-float(rng.uniform(0.5, 4)), float(rng.uniform(0.5, 4)))),
        horizon=float(rng.uniform(0.1, 3.0)),
        outputs=OutputSpec(directory=f"out_{int(rng.integers(100))}",
                           residual=bool(rng.uniform() < 0.5),
                           convergence_dx=(4 * dx, 2 * dx, dx),
                           max_slices=int(rng.integers(2, 500))),
        viscous=ViscousConfig(*floats(2, 0.01, 1.0)) if kind == 'viscous' else None,
        kpp=KppParams(c1=float(rng.uniform(0.1, 2)), c2=float(rng.uniform(0.1, 2)))
        if rng.uniform() < 0.5 else None,
        cell=CellProblemParams(p=floats(2)) if rng.uniform() < 0.5 else None)


def test_random_documents_round_trip(rng):
    for _ in range(40):
        config = random_config(rng)
        assert parse_config(serialize_config(config), strict=True) == config


def test_run_reports_off_rate_convergence(tmp_path, capsys, monkeypatch):
    slow = ConvergenceReport((ConvergenceRow(0.04, 0.1, math.nan),
                              ConvergenceRow(0.02, 0.08, math.log(0.1 / 0.08) / math.log(2.0))))
    monkeypatch.setattr(cli_io, 'convergence_study', lambda config, dx_list: slow)
    config = gh_config(tmp_path, dx=0.05, stack=False, convergence_dx=(0.04, 0.02))
    result = run(config)
    assert len(result.failures) == 1 and 'convergence rate' in result.failures[0]

    cfg = tmp_path / 'gh.json'
    cfg.write_text(serialize_config(config))
    assert main(['solve', '--config', str(cfg)]) == 1
    assert 'outside [0.8, 1.2]' in capsys.readouterr().err


def test_kirchhoff_run_passes_its_gate(tmp_path):
    config = RunConfig(problem=ProblemSpec(preset='one_d_gap'), scheme=SchemeSpec(kind='kirchhoff'),
                       grid=GridSpec(dx=0.02, window=(-3.0, 3.0)),
                       outputs=OutputSpec(directory=str(tmp_path), stack=False))
    result = run(config)
    assert result.summary['kirchhoff_violation'] == 0.0
    assert result.failures == []


@pytest.mark.parametrize("name", ['_check_discrete_comparison', '_check_lower_below_upper',
                                  '_check_value_iteration_monotone'])
def test_invariant_checks_pass(name):
    check = {c.__name__: c for c in SUITES['examples']}[name]
    outcome = check()
    assert outcome.passed, outcome.detail
