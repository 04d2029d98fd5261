"""
Tests for schedules, slope fits, study evaluation and the convergence study
"""
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

import tbqmmm.harness as harness
import tbqmmm.solver as solver
from tbqmmm.core.exceptions import ConfigurationError, FitDomainError, InvalidParameterError, ReferenceSolveError
from tbqmmm.core.schema import load_experiment, parse_experiment
from tbqmmm.harness import (
    CSV_COLUMNS,
    StudyRow,
    _evaluate,
    core_shift,
    fit_slope,
    geometry_error,
    predicted_rates,
    run_convergence_study,
    run_single,
    schedule,
    study_radii,
    write_study_csv,
)
from tbqmmm.lattice import LatticeSpec, build_reference
from tbqmmm.services.tracking import StudyTracker
from tbqmmm.solver import SolverResult


def test_schedule_case_p():
    """R_BUF = 1 + 0.6 log R_QM and R_MM = R_QM^3 / 2 + 2 R_BUF for k = 2"""
    r_buf, r_mm = schedule(2.5)
    assert r_buf == pytest.approx(1.0 + 0.6 * math.log(2.5))
    assert r_mm == pytest.approx(0.5 * 2.5 ** 3 + 2.0 * r_buf)


def test_schedule_higher_order():
    r_buf, r_mm = schedule(4.0, 'P', 3)
    assert r_mm == pytest.approx(0.5 * 4.0 ** 5 + 2.0 * r_buf)


def test_schedule_floor_case_d():
    """Case D never places R_MM inside the QM buffer"""
    r_buf, r_mm = schedule(4.0, 'D', 2)
    assert r_mm == pytest.approx(4.0 + 2.0 * r_buf)


def test_schedule_rejects_bad_input():
    with pytest.raises(InvalidParameterError):
        schedule(0.0)
    with pytest.raises(InvalidParameterError):
        schedule(3.0, 'Q')


def test_predicted_rates():
    assert predicted_rates('P', 2, 2) == {'geom': -3.0, 'energy': -4.0}
    assert predicted_rates('P', 2, 3) == {'geom': -4.5, 'energy': -6.0}
    assert predicted_rates('D', 2) == {'geom': -1.0, 'energy': -2.0}
    with pytest.raises(InvalidParameterError):
        predicted_rates('P', 2, 4)


def test_fit_slope_recovers_power_law():
    xs = np.array([2.5, 3.5, 4.5, 5.5])
    slope, intercept, r2 = fit_slope(xs, 7.0 * xs ** -3.0)
    assert slope == pytest.approx(-3.0)
    assert intercept == pytest.approx(math.log(7.0))
    assert r2 == pytest.approx(1.0)


@pytest.mark.parametrize("xs, ys", [
    ([1.0, 2.0], [1.0, 0.5]),              # too few points
    ([1.0, 2.0, 3.0], [1.0, 0.0, 0.5]),    # non-positive value
    ([1.0, 2.0, 3.0], [1.0, np.inf, 0.5]),
    ([1.0, 2.0, 3.0], [1.0, 0.5]),
])
def test_fit_slope_domain(xs, ys):
    with pytest.raises(FitDomainError):
        fit_slope(xs, ys)


def test_study_radii_cap():
    """Caps replace R_MM and are reported"""
    cfg = parse_experiment({'schedule': {'mm_radius_max': 8.0}})
    r_buf, r_mm, capped = study_radii(cfg, 4.5)
    assert capped and r_mm == 8.0
    assert r_buf == pytest.approx(1.0 + 0.6 * math.log(4.5))


def test_study_radii_manual():
    cfg = parse_experiment({'schedule': {'auto': False, 'r_buf': 1.5, 'r_mm': 7.0}})
    assert study_radii(cfg, 3.5) == (1.5, 7.0, False)


def test_geometry_error_maps_sites():
    """Hybrid displacements are matched to reference sites by position"""
    big = build_reference(LatticeSpec(), 6.0, 'vacancy', 1.0)
    small = build_reference(LatticeSpec(), 4.0, 'vacancy', 1.0)
    rng = np.random.default_rng(0)
    u_small = rng.normal(scale=0.01, size=(len(small), 2))
    u_big = np.zeros((len(big), 2))
    u_big[big.site_ids(small.sites)] = u_small
    assert geometry_error(big, u_big, small, u_small) == pytest.approx(0.0, abs=1e-14)
    assert geometry_error(big, u_big, small, np.zeros_like(u_small)) > 0.0


def _rows(scheme, geom_rate, energy_rate=None, min_eig=0.1):
    rows = []
    for r in [3.5, 4.5, 5.5, 6.5]:
        rows.append(StudyRow(scheme, r, 10.0, 1.5, 50, geom_error=2.0 * r ** geom_rate,
                             energy_error=None if energy_rate is None else 3.0 * r ** energy_rate,
                             resid=1e-9, iters=10, wall_s=1.0, converged=True, min_eig=min_eig))
    return rows


def test_evaluate_passes_predicted_rates():
    cfg = parse_experiment({})
    slopes, checks = _evaluate(cfg, {'energy': _rows('energy', -3.0, -4.0)})
    assert slopes['energy']['geom_slope'] == pytest.approx(-3.0)
    assert slopes['energy']['energy_slope'] == pytest.approx(-4.0)
    assert all(c.passed for c in checks)
    assert {c.name for c in checks} == {'energy.geom_slope', 'energy.energy_slope', 'energy.geom_monotone',
                                        'energy.stability'}


def test_evaluate_flags_slow_rates_and_instability():
    cfg = parse_experiment({})
    _, checks = _evaluate(cfg, {'energy': _rows('energy', -1.0, -1.5, min_eig=-0.01)})
    failed = {c.name for c in checks if not c.passed}
    assert failed == {'energy.geom_slope', 'energy.energy_slope', 'energy.stability'}


def test_evaluate_flags_non_monotone():
    cfg = parse_experiment({})
    rows = _rows('energy', -3.0, -4.0)
    rows[2].geom_error = 2.0 * rows[1].geom_error
    _, checks = _evaluate(cfg, {'energy': rows})
    assert not next(c for c in checks if c.name == 'energy.geom_monotone').passed


def test_evaluate_skips_unconverged_rows():
    """Rows that did not converge are excluded from fits"""
    cfg = parse_experiment({})
    rows = _rows('energy', -3.0, -4.0)
    rows[1].converged = False
    rows[1].geom_error = 100.0
    slopes, _ = _evaluate(cfg, {'energy': rows})
    assert slopes['energy']['geom_slope'] == pytest.approx(-3.0)


def test_evaluate_cross_check():
    cfg = parse_experiment({'scheme': 'both'})
    energy, force = _rows('energy', -3.0, -4.0), _rows('force', -3.0)
    for e, f in zip(energy, force):
        e.cross_distance = f.cross_distance = 0.5 * e.geom_error
    energy[-1].cross_distance = force[-1].cross_distance = 10.0 * energy[-1].geom_error
    _, checks = _evaluate(cfg, {'energy': energy, 'force': force})
    cross = [c for c in checks if c.name.startswith('cross_check')]
    assert len(cross) == 4
    assert [c.passed for c in cross] == [True, True, True, False]


def test_study_csv(tmp_path):
    path = write_study_csv(_rows('energy', -3.0, -4.0), tmp_path / "study.csv")
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == CSV_COLUMNS
    assert len(rows) == 5
    assert float(rows[1][0]) == 3.5


def test_study_needs_three_radii(tmp_path):
    cfg = parse_experiment({'r_qm': [3.5, 4.5]})
    with pytest.raises(ConfigurationError):
        run_convergence_study(cfg, out_dir=tmp_path)


def test_study_requires_converged_reference(tmp_path, mocker):
    cfg = parse_experiment({'defect': 'vacancy', 'schedule': {'mm_radius_max': 6.0, 'reference_radius': 8.5}})
    failed = SolverResult(u_star=None, iterations=5000, residual_norm=1e-3, converged=False, wall_time=1.0,
                          message="max_iter")
    mocker.patch.object(harness, 'reference_solve_atm', return_value=failed)
    with pytest.raises(ReferenceSolveError):
        run_convergence_study(cfg, out_dir=tmp_path)


@pytest.fixture
def quick_config():
    return parse_experiment({
        'name': 'quick',
        'defect': 'vacancy',
        'r_qm': [3.5],
        'stability': False,
        'schedule': {'auto': False, 'r_buf': 1.5, 'r_mm': 5.0},
    })


@pytest.mark.integration
def test_run_single_writes_diagnostics(tmp_path, quick_config, no_cache):
    run = run_single(quick_config, 3.5, out_dir=tmp_path, cache=no_cache)
    assert run.result.converged
    assert run.diagnostics_path.exists()
    with open(run.geometry_path) as f:
        doc = json.load(f)
    assert doc['radii'] == {'R_QM': 3.5, 'R_MM': 5.0, 'R_BUF': 1.5}


@pytest.mark.integration
def test_run_single_perfect_lattice_stays_near_reference(tmp_path, no_cache):
    """Without a defect only ghost forces move the atoms"""
    cfg = parse_experiment({'defect': 'none', 'r_def': 0.0, 'r_qm': [3.5], 'stability': False,
                            'schedule': {'auto': False, 'r_buf': 2.0, 'r_mm': 6.0}})
    run = run_single(cfg, 3.5, cache=no_cache)
    assert run.result.converged
    assert run.diagnostics_path is None
    values = run.result.u_star.values
    assert np.max(np.abs(values)) < 0.1
    centre = run.model.config.site_id([0.0, 0.0])
    assert np.linalg.norm(values[centre]) < 1e-6


@pytest.mark.slow
@pytest.mark.integration
def test_convergence_study_outputs(tmp_path, no_cache):
    """A capped three-row study writes CSV, geometry and summary files"""
    cfg = parse_experiment({
        'name': 'mini',
        'defect': 'vacancy',
        'scheme': 'both',
        'r_qm': [3.0, 3.5, 4.0],
        'stability': False,
        'schedule': {'mm_radius_max': 6.0, 'reference_radius': 8.5},
        'solver': {'tol': 1e-7, 'reference_tol': 1e-7},
    })
    outcome = run_convergence_study(cfg, out_dir=tmp_path, cache=no_cache, tracker=StudyTracker(tracking_uri=""))
    for key in ('energy', 'force', 'geometry', 'summary'):
        assert Path(outcome.paths[key]).exists()
    assert all(row.converged for rows in outcome.rows.values() for row in rows)
    assert all(row.capped for row in outcome.rows['energy'])
    with open(outcome.paths['summary']) as f:
        summary = json.load(f)
    assert summary['mm_radius_capped'] is True
    assert summary['predicted_rates'] == {'geom': -3.0, 'energy': -4.0}
    assert set(summary['rows']) == {'energy', 'force'}
    assert any(c['name'].startswith('cross_check') for c in summary['checks'])


def test_force_options_carry_gmres_settings():
    cfg = parse_experiment({'solver': {'gmres_rtol': 1e-3, 'gmres_restart': 30, 'newton_max_iter': 40}})
    assert harness._solve_options(cfg, 'force') == {'tol': cfg.solver.tol, 'max_iter': 40,
                                                    'gmres_rtol': 1e-3, 'gmres_restart': 30}
    assert set(harness._solve_options(cfg, 'energy')) == {'tol', 'max_iter'}


@pytest.mark.integration
def test_run_single_honours_gmres_settings(quick_config, no_cache, mocker):
    cfg = quick_config.model_copy(update={
        'solver': quick_config.solver.model_copy(update={'gmres_rtol': 1e-4, 'gmres_restart': 25}),
    })
    spy = mocker.spy(solver, 'gmres')
    run = run_single(cfg, 3.5, scheme='force', cache=no_cache)
    assert run.result.converged, run.result.message
    assert spy.call_args_list
    assert all(c.kwargs['rtol'] == 1e-4 and c.kwargs['restart'] == 25 for c in spy.call_args_list)


def test_evaluate_reference_independence():
    """Errors against the enlarged reference are compared row by row"""
    cfg = parse_experiment({})
    rows = _rows('energy', -3.0, -4.0)
    for row in rows:
        row.geom_error_enlarged = 1.01 * row.geom_error
        row.energy_error_enlarged = 0.99 * row.energy_error
    _, checks = _evaluate(cfg, {'energy': rows})
    check = next(c for c in checks if c.name == 'reference.independence')
    assert check.passed
    assert check.value == pytest.approx(0.01)

    rows[2].geom_error_enlarged = 1.2 * rows[2].geom_error
    _, checks = _evaluate(cfg, {'energy': rows})
    check = next(c for c in checks if c.name == 'reference.independence')
    assert not check.passed
    assert check.value == pytest.approx(0.2)


def test_evaluate_without_enlarged_reference_has_no_independence_check():
    _, checks = _evaluate(parse_experiment({}), {'energy': _rows('energy', -3.0, -4.0)})
    assert not any(c.name.startswith('reference.') for c in checks)


def test_core_shift_compares_matching_sites():
    small = build_reference(LatticeSpec(), 5.0, 'vacancy', 1.0)
    big = build_reference(LatticeSpec(), 8.0, 'vacancy', 1.0)
    rng = np.random.default_rng(2)
    u_small = rng.normal(scale=0.01, size=(len(small), 2))
    u_big = np.zeros((len(big), 2))
    u_big[big.site_ids(small.sites)] = u_small
    assert core_shift(small, u_small, big, u_big, 3.5) == pytest.approx(0.0, abs=1e-15)

    nearest = int(np.argmin(np.where(small.radii > 0, small.radii, np.inf)))
    u_big[big.site_ids(small.sites[[nearest]])[0]] += [3e-4, 4e-4]
    assert core_shift(small, u_small, big, u_big, 3.5) == pytest.approx(5e-4)
    with pytest.raises(InvalidParameterError):
        core_shift(small, u_small, big, u_big, -1.0)


@pytest.mark.slow
@pytest.mark.integration
def test_convergence_study_reference_domain_check(tmp_path, no_cache):
    """With reference_scale set the reference is re-solved and compared"""
    cfg = parse_experiment({
        'name': 'mini_enlarged',
        'defect': 'vacancy',
        'r_qm': [3.0, 3.5, 4.0],
        'stability': False,
        'schedule': {'mm_radius_max': 6.0, 'reference_radius': 8.5},
        'solver': {'tol': 1e-7, 'reference_tol': 1e-7},
        'assertions': {'reference_scale': 1.5},
    })
    outcome = run_convergence_study(cfg, out_dir=tmp_path, cache=no_cache, tracker=StudyTracker(tracking_uri=""))
    assert outcome.enlarged_reference is not None and outcome.enlarged_reference.converged
    names = {c.name: c for c in outcome.checks}
    assert np.isfinite(names['reference.core_shift'].value)
    assert names['reference.core_shift'].threshold == 1e-4
    assert np.isfinite(names['reference.independence'].value)
    assert all(row.geom_error_enlarged is not None and row.energy_error_enlarged is not None
               for row in outcome.rows['energy'])
    with open(outcome.paths['summary']) as f:
        summary = json.load(f)
    assert summary['reference']['enlarged']['radius'] == pytest.approx(12.75)


SHIPPED_DIVACANCY = Path(__file__).parent.parent / "configs" / "divacancy_energy.toml"


@pytest.mark.slow
@pytest.mark.integration
@pytest.mark.parametrize("r_qm", [3.5, 4.5, 5.5, 6.5])
def test_shipped_divacancy_ladder_solves(r_qm, no_cache):
    """Every row of the shipped divacancy ladder converges with the scheduled radii"""
    cfg = load_experiment(SHIPPED_DIVACANCY).model_copy(update={'stability': False})
    run = run_single(cfg, r_qm, cache=no_cache)
    assert run.result.converged, run.result.message
    assert np.max(np.abs(run.result.u_star.values)) < 1.0


@pytest.mark.slow
@pytest.mark.integration
def test_shipped_divacancy_force_row_solves(no_cache):
    cfg = load_experiment(SHIPPED_DIVACANCY).model_copy(update={'stability': False})
    run = run_single(cfg, 4.5, scheme='force', cache=no_cache)
    assert run.result.converged, run.result.message


@pytest.mark.slow
@pytest.mark.integration
def test_divacancy_study_meets_predicted_rates(tmp_path, no_cache):
    """Capped divacancy ladder, both schemes: slope bounds and the scheme cross-check hold"""
    cfg = load_experiment(SHIPPED_DIVACANCY).model_copy(update={'scheme': 'both', 'stability': False})
    outcome = run_convergence_study(cfg, out_dir=tmp_path, cache=no_cache, tracker=StudyTracker(tracking_uri=""))
    assert all(row.converged for rows in outcome.rows.values() for row in rows)
    checks = {c.name: c for c in outcome.checks}
    for name in ('energy.geom_slope', 'energy.energy_slope', 'force.geom_slope'):
        assert checks[name].passed, checks[name]
    assert checks['energy.geom_slope'].threshold == -2.5
    assert checks['energy.energy_slope'].threshold == -3.0
    cross = [c for c in outcome.checks if c.name.startswith('cross_check')]
    assert len(cross) == len(cfg.r_qm)
    assert all(c.passed for c in cross), cross
