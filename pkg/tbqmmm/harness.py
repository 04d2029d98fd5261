"""
Convergence studies in the QM radius: radius schedules, the ATM reference,
per-row hybrid solves, error measurement, log-log slope fits and the CSV /
JSON outputs.
"""
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core.coefficient_cache import CoefficientCache
from .core.config import config
from .core.exceptions import ConfigurationError, FitDomainError, InvalidParameterError, ReferenceSolveError, TBQMMMError
from .core.schema import ExperimentConfig
from .coupling import HybridModel, dump_diagnostics, hybrid_energy
from .dislocation import ScrewPredictor
from .lattice import LatticeSpec, ReferenceConfig, RegionDecomposition, build_reference, decompose, weighted_seminorm
from .services.tracking import IterationLog, StudyTracker
from .solver import SolverResult, reference_solve_atm, solve, stability_check
from .tb_core import TBParams, make_function
from .utils.parallel import parallel_map

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['R_QM', 'R_MM', 'R_BUF', 'n_qm', 'geom_error', 'energy_error', 'resid', 'iters', 'wall_s']
# allowed growth of geom_error from one ladder step to the next
MONOTONE_TOLERANCE = 0.2


# --- Schedules and rates ---

def schedule(r_qm: float, case: str = 'P', k: int = 2) -> Tuple[float, float]:
    """
    (R_BUF, R_MM) for a QM radius: R_BUF = 1 + 0.6 log R_QM and
    R_MM = R_QM^p / 2 + 2 R_BUF with p = 2k - 1 (case P) or k - 1 (case D),
    never below R_QM + 2 R_BUF.
    """
    if r_qm <= 0:
        raise InvalidParameterError(f"R_QM must be positive, got {r_qm}")
    if case not in ('P', 'D'):
        raise InvalidParameterError(f"Unknown case {case!r}")
    r_buf = 1.0 + 0.6 * math.log(r_qm)
    power = 2 * k - 1 if case == 'P' else k - 1
    r_mm = 0.5 * r_qm ** power + 2.0 * r_buf
    return r_buf, max(r_mm, r_qm + 2.0 * r_buf)


def predicted_rates(case: str = 'P', k: int = 2, m: int = 2) -> Dict[str, float]:
    """Theoretical exponents of the geometry and energy errors in R_QM."""
    if case == 'P' and m == 2:
        return {'geom': -(2.0 * k - 1.0), 'energy': -2.0 * k}
    if case == 'P' and m == 3:
        return {'geom': -1.5 * (2.0 * k - 1.0), 'energy': -3.0 * k}
    if case == 'D':
        return {'geom': -(k - 1.0), 'energy': -float(k)}
    raise InvalidParameterError(f"No predicted rates for case={case!r}, m={m}")


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares line through (log x, log y): (slope, intercept, r^2)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise FitDomainError("xs and ys must be 1-D arrays of equal length")
    if len(xs) < 3:
        raise FitDomainError(f"Need at least 3 points for a slope fit, got {len(xs)}")
    if np.any(xs <= 0) or np.any(ys <= 0) or not np.all(np.isfinite(ys)):
        raise FitDomainError("Slope fits need finite positive values")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = ly - (slope * lx + intercept)
    total = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(residual ** 2) / total if total > 0 else 1.0
    return float(slope), float(intercept), float(r2)


# --- Experiment plumbing ---

def tb_params_from_config(cfg: ExperimentConfig) -> TBParams:
    tb = cfg.tb
    return TBParams(
        hopping=make_function(tb.hopping.family, tb.hopping.coeffs),
        density=make_function(tb.density.family, tb.density.coeffs),
        onsite=make_function(tb.onsite.family, tb.onsite.coeffs),
        r_cut=tb.r_cut,
        mu=tb.mu,
        beta=tb.beta,
        smoothness_margin=tb.smoothness_margin,
        min_separation=tb.min_separation,
    )


def predictor_from_config(cfg: ExperimentConfig) -> Optional[ScrewPredictor]:
    if cfg.case != 'D':
        return None
    p = cfg.predictor
    return ScrewPredictor(burgers_b3=p.burgers_b3, core=tuple(p.core), core_radius=p.core_radius)


def study_radii(cfg: ExperimentConfig, r_qm: float) -> Tuple[float, float, bool]:
    """(R_BUF, R_MM, capped) for one ladder entry."""
    settings = cfg.schedule
    if settings.auto:
        r_buf, r_mm = schedule(r_qm, cfg.case, cfg.expansion_order)
    else:
        r_buf, r_mm = settings.r_buf, settings.r_mm
    capped = settings.mm_radius_max is not None and r_mm > settings.mm_radius_max
    if capped:
        logger.info("R_MM=%.2f capped at %.2f for R_QM=%.2f", r_mm, settings.mm_radius_max, r_qm)
        r_mm = settings.mm_radius_max
    return r_buf, r_mm, capped


def build_case_reference(cfg: ExperimentConfig, domain_radius: float) -> ReferenceConfig:
    spec = LatticeSpec(site_dimension=3 if cfg.case == 'D' else 2)
    return build_reference(spec, domain_radius, cfg.defect, cfg.r_def)


def hybrid_domain_radius(r_mm: float, r_buf: float, params: TBParams) -> float:
    return r_mm + 2.0 * r_buf + params.r_cut


def reference_radius(cfg: ExperimentConfig) -> float:
    if cfg.schedule.reference_radius is not None:
        return cfg.schedule.reference_radius
    return 2.0 * max(study_radii(cfg, r)[1] for r in cfg.r_qm)


def geometry_error(
    reference_config: ReferenceConfig,
    u_ref: np.ndarray,
    hybrid_config: ReferenceConfig,
    u_hybrid: np.ndarray,
    gamma: float = 1.0,
) -> float:
    """||D u_ref - D u_hybrid||_{l^2_gamma} on the reference sites, u_hybrid extended by zero."""
    ids = reference_config.site_ids(hybrid_config.sites)
    u_hybrid = np.asarray(u_hybrid, dtype=float)
    lost = (ids < 0) & np.any(u_hybrid != 0.0, axis=1)
    if np.any(lost):
        logger.warning("%d displaced hybrid sites lie outside the reference domain", int(lost.sum()))
    mapped = np.zeros_like(np.asarray(u_ref, dtype=float))
    mapped[ids[ids >= 0]] = u_hybrid[ids >= 0]
    return weighted_seminorm(np.asarray(u_ref) - mapped, reference_config, gamma)


@dataclass
class StudyRow:
    scheme: str
    r_qm: float
    r_mm: float
    r_buf: float
    n_qm: int
    geom_error: Optional[float] = None
    energy_error: Optional[float] = None
    resid: Optional[float] = None
    iters: Optional[int] = None
    wall_s: Optional[float] = None
    converged: bool = False
    capped: bool = False
    min_eig: Optional[float] = None
    cross_distance: Optional[float] = None
    geom_error_enlarged: Optional[float] = None
    energy_error_enlarged: Optional[float] = None
    message: str = ""

    def csv_values(self) -> List[str]:
        def fmt(v):
            return "" if v is None else f"{v:.10e}" if isinstance(v, float) else str(v)
        return [fmt(self.r_qm), fmt(self.r_mm), fmt(self.r_buf), fmt(self.n_qm), fmt(self.geom_error),
                fmt(self.energy_error), fmt(self.resid), fmt(self.iters), fmt(self.wall_s)]


@dataclass
class Check:
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""


@dataclass
class SingleRun:
    result: SolverResult
    model: HybridModel
    diagnostics_path: Optional[Path] = None
    geometry_path: Optional[Path] = None


@dataclass
class StudyOutcome:
    rows: Dict[str, List[StudyRow]]
    slopes: Dict[str, Dict[str, float]]
    checks: List[Check]
    reference: SolverResult
    paths: Dict[str, str] = field(default_factory=dict)
    enlarged_reference: Optional[SolverResult] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _solve_options(cfg: ExperimentConfig, scheme: str) -> dict:
    solver = cfg.solver
    if scheme == 'energy':
        return {'tol': solver.tol, 'max_iter': solver.max_iter}
    return {'tol': solver.tol, 'max_iter': solver.newton_max_iter,
            'gmres_rtol': solver.gmres_rtol, 'gmres_restart': solver.gmres_restart}


def build_geometry(cfg: ExperimentConfig, r_qm: float) -> Tuple[ReferenceConfig, RegionDecomposition, bool]:
    """The hybrid domain and its decomposition for one ladder entry."""
    r_buf, r_mm, capped = study_radii(cfg, r_qm)
    hybrid_config = build_case_reference(cfg, hybrid_domain_radius(r_mm, r_buf, tb_params_from_config(cfg)))
    return hybrid_config, decompose(hybrid_config, r_qm, r_mm, r_buf), capped


def build_model(
    cfg: ExperimentConfig,
    r_qm: float,
    scheme: str,
    include_both: bool = False,
    cache: Optional[CoefficientCache] = None,
    threads: Optional[int] = None,
) -> Tuple[HybridModel, bool]:
    """The hybrid model of one ladder entry and whether R_MM was capped."""
    params = tb_params_from_config(cfg)
    hybrid_config, decomposition, capped = build_geometry(cfg, r_qm)
    model = HybridModel.build(
        hybrid_config, decomposition, params,
        scheme=scheme, case=cfg.case, k_E=cfg.k_E, k_F=cfg.k_F,
        predictor=predictor_from_config(cfg), include_both=include_both,
        fd_step=cfg.taylor.fd_step, drop_tol=cfg.taylor.drop_tol,
        richardson=cfg.taylor.richardson, symmetrize=cfg.taylor.symmetrize,
        cache=cache, threads=threads,
    )
    return model, capped


def run_single(
    cfg: ExperimentConfig,
    r_qm: float,
    scheme: Optional[str] = None,
    out_dir: Optional[Union[str, Path]] = None,
    cache: Optional[CoefficientCache] = None,
    iteration_log: Optional[IterationLog] = None,
    threads: Optional[int] = None,
) -> SingleRun:
    """One hybrid solve with a per-site residual and strain dump."""
    scheme = scheme or cfg.schemes[0]
    model, _ = build_model(cfg, r_qm, scheme, cache=cache, threads=threads)
    result = solve(model, iteration_log=iteration_log, **_solve_options(cfg, scheme))
    if scheme == 'energy' and cfg.stability and result.converged:
        result.stability_min_eig = stability_check(model, result.u_star, cfg.solver.stability_eigs).min_eigenvalue

    run = SingleRun(result=result, model=model)
    if out_dir is not None:
        out = Path(out_dir)
        tag = f"{cfg.name}_{scheme}_rqm{r_qm:g}"
        run.diagnostics_path = dump_diagnostics(model, result.u_star, out / f"{tag}_diagnostics.csv", cfg.gamma)
        run.geometry_path = model.config.save_json(out / f"{tag}_geometry.json", model.decomposition)
    return run


def _run_row(
    cfg: ExperimentConfig,
    r_qm: float,
    ref_config: ReferenceConfig,
    reference: SolverResult,
    cache: Optional[CoefficientCache],
    iteration_log: Optional[IterationLog],
    enlarged: Optional[Tuple[ReferenceConfig, SolverResult]] = None,
) -> Dict[str, StudyRow]:
    """All requested schemes at one R_QM, plus the cross-check distance."""
    rows: Dict[str, StudyRow] = {}
    solutions: Dict[str, np.ndarray] = {}
    r_buf, r_mm, capped = study_radii(cfg, r_qm)
    try:
        base, capped = build_model(cfg, r_qm, cfg.schemes[0], include_both=cfg.scheme == 'both', cache=cache)
    except TBQMMMError as e:
        logger.error("R_QM=%.2f: model build failed: %s", r_qm, e)
        return {s: StudyRow(s, r_qm, r_mm, r_buf, 0, capped=capped, message=str(e)) for s in cfg.schemes}

    for scheme in cfg.schemes:
        model = base if base.scheme == scheme else base.with_scheme(scheme)
        row = StudyRow(scheme, r_qm, r_mm, r_buf, len(model.decomposition.qm_ids), capped=capped)
        start = time.perf_counter()
        try:
            result = solve(model, iteration_log=iteration_log, **_solve_options(cfg, scheme))
            row.resid, row.iters, row.converged, row.message = (
                result.residual_norm, result.iterations, result.converged, result.message)
            row.geom_error = geometry_error(ref_config, reference.u_star.values, model.config,
                                            result.u_star.values, cfg.gamma)
            if enlarged is not None:
                row.geom_error_enlarged = geometry_error(enlarged[0], enlarged[1].u_star.values, model.config,
                                                         result.u_star.values, cfg.gamma)
            if scheme == 'energy':
                energy = result.energy if result.energy is not None else hybrid_energy(model, result.u_star)
                row.energy_error = abs(reference.energy - energy)
                if enlarged is not None:
                    row.energy_error_enlarged = abs(enlarged[1].energy - energy)
                if cfg.stability and result.converged:
                    row.min_eig = stability_check(model, result.u_star, cfg.solver.stability_eigs).min_eigenvalue
            solutions[scheme] = result.u_star.values
        except TBQMMMError as e:
            logger.error("R_QM=%.2f scheme=%s failed: %s", r_qm, scheme, e)
            row.message = str(e)
        row.wall_s = time.perf_counter() - start
        rows[scheme] = row

    if len(solutions) == 2:
        distance = weighted_seminorm(solutions['energy'] - solutions['force'], base.config, cfg.gamma)
        for row in rows.values():
            row.cross_distance = distance
    return rows


def _fit_rows(rows: List[StudyRow], attr: str, exclude_last: bool) -> Optional[Tuple[float, float, float]]:
    usable = [r for r in rows if r.converged and getattr(r, attr) is not None and getattr(r, attr) > 0]
    if exclude_last and len(usable) > 3:
        usable = usable[:-1]
    try:
        return fit_slope([r.r_qm for r in usable], [getattr(r, attr) for r in usable])
    except FitDomainError as e:
        logger.warning("No %s fit: %s", attr, e)
        return None


def _evaluate(cfg: ExperimentConfig, rows: Dict[str, List[StudyRow]]) -> Tuple[Dict[str, Dict[str, float]], List[Check]]:
    checks: List[Check] = []
    slopes: Dict[str, Dict[str, float]] = {}
    thresholds = cfg.assertions
    for scheme, scheme_rows in rows.items():
        slopes[scheme] = {}
        attrs = ['geom_error'] + (['energy_error'] if scheme == 'energy' else [])
        for attr in attrs:
            fit = _fit_rows(scheme_rows, attr, thresholds.exclude_last)
            key = attr.replace('_error', '')
            limit = thresholds.geom_slope_max if key == 'geom' else thresholds.energy_slope_max
            if fit is None:
                if limit is not None:
                    checks.append(Check(f"{scheme}.{key}_slope", False, None, limit, "not enough converged rows"))
                continue
            slope, intercept, r2 = fit
            slopes[scheme].update({f"{key}_slope": slope, f"{key}_intercept": intercept, f"{key}_r2": r2})
            if limit is not None:
                checks.append(Check(f"{scheme}.{key}_slope", slope <= limit, slope, limit))

        errors = [r.geom_error for r in scheme_rows if r.converged and r.geom_error is not None]
        growth = max((b / a for a, b in zip(errors, errors[1:]) if a > 0), default=0.0)
        checks.append(Check(f"{scheme}.geom_monotone", growth <= 1.0 + MONOTONE_TOLERANCE, growth, 1.0 + MONOTONE_TOLERANCE))

        if scheme == 'energy' and cfg.stability and thresholds.require_stability:
            eigs = [r.min_eig for r in scheme_rows if r.min_eig is not None]
            if eigs:
                checks.append(Check("energy.stability", min(eigs) > 0.0, min(eigs), 0.0))

    if cfg.scheme == 'both' and thresholds.cross_check_factor is not None:
        for e_row, f_row in zip(rows['energy'], rows['force']):
            if e_row.cross_distance is None or e_row.geom_error is None or f_row.geom_error is None:
                continue
            bound = thresholds.cross_check_factor * max(e_row.geom_error, f_row.geom_error)
            checks.append(Check(f"cross_check.rqm{e_row.r_qm:g}", e_row.cross_distance <= bound,
                                e_row.cross_distance, bound))

    changes = [
        change
        for scheme_rows in rows.values() for row in scheme_rows if row.converged
        for change in (_relative_change(row.geom_error, row.geom_error_enlarged),
                       _relative_change(row.energy_error, row.energy_error_enlarged))
        if change is not None
    ]
    if changes:
        tolerance = thresholds.reference_tolerance
        checks.append(Check("reference.independence", max(changes) <= tolerance, max(changes), tolerance,
                            f"{len(changes)} errors compared against the enlarged reference"))
    return slopes, checks


def _relative_change(value: Optional[float], enlarged: Optional[float]) -> Optional[float]:
    if value is None or enlarged is None or value <= 0:
        return None
    return abs(enlarged - value) / value


def core_shift(
    reference_config: ReferenceConfig,
    u_ref: np.ndarray,
    enlarged_config: ReferenceConfig,
    u_enlarged: np.ndarray,
    core_radius: float,
) -> float:
    """Largest change of the reference displacement over the sites with |l| <= core_radius."""
    core = np.flatnonzero(reference_config.radii <= core_radius + 1e-12)
    if len(core) == 0:
        raise InvalidParameterError(f"No sites within core radius {core_radius}")
    ids = enlarged_config.site_ids(reference_config.sites[core])
    if np.any(ids < 0):
        raise InvalidParameterError("The enlarged reference does not contain the core sites")
    diff = np.asarray(u_enlarged, dtype=float)[ids] - np.asarray(u_ref, dtype=float)[core]
    return float(np.max(np.linalg.norm(diff, axis=1)))


def _enlarged_reference(
    cfg: ExperimentConfig,
    params: TBParams,
    ref_radius: float,
    iteration_log: Optional[IterationLog],
) -> Tuple[ReferenceConfig, SolverResult]:
    radius = cfg.assertions.reference_scale * ref_radius
    logger.info("Re-solving the reference on radius %.2f for the domain check", radius)
    enlarged_config = build_case_reference(cfg, radius)
    result = reference_solve_atm(
        enlarged_config, params, tol=cfg.solver.reference_tol, max_iter=cfg.solver.reference_max_iter,
        predictor=predictor_from_config(cfg), iteration_log=iteration_log,
    )
    if not result.converged:
        logger.warning("Enlarged reference did not converge: |g|=%.3e (%s)", result.residual_norm, result.message)
    return enlarged_config, result


def write_study_csv(rows: List[StudyRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_values())
    return path


def write_summary(outcome: StudyOutcome, cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = {
        'name': cfg.name,
        'created': datetime.now().isoformat(),
        'passed': outcome.passed,
        'case': cfg.case,
        'defect': cfg.defect,
        'schemes': cfg.schemes,
        'k_E': cfg.k_E,
        'k_F': cfg.k_F,
        'gamma': cfg.gamma,
        'predicted_rates': predicted_rates(cfg.case, cfg.expansion_order),
        'slopes': outcome.slopes,
        'checks': [asdict(c) for c in outcome.checks],
        'exclude_last': cfg.assertions.exclude_last,
        'mm_radius_capped': any(r.capped for rows in outcome.rows.values() for r in rows),
        'reference': {
            'radius': reference_radius(cfg),
            'converged': outcome.reference.converged,
            'residual': outcome.reference.residual_norm,
            'energy': outcome.reference.energy,
            'iterations': outcome.reference.iterations,
            'enlarged': None if outcome.enlarged_reference is None else {
                'radius': cfg.assertions.reference_scale * reference_radius(cfg),
                'converged': outcome.enlarged_reference.converged,
                'residual': outcome.enlarged_reference.residual_norm,
                'energy': outcome.enlarged_reference.energy,
            },
        },
        'rows': {scheme: [asdict(r) for r in rows] for scheme, rows in outcome.rows.items()},
        'config': cfg.model_dump(),
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, default=float)
    return path


def run_convergence_study(
    cfg: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    cache: Optional[CoefficientCache] = None,
    tracker: Optional[StudyTracker] = None,
    iteration_log: Optional[IterationLog] = None,
    threads: Optional[int] = None,
) -> StudyOutcome:
    """Reference solve, hybrid solves over the R_QM ladder, slope fits and output files."""
    if len(cfg.r_qm) < 3:
        raise ConfigurationError("A convergence study needs at least 3 R_QM values")
    out = Path(out_dir or cfg.output_dir or config.output_dir)
    params = tb_params_from_config(cfg)
    tracker = tracker or StudyTracker()

    ref_radius = reference_radius(cfg)
    logger.info("Study %s: reference radius %.2f, ladder %s", cfg.name, ref_radius, cfg.r_qm)
    ref_config = build_case_reference(cfg, ref_radius)
    reference = reference_solve_atm(
        ref_config, params, tol=cfg.solver.reference_tol, max_iter=cfg.solver.reference_max_iter,
        predictor=predictor_from_config(cfg), iteration_log=iteration_log,
    )
    if not reference.converged:
        raise ReferenceSolveError(
            f"ATM reference did not converge: |g|={reference.residual_norm:.3e} ({reference.message})"
        )
    enlarged = None
    if cfg.assertions.reference_scale is not None:
        enlarged = _enlarged_reference(cfg, params, ref_radius, iteration_log)

    with tracker:
        tracker.start(cfg.name, {
            'case': cfg.case, 'defect': cfg.defect, 'scheme': cfg.scheme, 'k_E': cfg.k_E, 'k_F': cfg.k_F,
            'r_qm': ",".join(f"{r:g}" for r in cfg.r_qm), 'reference_radius': ref_radius, 'gamma': cfg.gamma,
        })
        per_rqm = parallel_map(
            lambda r: _run_row(cfg, r, ref_config, reference, cache, iteration_log, enlarged), cfg.r_qm, threads,
        )
        rows = {scheme: [entry[scheme] for entry in per_rqm] for scheme in cfg.schemes}
        for step, entry in enumerate(per_rqm):
            for scheme, row in entry.items():
                tracker.log_row(step, {f"{scheme}_geom_error": row.geom_error,
                                       f"{scheme}_energy_error": row.energy_error,
                                       f"{scheme}_resid": row.resid})

        slopes, checks = _evaluate(cfg, rows)
        if enlarged is not None:
            enlarged_config, enlarged_result = enlarged
            shift = core_shift(ref_config, reference.u_star.values, enlarged_config,
                               enlarged_result.u_star.values, cfg.r_def + params.r_cut)
            limit = cfg.assertions.core_shift_max
            checks.append(Check("reference.core_shift", enlarged_result.converged and shift <= limit, shift, limit,
                                "" if enlarged_result.converged else "enlarged reference did not converge"))
        outcome = StudyOutcome(rows=rows, slopes=slopes, checks=checks, reference=reference,
                               enlarged_reference=enlarged[1] if enlarged is not None else None)
        tracker.log_summary({f"{s}_{k}": v for s, fits in slopes.items() for k, v in fits.items()})

    for scheme, scheme_rows in rows.items():
        outcome.paths[scheme] = str(write_study_csv(scheme_rows, out / f"{cfg.name}_{scheme}.csv"))
    geometry, decomposition, _ = build_geometry(cfg, cfg.r_qm[0])
    outcome.paths["geometry"] = str(geometry.save_json(out / f"{cfg.name}_geometry.json", decomposition))
    outcome.paths['summary'] = str(write_summary(outcome, cfg, out / f"{cfg.name}_summary.json"))
    logger.info("Study %s %s: %s", cfg.name, "PASSED" if outcome.passed else "FAILED", outcome.paths['summary'])
    return outcome
