import sys
import json
import argparse
import logging
from pathlib import Path
from dataclasses import asdict

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

from tbqmmm.core.config import config
from tbqmmm.core.coefficient_cache import CoefficientCache
from tbqmmm.core.exceptions import TBQMMMError, ReferenceSolveError, StabilityCheckError
from tbqmmm.core.schema import ExperimentConfig, load_experiment
from tbqmmm.dislocation import antiplane_params
from tbqmmm.harness import predictor_from_config, run_convergence_study, run_single, study_radii, tb_params_from_config
from tbqmmm.properties import run_property_suite
from tbqmmm.services.tracking import IterationLog, StudyTracker
from tbqmmm.site_potential import cached_taylor_force, cached_taylor_potential
from tbqmmm.tb_core import ANTIPLANE, PLANAR

logger = logging.getLogger("tbqmmm.cli")

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


def _load(args) -> ExperimentConfig:
    cfg = load_experiment(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={'seed': args.seed})
    return cfg


def _out_dir(args, cfg=None) -> Path:
    return Path(args.out or (cfg.output_dir if cfg is not None else None) or config.output_dir)


def _cache(args) -> CoefficientCache:
    return CoefficientCache(enabled=not args.no_cache)


def _fmt(value, spec=".3e") -> str:
    return "-" if value is None else format(value, spec)


def cmd_solve(args):
    """Single hybrid solve at one R_QM."""
    cfg = _load(args)
    out = _out_dir(args, cfg)
    r_buf, r_mm, capped = study_radii(cfg, args.rqm)
    print(f"\nSolve {cfg.name}: case={cfg.case} defect={cfg.defect} scheme={args.scheme or cfg.schemes[0]}")
    print(f"  R_QM={args.rqm:g}  R_BUF={r_buf:.3f}  R_MM={r_mm:.3f}{'  (capped)' if capped else ''}")

    run = run_single(cfg, args.rqm, scheme=args.scheme, out_dir=out, cache=_cache(args),
                     iteration_log=IterationLog(), threads=args.threads)
    result = run.result
    status = "CONVERGED" if result.converged else "NOT CONVERGED"
    print(f"\n{status} after {result.iterations} iterations ({result.wall_time:.2f}s)")
    print(f"  Residual norm: {result.residual_norm:.3e}")
    if result.energy is not None:
        print(f"  Hybrid energy: {result.energy:.12e}")
    if result.stability_min_eig is not None:
        print(f"  Min Hessian eigenvalue: {result.stability_min_eig:.3e}")
    if result.message:
        print(f"  Message: {result.message}")
    print(f"  Diagnostics: {run.diagnostics_path}")
    print(f"  Geometry:    {run.geometry_path}")

    unstable = result.stability_min_eig is not None and result.stability_min_eig <= 0.0
    return EXIT_OK if result.converged and not unstable else EXIT_ASSERTION


def cmd_converge(args):
    """Convergence study over the R_QM ladder."""
    cfg = _load(args)
    outcome = run_convergence_study(cfg, out_dir=_out_dir(args, cfg), cache=_cache(args),
                                    tracker=StudyTracker(), iteration_log=IterationLog(), threads=args.threads)

    print(f"\nConvergence study: {cfg.name}")
    print("=" * 80)
    for scheme, rows in outcome.rows.items():
        print(f"\n{scheme} mixing")
        print(f"  {'R_QM':>6} {'R_MM':>8} {'R_BUF':>6} {'n_qm':>6} {'geom':>10} {'energy':>10} {'resid':>10} {'iters':>6}")
        for row in rows:
            flag = "" if row.converged else "  *"
            print(f"  {row.r_qm:6.2f} {row.r_mm:8.2f} {row.r_buf:6.2f} {row.n_qm:6d} "
                  f"{_fmt(row.geom_error):>10} {_fmt(row.energy_error):>10} {_fmt(row.resid):>10} "
                  f"{row.iters if row.iters is not None else '-':>6}{flag}")
        for key, value in outcome.slopes.get(scheme, {}).items():
            if key.endswith('_slope'):
                print(f"  {key}: {value:.3f}")

    print("\nChecks:")
    for check in outcome.checks:
        print(f"  {'PASS' if check.passed else 'FAIL'} {check.name}: {_fmt(check.value, '.4g')}"
              f" (threshold {_fmt(check.threshold, '.4g')}) {check.detail}")
    print(f"\nSummary: {outcome.paths['summary']}")
    return EXIT_OK if outcome.passed else EXIT_ASSERTION


def cmd_properties(args):
    """Invariant and decay suites."""
    cfg = _load(args) if args.config else None
    params = tb_params_from_config(cfg) if cfg is not None else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg is not None else 0)
    checks = run_property_suite(params, seed=seed, include_screw=not args.skip_screw,
                                include_hybrid=not args.skip_hybrid, cache=_cache(args))

    print(f"\nProperty suite (seed {seed}):")
    for check in checks:
        print(f"  {'PASS' if check.passed else 'FAIL'} {check.name}: {_fmt(check.value, '.4g')} {check.detail}")

    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "properties.json"
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({'seed': seed, 'checks': [asdict(c) for c in checks]}, f, indent=2, default=float)
    print(f"\nWrote {path}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_ASSERTION


def cmd_coeffs(args):
    """Build (or list) cached Taylor coefficients for every R_BUF of a study."""
    cache = _cache(args)
    if args.inspect:
        entries = cache.list_entries()
        if not entries:
            print("No cached coefficients found.")
            return EXIT_OK
        print(f"\nCoefficient cache: {cache.cache_dir}")
        print("=" * 80)
        for entry in entries:
            meta = entry['meta']
            print(f"\n{entry['key'][:12]} {entry['kind']}")
            print(f"  Created: {entry['created']}")
            print(f"  k={meta.get('k')} R_BUF={meta.get('r_buf')} kinematics={meta.get('kinematics')} "
                  f"fd_step={meta.get('fd_step')} ({entry['size_bytes'] / 1024:.1f} KB)")
        return EXIT_OK

    if not args.config:
        print("coeffs needs a CONFIG unless --inspect is given.")
        return EXIT_CONFIG
    cfg = _load(args)
    params = tb_params_from_config(cfg)
    kinematics = PLANAR
    if cfg.case == 'D':
        params = antiplane_params(params, predictor_from_config(cfg))
        kinematics = ANTIPLANE
    options = dict(fd_step=cfg.taylor.fd_step, drop_tol=cfg.taylor.drop_tol, kinematics=kinematics,
                   richardson=cfg.taylor.richardson, symmetrize=cfg.taylor.symmetrize,
                   threads=args.threads, cache=cache)

    r_bufs = sorted({round(study_radii(cfg, r)[0], 12) for r in cfg.r_qm})
    for r_buf in r_bufs:
        if 'energy' in cfg.schemes:
            pot = cached_taylor_potential(cfg.k_E, params, r_buf, **options)
            nnz = int(np.count_nonzero(pot.hess)) if pot.hess is not None else 0
            print(f"  T_{cfg.k_E} V_#  R_BUF={r_buf:.3f}: {len(pot.domain)} offsets, {nnz} Hessian entries")
        if 'force' in cfg.schemes:
            tf = cached_taylor_force(cfg.k_F, params, r_buf, **options)
            print(f"  T_{cfg.k_F} F_#  R_BUF={r_buf:.3f}: {len(tf.domain) + 1} window sites, "
                  f"translation residual {tf.translation_residual():.2e}")
    return EXIT_OK


def main():
    parser = argparse.ArgumentParser(description="QM/MM tight-binding coupling")
    parser.add_argument('--out', help='Output directory (default: TBQMMM_OUTPUT_DIR or the config output_dir)')
    parser.add_argument('--threads', type=int, default=None, help='Worker threads (default: TBQMMM_THREADS)')
    parser.add_argument('--seed', type=int, default=None, help='Random seed for the property suites')
    parser.add_argument('--log-level', default=None, help='Logging level (default: TBQMMM_LOG_LEVEL)')
    parser.add_argument('--no-cache', action='store_true', help='Do not read or write the coefficient cache')
    subparsers = parser.add_subparsers(dest='command', help='Commands')

    # Solve command
    solve_parser = subparsers.add_parser('solve', help='Single hybrid solve')
    solve_parser.add_argument('config', help='Experiment file (.toml or .json)')
    solve_parser.add_argument('--rqm', type=float, required=True, help='QM radius')
    solve_parser.add_argument('--scheme', choices=['energy', 'force'], help='Override the configured scheme')

    # Converge command
    converge_parser = subparsers.add_parser('converge', help='Convergence study over the R_QM ladder')
    converge_parser.add_argument('config', help='Experiment file (.toml or .json)')

    # Properties command
    properties_parser = subparsers.add_parser('properties', help='Run the invariant suites')
    properties_parser.add_argument('config', nargs='?', help='Experiment file for the TB parameters')
    properties_parser.add_argument('--skip-screw', action='store_true', help='Skip the screw dislocation suite')
    properties_parser.add_argument('--skip-hybrid', action='store_true', help='Skip the ghost-force and Jacobian suites')

    # Coeffs command
    coeffs_parser = subparsers.add_parser('coeffs', help='Build or inspect cached Taylor coefficients')
    coeffs_parser.add_argument('config', nargs='?', help='Experiment file (.toml or .json)')
    coeffs_parser.add_argument('--inspect', action='store_true', help='List cache entries instead of building')

    args = parser.parse_args()

    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    config.configure_logging(args.log_level)
    if args.threads is None:
        args.threads = config.threads

    commands = {
        'solve': cmd_solve,
        'converge': cmd_converge,
        'properties': cmd_properties,
        'coeffs': cmd_coeffs
    }

    try:
        return commands[args.command](args)
    except (ReferenceSolveError, StabilityCheckError) as e:
        logger.error("%s", e)
        return EXIT_ASSERTION
    except TBQMMMError as e:
        logger.error("%s", e)
        print(f"Error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
