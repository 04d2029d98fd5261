"""
Equilibrium solvers: L-BFGS for energy mixing, Newton-Krylov for force
mixing, the pure tight-binding (ATM) reference solve and the discrete
strong-stability check.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, cg, eigsh, gmres

from .core.exceptions import AccumulationError, InvalidParameterError, ReferenceSolveError, StabilityCheckError
from .coupling import (
    HybridModel,
    _admissible_values,
    hybrid_energy_and_gradient,
    hybrid_energy_hessian_apply,
    hybrid_force,
    hybrid_force_jacobian_apply,
)
from .dislocation import ScrewPredictor, antiplane_params, predictor_displacement
from .lattice import Displacement, DisplacementLike, ReferenceConfig
from .services.tracking import IterationLog
from .tb_core import ANTIPLANE, PLANAR, TBParams, band_energy, spectral_decomposition, total_gradient_from_spectral

logger = logging.getLogger(__name__)

LBFGS_MEMORY = 20
GMRES_RESTART = 50
GMRES_RTOL = 1e-2
STAGNATION_WINDOW = 5
STAGNATION_REDUCTION = 1e-3
POLISH_STEPS = 20
DENSE_STABILITY_LIMIT = 400
MIN_STEP = 1e-4
# relative slack on energy decrease at the round-off floor
ENERGY_ROUNDOFF = 1e-12
# added to the best admissible energy at trial points that violate non-accumulation
INADMISSIBLE_PENALTY = 1e6


@dataclass
class SolverResult:
    u_star: Displacement
    iterations: int
    residual_norm: float
    converged: bool
    wall_time: float
    message: str = ""
    energy: Optional[float] = None
    stability_min_eig: Optional[float] = None
    history: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class StabilityReport:
    eigenvalues: np.ndarray
    operator: str  # 'hessian' or 'symmetrized_jacobian'

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def stable(self) -> bool:
        return self.min_eigenvalue > 0.0


class _Problem:
    """An energy on a flat vector of free DOFs, as the solvers see it."""

    def __init__(self, energy_and_gradient: Callable, hessian_apply: Callable, size: int):
        self.energy_and_gradient = energy_and_gradient
        self.hessian_apply = hessian_apply
        self.size = size


def _newton_polish(problem: _Problem, x: np.ndarray, tol: float, max_steps: int, log: Callable) -> tuple:
    """
    Newton-CG steps accepted on gradient decrease with the energy not rising
    beyond round-off. Used once the line search stalls at the round-off floor
    of the energy, where function values no longer resolve the remaining
    decrease.
    """
    energy, grad = problem.energy_and_gradient(x)
    steps = 0
    for steps in range(1, max_steps + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return x, energy, grad, steps - 1, True
        op = LinearOperator((problem.size, problem.size), matvec=lambda v: problem.hessian_apply(x, v))
        step, _ = cg(op, -grad, rtol=1e-3, maxiter=200)
        alpha = 1.0
        while alpha > MIN_STEP:
            try:
                trial_energy, trial_grad = problem.energy_and_gradient(x + alpha * step)
            except AccumulationError:
                alpha *= 0.5
                continue
            slack = ENERGY_ROUNDOFF * max(1.0, abs(energy))
            if np.linalg.norm(trial_grad) < gnorm and trial_energy <= energy + slack:
                break
            alpha *= 0.5
        else:
            return x, energy, grad, steps, False
        x, energy, grad = x + alpha * step, trial_energy, trial_grad
        log({'phase': 'polish', 'iteration': steps, 'energy': energy,
             'grad_norm': float(np.linalg.norm(grad)), 'step': alpha})
    return x, energy, grad, steps, bool(np.linalg.norm(grad) <= tol)


def _minimize(problem: _Problem, x0: np.ndarray, tol: float, max_iter: int,
              iteration_log: Optional[IterationLog], label: str) -> tuple:
    history: List[Dict[str, float]] = []

    def log(record):
        record = {'solver': label, **record}
        history.append(record)
        if iteration_log is not None:
            iteration_log.log(record)

    energy, grad = problem.energy_and_gradient(x0)
    if np.linalg.norm(grad) <= tol:
        return x0, energy, grad, 0, True, "gradient below tolerance at the initial guess", history

    memo = {}
    best = {'x': x0.copy(), 'f': energy}
    rejected = [0]

    def fun(x):
        try:
            value, g = problem.energy_and_gradient(x)
        except AccumulationError as e:
            # a finite wall makes the line search backtrack into the admissible set
            rejected[0] += 1
            logger.debug("Rejected trial point: %s", e)
            return best['f'] + INADMISSIBLE_PENALTY * (1.0 + abs(best['f'])), np.zeros_like(x)
        memo['x'], memo['f'], memo['g'] = x.copy(), value, g
        if value < best['f']:
            best['x'], best['f'] = x.copy(), value
        return value, g

    def callback(xk):
        if 'x' in memo and np.array_equal(memo['x'], xk):
            f, g = memo['f'], memo['g']
        else:
            f, g = problem.energy_and_gradient(xk)
        log({'phase': 'lbfgs', 'iteration': len(history) + 1, 'energy': f, 'grad_norm': float(np.linalg.norm(g))})

    # gtol bounds max|g|; dividing by sqrt(n) bounds the l2 norm by tol
    result = scipy.optimize.minimize(
        fun, x0, jac=True, method='L-BFGS-B', callback=callback,
        options={'maxcor': LBFGS_MEMORY, 'maxiter': max_iter, 'gtol': tol / np.sqrt(max(problem.size, 1)), 'ftol': 0.0},
    )
    x = result.x
    try:
        energy, grad = problem.energy_and_gradient(x)
    except AccumulationError:
        x = best['x']
        energy, grad = problem.energy_and_gradient(x)
    iterations = int(result.nit)
    converged = bool(np.linalg.norm(grad) <= tol)
    message = str(result.message)
    if rejected[0]:
        logger.info("%s: %d trial points rejected for atoms closer than the non-accumulation distance",
                    label, rejected[0])
        message = f"{message}; {rejected[0]} inadmissible trial points rejected"

    if not converged and iterations < max_iter:
        logger.info("L-BFGS stopped at |g|=%.3e (%s); polishing with Newton-CG", np.linalg.norm(grad), message)
        x, energy, grad, extra, converged = _newton_polish(problem, x, tol, POLISH_STEPS, log)
        iterations += extra
        message = f"{message}; Newton polish {'converged' if converged else 'stalled'}"
    return x, energy, grad, iterations, converged, message, history


def minimize_energy(
    model: HybridModel,
    u0: Optional[DisplacementLike] = None,
    tol: float = 1e-8,
    max_iter: int = 2000,
    iteration_log: Optional[IterationLog] = None,
) -> SolverResult:
    """Local minimiser of E^H over Adm_0^H by L-BFGS on the free DOFs."""
    if model.scheme != 'energy':
        raise InvalidParameterError("minimize_energy needs an energy-mixing model")
    start = time.perf_counter()
    n_sites = len(model.config)
    values = np.zeros((n_sites, model.dof)) if u0 is None else _admissible_values(model, u0)

    def energy_and_gradient(x):
        energy, grad = hybrid_energy_and_gradient(model, model.unpack(x))
        return energy, model.pack(grad)

    def hessian_apply(x, v):
        return model.pack(hybrid_energy_hessian_apply(model, model.unpack(x), model.unpack(v)))

    problem = _Problem(energy_and_gradient, hessian_apply, len(model.free_ids) * model.dof)
    x, energy, grad, iterations, converged, message, history = _minimize(
        problem, model.pack(values), tol, max_iter, iteration_log, 'lbfgs',
    )
    wall = time.perf_counter() - start
    gnorm = float(np.linalg.norm(grad))
    logger.info("minimize_energy: %d iterations, |g|=%.3e, converged=%s (%.1fs)", iterations, gnorm, converged, wall)
    return SolverResult(
        u_star=Displacement(model.unpack(x)),
        iterations=iterations,
        residual_norm=gnorm,
        converged=converged,
        wall_time=wall,
        message=message,
        energy=float(energy),
        history=history,
    )


def solve_force_balance(
    model: HybridModel,
    u0: Optional[DisplacementLike] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    iteration_log: Optional[IterationLog] = None,
    gmres_rtol: float = GMRES_RTOL,
    gmres_restart: int = GMRES_RESTART,
) -> SolverResult:
    """Damped Newton-Krylov for F^H(u) = 0 on Lambda^QM u Lambda^MM."""
    if model.scheme != 'force':
        raise InvalidParameterError("solve_force_balance needs a force-mixing model")
    start = time.perf_counter()
    values = np.zeros((len(model.config), model.dof)) if u0 is None else _admissible_values(model, u0)
    size = len(model.free_ids) * model.dof

    def force(x):
        return model.pack(hybrid_force(model, model.unpack(x)))

    x = model.pack(values)
    f = force(x)
    norms = [float(np.linalg.norm(f))]
    history: List[Dict[str, float]] = []
    converged = norms[-1] <= tol
    message = "residual below tolerance at the initial guess" if converged else ""
    iterations = 0

    while not converged and iterations < max_iter:
        u_current = model.unpack(x)
        op = LinearOperator(
            (size, size),
            matvec=lambda v: model.pack(hybrid_force_jacobian_apply(model, u_current, model.unpack(v))),
        )
        step, info = gmres(op, -f, rtol=gmres_rtol, restart=gmres_restart, maxiter=10)
        if info < 0:
            message = f"GMRES breakdown (info={info})"
            break

        alpha, trial = 1.0, None
        while alpha >= MIN_STEP:
            try:
                candidate = force(x + alpha * step)
            except AccumulationError as e:
                logger.debug("Newton trial at alpha=%.3g rejected: %s", alpha, e)
                alpha *= 0.5
                continue
            if np.linalg.norm(candidate) <= (1.0 - 1e-4 * alpha) * norms[-1]:
                trial = candidate
                break
            alpha *= 0.5
        if trial is None:
            message = f"stagnated: no residual decrease along the Newton direction down to step {MIN_STEP}"
            break
        x, f = x + alpha * step, trial
        iterations += 1
        norms.append(float(np.linalg.norm(f)))
        record = {'solver': 'newton_krylov', 'iteration': iterations, 'residual': norms[-1],
                  'step': alpha, 'gmres_info': int(info)}
        history.append(record)
        if iteration_log is not None:
            iteration_log.log(record)

        converged = norms[-1] <= tol
        if not converged and len(norms) > STAGNATION_WINDOW:
            if norms[-1] > (1.0 - STAGNATION_REDUCTION) * norms[-1 - STAGNATION_WINDOW]:
                message = f"stagnated: |F| reduced by less than {STAGNATION_REDUCTION} over {STAGNATION_WINDOW} steps"
                break

    if converged and not message:
        message = "converged"
    elif not converged and not message:
        message = f"max_iter={max_iter} reached"
    wall = time.perf_counter() - start
    logger.info("solve_force_balance: %d Newton steps, |F|=%.3e, %s (%.1fs)", iterations, norms[-1], message, wall)
    return SolverResult(
        u_star=Displacement(model.unpack(x)),
        iterations=iterations,
        residual_norm=norms[-1],
        converged=converged,
        wall_time=wall,
        message=message,
        history=history,
    )


def solve(model: HybridModel, u0=None, tol: float = 1e-8, max_iter: Optional[int] = None,
          iteration_log: Optional[IterationLog] = None, gmres_rtol: float = GMRES_RTOL,
          gmres_restart: int = GMRES_RESTART) -> SolverResult:
    """Dispatch on the model's scheme. The GMRES settings only apply to force mixing."""
    if model.scheme == 'energy':
        return minimize_energy(model, u0, tol, max_iter or 2000, iteration_log)
    return solve_force_balance(model, u0, tol, max_iter or 100, iteration_log,
                               gmres_rtol=gmres_rtol, gmres_restart=gmres_restart)


def reference_solve_atm(
    config: ReferenceConfig,
    params: TBParams,
    r_domain: Optional[float] = None,
    tol: float = 1e-8,
    max_iter: int = 5000,
    clamp_width: Optional[float] = None,
    predictor: Optional[ScrewPredictor] = None,
    iteration_log: Optional[IterationLog] = None,
) -> SolverResult:
    """
    Pure tight-binding relaxation of every site with |l| <= R_domain - R_clamp,
    the band of width R_clamp (default R_cut) held at the predictor.
    ``energy`` of the result is E(u) - E(0) over the whole domain.
    """
    start = time.perf_counter()
    r_domain = config.domain_radius if r_domain is None else r_domain
    if r_domain > config.domain_radius + 1e-12:
        raise InvalidParameterError(f"R_domain={r_domain} exceeds the generated domain {config.domain_radius}")
    clamp = params.r_cut if clamp_width is None else clamp_width
    inside = np.flatnonzero(config.radii <= r_domain + 1e-12)
    free = np.flatnonzero(config.radii[inside] <= r_domain - clamp + 1e-12)
    if len(free) == 0:
        raise ReferenceSolveError(f"No free sites: R_domain={r_domain} is not larger than the clamp width {clamp}")

    kinematics = PLANAR
    base = np.zeros((len(inside), PLANAR.dof))
    if predictor is not None:
        kinematics = ANTIPLANE
        params = antiplane_params(params, predictor)
        base = predictor_displacement(config, predictor).values[inside]
    dof = kinematics.dof
    reference_sites = config.sites[inside]

    def full(x):
        values = np.zeros((len(inside), dof))
        values[free] = x.reshape(-1, dof)
        return values

    def energy_and_gradient(x):
        positions = kinematics.positions(reference_sites, base + full(x))
        spectral = spectral_decomposition(positions, params)
        grad = kinematics.project(total_gradient_from_spectral(spectral, params))
        return band_energy(spectral, params), grad[free].ravel()

    def hessian_apply(x, v):
        scale = float(np.max(np.abs(v)))
        if scale == 0.0:
            return np.zeros_like(v)
        h = 1e-6 / scale
        return (energy_and_gradient(x + h * v)[1] - energy_and_gradient(x - h * v)[1]) / (2.0 * h)

    e_ref = energy_and_gradient(np.zeros(len(free) * dof))[0]
    problem = _Problem(energy_and_gradient, hessian_apply, len(free) * dof)
    x, energy, grad, iterations, converged, message, history = _minimize(
        problem, np.zeros(len(free) * dof), tol, max_iter, iteration_log, 'atm',
    )
    values = np.zeros((len(config), dof))
    values[inside] = full(x)
    wall = time.perf_counter() - start
    gnorm = float(np.linalg.norm(grad))
    logger.info("ATM reference on %d free sites: |g|=%.3e converged=%s (%.1fs)", len(free), gnorm, converged, wall)
    return SolverResult(
        u_star=Displacement(values),
        iterations=iterations,
        residual_norm=gnorm,
        converged=converged,
        wall_time=wall,
        message=message,
        energy=float(energy - e_ref),
        history=history,
    )


def _dense_operator(apply: Callable[[np.ndarray], np.ndarray], size: int) -> np.ndarray:
    columns = []
    for a in range(size):
        e = np.zeros(size)
        e[a] = 1.0
        columns.append(apply(e))
    return np.stack(columns, axis=1)


def stability_check(
    model: HybridModel,
    u_star: DisplacementLike,
    n_eigs: int = 3,
    dense_limit: int = DENSE_STABILITY_LIMIT,
) -> StabilityReport:
    """
    Smallest eigenvalues of the free-DOF Hessian of E^H at ``u_star``. For
    force mixing the Jacobian of F^H is assembled and symmetrised instead.
    Eigenvalues are with respect to the Euclidean inner product on free DOFs.
    """
    values = _admissible_values(model, u_star)
    size = len(model.free_ids) * model.dof
    n_eigs = max(1, min(n_eigs, size))

    if model.scheme == 'energy':
        def apply(v):
            return model.pack(hybrid_energy_hessian_apply(model, values, model.unpack(v)))
        operator_name = 'hessian'
    else:
        def apply(v):
            return model.pack(hybrid_force_jacobian_apply(model, values, model.unpack(v)))
        operator_name = 'symmetrized_jacobian'

    if model.scheme == 'force' or size <= dense_limit:
        if size > dense_limit:
            logger.warning("Assembling a dense %d x %d Jacobian for the stability check", size, size)
        matrix = _dense_operator(apply, size)
        matrix = 0.5 * (matrix + matrix.T)
        eigenvalues = scipy.linalg.eigh(matrix, eigvals_only=True, subset_by_index=[0, n_eigs - 1])
    else:
        op = LinearOperator((size, size), matvec=apply)
        try:
            eigenvalues = eigsh(op, k=n_eigs, which='SA', return_eigenvectors=False, tol=1e-8)
        except (ArpackNoConvergence, ArpackError) as e:
            raise StabilityCheckError(f"Lanczos did not converge: {e}") from e

    eigenvalues = np.sort(np.asarray(eigenvalues, dtype=float))
    logger.info("Stability (%s): smallest eigenvalue %.4e", operator_name, eigenvalues[0])
    return StabilityReport(eigenvalues=eigenvalues, operator=operator_name)
