"""
Invariant and decay suites for the tight-binding model, the Taylor models,
the screw predictor and the hybrid schemes. Each probe returns raw data;
``run_property_suite`` turns them into pass/fail checks.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core.coefficient_cache import CoefficientCache
from .coupling import HybridModel, ghost_forces, hybrid_energy_hessian_apply, hybrid_force_jacobian_apply
from .dislocation import (
    ScrewPredictor,
    antiplane_params,
    elastic_strain,
    predictor_displacement,
    predictor_residual,
    screw_u0,
    unified_argument,
)
from .harness import Check, fit_slope
from .lattice import LatticeSpec, build_reference, decompose, stencil_differences, weighted_seminorm
from .site_potential import (
    StencilDomain,
    build_taylor_force,
    build_taylor_potential,
    eval_taylor,
    eval_taylor_force,
    homogeneous_force,
    homogeneous_site_potential,
)
from .tb_core import (
    ANTIPLANE,
    TBParams,
    band_energy,
    default_params,
    site_energies,
    site_energy_gradient,
    spectral_decomposition,
    total_gradient,
)

logger = logging.getLogger(__name__)


# --- Helpers ---

def perfect_cluster(radius: float, spec: Optional[LatticeSpec] = None) -> np.ndarray:
    """Triangular-lattice points in B_radius, the origin first."""
    _, points = (spec or LatticeSpec()).points_in_ball(radius)
    order = np.argsort(np.linalg.norm(points, axis=1), kind='stable')
    return points[order]


def random_cluster(rng: np.random.Generator, n_atoms: int, amplitude: float = 0.1) -> np.ndarray:
    """The n_atoms lattice points nearest the origin, randomly perturbed."""
    radius = math.sqrt(n_atoms) + 1.0
    points = perfect_cluster(radius)[:n_atoms]
    return points + amplitude * rng.uniform(-1.0, 1.0, points.shape)


def shell_maxima(radii: np.ndarray, values: np.ndarray, decimals: int = 6) -> Tuple[np.ndarray, np.ndarray]:
    """Max of ``values`` over each shell of equal radius."""
    keys = np.round(radii, decimals)
    shells = np.unique(keys)
    return shells, np.array([values[keys == s].max() for s in shells])


def _log_linear_fit(xs: np.ndarray, ys: np.ndarray) -> Tuple[float, float]:
    """(slope, correlation) of log y against x."""
    ly = np.log(ys)
    slope, _ = np.polyfit(xs, ly, 1)
    corr = float(np.corrcoef(xs, ly)[0, 1])
    return float(slope), corr


# --- Tight-binding invariants ---

def energy_partition_error(params: TBParams, rng: np.random.Generator, n_clusters: int = 20) -> float:
    """max relative |sum_l E_l - E| over random clusters of 5-60 atoms."""
    worst = 0.0
    for _ in range(n_clusters):
        spectral = spectral_decomposition(random_cluster(rng, int(rng.integers(5, 61))), params)
        total = band_energy(spectral, params)
        worst = max(worst, abs(site_energies(spectral, params).sum() - total) / max(abs(total), 1e-300))
    return worst


def isometry_error(params: TBParams, rng: np.random.Generator, n_atoms: int = 30) -> float:
    """max |E_l(Qy + c) - E_l(y)| for a random rotation and translation."""
    y = random_cluster(rng, n_atoms)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    Q = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    moved = y @ Q.T + rng.normal(size=2)
    before = site_energies(spectral_decomposition(y, params), params)
    after = site_energies(spectral_decomposition(moved, params), params)
    return float(np.max(np.abs(before - after)))


def permutation_error(params: TBParams, rng: np.random.Generator, n_atoms: int = 30) -> float:
    y = random_cluster(rng, n_atoms)
    perm = rng.permutation(n_atoms)
    before = site_energies(spectral_decomposition(y, params), params)
    after = site_energies(spectral_decomposition(y[perm], params), params)
    return float(np.max(np.abs(before[perm] - after)))


def total_gradient_fd_error(params: TBParams, rng: np.random.Generator, n_atoms: int = 20, step: float = 1e-5) -> float:
    """Relative error of total_gradient against central differences of the band energy."""
    y = random_cluster(rng, n_atoms)
    analytic = total_gradient(y, params)
    numeric = np.zeros_like(y)
    for i in range(n_atoms):
        for a in range(2):
            e = np.zeros_like(y)
            e[i, a] = step
            plus = band_energy(spectral_decomposition(y + e, params), params)
            minus = band_energy(spectral_decomposition(y - e, params), params)
            numeric[i, a] = (plus - minus) / (2.0 * step)
    return float(np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))


def site_energy_locality_profile(params: TBParams, radius: float = 7.5) -> Tuple[np.ndarray, np.ndarray]:
    """Shell radii and max_m |dE_0/dy(m)| on a perfect cluster, away from its surface."""
    y = perfect_cluster(radius)
    grad = site_energy_gradient(spectral_decomposition(y, params), params, 0)
    radii = np.linalg.norm(y, axis=1)
    interior = (radii > 0) & (radii <= radius - params.r_cut)
    return shell_maxima(radii[interior], np.linalg.norm(grad[interior], axis=1))


def thermodynamic_limit_profile(params: TBParams, radii: Sequence[float] = (3.0, 4.0, 5.0, 6.0)) -> np.ndarray:
    """|E_0^{B_R} - E_0^{B_{R+2}}| for each R on the perfect lattice."""
    def centre_energy(r):
        return site_energies(spectral_decomposition(perfect_cluster(r), params), params)[0]
    return np.array([abs(centre_energy(r) - centre_energy(r + 2.0)) for r in radii])


def buffer_convergence_profile(
    params: TBParams,
    rng: np.random.Generator,
    r_bufs: Sequence[float] = (2.0, 3.0, 4.0, 5.0),
    exact_radius: float = 9.0,
    amplitude: float = 0.05,
) -> np.ndarray:
    """|V^BUF_R(g) - V(g)| for a compactly supported random stencil g."""
    exact_domain = StencilDomain.build(exact_radius)
    g_full = amplitude * rng.uniform(-1.0, 1.0, (len(exact_domain), 2))
    g_full[np.linalg.norm(exact_domain.offsets, axis=1) > 2.0] = 0.0
    exact = homogeneous_site_potential(g_full, params, exact_domain)

    gaps = []
    for r in r_bufs:
        domain = StencilDomain.build(r)
        rows = [int(np.argmin(np.linalg.norm(exact_domain.offsets - rho, axis=1))) for rho in domain.offsets]
        gaps.append(abs(homogeneous_site_potential(g_full[rows], params, domain) - exact))
    return np.array(gaps)


# --- Taylor models ---

def taylor_remainder_profile(
    params: TBParams,
    k: int,
    rng: np.random.Generator,
    r_buf: float = 2.0,
    ts: Sequence[float] = (0.01, 0.02, 0.04, 0.08),
) -> np.ndarray:
    """|V_#(t g) - T_k V_#(t g)| along a random unit stencil direction."""
    pot = build_taylor_potential(k, params, r_buf)
    g = rng.normal(size=(len(pot.domain), 2))
    g /= np.max(np.abs(g))
    return np.array([
        abs(homogeneous_site_potential(t * g, params, pot.domain) - float(eval_taylor(pot, t * g)))
        for t in ts
    ])


def taylor_force_remainder_profile(
    params: TBParams,
    k: int,
    rng: np.random.Generator,
    r_buf: float = 2.0,
    ts: Sequence[float] = (0.01, 0.02, 0.04, 0.08),
) -> np.ndarray:
    """|F_#(t w) - T_k F_#(t w)| along a random unit window direction."""
    tf = build_taylor_force(k, params, r_buf)
    w = rng.normal(size=(len(tf.domain) + 1, 2))
    w /= np.max(np.abs(w))
    return np.array([
        float(np.linalg.norm(homogeneous_force(t * w, params, tf.domain) - eval_taylor_force(tf, t * w)))
        for t in ts
    ])


# --- Screw dislocation ---

def screw_branch_jump(pred: ScrewPredictor, distance: float = 5.0, offset: float = 1e-10) -> float:
    """u0 just below minus just above the cut, far from the core."""
    x1 = pred.core[0] + distance
    below = screw_u0((x1, pred.core[1] - offset), pred)
    above = screw_u0((x1, pred.core[1] + offset), pred)
    return below - above


def strain_decay_profile(pred: ScrewPredictor, radius: float = 14.0, r_stencil: float = 2.0,
                         r_min: float = 4.0) -> Tuple[np.ndarray, np.ndarray]:
    """|l| and max_rho |e_rho(l)| / |rho| for sites with r_min <= |l| <= radius - r_stencil."""
    config = build_reference(LatticeSpec(site_dimension=3), radius, 'screw', 0.0)
    strain = elastic_strain(config, pred, r_stencil)
    ratio = np.max(np.abs(strain.values) / np.linalg.norm(strain.offsets, axis=1), axis=1)
    radii = config.radii
    keep = (radii >= r_min) & (radii <= radius - r_stencil)
    return radii[keep], ratio[keep]


def predictor_residual_profile(pred: ScrewPredictor, params: TBParams, radius: float = 12.0,
                               r_buf: float = 2.0, r_min: float = 3.0) -> Tuple[np.ndarray, np.ndarray]:
    """Shell maxima of the predictor residual force."""
    config = build_reference(LatticeSpec(site_dimension=3), radius, 'screw', 0.0)
    ids, res = predictor_residual(config, pred, params, r_buf)
    radii = config.radii[ids]
    keep = radii >= r_min
    return shell_maxima(radii[keep], np.abs(res[keep]))


def slip_invariance_error(pred: ScrewPredictor, params: TBParams, rng: np.random.Generator,
                          radius: float = 8.0, r_buf: float = 2.0, amplitude: float = 0.05) -> float:
    """
    max over sites of |V(D(u0 + u)(l)) - V(e(l) + Du(l))| with raw
    differences on the left and the elastic strain on the right.
    """
    params = antiplane_params(params, pred)
    config = build_reference(LatticeSpec(site_dimension=3), radius, 'screw', 0.0)
    strain = elastic_strain(config, pred, r_buf)
    domain = StencilDomain(strain.offsets, r_buf)
    u0 = predictor_displacement(config, pred).values
    u = np.zeros_like(u0)
    near = config.radii <= radius / 2.0
    u[near, 0] = amplitude * rng.uniform(-1.0, 1.0, int(near.sum()))

    sites = np.flatnonzero(config.radii <= radius - r_buf)
    worst = 0.0
    for site in sites:
        raw = stencil_differences(u0 + u, np.array([site]), strain.neighbors[[site]])[0]
        unified = unified_argument(site, u, config, strain.offsets, 'D', strain)
        worst = max(worst, abs(homogeneous_site_potential(raw, params, domain, ANTIPLANE)
                               - homogeneous_site_potential(unified, params, domain, ANTIPLANE)))
    return worst


# --- Hybrid schemes at the reference state ---

def _perfect_models(params: TBParams, r_qm: float, r_mm: float, r_bufs: Sequence[float],
                    cache: Optional[CoefficientCache]) -> List[HybridModel]:
    models = []
    for r_buf in r_bufs:
        config = build_reference(LatticeSpec(), r_mm + 2.0 * r_buf + params.r_cut, 'none', 0.0)
        decomposition = decompose(config, r_qm, r_mm, r_buf)
        models.append(HybridModel.build(config, decomposition, params, scheme='energy',
                                        include_both=True, cache=cache))
    return models


def ghost_force_profile(params: TBParams, r_bufs: Sequence[float] = (1.5, 2.5, 3.5), r_qm: float = 5.0,
                        r_mm: float = 9.0, cache: Optional[CoefficientCache] = None) -> dict:
    """Max ghost force at u = 0 on the perfect lattice, per scheme and R_BUF."""
    profile = {'energy': [], 'force': []}
    for model in _perfect_models(params, r_qm, r_mm, r_bufs, cache):
        profile['energy'].append(float(ghost_forces(model).max()))
        profile['force'].append(float(ghost_forces(model.with_scheme('force')).max()))
    return {k: np.array(v) for k, v in profile.items()}


def jacobian_hessian_gap_profile(params: TBParams, rng: np.random.Generator,
                                 r_bufs: Sequence[float] = (1.5, 2.5, 3.5), r_qm: float = 5.0,
                                 r_mm: float = 9.0, cache: Optional[CoefficientCache] = None) -> np.ndarray:
    """|<dF v, v> - <d2E v, v>| / ||Dv||^2 at u = 0 for a random v supported near the QM/MM interface."""
    gaps = []
    direction = None
    for model in _perfect_models(params, r_qm, r_mm, r_bufs, cache):
        # lexicographic site order makes the support rows agree across domain sizes
        support = np.flatnonzero(model.config.radii <= r_qm + 2.0)
        if direction is None:
            direction = rng.normal(size=(len(support), 2))
        v = np.zeros((len(model.config), 2))
        v[support] = direction
        zero = np.zeros_like(v)
        jac = np.sum(hybrid_force_jacobian_apply(model.with_scheme('force'), zero, v) * v)
        hess = np.sum(hybrid_energy_hessian_apply(model, zero, v) * v)
        gaps.append(abs(jac - hess) / weighted_seminorm(v, model.config) ** 2)
    return np.array(gaps)


# --- Suite ---

def run_property_suite(
    params: Optional[TBParams] = None,
    seed: int = 0,
    include_screw: bool = True,
    include_hybrid: bool = True,
    cache: Optional[CoefficientCache] = None,
) -> List[Check]:
    params = params or default_params()
    rng = np.random.default_rng(seed)
    checks: List[Check] = []

    value = energy_partition_error(params, rng)
    checks.append(Check("tb.energy_partition", value <= 1e-12, value, 1e-12))
    value = isometry_error(params, rng)
    checks.append(Check("tb.isometry", value <= 1e-10, value, 1e-10))
    value = permutation_error(params, rng)
    checks.append(Check("tb.permutation", value <= 1e-10, value, 1e-10))
    value = total_gradient_fd_error(params, rng)
    checks.append(Check("tb.gradient_fd", value <= 1e-6, value, 1e-6))

    shells, mags = site_energy_locality_profile(params)
    slope, corr = _log_linear_fit(shells, mags)
    checks.append(Check("tb.locality", slope < 0 and abs(corr) >= 0.95, slope, 0.0, f"correlation {corr:.3f}"))

    diffs = thermodynamic_limit_profile(params)
    checks.append(Check("tb.thermodynamic_limit", bool(np.all(np.diff(np.log(diffs)) < 0)), float(diffs[-1]), None))

    gaps = buffer_convergence_profile(params, rng)
    rate, _ = _log_linear_fit(np.array([2.0, 3.0, 4.0, 5.0]), gaps)
    checks.append(Check("buffer.exponential_rate", -rate > 0, -rate, 0.0))

    for k in (2, 3):
        slope = fit_slope([0.01, 0.02, 0.04, 0.08], taylor_remainder_profile(params, k, rng))[0]
        checks.append(Check(f"taylor.potential_remainder_k{k}", abs(slope - (k + 1)) <= 0.2, slope, k + 1.0))
    slope = fit_slope([0.01, 0.02, 0.04, 0.08], taylor_force_remainder_profile(params, 1, rng))[0]
    checks.append(Check("taylor.force_remainder_k1", abs(slope - 2.0) <= 0.2, slope, 2.0))

    if include_screw:
        pred = ScrewPredictor()
        jump = screw_branch_jump(pred)
        checks.append(Check("screw.branch_jump", abs(jump - pred.burgers_b3) <= 1e-10, jump, pred.burgers_b3))
        slope = fit_slope(*strain_decay_profile(pred))[0]
        checks.append(Check("screw.strain_decay", abs(slope + 1.0) <= 0.15, slope, -1.0))
        slope = fit_slope(*predictor_residual_profile(pred, params))[0]
        checks.append(Check("screw.residual_decay", slope <= -1.8, slope, -1.8))
        value = slip_invariance_error(pred, params, rng)
        checks.append(Check("screw.slip_invariance", value <= 1e-8, value, 1e-8))

    if include_hybrid:
        ghosts = ghost_force_profile(params, cache=cache)
        checks.append(Check("hybrid.force_ghost_decay", bool(np.all(np.diff(ghosts['force']) < 0)),
                            float(ghosts['force'][-1]), None))
        checks.append(Check("hybrid.energy_ghost_decay", bool(np.all(np.diff(ghosts['energy']) < 0)),
                            float(ghosts['energy'][-1]), None))
        gaps = jacobian_hessian_gap_profile(params, rng, cache=cache)
        checks.append(Check("hybrid.jacobian_hessian_gap", bool(np.all(np.diff(gaps) < 0)), float(gaps[-1]), None))

    for check in checks:
        logger.info("%-36s %s value=%s", check.name, "PASS" if check.passed else "FAIL", check.value)
    return checks
