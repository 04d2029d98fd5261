"""
QM/MM hybrid models.

Energy mixing sums buffered QM site energies over Lambda^QM and Taylor MM
site energies over the remaining sites; force mixing takes buffered QM
forces on Lambda^QM and Taylor MM forces on Lambda^MM. Far-field rows are
frozen at zero in every output.
"""
import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .core.coefficient_cache import CoefficientCache
from .core.exceptions import (
    AdmissibilityError,
    GeometryTooSmallError,
    InvalidParameterError,
    MissingPredictorError,
    ShapeMismatchError,
)
from .dislocation import (
    ElasticStrainField,
    ScrewPredictor,
    antiplane_params,
    elastic_strain,
    predictor_displacement,
    unified_arguments,
)
from .lattice import (
    DisplacementLike,
    ReferenceConfig,
    Region,
    RegionDecomposition,
    displacement_values,
    pointwise_seminorm,
    scatter_stencil_gradient,
    stencil_differences,
)
from .site_potential import (
    TaylorForce,
    TaylorSitePotential,
    cached_taylor_force,
    cached_taylor_potential,
    eval_taylor,
    eval_taylor_force,
    grad_taylor,
    taylor_force_directional,
)
from .tb_core import (
    ANTIPLANE,
    PLANAR,
    Kinematics,
    SpectralData,
    TBParams,
    site_energies,
    spectral_decomposition,
    subset_energy_gradient,
    total_gradient_from_spectral,
)

logger = logging.getLogger(__name__)

SCHEMES = ('energy', 'force')
CASES = ('P', 'D')
# finite-difference step for QM Jacobian rows and Hessian actions, relative to max|v|
DIRECTIONAL_FD_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class HybridModel:
    config: ReferenceConfig
    decomposition: RegionDecomposition
    params: TBParams
    scheme: str
    case: str
    kinematics: Kinematics
    taylor_E: Optional[TaylorSitePotential]
    taylor_F: Optional[TaylorForce]
    predictor: Optional[ScrewPredictor]
    strain: Optional[ElasticStrainField]
    u0: np.ndarray
    neighbors: np.ndarray
    mm_sites: np.ndarray
    mm_reference: np.ndarray
    qm_reference: float
    threads: Optional[int] = None

    @classmethod
    def build(
        cls,
        config: ReferenceConfig,
        decomposition: RegionDecomposition,
        params: TBParams,
        scheme: str = 'energy',
        case: str = 'P',
        k_E: int = 2,
        k_F: int = 1,
        predictor: Optional[ScrewPredictor] = None,
        include_both: bool = False,
        fd_step: Optional[float] = None,
        drop_tol: Optional[float] = None,
        richardson: bool = False,
        symmetrize: bool = False,
        cache: Optional[CoefficientCache] = None,
        threads: Optional[int] = None,
    ) -> 'HybridModel':
        """Build Taylor models (cached) and the stencil tables for one decomposition."""
        if scheme not in SCHEMES:
            raise InvalidParameterError(f"Unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if case not in CASES:
            raise InvalidParameterError(f"Unknown case {case!r}; expected one of {CASES}")
        r_buf = decomposition.r_buf
        if decomposition.r_qm + r_buf > config.domain_radius + 1e-12:
            raise GeometryTooSmallError("QM buffer cluster extends past the generated domain")

        kinematics = PLANAR
        strain = None
        u0 = np.zeros((len(config), PLANAR.dof))
        if case == 'D':
            if predictor is None:
                raise MissingPredictorError("Case D needs a screw predictor")
            kinematics = ANTIPLANE
            params = antiplane_params(params, predictor)
            strain = elastic_strain(config, predictor, r_buf)
            u0 = predictor_displacement(config, predictor).values

        options = dict(fd_step=fd_step, drop_tol=drop_tol, kinematics=kinematics,
                       richardson=richardson, symmetrize=symmetrize, threads=threads, cache=cache)
        taylor_E = cached_taylor_potential(k_E, params, r_buf, **options) if scheme == 'energy' or include_both else None
        taylor_F = cached_taylor_force(k_F, params, r_buf, **options) if scheme == 'force' or include_both else None

        offsets = (taylor_E or taylor_F).domain.offsets
        neighbors = config.neighbor_table(offsets)
        radii = config.radii
        mm_sites = np.flatnonzero(
            (decomposition.labels != Region.QM) & (radii <= decomposition.r_mm + r_buf + 1e-12)
        )

        model = cls(
            config=config,
            decomposition=decomposition,
            params=params,
            scheme=scheme,
            case=case,
            kinematics=kinematics,
            taylor_E=taylor_E,
            taylor_F=taylor_F,
            predictor=predictor,
            strain=strain,
            u0=u0,
            neighbors=neighbors,
            mm_sites=mm_sites,
            mm_reference=np.zeros(len(mm_sites)),
            qm_reference=0.0,
            threads=threads,
        )
        model.validate()

        zero = np.zeros((len(config), kinematics.dof))
        if taylor_E is not None:
            ee = unified_arguments(mm_sites, zero, neighbors[mm_sites], case, strain)
            object.__setattr__(model, 'mm_reference', eval_taylor(taylor_E, ee))
        object.__setattr__(model, 'qm_reference', _qm_energy(model, _qm_spectral(model, zero)))
        logger.info(
            "HybridModel scheme=%s case=%s: %d QM, %d MM, %d in MM sum",
            scheme, case, len(decomposition.qm_ids), len(decomposition.mm_ids), len(mm_sites),
        )
        return model

    def validate(self) -> None:
        r_buf = self.decomposition.r_buf
        for name, taylor in (('taylor_E', self.taylor_E), ('taylor_F', self.taylor_F)):
            if taylor is not None and abs(taylor.domain.r_buf - r_buf) > 1e-12:
                raise InvalidParameterError(f"{name} built for R_BUF={taylor.domain.r_buf}, decomposition has {r_buf}")
        if self.scheme == 'energy' and (self.taylor_E is None or self.taylor_E.order < 2):
            raise InvalidParameterError("Energy mixing needs a Taylor site potential of order k_E >= 2")
        if self.scheme == 'force' and (self.taylor_F is None or self.taylor_F.order < 1):
            raise InvalidParameterError("Force mixing needs a Taylor force of order k_F >= 1")
        if self.strain is not None and self.strain.offsets.shape != self.neighbors.shape[1:] + (2,):
            raise ShapeMismatchError("Elastic strain stencil does not match the Taylor stencil")

    def with_scheme(self, scheme: str) -> 'HybridModel':
        """The same model evaluated with the other scheme; both Taylor models must be present."""
        model = replace(self, scheme=scheme)
        model.validate()
        return model

    @property
    def dof(self) -> int:
        return self.kinematics.dof

    @property
    def free_ids(self) -> np.ndarray:
        return np.flatnonzero(self.decomposition.free_mask)

    @property
    def offsets(self) -> np.ndarray:
        return (self.taylor_E or self.taylor_F).domain.offsets

    def pack(self, values: np.ndarray) -> np.ndarray:
        """Flatten the free-site rows of an (N, dof) field."""
        return np.asarray(values, dtype=float)[self.free_ids].ravel()

    def unpack(self, x: np.ndarray) -> np.ndarray:
        values = np.zeros((len(self.config), self.dof))
        values[self.free_ids] = np.asarray(x, dtype=float).reshape(-1, self.dof)
        return values


def _admissible_values(model: HybridModel, u: DisplacementLike) -> np.ndarray:
    values = displacement_values(u, len(model.config))
    if values.shape[1] != model.dof:
        raise ShapeMismatchError(f"Displacement has {values.shape[1]} components, model expects {model.dof}")
    ff = model.decomposition.ff_ids
    if len(ff) and np.any(values[ff] != 0.0):
        raise AdmissibilityError("Displacement must vanish on far-field sites")
    return values


# --- QM region ---

def _qm_spectral(model: HybridModel, values: np.ndarray) -> SpectralData:
    cluster = model.decomposition.qm_cluster_ids
    positions = model.kinematics.positions(model.config.sites[cluster], (model.u0 + values)[cluster])
    return spectral_decomposition(positions, model.params, cluster)


def _qm_weights(model: HybridModel) -> np.ndarray:
    return np.isin(model.decomposition.qm_cluster_ids, model.decomposition.qm_ids).astype(float)


def _qm_energy(model: HybridModel, spectral: SpectralData) -> float:
    return float(site_energies(spectral, model.params) @ _qm_weights(model))


def _qm_forces(model: HybridModel, values: np.ndarray) -> np.ndarray:
    """Buffered QM forces on the rows of Lambda^QM."""
    spectral = _qm_spectral(model, values)
    grad = model.kinematics.project(total_gradient_from_spectral(spectral, model.params))
    local = np.searchsorted(model.decomposition.qm_cluster_ids, model.decomposition.qm_ids)
    return grad[local]


# --- MM region ---

def _mm_arguments(model: HybridModel, values: np.ndarray, sites: np.ndarray) -> np.ndarray:
    return unified_arguments(sites, values, model.neighbors[sites], model.case, model.strain)


def _force_windows(model: HybridModel, values: np.ndarray, sites: np.ndarray, case: Optional[str] = None) -> np.ndarray:
    """Windows w(0) = 0, w(sigma) = ee_sigma + D_sigma u: the force is translation invariant."""
    case = case or model.case
    if case == 'P':
        stencils = stencil_differences(values, sites, model.neighbors[sites])
    else:
        stencils = _mm_arguments(model, values, sites)
    centre = np.zeros((len(sites), 1, model.dof))
    return np.concatenate([centre, stencils], axis=1)


def local_window(model: HybridModel, u: DisplacementLike, site: int) -> np.ndarray:
    """The (n_offsets + 1, dof) window the MM force of ``site`` is evaluated on."""
    values = displacement_values(u, len(model.config))
    return _force_windows(model, values, np.array([site]))[0]


# --- Energy mixing ---

def hybrid_energy_and_gradient(
    model: HybridModel,
    u: DisplacementLike,
    mask_far_field: bool = True,
) -> Tuple[float, np.ndarray]:
    """E^H(u) and its gradient sharing one QM eigendecomposition."""
    if model.taylor_E is None:
        raise InvalidParameterError("Model has no Taylor site potential")
    values = _admissible_values(model, u)
    n = len(model.config)

    spectral = _qm_spectral(model, values)
    energy = _qm_energy(model, spectral) - model.qm_reference
    grad = np.zeros((n, model.dof))
    cluster = model.decomposition.qm_cluster_ids
    qm_grad = subset_energy_gradient(spectral, model.params, _qm_weights(model))
    grad[cluster] += model.kinematics.project(qm_grad)

    if len(model.mm_sites):
        g = _mm_arguments(model, values, model.mm_sites)
        energy += float(np.sum(eval_taylor(model.taylor_E, g) - model.mm_reference))
        grad += scatter_stencil_gradient(
            grad_taylor(model.taylor_E, g), model.mm_sites, model.neighbors[model.mm_sites], n,
        )

    if mask_far_field:
        grad[model.decomposition.ff_ids] = 0.0
    return energy, grad


def hybrid_energy(model: HybridModel, u: DisplacementLike) -> float:
    """E^H(u): buffered QM site-energy differences plus Taylor MM differences."""
    return hybrid_energy_and_gradient(model, u)[0]


def hybrid_energy_gradient(model: HybridModel, u: DisplacementLike, mask_far_field: bool = True) -> np.ndarray:
    return hybrid_energy_and_gradient(model, u, mask_far_field)[1]


def hybrid_energy_hessian_apply(model: HybridModel, u: DisplacementLike, v: DisplacementLike) -> np.ndarray:
    """delta^2 E^H(u)[v] by a central difference of the analytic gradient."""
    values = _admissible_values(model, u)
    direction = displacement_values(v, len(model.config)).copy()
    direction[model.decomposition.ff_ids] = 0.0
    scale = float(np.max(np.abs(direction)))
    if scale == 0.0:
        return np.zeros_like(values)
    h = DIRECTIONAL_FD_STEP / scale
    plus = hybrid_energy_gradient(model, values + h * direction)
    minus = hybrid_energy_gradient(model, values - h * direction)
    return (plus - minus) / (2.0 * h)


# --- Force mixing ---

def hybrid_force(model: HybridModel, u: DisplacementLike) -> np.ndarray:
    """F^H(u): buffered QM forces on Lambda^QM, Taylor MM forces on Lambda^MM, zero elsewhere."""
    if model.taylor_F is None:
        raise InvalidParameterError("Model has no Taylor force")
    values = _admissible_values(model, u)
    forces = np.zeros((len(model.config), model.dof))
    forces[model.decomposition.qm_ids] = _qm_forces(model, values)
    mm_ids = model.decomposition.mm_ids
    if len(mm_ids):
        forces[mm_ids] = eval_taylor_force(model.taylor_F, _force_windows(model, values, mm_ids))
    return forces


def force_bracket(model: HybridModel, u: DisplacementLike, v: DisplacementLike) -> float:
    """<F^H(u), v> = sum_l F^H_l(u) . v(l)."""
    return float(np.sum(hybrid_force(model, u) * displacement_values(v, len(model.config))))


def hybrid_force_jacobian_apply(model: HybridModel, u: DisplacementLike, v: DisplacementLike) -> np.ndarray:
    """delta F^H(u)[v]: analytic on MM rows, central differences on QM rows."""
    if model.taylor_F is None:
        raise InvalidParameterError("Model has no Taylor force")
    values = _admissible_values(model, u)
    direction = displacement_values(v, len(model.config)).copy()
    direction[model.decomposition.ff_ids] = 0.0
    out = np.zeros_like(values)
    scale = float(np.max(np.abs(direction)))
    if scale == 0.0:
        return out

    h = DIRECTIONAL_FD_STEP / scale
    qm_ids = model.decomposition.qm_ids
    out[qm_ids] = (_qm_forces(model, values + h * direction) - _qm_forces(model, values - h * direction)) / (2.0 * h)

    mm_ids = model.decomposition.mm_ids
    if len(mm_ids):
        w = _force_windows(model, values, mm_ids)
        dw = _force_windows(model, direction, mm_ids, case='P')
        out[mm_ids] = taylor_force_directional(model.taylor_F, w, dw)
    return out


# --- Diagnostics ---

def residual(model: HybridModel, u: DisplacementLike) -> np.ndarray:
    """The quantity the scheme drives to zero: the masked gradient or the hybrid force."""
    if model.scheme == 'energy':
        return hybrid_energy_gradient(model, u)
    return hybrid_force(model, u)


def ghost_forces(model: HybridModel) -> np.ndarray:
    """Per-site |residual| at u = 0."""
    zero = np.zeros((len(model.config), model.dof))
    return np.linalg.norm(residual(model, zero), axis=1)


def dump_diagnostics(
    model: HybridModel,
    u: DisplacementLike,
    path: Union[str, Path],
    gamma: float = 1.0,
) -> Path:
    """Per-site residual and strain norms to CSV."""
    values = _admissible_values(model, u)
    res = np.linalg.norm(residual(model, values), axis=1)
    strain = pointwise_seminorm(values, model.config, gamma)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['site', 'x', 'y', 'radius', 'region', 'residual', 'strain'])
        for site in range(len(model.config)):
            x, y = model.config.sites[site]
            writer.writerow([
                site, f"{x:.6f}", f"{y:.6f}", f"{np.hypot(x, y):.6f}",
                Region(model.decomposition.labels[site]).name,
                f"{res[site]:.6e}", f"{strain[site]:.6e}",
            ])
    logger.info("Wrote per-site diagnostics to %s", path)
    return path
