"""
Anti-plane screw dislocation: the far-field predictor u0, the slip
operators, the elastic strain e(l) and the unified stencil argument
ee(l) + Du(l) shared by both coupling schemes.
"""
import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .core.exceptions import (
    BranchCutError,
    InvalidGeometryError,
    InvalidParameterError,
    MissingPredictorError,
)
from .lattice import (
    DefectKind,
    Displacement,
    DisplacementLike,
    ReferenceConfig,
    displacement_values,
    scatter_stencil_gradient,
    stencil_differences,
)
from .site_potential import StencilDomain, homogeneous_site_gradient
from .tb_core import ANTIPLANE, TBParams
from .utils.parallel import parallel_map

logger = logging.getLogger(__name__)

CUT_TOL = 1e-12
# a pure screw has no in-plane Burgers component
IN_PLANE_BURGERS = np.zeros(2)


def smooth_step(t: np.ndarray) -> np.ndarray:
    """Quintic step: 0 on (-inf, 0], 1 on [1, inf), C^2 in between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


@dataclass(frozen=True)
class ScrewPredictor:
    burgers_b3: float = 1.0
    core: Tuple[float, float] = (0.5, math.sqrt(3.0) / 6.0)
    core_radius: float = 2.0

    def __post_init__(self):
        if self.burgers_b3 <= 0:
            raise InvalidParameterError(f"burgers_b3 must be positive, got {self.burgers_b3}")
        if self.core_radius <= 0:
            raise InvalidParameterError(f"core_radius must be positive, got {self.core_radius}")
        object.__setattr__(self, 'core', tuple(float(c) for c in self.core))

    @property
    def core_point(self) -> np.ndarray:
        return np.asarray(self.core)

    def on_branch_cut(self, points: np.ndarray) -> np.ndarray:
        """Mask of points on Gamma = {x2 = core2, x1 >= core1}."""
        points = np.asarray(points, dtype=float)
        return (np.abs(points[..., 1] - self.core[1]) < CUT_TOL) & (points[..., 0] >= self.core[0] - CUT_TOL)

    def in_slip_region(self, points: np.ndarray) -> np.ndarray:
        """Omega_Gamma: the half-plane right of the regularised core, where S0 is applied."""
        return np.asarray(points, dtype=float)[..., 0] > self.core[0] + self.core_radius

    def core_map(self, points: np.ndarray) -> np.ndarray:
        """xi(x) = x - b12/(2 pi) eta(|x - core|/r) arg(x - core)."""
        points = np.asarray(points, dtype=float)
        rel = points - self.core_point
        angle = np.mod(np.arctan2(rel[..., 1], rel[..., 0]), 2.0 * math.pi)
        eta = smooth_step(np.linalg.norm(rel, axis=-1) / self.core_radius)
        return points - (eta * angle)[..., None] * IN_PLANE_BURGERS / (2.0 * math.pi)

    def check_lattice(self, config: ReferenceConfig) -> None:
        """The core must not be a site and no site may lie on the cut."""
        if config.site_id(self.core_point) >= 0:
            raise InvalidGeometryError(f"Dislocation core {self.core} coincides with a lattice site")
        if np.any(self.on_branch_cut(config.sites)):
            raise BranchCutError("A lattice site lies on the branch cut")


def screw_field(points: np.ndarray, pred: ScrewPredictor) -> np.ndarray:
    """u0 at every point: (b3 / 2 pi) arg(xi(x) - core) with arg in (0, 2 pi)."""
    points = np.asarray(points, dtype=float)
    if np.any(pred.on_branch_cut(points)):
        raise BranchCutError("Screw predictor evaluated on its branch cut")
    rel = pred.core_map(points) - pred.core_point
    angle = np.mod(np.arctan2(rel[..., 1], rel[..., 0]), 2.0 * math.pi)
    return pred.burgers_b3 * angle / (2.0 * math.pi)


def screw_u0(x, pred: ScrewPredictor) -> float:
    return float(screw_field(np.asarray(x, dtype=float)[None, :], pred)[0])


def predictor_displacement(config: ReferenceConfig, pred: ScrewPredictor) -> Displacement:
    return Displacement(screw_field(config.sites, pred)[:, None])


def slip_maps(
    u: DisplacementLike,
    pred: ScrewPredictor,
    config: Optional[ReferenceConfig] = None,
    adjoint: bool = False,
) -> Displacement:
    """
    S u(l) = u(l) above the cut line, u(l - b12) below it; ``adjoint`` applies S*.
    Sites shifted out of the domain read as zero.
    """
    values = displacement_values(u).copy()
    shift = IN_PLANE_BURGERS if adjoint else -IN_PLANE_BURGERS
    if not np.any(shift):
        return Displacement(values)
    if config is None:
        raise InvalidParameterError("slip_maps needs the reference configuration for a non-zero slip")
    below = config.sites[:, 1] < pred.core[1]
    source = config.site_ids(config.sites[below] + shift)
    shifted = np.zeros((int(below.sum()), values.shape[1]))
    shifted[source >= 0] = values[source[source >= 0]]
    values[below] = shifted
    return Displacement(values)


def antiplane_params(params: TBParams, pred: ScrewPredictor) -> TBParams:
    """The anti-plane model with out-of-plane period b3."""
    return dataclasses.replace(params, antiplane_period=pred.burgers_b3)


@dataclass(frozen=True, eq=False)
class ElasticStrainField:
    """e_rho(l) for every site l of the configuration and every stencil offset rho."""
    offsets: np.ndarray
    values: np.ndarray
    neighbors: np.ndarray
    slip_region: np.ndarray = field(repr=False)

    def at(self, site_ids: Union[int, np.ndarray]) -> np.ndarray:
        """(…, n_offsets, 1) strain stencils of the given sites."""
        return self.values[site_ids][..., None]

    def to_csv(self, path: Union[str, Path], config: ReferenceConfig) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['site', 'x', 'y', 'rho_x', 'rho_y', 'e', 'in_slip_region'])
            for site in range(len(self.values)):
                x, y = config.sites[site]
                for r, (rx, ry) in enumerate(self.offsets):
                    writer.writerow([site, f"{x:.6f}", f"{y:.6f}", f"{rx:.6f}", f"{ry:.6f}",
                                     f"{self.values[site, r]:.12e}", int(self.slip_region[site])])
        return path


def elastic_strain(config: ReferenceConfig, pred: ScrewPredictor, r_stencil: float) -> ElasticStrainField:
    """
    e_rho(l) = D_rho S0 u0(l) in Omega_Gamma and D_rho u0(l) elsewhere, where
    S0 subtracts b3 below the cut line so the field is continuous across Gamma.
    """
    if config.defect_kind not in (DefectKind.NONE, DefectKind.SCREW):
        raise InvalidGeometryError("Elastic strain needs a perfect lattice")
    pred.check_lattice(config)
    offsets = StencilDomain.build(r_stencil, config.spec).offsets
    sites = config.sites
    shifted = sites[:, None, :] + offsets[None, :, :]

    u_site = screw_field(sites, pred)
    u_shift = screw_field(shifted, pred)
    slip_region = pred.in_slip_region(sites)

    below_site = sites[:, 1] < pred.core[1]
    below_shift = shifted[..., 1] < pred.core[1]
    s0_site = np.where(slip_region & below_site, u_site - pred.burgers_b3, u_site)
    s0_shift = np.where(slip_region[:, None] & below_shift, u_shift - pred.burgers_b3, u_shift)

    values = s0_shift - s0_site[:, None]
    logger.debug("Elastic strain on %d sites x %d offsets", *values.shape)
    return ElasticStrainField(
        offsets=offsets,
        values=values,
        neighbors=config.neighbor_table(offsets),
        slip_region=slip_region,
    )


def unified_arguments(
    site_ids: np.ndarray,
    u: DisplacementLike,
    neighbors: np.ndarray,
    case: str,
    strain: Optional[ElasticStrainField] = None,
) -> np.ndarray:
    """ee(l) + Du(l) for each site: Du for case P, e(l) + Du(l) for case D."""
    values = displacement_values(u)
    site_ids = np.asarray(site_ids, dtype=int)
    du = stencil_differences(values, site_ids, neighbors)
    if case == 'P':
        return du
    if case == 'D':
        if strain is None:
            raise MissingPredictorError("Case D needs an elastic strain field from a screw predictor")
        return strain.at(site_ids) + du
    raise InvalidParameterError(f"Unknown case {case!r}; expected 'P' or 'D'")


def unified_argument(
    site: int,
    u: DisplacementLike,
    config: ReferenceConfig,
    offsets: np.ndarray,
    case: str,
    strain: Optional[ElasticStrainField] = None,
) -> np.ndarray:
    """The (n_offsets, dof) stencil argument passed to V_l for one site."""
    neighbors = config.site_ids(config.sites[site] + offsets)[None, :]
    return unified_arguments(np.array([site]), u, neighbors, case, strain)[0]


def predictor_residual(
    config: ReferenceConfig,
    pred: ScrewPredictor,
    params: TBParams,
    r_buf: float,
    threads: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Residual forces of the predictor, dE/du(l) at u = 0, from homogeneous
    buffered site potentials. Returned for the sites whose full interaction
    range lies inside the domain.
    """
    params = antiplane_params(params, pred)
    strain = elastic_strain(config, pred, r_buf)
    domain = StencilDomain(strain.offsets, float(r_buf))

    stencil_grads = np.stack(parallel_map(
        lambda k: homogeneous_site_gradient(strain.at(k), params, domain, ANTIPLANE),
        range(len(config)),
        threads,
    ))

    residual = scatter_stencil_gradient(stencil_grads, np.arange(len(config)), strain.neighbors, len(config))[:, 0]

    interior = np.flatnonzero(config.radii <= config.domain_radius - r_buf - 1e-12)
    return interior, residual[interior]
