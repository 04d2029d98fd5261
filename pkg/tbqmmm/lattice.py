"""
Reference configurations, region decompositions, finite-difference stencils
and the weighted strain norms used for every error measurement.

Lengths are in units of the lattice spacing a = 1.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .core.exceptions import (
    InvalidDecompositionError,
    InvalidGeometryError,
    InvalidParameterError,
    ShapeMismatchError,
    UnsupportedDefectError,
)

logger = logging.getLogger(__name__)

TRIANGULAR_BRAVAIS = np.array([[1.0, 0.5],
                               [0.0, math.sqrt(3.0) / 2.0]])

# e^{-2 gamma R} below this is dropped from the strain stencil
STENCIL_TAIL_TOL = 1e-14
SITE_MATCH_TOL = 1e-8


class DefectKind(str, Enum):
    NONE = "none"
    VACANCY = "vacancy"
    DIVACANCY = "divacancy"
    INTERSTITIAL = "interstitial"
    SCREW = "screw"

    @classmethod
    def parse(cls, value: Union[str, 'DefectKind']) -> 'DefectKind':
        try:
            return cls(value)
        except ValueError as e:
            raise UnsupportedDefectError(f"Unknown defect kind: {value!r}") from e


class Region(IntEnum):
    QM = 0
    MM = 1
    FF = 2


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """Bravais lattice A Z^m; columns of ``bravais`` are the lattice vectors."""
    bravais: np.ndarray = field(default_factory=lambda: TRIANGULAR_BRAVAIS.copy())
    dimension: int = 2
    site_dimension: int = 2

    def __post_init__(self):
        bravais = np.asarray(self.bravais, dtype=float)
        if bravais.shape != (2, 2) or self.dimension != 2:
            raise InvalidGeometryError("Only two-dimensional Bravais lattices are supported")
        if np.linalg.det(bravais) <= 0:
            raise InvalidGeometryError("Bravais matrix must have positive determinant")
        if self.site_dimension not in (2, 3):
            raise InvalidGeometryError(f"site_dimension must be 2 or 3, got {self.site_dimension}")
        object.__setattr__(self, 'bravais', bravais)

    def points_in_ball(self, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Integer coordinates n and points A n with |A n| <= radius,
        sorted lexicographically in (n1, n2).
        """
        smallest_sv = np.linalg.svd(self.bravais, compute_uv=False).min()
        bound = int(math.ceil(radius / smallest_sv)) + 1
        rng = np.arange(-bound, bound + 1)
        n1, n2 = np.meshgrid(rng, rng, indexing='ij')
        coords = np.stack([n1.ravel(), n2.ravel()], axis=1)
        points = coords @ self.bravais.T
        keep = np.linalg.norm(points, axis=1) <= radius + 1e-12
        return coords[keep], points[keep]


@dataclass(frozen=True, eq=False)
class ReferenceConfig:
    """The index set Lambda: deterministic site ids, coordinates and defect metadata."""
    spec: LatticeSpec
    sites: np.ndarray
    lattice_coords: np.ndarray
    defect_kind: DefectKind
    r_def: float
    domain_radius: float
    tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'tree', cKDTree(self.sites))

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.sites, axis=1)

    def site_ids(self, points: np.ndarray) -> np.ndarray:
        """Ids of the sites at ``points`` (any leading shape); -1 where no site sits."""
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, 2)
        dist, idx = self.tree.query(flat, distance_upper_bound=SITE_MATCH_TOL)
        idx = np.where(np.isfinite(dist), idx, -1)
        return idx.reshape(points.shape[:-1])

    def site_id(self, point: Sequence[float]) -> int:
        return int(self.site_ids(np.asarray(point, dtype=float)[None, :])[0])

    def ids_within(self, radius: float, center: Optional[Sequence[float]] = None) -> np.ndarray:
        center = np.zeros(2) if center is None else np.asarray(center, dtype=float)
        return np.array(sorted(self.tree.query_ball_point(center, radius + 1e-12)), dtype=int)

    def neighbor_table(self, offsets: np.ndarray) -> np.ndarray:
        """(N, n_offsets) table of the ids of l + rho; -1 where l + rho is not a site."""
        return self.site_ids(self.sites[:, None, :] + offsets[None, :, :])

    def to_json(self, decomposition: Optional['RegionDecomposition'] = None) -> Dict:
        doc = {
            'bravais': self.spec.bravais.tolist(),
            'sites': self.sites.tolist(),
            'defect': self.defect_kind.value,
            'R_def': self.r_def,
            'domain_radius': self.domain_radius,
            'labels': None,
        }
        if decomposition is not None:
            doc['labels'] = [Region(v).name for v in decomposition.labels]
            doc['radii'] = {'R_QM': decomposition.r_qm, 'R_MM': decomposition.r_mm, 'R_BUF': decomposition.r_buf}
        return doc

    def save_json(self, path: Union[str, Path], decomposition: Optional['RegionDecomposition'] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_json(decomposition), f, indent=2)
        return path


@dataclass
class Displacement:
    """u: Lambda -> R^dof aligned with site ids; zero tail beyond the domain."""
    values: np.ndarray
    constant_tail: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.constant_tail is None:
            self.constant_tail = np.zeros(self.values.shape[1])

    @classmethod
    def zeros(cls, config: ReferenceConfig, dof: int) -> 'Displacement':
        return cls(np.zeros((len(config), dof)))

    @property
    def dof(self) -> int:
        return self.values.shape[1]

    def copy(self) -> 'Displacement':
        return Displacement(self.values.copy(), self.constant_tail.copy())


DisplacementLike = Union[Displacement, np.ndarray]


def displacement_values(u: DisplacementLike, n_sites: Optional[int] = None) -> np.ndarray:
    """Return the (N, dof) value array of ``u``, checking alignment when ``n_sites`` is given."""
    values = u.values if isinstance(u, Displacement) else np.asarray(u, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if n_sites is not None and values.shape[0] != n_sites:
        raise ShapeMismatchError(f"Displacement has {values.shape[0]} rows, configuration has {n_sites} sites")
    return values


def build_reference(
    spec: LatticeSpec,
    domain_radius: float,
    defect_kind: Union[str, DefectKind] = DefectKind.NONE,
    r_def: float = 0.0,
) -> ReferenceConfig:
    """
    Build Lambda inside B_{domain_radius}: the perfect lattice outside B_{r_def}
    and the requested point defect inside it.
    """
    kind = DefectKind.parse(defect_kind)
    if r_def < 0 or domain_radius <= r_def:
        raise InvalidGeometryError(
            f"domain_radius ({domain_radius}) must exceed R_def ({r_def}) >= 0"
        )

    coords, points = spec.points_in_ball(domain_radius)
    coords = coords.astype(float)

    removed: List[Tuple[int, int]] = []
    if kind == DefectKind.VACANCY:
        removed = [(0, 0)]
    elif kind == DefectKind.DIVACANCY:
        removed = [(0, 0), (1, 0)]

    if removed:
        keep = np.ones(len(coords), dtype=bool)
        for n in removed:
            hit = np.all(coords == np.asarray(n, dtype=float), axis=1)
            if np.linalg.norm(spec.bravais @ np.asarray(n, dtype=float)) > r_def:
                raise InvalidGeometryError(f"Removed site {n} lies outside B_Rdef (R_def={r_def})")
            keep &= ~hit
        coords, points = coords[keep], points[keep]

    if kind == DefectKind.INTERSTITIAL:
        # experimental: one extra atom at the barycentre of a lattice triangle
        frac = np.array([1.0 / 3.0, 1.0 / 3.0])
        extra = spec.bravais @ frac
        if np.linalg.norm(extra) > r_def:
            raise InvalidGeometryError(f"Interstitial lies outside B_Rdef (R_def={r_def})")
        coords = np.vstack([coords, frac])
        points = np.vstack([points, extra])
        logger.warning("Interstitial geometry is experimental")

    order = np.lexsort((coords[:, 1], coords[:, 0]))
    config = ReferenceConfig(
        spec=spec,
        sites=points[order],
        lattice_coords=coords[order],
        defect_kind=kind,
        r_def=float(r_def),
        domain_radius=float(domain_radius),
    )
    logger.debug("Built %s reference with %d sites in B_%.3f", kind.value, len(config), domain_radius)
    return config


@dataclass(frozen=True, eq=False)
class RegionDecomposition:
    r_qm: float
    r_mm: float
    r_buf: float
    labels: np.ndarray
    buffer_ids: np.ndarray

    @property
    def qm_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels == Region.QM)

    @property
    def mm_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels == Region.MM)

    @property
    def ff_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels == Region.FF)

    @property
    def free_mask(self) -> np.ndarray:
        return self.labels != Region.FF

    @property
    def qm_cluster_ids(self) -> np.ndarray:
        """Lambda^QM union Lambda^BUF, sorted by site id."""
        return np.union1d(self.qm_ids, self.buffer_ids)

    def counts(self) -> Dict[str, int]:
        return {
            'QM': int(np.sum(self.labels == Region.QM)),
            'MM': int(np.sum(self.labels == Region.MM)),
            'FF': int(np.sum(self.labels == Region.FF)),
            'BUF': int(len(self.buffer_ids)),
        }


def decompose(config: ReferenceConfig, r_qm: float, r_mm: float, r_buf: float) -> RegionDecomposition:
    """Label every site QM, MM or FF and collect the QM buffer shell."""
    if min(r_qm, r_mm, r_buf) <= 0:
        raise InvalidDecompositionError("R_QM, R_MM and R_BUF must be positive")
    if not config.r_def + r_buf < r_qm:
        raise InvalidDecompositionError(
            f"R_QM > R_def + R_BUF violated: {r_qm} <= {config.r_def} + {r_buf}"
        )
    if not r_qm < r_mm:
        raise InvalidDecompositionError(f"R_QM < R_MM violated: {r_qm} >= {r_mm}")
    if not r_mm + r_buf <= config.domain_radius + 1e-12:
        raise InvalidDecompositionError(
            f"R_MM + R_BUF <= domain_radius violated: {r_mm} + {r_buf} > {config.domain_radius}"
        )

    radii = config.radii
    in_qm = radii <= r_qm + 1e-12
    in_mm_ball = radii <= r_mm + 1e-12
    labels = np.full(len(config), Region.FF, dtype=np.int8)
    labels[in_mm_ball] = Region.MM
    labels[in_qm] = Region.QM
    buffer_ids = np.flatnonzero((radii <= r_qm + r_buf + 1e-12) & ~in_qm)

    decomposition = RegionDecomposition(
        r_qm=float(r_qm), r_mm=float(r_mm), r_buf=float(r_buf),
        labels=labels, buffer_ids=buffer_ids,
    )
    logger.info("Decomposition R_QM=%.3f R_MM=%.3f R_BUF=%.3f: %s", r_qm, r_mm, r_buf, decomposition.counts())
    return decomposition


def stencil(config: ReferenceConfig, site: int, radius: float) -> List[Tuple[np.ndarray, int]]:
    """All sites k != l with |k - l| <= radius, as (rho = k - l, k) in id order."""
    center = config.sites[site]
    ids = sorted(i for i in config.tree.query_ball_point(center, radius + 1e-12) if i != site)
    return [(config.sites[i] - center, i) for i in ids]


def stencil_radius(gamma: float) -> float:
    """Radius beyond which e^{-2 gamma |rho|} drops below STENCIL_TAIL_TOL."""
    return math.log(1.0 / STENCIL_TAIL_TOL) / (2.0 * gamma)


def pointwise_seminorm(
    u: DisplacementLike,
    config: ReferenceConfig,
    gamma: float = 1.0,
    subset: Optional[np.ndarray] = None,
    chunk: int = 512,
) -> np.ndarray:
    """|Du(l)|_gamma for every site in ``subset`` (all sites by default)."""
    if gamma <= 0:
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    values = displacement_values(u, len(config))
    ids = np.arange(len(config)) if subset is None else np.asarray(subset, dtype=int)
    radius = stencil_radius(gamma)

    out = np.empty(len(ids))
    for start in range(0, len(ids), chunk):
        block = ids[start:start + chunk]
        neighbor_lists = config.tree.query_ball_point(config.sites[block], radius)
        rows = np.repeat(block, [len(n) for n in neighbor_lists])
        cols = np.fromiter((j for n in neighbor_lists for j in n), dtype=int, count=len(rows))
        dist = np.linalg.norm(config.sites[cols] - config.sites[rows], axis=1)
        weight = np.exp(-2.0 * gamma * dist)
        diff2 = np.sum((values[cols] - values[rows]) ** 2, axis=1)
        local = np.zeros(len(config))
        np.add.at(local, rows, weight * diff2)
        out[start:start + len(block)] = np.sqrt(local[block])
    return out


def weighted_seminorm(
    u: DisplacementLike,
    config: ReferenceConfig,
    gamma: float = 1.0,
    subset: Optional[np.ndarray] = None,
) -> float:
    """||Du||_{l^2_gamma(subset)} on the finite lattice."""
    return float(np.sqrt(np.sum(pointwise_seminorm(u, config, gamma, subset) ** 2)))


def stencil_differences(values: np.ndarray, site_ids: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """
    D u(l) for each l in ``site_ids`` as an (n, n_offsets, dof) array.

    ``neighbors`` is the matching rows of a neighbor table; u is extended by
    zero where a neighbor lies outside the generated domain (-1 entries).
    """
    padded = np.vstack([values, np.zeros((1, values.shape[1]))])
    table = np.where(neighbors < 0, len(values), neighbors)
    return padded[table] - values[site_ids][:, None, :]


def scatter_stencil_gradient(
    grad_stencil: np.ndarray,
    site_ids: np.ndarray,
    neighbors: np.ndarray,
    n_sites: int,
) -> np.ndarray:
    """Adjoint of stencil_differences: accumulate dV/dDu(l) onto the site rows."""
    dof = grad_stencil.shape[-1]
    out = np.zeros((n_sites + 1, dof))
    table = np.where(neighbors < 0, n_sites, neighbors)
    np.add.at(out, table.ravel(), grad_stencil.reshape(-1, dof))
    np.add.at(out, site_ids, -grad_stencil.sum(axis=1))
    return out[:n_sites]
