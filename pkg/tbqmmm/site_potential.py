"""
Buffered site potentials and forces, their homogeneous (perfect-lattice)
versions, and the order-k Taylor expansions that form the MM model.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .core.coefficient_cache import CoefficientCache
from .core.config import config
from .core.exceptions import (
    DerivativeInconsistencyError,
    GeometryTooSmallError,
    InvalidParameterError,
    NonEquilibriumReferenceError,
    ShapeMismatchError,
)
from .lattice import (
    DisplacementLike,
    LatticeSpec,
    ReferenceConfig,
    Region,
    RegionDecomposition,
    displacement_values,
)
from .tb_core import (
    PLANAR,
    Kinematics,
    TBParams,
    kinematics_for,
    site_energies,
    site_energy_gradient,
    spectral_decomposition,
    total_gradient_from_spectral,
)
from .utils.parallel import parallel_map

logger = logging.getLogger(__name__)

HESSIAN_ASYMMETRY_WARN = 1e-6
HESSIAN_ASYMMETRY_FAIL = 1e-4
ZERO_FORCE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StencilDomain:
    """The perfect-lattice offsets of the punctured ball B_RBUF \\ {0}."""
    offsets: np.ndarray
    r_buf: float

    @classmethod
    def build(cls, r_buf: float, spec: Optional[LatticeSpec] = None) -> 'StencilDomain':
        spec = spec or LatticeSpec()
        _, points = spec.points_in_ball(r_buf)
        nonzero = np.linalg.norm(points, axis=1) > 1e-12
        return cls(offsets=points[nonzero], r_buf=float(r_buf))

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def window_offsets(self) -> np.ndarray:
        """Centre first, then the stencil offsets."""
        return np.vstack([np.zeros((1, 2)), self.offsets])

    def rotation_permutation(self, angle: float) -> np.ndarray:
        """perm[r] = index of Q rho_r for the rotation Q by ``angle``."""
        c, s = math.cos(angle), math.sin(angle)
        rotated = self.offsets @ np.array([[c, -s], [s, c]]).T
        perm = np.empty(len(self), dtype=int)
        for r, p in enumerate(rotated):
            hit = np.flatnonzero(np.linalg.norm(self.offsets - p, axis=1) < 1e-8)
            if len(hit) != 1:
                raise InvalidParameterError(f"Stencil is not invariant under rotation by {angle:.4f}")
            perm[r] = hit[0]
        return perm


# --- Homogeneous site potential and force ---

def _homogeneous_positions(g: np.ndarray, domain: StencilDomain, kinematics: Kinematics, centre=None) -> np.ndarray:
    g = np.asarray(g, dtype=float).reshape(len(domain), kinematics.dof)
    centre = np.zeros((1, kinematics.dof)) if centre is None else np.asarray(centre, dtype=float).reshape(1, kinematics.dof)
    return kinematics.positions(domain.window_offsets, np.vstack([centre, g]))


def homogeneous_site_potential(
    g: np.ndarray,
    params: TBParams,
    domain: StencilDomain,
    kinematics: Kinematics = PLANAR,
) -> float:
    """V_#(g): site energy of the origin of {0} u R displaced by g, origin held at 0."""
    spectral = spectral_decomposition(_homogeneous_positions(g, domain, kinematics), params)
    return float(site_energies(spectral, params)[0])


def homogeneous_site_gradient(
    g: np.ndarray,
    params: TBParams,
    domain: StencilDomain,
    kinematics: Kinematics = PLANAR,
) -> np.ndarray:
    """dV_#/dg as an (n_offsets, dof) array."""
    spectral = spectral_decomposition(_homogeneous_positions(g, domain, kinematics), params)
    return kinematics.project(site_energy_gradient(spectral, params, 0))[1:]


def homogeneous_force(
    w: np.ndarray,
    params: TBParams,
    domain: StencilDomain,
    kinematics: Kinematics = PLANAR,
) -> np.ndarray:
    """F_#(w): gradient of the band energy of the window cluster with respect to its centre."""
    w = np.asarray(w, dtype=float).reshape(len(domain) + 1, kinematics.dof)
    positions = kinematics.positions(domain.window_offsets, w)
    spectral = spectral_decomposition(positions, params)
    return kinematics.project(total_gradient_from_spectral(spectral, params))[0]


# --- Finite differences ---

def _central_difference(fn: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, index: int, step: float, richardson: bool) -> np.ndarray:
    def diff(h):
        e = np.zeros_like(x0)
        e[index] = h
        return (fn(x0 + e) - fn(x0 - e)) / (2.0 * h)

    if richardson:
        return (4.0 * diff(step / 2.0) - diff(step)) / 3.0
    return diff(step)


def _fd_jacobian(fn, x0, step, richardson, threads) -> np.ndarray:
    """Columns J[:, a] = d fn / d x_a by central differences, parallel over a."""
    columns = parallel_map(lambda a: _central_difference(fn, x0, a, step, richardson), range(len(x0)), threads)
    return np.stack(columns, axis=-1)


def _symmetrize_third(T: np.ndarray) -> np.ndarray:
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    return sum(np.transpose(T, p) for p in perms) / 6.0


def _drop_small(a: Optional[np.ndarray], drop_tol: float) -> Optional[np.ndarray]:
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a[np.abs(a) < drop_tol] = 0.0
    return a


def _point_group_operators(domain: StencilDomain, kinematics: Kinematics, with_centre: bool) -> list:
    """Flat orthogonal operators P_k of the six rotations acting on stencil displacements."""
    dof = kinematics.dof
    n = len(domain) + (1 if with_centre else 0)
    operators = []
    for k in range(6):
        angle = k * math.pi / 3.0
        perm = domain.rotation_permutation(angle)
        if with_centre:
            perm = np.concatenate([[0], perm + 1])
        c, s = math.cos(angle), math.sin(angle)
        Q = np.array([[c, -s], [s, c]]) if kinematics.name == 'planar' else np.eye(1)
        P = np.zeros((n * dof, n * dof))
        for r in range(n):
            P[perm[r] * dof:(perm[r] + 1) * dof, r * dof:(r + 1) * dof] = Q
        operators.append(P)
    return operators


# --- Taylor site potential ---

@dataclass(frozen=True, eq=False)
class TaylorSitePotential:
    """T_k V_#: coefficients of the order-k expansion about g = 0 on flat stencil vectors."""
    order: int
    c0: float
    grad: np.ndarray
    hess: np.ndarray
    third: Optional[np.ndarray]
    drop_tol: float
    domain: StencilDomain
    kinematics: Kinematics
    fd_step: float

    @property
    def size(self) -> int:
        return len(self.domain) * self.kinematics.dof

    def _flatten(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        shape = (len(self.domain), self.kinematics.dof)
        if g.shape[-2:] != shape:
            raise ShapeMismatchError(f"Stencil argument has shape {g.shape[-2:]}, expected {shape}")
        return g.reshape(g.shape[:-2] + (self.size,))

    def to_dict(self) -> Dict:
        return {
            'order': self.order,
            'c0': self.c0,
            'grad': self.grad.tolist(),
            'hess': self.hess.tolist(),
            'third': None if self.third is None else self.third.tolist(),
            'drop_tol': self.drop_tol,
            'offsets': self.domain.offsets.tolist(),
            'r_buf': self.domain.r_buf,
            'kinematics': self.kinematics.name,
            'fd_step': self.fd_step,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'TaylorSitePotential':
        return cls(
            order=data['order'],
            c0=data['c0'],
            grad=np.asarray(data['grad']),
            hess=np.asarray(data['hess']),
            third=None if data['third'] is None else np.asarray(data['third']),
            drop_tol=data['drop_tol'],
            domain=StencilDomain(np.asarray(data['offsets']), data['r_buf']),
            kinematics=kinematics_for(data['kinematics']),
            fd_step=data['fd_step'],
        )


def eval_taylor(pot: TaylorSitePotential, g: np.ndarray) -> np.ndarray:
    """V_#(0) + sum_j (1/j!) d^j V_#(0)[g^j]; ``g`` may carry leading batch axes."""
    x = pot._flatten(g)
    value = pot.c0 + x @ pot.grad + 0.5 * np.einsum('...a,ab,...b->...', x, pot.hess, x)
    if pot.third is not None:
        value = value + np.einsum('abc,...a,...b,...c->...', pot.third, x, x, x) / 6.0
    return value


def grad_taylor(pot: TaylorSitePotential, g: np.ndarray) -> np.ndarray:
    """Exact gradient of eval_taylor, shaped like ``g``."""
    g = np.asarray(g, dtype=float)
    x = pot._flatten(g)
    out = pot.grad + x @ pot.hess
    if pot.third is not None:
        out = out + 0.5 * np.einsum('abc,...b,...c->...a', pot.third, x, x)
    return out.reshape(g.shape)


def build_taylor_potential(
    k: int,
    params: TBParams,
    r_buf: float,
    fd_step: Optional[float] = None,
    drop_tol: Optional[float] = None,
    kinematics: Kinematics = PLANAR,
    richardson: bool = False,
    symmetrize: bool = False,
    threads: Optional[int] = None,
) -> TaylorSitePotential:
    """
    Expand the homogeneous buffered site potential to order k about the
    perfect lattice. The gradient is analytic; the Hessian is a central
    difference of the analytic gradient, the third-order tensor a central
    difference of that Hessian.
    """
    if k not in (2, 3):
        raise InvalidParameterError(f"Energy expansion order must be 2 or 3, got {k}")
    fd_step = config.default_fd_step if fd_step is None else fd_step
    drop_tol = config.default_drop_tol if drop_tol is None else drop_tol
    if fd_step <= 0:
        raise InvalidParameterError(f"fd_step must be positive, got {fd_step}")

    domain = StencilDomain.build(r_buf)
    size = len(domain) * kinematics.dof
    zero = np.zeros(size)

    def gradient(x):
        return homogeneous_site_gradient(x, params, domain, kinematics).ravel()

    c0 = homogeneous_site_potential(zero, params, domain, kinematics)
    grad = gradient(zero)
    hess = _fd_jacobian(gradient, zero, fd_step, richardson, threads)

    asymmetry = float(np.max(np.abs(hess - hess.T)))
    scale = max(1.0, float(np.max(np.abs(hess))))
    if asymmetry > HESSIAN_ASYMMETRY_FAIL * scale:
        raise DerivativeInconsistencyError(
            f"Hessian asymmetry {asymmetry:.3e} exceeds {HESSIAN_ASYMMETRY_FAIL}; check fd_step={fd_step}"
        )
    if asymmetry > HESSIAN_ASYMMETRY_WARN * scale:
        logger.warning("Hessian asymmetry %.3e above %.0e", asymmetry, HESSIAN_ASYMMETRY_WARN)
    hess = 0.5 * (hess + hess.T)

    third = None
    if k == 3:
        def hessian(x):
            return _fd_jacobian(gradient, x, fd_step, richardson, 1)
        third = _symmetrize_third(_fd_jacobian(hessian, zero, fd_step, richardson, threads))

    if symmetrize:
        operators = _point_group_operators(domain, kinematics, with_centre=False)
        grad = sum(P.T @ grad for P in operators) / len(operators)
        hess = sum(P.T @ hess @ P for P in operators) / len(operators)
        if third is not None:
            third = sum(np.einsum('ia,jb,kc,ijk->abc', P, P, P, third) for P in operators) / len(operators)

    logger.info("Built T_%d V_# on %d offsets (R_BUF=%.3f)", k, len(domain), r_buf)
    return TaylorSitePotential(
        order=k,
        c0=c0,
        grad=_drop_small(grad, drop_tol),
        hess=_drop_small(hess, drop_tol),
        third=_drop_small(third, drop_tol),
        drop_tol=drop_tol,
        domain=domain,
        kinematics=kinematics,
        fd_step=fd_step,
    )


# --- Taylor force ---

@dataclass(frozen=True, eq=False)
class TaylorForce:
    """T_k F_#: expansion of the centre force in the window displacement (centre first)."""
    order: int
    jac: np.ndarray
    second: Optional[np.ndarray]
    drop_tol: float
    domain: StencilDomain
    kinematics: Kinematics
    fd_step: float

    @property
    def size(self) -> int:
        return (len(self.domain) + 1) * self.kinematics.dof

    def _flatten(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        shape = (len(self.domain) + 1, self.kinematics.dof)
        if w.shape[-2:] != shape:
            raise ShapeMismatchError(f"Window argument has shape {w.shape[-2:]}, expected {shape}")
        return w.reshape(w.shape[:-2] + (self.size,))

    def translation_residual(self) -> float:
        """max |sum over window of the Jacobian blocks|; zero for an invariant force."""
        blocks = self.jac.reshape(self.kinematics.dof, -1, self.kinematics.dof)
        return float(np.max(np.abs(blocks.sum(axis=1))))

    def to_dict(self) -> Dict:
        return {
            'order': self.order,
            'jac': self.jac.tolist(),
            'second': None if self.second is None else self.second.tolist(),
            'drop_tol': self.drop_tol,
            'offsets': self.domain.offsets.tolist(),
            'r_buf': self.domain.r_buf,
            'kinematics': self.kinematics.name,
            'fd_step': self.fd_step,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'TaylorForce':
        return cls(
            order=data['order'],
            jac=np.asarray(data['jac']),
            second=None if data['second'] is None else np.asarray(data['second']),
            drop_tol=data['drop_tol'],
            domain=StencilDomain(np.asarray(data['offsets']), data['r_buf']),
            kinematics=kinematics_for(data['kinematics']),
            fd_step=data['fd_step'],
        )


def eval_taylor_force(tf: TaylorForce, w: np.ndarray) -> np.ndarray:
    """T_k F_#(w); the zeroth-order term vanishes on the equilibrium lattice."""
    x = tf._flatten(w)
    force = np.einsum('ia,...a->...i', tf.jac, x)
    if tf.second is not None:
        force = force + 0.5 * np.einsum('iab,...a,...b->...i', tf.second, x, x)
    return force


def taylor_force_directional(tf: TaylorForce, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Directional derivative of eval_taylor_force at w along dw."""
    x = tf._flatten(w)
    dx = tf._flatten(dw)
    out = np.einsum('ia,...a->...i', tf.jac, dx)
    if tf.second is not None:
        out = out + np.einsum('iab,...a,...b->...i', tf.second, x, dx)
    return out


def build_taylor_force(
    k: int,
    params: TBParams,
    r_buf: float,
    fd_step: Optional[float] = None,
    drop_tol: Optional[float] = None,
    kinematics: Kinematics = PLANAR,
    richardson: bool = False,
    symmetrize: bool = False,
    threads: Optional[int] = None,
) -> TaylorForce:
    """Expand the homogeneous buffered force to order k by central differences of the analytic force."""
    if k not in (1, 2):
        raise InvalidParameterError(f"Force expansion order must be 1 or 2, got {k}")
    fd_step = config.default_fd_step if fd_step is None else fd_step
    drop_tol = config.default_drop_tol if drop_tol is None else drop_tol
    if fd_step <= 0:
        raise InvalidParameterError(f"fd_step must be positive, got {fd_step}")

    domain = StencilDomain.build(r_buf)
    size = (len(domain) + 1) * kinematics.dof
    zero = np.zeros(size)

    def force(x):
        return homogeneous_force(x, params, domain, kinematics)

    f0 = force(zero)
    if np.max(np.abs(f0)) > ZERO_FORCE_TOL:
        raise NonEquilibriumReferenceError(
            f"Zeroth-order force {np.max(np.abs(f0)):.3e} exceeds {ZERO_FORCE_TOL}: the reference lattice is not an equilibrium"
        )

    jac = _fd_jacobian(force, zero, fd_step, richardson, threads)
    second = None
    if k == 2:
        def jacobian(x):
            return _fd_jacobian(force, x, fd_step, richardson, 1)
        second = _fd_jacobian(jacobian, zero, fd_step, richardson, threads)
        second = 0.5 * (second + np.transpose(second, (0, 2, 1)))

    if symmetrize:
        operators = _point_group_operators(domain, kinematics, with_centre=True)
        dof = kinematics.dof
        # the centre block of P_k is the rotation acting on the force components
        jac = sum(P[:dof, :dof].T @ jac @ P for P in operators) / len(operators)
        if second is not None:
            second = sum(np.einsum('ji,jab,ac,bd->icd', P[:dof, :dof], second, P, P) for P in operators) / len(operators)

    tf = TaylorForce(
        order=k,
        jac=_drop_small(jac, drop_tol),
        second=_drop_small(second, drop_tol),
        drop_tol=drop_tol,
        domain=domain,
        kinematics=kinematics,
        fd_step=fd_step,
    )
    logger.info("Built T_%d F_# on %d window sites, translation residual %.2e", k, len(domain) + 1, tf.translation_residual())
    return tf


# --- Cached construction ---

def _cache_meta(kind: str, k: int, params: TBParams, r_buf: float, fd_step: float, drop_tol: float,
                kinematics: Kinematics, richardson: bool, symmetrize: bool) -> Dict:
    return {
        'kind': kind,
        'params': params.fingerprint(),
        'r_buf': r_buf,
        'k': k,
        'fd_step': fd_step,
        'drop_tol': drop_tol,
        'kinematics': kinematics.name,
        'richardson': richardson,
        'symmetrize': symmetrize,
    }


def cached_taylor_potential(k, params, r_buf, fd_step=None, drop_tol=None, kinematics=PLANAR,
                            richardson=False, symmetrize=False, threads=None,
                            cache: Optional[CoefficientCache] = None) -> TaylorSitePotential:
    fd_step = config.default_fd_step if fd_step is None else fd_step
    drop_tol = config.default_drop_tol if drop_tol is None else drop_tol
    cache = cache or CoefficientCache()
    meta = _cache_meta('potential', k, params, r_buf, fd_step, drop_tol, kinematics, richardson, symmetrize)
    payload = cache.get_or_build('potential', meta, lambda: build_taylor_potential(
        k, params, r_buf, fd_step, drop_tol, kinematics, richardson, symmetrize, threads).to_dict())
    return TaylorSitePotential.from_dict(payload)


def cached_taylor_force(k, params, r_buf, fd_step=None, drop_tol=None, kinematics=PLANAR,
                        richardson=False, symmetrize=False, threads=None,
                        cache: Optional[CoefficientCache] = None) -> TaylorForce:
    fd_step = config.default_fd_step if fd_step is None else fd_step
    drop_tol = config.default_drop_tol if drop_tol is None else drop_tol
    cache = cache or CoefficientCache()
    meta = _cache_meta('force', k, params, r_buf, fd_step, drop_tol, kinematics, richardson, symmetrize)
    payload = cache.get_or_build('force', meta, lambda: build_taylor_force(
        k, params, r_buf, fd_step, drop_tol, kinematics, richardson, symmetrize, threads).to_dict())
    return TaylorForce.from_dict(payload)


# --- Buffered potentials on a configuration ---

def buffered_cluster(decomposition: RegionDecomposition, config_: ReferenceConfig, site: int) -> np.ndarray:
    """Lambda^QM u Lambda^BUF for QM sites, B_RBUF(l) otherwise."""
    r_buf = decomposition.r_buf
    if decomposition.labels[site] == Region.QM:
        if decomposition.r_qm + r_buf > config_.domain_radius + 1e-12:
            raise GeometryTooSmallError("QM buffer cluster extends past the generated domain")
        return decomposition.qm_cluster_ids
    centre = config_.sites[site]
    if np.linalg.norm(centre) + r_buf > config_.domain_radius + 1e-12:
        raise GeometryTooSmallError(f"Buffer ball of site {site} extends past the generated domain")
    return config_.ids_within(r_buf, center=centre)


def buffered_site_potential(
    decomposition: RegionDecomposition,
    config_: ReferenceConfig,
    site: int,
    u: DisplacementLike,
    params: TBParams,
    kinematics: Kinematics = PLANAR,
) -> float:
    """V_l^BUF evaluated at y0 + u on the buffered cluster of ``site``."""
    values = displacement_values(u, len(config_))
    cluster = buffered_cluster(decomposition, config_, site)
    positions = kinematics.positions(config_.sites[cluster], values[cluster])
    spectral = spectral_decomposition(positions, params, cluster)
    local = int(np.searchsorted(cluster, site))
    return float(site_energies(spectral, params)[local])


def buffered_force(
    decomposition: RegionDecomposition,
    config_: ReferenceConfig,
    site: int,
    u: DisplacementLike,
    params: TBParams,
    kinematics: Kinematics = PLANAR,
) -> np.ndarray:
    """F_l^BUF: gradient of the buffered cluster band energy with respect to y(l)."""
    values = displacement_values(u, len(config_))
    cluster = buffered_cluster(decomposition, config_, site)
    positions = kinematics.positions(config_.sites[cluster], values[cluster])
    spectral = spectral_decomposition(positions, params, cluster)
    local = int(np.searchsorted(cluster, site))
    return kinematics.project(total_gradient_from_spectral(spectral, params))[local]
