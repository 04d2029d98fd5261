"""
Two-centre, single-orbital tight-binding model.

H_lk = h_hop(|y_l - y_k|) for l != k and H_ll = h_ons(sum_j rho(|y_l - y_j|)).
Band and site energies use the Fermi-Dirac occupation at fixed chemical
potential; all derivatives are analytic, using the divided-difference formula
for matrix functions.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree
from scipy.special import expit

from .core.config import config
from .core.exceptions import AccumulationError, InvalidParameterError

logger = logging.getLogger(__name__)


# --- Scalar function families ---

@dataclass(frozen=True)
class Exponential:
    """A * exp(-lam * (x - x0))."""
    amplitude: float
    decay: float
    shift: float = 1.0

    def __call__(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        value = self.amplitude * np.exp(-self.decay * (x - self.shift))
        return value, -self.decay * value


@dataclass(frozen=True)
class Polynomial:
    """sum_i c_i x^i."""
    coeffs: Tuple[float, ...]

    def __call__(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.coeffs, dtype=float)
        value = np.polynomial.polynomial.polyval(x, c)
        deriv = np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(c)) if len(c) > 1 else np.zeros_like(np.asarray(x, dtype=float))
        return value, deriv


FUNCTION_FAMILIES = {
    'exponential': lambda coeffs: Exponential(*coeffs),
    'polynomial': lambda coeffs: Polynomial(tuple(coeffs)),
}


def make_function(family: str, coeffs: Sequence[float]):
    """Build a scalar function from a family name and coefficient list."""
    try:
        factory = FUNCTION_FAMILIES[family]
    except KeyError as e:
        raise InvalidParameterError(f"Unknown function family: {family!r}") from e
    try:
        return factory(list(coeffs))
    except TypeError as e:
        raise InvalidParameterError(f"Bad coefficients for {family}: {list(coeffs)}") from e


def quintic_taper(r: np.ndarray, r_cut: float, margin: float) -> Tuple[np.ndarray, np.ndarray]:
    """psi = 1 on [0, r_cut - margin], 0 on [r_cut, inf), C^2 quintic in between."""
    t = np.clip((np.asarray(r, dtype=float) - (r_cut - margin)) / margin, 0.0, 1.0)
    psi = 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)
    dpsi = -30.0 * t ** 2 * (1.0 - t) ** 2 / margin
    return psi, dpsi


# --- Model parameters ---

@dataclass(frozen=True)
class TBParams:
    hopping: object = field(default_factory=lambda: Exponential(-1.0, 2.0, 1.0))
    density: object = field(default_factory=lambda: Exponential(1.0, 3.0, 1.0))
    onsite: object = field(default_factory=lambda: Polynomial((0.0, 1.0)))
    r_cut: float = 2.5
    mu: float = 0.0
    beta: float = 10.0
    smoothness_margin: float = 0.5
    min_separation: float = 0.5
    # out-of-plane period of the anti-plane model; None for planar clusters
    antiplane_period: Optional[float] = None

    def __post_init__(self):
        if self.beta <= 0:
            raise InvalidParameterError(f"beta must be positive (T > 0), got {self.beta}")
        if not 0 < self.smoothness_margin <= self.r_cut:
            raise InvalidParameterError("smoothness_margin must lie in (0, r_cut]")
        if self.min_separation <= 0:
            raise InvalidParameterError("min_separation must be positive")

    def hop(self, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        value, deriv = self.hopping(r)
        psi, dpsi = quintic_taper(r, self.r_cut, self.smoothness_margin)
        return value * psi, deriv * psi + value * dpsi

    def rho(self, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        value, deriv = self.density(r)
        psi, dpsi = quintic_taper(r, self.r_cut, self.smoothness_margin)
        return value * psi, deriv * psi + value * dpsi

    def ons(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.onsite(np.asarray(x, dtype=float))

    def fingerprint(self) -> dict:
        """Plain-data description used for cache keys and run metadata."""
        return {
            'hopping': repr(self.hopping),
            'density': repr(self.density),
            'onsite': repr(self.onsite),
            'r_cut': self.r_cut,
            'mu': self.mu,
            'beta': self.beta,
            'smoothness_margin': self.smoothness_margin,
            'min_separation': self.min_separation,
            'antiplane_period': self.antiplane_period,
        }


def default_params(**overrides) -> TBParams:
    """The toy model: exponential hopping and density, linear embedding, mu = 0, beta = 10."""
    return TBParams(**overrides)


# --- Kinematics ---

@dataclass(frozen=True)
class Kinematics:
    """How a displacement field u deforms reference sites into atom positions."""
    name: str
    dof: int

    def positions(self, reference: np.ndarray, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(len(reference), self.dof)
        if self.name == 'planar':
            return reference + u
        return np.hstack([reference, u])

    def project(self, position_gradient: np.ndarray) -> np.ndarray:
        """Restrict a gradient with respect to positions to the displacement components."""
        if self.name == 'planar':
            return position_gradient[:, :2]
        return position_gradient[:, 2:3]


PLANAR = Kinematics('planar', 2)
ANTIPLANE = Kinematics('antiplane', 1)


def kinematics_for(name: str) -> Kinematics:
    return {'planar': PLANAR, 'antiplane': ANTIPLANE}[name]


# --- Geometry ---

@dataclass(frozen=True)
class _Pairs:
    i: np.ndarray
    j: np.ndarray
    r: np.ndarray
    dr: np.ndarray  # d r_ij / d y_i


def _pairs(positions: np.ndarray, params: TBParams) -> _Pairs:
    """Ordered pairs (i, j), i != j, with interaction distance below r_cut."""
    positions = np.asarray(positions, dtype=float)
    n, dim = positions.shape
    if n < 2:
        empty = np.zeros(0, dtype=int)
        return _Pairs(empty, empty, np.zeros(0), np.zeros((0, dim)))

    # the periodic chord never exceeds the in-plane distance bound used here
    tree = cKDTree(positions[:, :2])
    half = tree.query_pairs(params.r_cut, output_type='ndarray')
    if len(half) == 0:
        empty = np.zeros(0, dtype=int)
        return _Pairs(empty, empty, np.zeros(0), np.zeros((0, dim)))
    i = np.concatenate([half[:, 0], half[:, 1]])
    j = np.concatenate([half[:, 1], half[:, 0]])

    diff = positions[i] - positions[j]
    eff = diff.copy()
    scale = np.ones_like(diff)
    if dim == 3 and params.antiplane_period is not None:
        p = params.antiplane_period
        eff[:, 2] = p / math.pi * np.sin(math.pi * diff[:, 2] / p)
        scale[:, 2] = np.cos(math.pi * diff[:, 2] / p)
    r = np.linalg.norm(eff, axis=1)

    if np.any(r < params.min_separation):
        k = int(np.argmin(r))
        raise AccumulationError(
            f"Atoms {i[k]} and {j[k]} are {r[k]:.4g} apart, below the non-accumulation distance {params.min_separation}"
        )
    keep = r < params.r_cut
    dr = eff[keep] / r[keep, None] * scale[keep]
    return _Pairs(i[keep], j[keep], r[keep], dr)


def _embedding_density(pairs: _Pairs, n: int, params: TBParams) -> Tuple[np.ndarray, np.ndarray]:
    rho_val, rho_der = params.rho(pairs.r)
    density = np.zeros(n)
    np.add.at(density, pairs.i, rho_val)
    return density, rho_der


def assemble_hamiltonian(positions: np.ndarray, params: TBParams) -> np.ndarray:
    """Symmetric N x N Hamiltonian H(y)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = len(positions)
    pairs = _pairs(positions, params)
    H = np.zeros((n, n))
    hop_val, _ = params.hop(pairs.r)
    H[pairs.i, pairs.j] = hop_val
    density, _ = _embedding_density(pairs, n, params)
    H[np.arange(n), np.arange(n)] = params.ons(density)[0]
    return H


# --- Spectral quantities ---

@dataclass(frozen=True, eq=False)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    cluster_ids: np.ndarray
    positions: np.ndarray


def spectral_decomposition(
    positions: np.ndarray,
    params: TBParams,
    cluster_ids: Optional[np.ndarray] = None,
) -> SpectralData:
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    H = assemble_hamiltonian(positions, params)
    eigenvalues, eigenvectors = scipy.linalg.eigh(H)
    ids = np.arange(len(positions)) if cluster_ids is None else np.asarray(cluster_ids)
    return SpectralData(eigenvalues, eigenvectors, ids, positions)


def fermi_dirac(eps: np.ndarray, params: TBParams) -> np.ndarray:
    """f(eps) = 1 / (1 + exp(beta (eps - mu))), overflow-safe."""
    return expit(-params.beta * (np.asarray(eps) - params.mu))


def _occupied_energy(eps: np.ndarray, params: TBParams) -> Tuple[np.ndarray, np.ndarray]:
    """g(eps) = f(eps) eps and g'(eps)."""
    f = fermi_dirac(eps, params)
    df = -params.beta * f * (1.0 - f)
    return f * eps, f + eps * df


def _divided_differences(eps: np.ndarray, params: TBParams) -> np.ndarray:
    """g^[1](eps_s, eps_t) with the derivative limit on near-degenerate pairs."""
    g, dg = _occupied_energy(eps, params)
    delta = eps[:, None] - eps[None, :]
    degenerate = np.abs(delta) < config.degeneracy_tol
    safe = np.where(degenerate, 1.0, delta)
    G1 = (g[:, None] - g[None, :]) / safe
    limit = 0.5 * (dg[:, None] + dg[None, :])
    return np.where(degenerate, limit, G1)


def band_energy(spectral: SpectralData, params: TBParams) -> float:
    g, _ = _occupied_energy(spectral.eigenvalues, params)
    return float(np.sum(g))


def site_energies(spectral: SpectralData, params: TBParams) -> np.ndarray:
    """E_l = sum_s g(eps_s) |psi_s(l)|^2, the diagonal of g(H)."""
    g, _ = _occupied_energy(spectral.eigenvalues, params)
    return (spectral.eigenvectors ** 2) @ g


def trace_gradient(positions: np.ndarray, params: TBParams, weight: np.ndarray) -> np.ndarray:
    """
    Gradient with respect to positions of Tr(W H(y)) for a fixed symmetric W.

    Every energy derivative in the package reduces to this with the
    appropriate spectral weight matrix.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = len(positions)
    pairs = _pairs(positions, params)
    grad = np.zeros_like(positions)
    if len(pairs.i) == 0:
        return grad
    _, hop_der = params.hop(pairs.r)
    density, rho_der = _embedding_density(pairs, n, params)
    _, ons_der = params.ons(density)
    c = np.diag(weight) * ons_der
    coef = 2.0 * weight[pairs.i, pairs.j] * hop_der + (c[pairs.i] + c[pairs.j]) * rho_der
    np.add.at(grad, pairs.i, coef[:, None] * pairs.dr)
    return grad


def total_gradient_from_spectral(spectral: SpectralData, params: TBParams) -> np.ndarray:
    _, dg = _occupied_energy(spectral.eigenvalues, params)
    psi = spectral.eigenvectors
    weight = (psi * dg) @ psi.T
    return trace_gradient(spectral.positions, params, weight)


def total_gradient(positions: np.ndarray, params: TBParams) -> np.ndarray:
    """dE/dy = sum_s g'(eps_s) psi_s^T (dH/dy) psi_s, valid under degeneracy."""
    return total_gradient_from_spectral(spectral_decomposition(positions, params), params)


def subset_energy_gradient(spectral: SpectralData, params: TBParams, weights: np.ndarray) -> np.ndarray:
    """Gradient of sum_l w_l E_l with respect to every cluster position."""
    psi = spectral.eigenvectors
    G1 = _divided_differences(spectral.eigenvalues, params)
    projected = (psi.T * np.asarray(weights, dtype=float)) @ psi
    weight = psi @ (G1 * projected) @ psi.T
    return trace_gradient(spectral.positions, params, weight)


def site_energy_gradient(spectral: SpectralData, params: TBParams, site: int) -> np.ndarray:
    """Gradient of E_l = [g(H)]_ll with respect to every cluster position."""
    weights = np.zeros(len(spectral.eigenvalues))
    weights[site] = 1.0
    return subset_energy_gradient(spectral, params, weights)
