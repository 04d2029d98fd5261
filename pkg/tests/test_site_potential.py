"""
Tests for homogeneous site potentials and their Taylor models
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

import tbqmmm.site_potential as site_potential
from tbqmmm.core.coefficient_cache import CoefficientCache
from tbqmmm.core.exceptions import (
    DerivativeInconsistencyError,
    InvalidParameterError,
    NonEquilibriumReferenceError,
    ShapeMismatchError,
)
from tbqmmm.harness import fit_slope
from tbqmmm.properties import buffer_convergence_profile, taylor_force_remainder_profile, taylor_remainder_profile
from tbqmmm.site_potential import (
    StencilDomain,
    build_taylor_force,
    build_taylor_potential,
    cached_taylor_force,
    cached_taylor_potential,
    eval_taylor,
    eval_taylor_force,
    grad_taylor,
    homogeneous_force,
    homogeneous_site_gradient,
    homogeneous_site_potential,
    taylor_force_directional,
)
from tbqmmm.tb_core import ANTIPLANE, default_params


@pytest.fixture(scope="module")
def params():
    return default_params()


@pytest.fixture(scope="module")
def taylor2(params):
    return build_taylor_potential(2, params, 2.0)


@pytest.fixture(scope="module")
def taylor_force1(params):
    return build_taylor_force(1, params, 2.0)


def test_stencil_domain():
    """B_2 minus the origin holds 18 offsets; windows put the centre first"""
    domain = StencilDomain.build(2.0)
    assert len(domain) == 18
    assert np.all(np.linalg.norm(domain.offsets, axis=1) > 0)
    assert np.array_equal(domain.window_offsets[0], [0.0, 0.0])
    assert domain.window_offsets.shape == (19, 2)


def test_rotation_permutation():
    """Six-fold rotations permute the stencil; other angles do not"""
    domain = StencilDomain.build(2.0)
    perm = domain.rotation_permutation(math.pi / 3.0)
    assert sorted(perm) == list(range(len(domain)))
    with pytest.raises(InvalidParameterError):
        domain.rotation_permutation(0.3)


def test_reference_force_vanishes(params):
    """The perfect lattice is an equilibrium of the homogeneous force"""
    domain = StencilDomain.build(2.0)
    assert np.max(np.abs(homogeneous_force(np.zeros((19, 2)), params, domain))) < 1e-12


def test_taylor_zeroth_and_first_order(params, taylor2):
    """c0 and the gradient match the analytic potential at g = 0"""
    zero = np.zeros((len(taylor2.domain), 2))
    assert taylor2.c0 == pytest.approx(homogeneous_site_potential(zero, params, taylor2.domain))
    assert np.allclose(taylor2.grad, homogeneous_site_gradient(zero, params, taylor2.domain).ravel(), atol=1e-10)


def test_taylor_hessian_is_symmetric(taylor2):
    assert np.array_equal(taylor2.hess, taylor2.hess.T)


def test_grad_taylor_matches_fd(taylor2):
    """grad_taylor is the exact gradient of the polynomial"""
    rng = np.random.default_rng(0)
    g = 0.05 * rng.normal(size=(len(taylor2.domain), 2))
    analytic = grad_taylor(taylor2, g)
    h = 1e-6
    for r, a in [(0, 0), (5, 1), (17, 0)]:
        e = np.zeros_like(g)
        e[r, a] = h
        numeric = (eval_taylor(taylor2, g + e) - eval_taylor(taylor2, g - e)) / (2.0 * h)
        assert analytic[r, a] == pytest.approx(numeric, abs=1e-8)


def test_eval_taylor_batches(taylor2):
    """Leading axes of the argument are batch axes"""
    rng = np.random.default_rng(1)
    g = 0.05 * rng.normal(size=(4, len(taylor2.domain), 2))
    batch = eval_taylor(taylor2, g)
    assert batch.shape == (4,)
    assert batch[2] == pytest.approx(float(eval_taylor(taylor2, g[2])))


def test_eval_taylor_shape_mismatch(taylor2):
    with pytest.raises(ShapeMismatchError):
        eval_taylor(taylor2, np.zeros((5, 2)))


def test_taylor_remainder_rate(params):
    """|V - T_2 V| at t g scales like t^3"""
    remainders = taylor_remainder_profile(params, 2, np.random.default_rng(2))
    slope = fit_slope([0.01, 0.02, 0.04, 0.08], remainders)[0]
    assert slope == pytest.approx(3.0, abs=0.2)


@pytest.mark.slow
def test_taylor3_remainder_rate(params):
    """|V - T_3 V| at t g scales like t^4"""
    remainders = taylor_remainder_profile(params, 3, np.random.default_rng(3))
    slope = fit_slope([0.01, 0.02, 0.04, 0.08], remainders)[0]
    assert slope == pytest.approx(4.0, abs=0.2)


def test_invalid_orders(params):
    with pytest.raises(InvalidParameterError):
        build_taylor_potential(1, params, 1.0)
    with pytest.raises(InvalidParameterError):
        build_taylor_force(3, params, 1.0)
    with pytest.raises(InvalidParameterError):
        build_taylor_potential(2, params, 1.0, fd_step=0.0)


def test_hessian_asymmetry_is_fatal(params, mocker):
    """An inconsistent finite-difference Hessian raises"""
    bad = np.zeros((12, 12))
    bad[0, 1] = 1.0
    mocker.patch.object(site_potential, '_fd_jacobian', return_value=bad)
    with pytest.raises(DerivativeInconsistencyError):
        build_taylor_potential(2, params, 1.0)


def test_nonzero_reference_force_is_fatal(params, mocker):
    mocker.patch.object(site_potential, 'homogeneous_force', return_value=np.array([1e-6, 0.0]))
    with pytest.raises(NonEquilibriumReferenceError):
        build_taylor_force(1, params, 1.0)


def test_taylor_force_translation_invariance(taylor_force1):
    """Rigid translation of the window does not change the force"""
    assert taylor_force1.translation_residual() < 1e-6


def test_taylor_force_jacobian_shape(taylor_force1):
    assert taylor_force1.jac.shape == (2, 19 * 2)


def test_taylor_force_remainder_rate(params):
    """|F - T_1 F| at t w scales like t^2"""
    remainders = taylor_force_remainder_profile(params, 1, np.random.default_rng(4))
    slope = fit_slope([0.01, 0.02, 0.04, 0.08], remainders)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_taylor_force_directional_is_linear_part(taylor_force1):
    """For k = 1 the directional derivative is the Jacobian action"""
    rng = np.random.default_rng(5)
    w = rng.normal(size=(19, 2))
    dw = rng.normal(size=(19, 2))
    assert np.allclose(taylor_force_directional(taylor_force1, w, dw), eval_taylor_force(taylor_force1, dw))


def test_symmetrized_build_is_close(params, taylor2):
    """Point-group averaging only removes finite-difference noise"""
    symmetric = build_taylor_potential(2, params, 2.0, symmetrize=True)
    assert np.max(np.abs(symmetric.hess - taylor2.hess)) < 1e-6
    assert np.max(np.abs(symmetric.grad - taylor2.grad)) < 1e-10


def test_antiplane_taylor_model():
    """Anti-plane kinematics use one degree of freedom per offset"""
    params = default_params(antiplane_period=1.0)
    pot = build_taylor_potential(2, params, 1.5, kinematics=ANTIPLANE)
    assert pot.hess.shape == (len(pot.domain), len(pot.domain))
    assert np.allclose(pot.grad, 0.0, atol=1e-12)


def test_buffer_convergence_is_exponential(params):
    """V^BUF_R approaches V as R grows"""
    gaps = buffer_convergence_profile(params, np.random.default_rng(6), r_bufs=(2.0, 3.0, 4.0), exact_radius=7.0)
    assert gaps[2] < gaps[1] < gaps[0]


def test_coefficient_cache_reuse(params, tmp_path, mocker):
    """A second build with the same key is served from the cache"""
    cache = CoefficientCache(str(tmp_path))
    spy = mocker.spy(site_potential, 'build_taylor_potential')
    first = cached_taylor_potential(2, params, 1.0, cache=cache)
    second = cached_taylor_potential(2, params, 1.0, cache=cache)
    assert spy.call_count == 1
    assert np.array_equal(first.hess, second.hess)
    assert len(cache.list_entries()) == 1


def test_coefficient_cache_keys_differ(params, tmp_path):
    """Different orders and kinds are separate entries"""
    cache = CoefficientCache(str(tmp_path))
    cached_taylor_potential(2, params, 1.0, cache=cache)
    cached_taylor_force(1, params, 1.0, cache=cache)
    kinds = sorted(e['kind'] for e in cache.list_entries())
    assert kinds == ['force', 'potential']
