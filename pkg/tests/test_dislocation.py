"""
Tests for the screw dislocation predictor and elastic strain
"""
import csv
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from tbqmmm.core.exceptions import (
    BranchCutError,
    InvalidGeometryError,
    InvalidParameterError,
    MissingPredictorError,
)
from tbqmmm.dislocation import (
    ScrewPredictor,
    antiplane_params,
    elastic_strain,
    predictor_displacement,
    screw_field,
    screw_u0,
    slip_maps,
    unified_arguments,
)
from tbqmmm.harness import fit_slope
from tbqmmm.lattice import LatticeSpec, build_reference, stencil_differences
from tbqmmm.properties import predictor_residual_profile, screw_branch_jump, slip_invariance_error, strain_decay_profile
from tbqmmm.tb_core import default_params


@pytest.fixture(scope="module")
def pred():
    return ScrewPredictor()


@pytest.fixture(scope="module")
def screw_config():
    return build_reference(LatticeSpec(site_dimension=3), 8.0, 'screw', 0.0)


def test_default_core_is_triangle_centre(pred):
    assert pred.core == pytest.approx((0.5, math.sqrt(3.0) / 6.0))


def test_branch_jump_equals_burgers(pred):
    """u0 jumps by b3 across the cut"""
    assert screw_branch_jump(pred) == pytest.approx(pred.burgers_b3, abs=1e-9)


def test_field_is_continuous_left_of_core(pred):
    """No jump across the line x2 = core2 to the left of the core"""
    x1 = pred.core[0] - 3.0
    above = screw_u0((x1, pred.core[1] + 1e-9), pred)
    below = screw_u0((x1, pred.core[1] - 1e-9), pred)
    assert above == pytest.approx(below, abs=1e-8)
    assert above == pytest.approx(0.5 * pred.burgers_b3, abs=1e-8)


def test_field_on_cut_raises(pred):
    with pytest.raises(BranchCutError):
        screw_field(np.array([[pred.core[0] + 1.0, pred.core[1]]]), pred)


def test_field_range(pred, screw_config):
    """arg is taken in (0, 2 pi), so u0 lies in (0, b3)"""
    u0 = predictor_displacement(screw_config, pred).values
    assert np.all(u0 > 0.0) and np.all(u0 < pred.burgers_b3)


def test_core_on_site_is_rejected(screw_config):
    with pytest.raises(InvalidGeometryError):
        ScrewPredictor(core=(0.0, 0.0)).check_lattice(screw_config)


def test_sites_on_cut_are_rejected(screw_config):
    with pytest.raises(BranchCutError):
        ScrewPredictor(core=(0.5, 0.0)).check_lattice(screw_config)


def test_invalid_predictor_parameters():
    with pytest.raises(InvalidParameterError):
        ScrewPredictor(burgers_b3=0.0)
    with pytest.raises(InvalidParameterError):
        ScrewPredictor(core_radius=-1.0)


def test_antiplane_params_period(pred):
    assert antiplane_params(default_params(), pred).antiplane_period == pred.burgers_b3


def test_slip_maps_identity_for_pure_screw(pred, screw_config):
    """Without an in-plane Burgers component S and S* are the identity"""
    u = np.random.default_rng(0).normal(size=(len(screw_config), 1))
    assert np.array_equal(slip_maps(u, pred).values, u)
    assert np.array_equal(slip_maps(u, pred, adjoint=True).values, u)


def test_elastic_strain_is_small_away_from_core(pred, screw_config):
    """S0 removes the jump, so the strain decays away from the core on both sides of the cut"""
    strain = elastic_strain(screw_config, pred, 2.0)
    dist = np.linalg.norm(screw_config.sites - pred.core_point, axis=1)
    far = dist >= 4.0
    assert np.max(np.abs(strain.values[far])) < 0.25


def test_raw_differences_jump_across_cut(pred, screw_config):
    """Plain differences of u0 see the full Burgers jump across the cut"""
    strain = elastic_strain(screw_config, pred, 1.0)
    u0 = predictor_displacement(screw_config, pred).values
    far = np.flatnonzero(strain.slip_region)
    raw = stencil_differences(u0, far, strain.neighbors[far])[..., 0]
    assert np.max(np.abs(raw)) > 0.5 * pred.burgers_b3
    assert np.max(np.abs(strain.values[far])) < 0.5 * pred.burgers_b3


def test_elastic_strain_needs_perfect_lattice(pred):
    config = build_reference(LatticeSpec(site_dimension=3), 6.0, 'vacancy', 1.0)
    with pytest.raises(InvalidGeometryError):
        elastic_strain(config, pred, 2.0)


def test_strain_decay_rate(pred):
    """max_rho |e_rho(l)| / |rho| decays like |l|^-1"""
    radii, ratio = strain_decay_profile(pred, radius=12.0)
    slope = fit_slope(radii, ratio)[0]
    assert slope == pytest.approx(-1.0, abs=0.15)


def test_predictor_residual_decay(pred):
    """The predictor residual decays like |l|^-2"""
    shells, maxima = predictor_residual_profile(pred, default_params(), radius=10.0)
    assert fit_slope(shells, maxima)[0] <= -1.8


def test_slip_invariance(pred):
    """Site potentials of raw and slip-corrected arguments agree"""
    assert slip_invariance_error(pred, default_params(), np.random.default_rng(1), radius=6.0) <= 1e-8


def test_unified_arguments_cases(pred, screw_config):
    """Case P is Du; case D adds e; missing strain and unknown case raise"""
    strain = elastic_strain(screw_config, pred, 1.5)
    sites = screw_config.ids_within(3.0)
    u = np.random.default_rng(2).normal(scale=0.01, size=(len(screw_config), 1))
    du = stencil_differences(u, sites, strain.neighbors[sites])
    assert np.array_equal(unified_arguments(sites, u, strain.neighbors[sites], 'P'), du)
    assert np.allclose(unified_arguments(sites, u, strain.neighbors[sites], 'D', strain),
                       strain.at(sites) + du)
    with pytest.raises(MissingPredictorError):
        unified_arguments(sites, u, strain.neighbors[sites], 'D')
    with pytest.raises(InvalidParameterError):
        unified_arguments(sites, u, strain.neighbors[sites], 'X', strain)


def test_strain_csv(tmp_path, pred, screw_config):
    strain = elastic_strain(screw_config, pred, 1.0)
    path = strain.to_csv(tmp_path / "strain.csv", screw_config)
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['site', 'x', 'y', 'rho_x', 'rho_y', 'e', 'in_slip_region']
    assert len(rows) == 1 + len(screw_config) * len(strain.offsets)
