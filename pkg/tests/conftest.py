"""
Shared fixtures: a small divacancy geometry and a perfect one, with hybrid
models built once per session. Coefficient caching is off so tests never
touch the working directory.
"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from tbqmmm.core.coefficient_cache import CoefficientCache
from tbqmmm.coupling import HybridModel
from tbqmmm.lattice import LatticeSpec, build_reference, decompose
from tbqmmm.tb_core import default_params

R_QM, R_MM, R_BUF = 3.5, 6.0, 1.5
DOMAIN_RADIUS = R_MM + 2.0 * R_BUF + 2.5


@pytest.fixture(scope="session")
def tb_params():
    return default_params()


@pytest.fixture(scope="session")
def no_cache():
    return CoefficientCache(enabled=False)


@pytest.fixture(scope="session")
def divacancy_geometry():
    config = build_reference(LatticeSpec(), DOMAIN_RADIUS, 'divacancy', 1.0)
    return config, decompose(config, R_QM, R_MM, R_BUF)


@pytest.fixture(scope="session")
def perfect_geometry():
    config = build_reference(LatticeSpec(), DOMAIN_RADIUS, 'none', 0.0)
    return config, decompose(config, R_QM, R_MM, R_BUF)


@pytest.fixture(scope="session")
def divacancy_model(divacancy_geometry, tb_params, no_cache):
    """Energy-mixing model carrying both Taylor models"""
    config, decomposition = divacancy_geometry
    return HybridModel.build(config, decomposition, tb_params, scheme='energy', include_both=True, cache=no_cache)


@pytest.fixture(scope="session")
def perfect_model(perfect_geometry, tb_params, no_cache):
    config, decomposition = perfect_geometry
    return HybridModel.build(config, decomposition, tb_params, scheme='energy', include_both=True, cache=no_cache)
