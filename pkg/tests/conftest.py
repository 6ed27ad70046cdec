"""Shared fixtures: preset models and their spectral data / kernels.

Session-scoped where construction is not free, so the suite stays fast.
"""

import pytest

from bgwqsd import build_kernel_exact, power_iterate, spectral_radius
from bgwqsd.presets import (
    classical_two_type_model,
    min_table_model,
    two_child_model,
    wide_family_model,
)


@pytest.fixture(scope="session")
def two_child():
    return two_child_model()


@pytest.fixture(scope="session")
def wide_family():
    return wide_family_model()


@pytest.fixture(scope="session")
def classical():
    return classical_two_type_model()


@pytest.fixture(scope="session")
def table_model():
    return min_table_model(box=8)


@pytest.fixture(scope="session")
def two_child_spectral(two_child):
    return power_iterate(two_child)


@pytest.fixture(scope="session")
def wide_family_spectral(wide_family):
    return power_iterate(wide_family)


@pytest.fixture(scope="session")
def classical_spectral(classical):
    return power_iterate(classical)


@pytest.fixture(scope="session")
def two_child_kernel8(two_child):
    return build_kernel_exact(two_child, 8)


@pytest.fixture(scope="session")
def wide_family_kernel6(wide_family):
    return build_kernel_exact(wide_family, 6)


@pytest.fixture(scope="session")
def wide_family_qsd6(wide_family_kernel6):
    return spectral_radius(wide_family_kernel6)
