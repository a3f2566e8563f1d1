"""Shared fixtures: cheap immutable building blocks used across test modules."""

import numpy as np
import pytest

from coagfrag import (
    build_grid,
    constant_coag,
    constant_frag,
    detailed_balance_frag,
    exponential_reservoir,
)

E_INV = float(np.exp(-1.0))


@pytest.fixture(scope="session")
def exp_reservoir():
    return exponential_reservoir(amplitude=1.0, decay=1.0)


@pytest.fixture(scope="session")
def unit_kernel():
    return constant_coag(1.0)


@pytest.fixture(scope="session")
def unit_frag():
    return constant_frag(1.0)


@pytest.fixture(scope="session")
def balanced_frag(unit_kernel):
    """Split rate in pair balance with the unit merge rate and profile e^{-s}."""
    return detailed_balance_frag(unit_kernel, lambda s: np.exp(-np.asarray(s)))


@pytest.fixture(scope="session")
def lattice_grid_200():
    return build_grid(200, kind="uniform", lattice=True)


@pytest.fixture(scope="session")
def midpoint_grid_200():
    return build_grid(200, kind="uniform")
