"""Shared fixtures: the reference model and its (expensive) oracle laws are
built once per session."""

import math

import pytest

from walkmax import (
    PolyExp,
    PointMass,
    TwoPoint,
    constants,
    discretize,
    finite_horizon,
    lindley_fixed_point,
)

REF_GAMMA = 1.0
REF_BETA = 2.0
REF_SHIFT = math.log(4.0)
ORACLE_TOP = 75.0


@pytest.fixture(scope="session")
def ref_model():
    """Reference model: twisted moment exactly 1/2."""
    return PolyExp(gamma=REF_GAMMA, beta=REF_BETA, shift=REF_SHIFT)


@pytest.fixture(scope="session")
def d0_model():
    """Unshifted variant (positive mean, supercritical twist): only usable
    for distribution-surface checks, so the subcritical guard is off."""
    return PolyExp(gamma=1.0, beta=2.0, shift=0.0, require_subcritical=False)


@pytest.fixture(scope="session")
def ref_pmf(ref_model):
    return discretize(ref_model, 0.01)


@pytest.fixture(scope="session")
def ref_law(ref_pmf):
    return lindley_fixed_point(ref_pmf, top=ORACLE_TOP)


@pytest.fixture(scope="session")
def ref_consts(ref_model, ref_law):
    return constants(ref_model, ref_law)


@pytest.fixture(scope="session")
def ref_pmf_half(ref_model):
    return discretize(ref_model, 0.005)


@pytest.fixture(scope="session")
def ref_law_half(ref_pmf_half):
    return lindley_fixed_point(ref_pmf_half, top=ORACLE_TOP)


@pytest.fixture(scope="session")
def ref_horizon_laws(ref_pmf):
    return finite_horizon(ref_pmf, 100, top=ORACLE_TOP)


@pytest.fixture(scope="session")
def tp_model():
    """Up 1 with probability 1/4, down 1 otherwise: ruin chain with
    P(M >= k) = 3**-k."""
    return TwoPoint(u=1.0, pu=0.25, v=-1.0)


@pytest.fixture(scope="session")
def tp_pmf(tp_model):
    return discretize(tp_model, 1.0)


@pytest.fixture(scope="session")
def tp_law(tp_pmf):
    return lindley_fixed_point(tp_pmf)


@pytest.fixture(scope="session")
def pm_model():
    return PointMass(v=-1.0)
