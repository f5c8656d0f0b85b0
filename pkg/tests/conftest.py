import numpy as np
import pytest

import qsdlab as q


@pytest.fixture(scope="session")
def pdmp_model():
    return q.PDMPModel(switch_rate=2.0)


@pytest.fixture(scope="session")
def pdmp_system(pdmp_model):
    """Benchmark two-mode grid at n=400/mode with Green and transition matrices."""
    sys = q.discretize_pdmp(pdmp_model, 400)
    sys = q.green_matrix(sys)
    sys = q.transition_matrix(sys, 0.01)
    return sys


@pytest.fixture(scope="session")
def pdmp_solution(pdmp_system):
    return q.principal_eigenpair(pdmp_system)


@pytest.fixture(scope="session")
def bm_model():
    # Brownian motion on the line: no drift, one unit noise field
    return q.sde_model(q.constant_field([0.0]), [q.constant_field([1.0])])


@pytest.fixture(scope="session")
def bm_system():
    sys = q.discretize_diffusion_1d(lambda x: 0.0 * x, lambda x: np.ones_like(x), (0.0, 1.0), 400)
    sys = q.green_matrix(sys)
    sys = q.transition_matrix(sys, 0.002)
    return sys


@pytest.fixture(scope="session")
def bm_solution(bm_system):
    return q.principal_eigenpair(bm_system)


@pytest.fixture(scope="session")
def cylinder_model():
    # horizontal unit drift, vertical unit noise, on the periodic strip
    return q.sde_model(q.horizontal_drift([1.0]), [q.constant_field([0.0, 1.0])])


@pytest.fixture(scope="session")
def cylinder_domain():
    return q.cylinder_strip_domain()
