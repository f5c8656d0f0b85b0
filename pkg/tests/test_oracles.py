import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

import qsdlab as q
from qsdlab.errors import ModelError


@pytest.mark.parametrize("lam,regime", [(0.5, "sub"), (1.0, "critical"), (2.0, "super")])
def test_regime_dispatch(lam, regime):
    o = q.pdmp_oracle(lam)
    assert o.regime == regime


def test_critical_values():
    o = q.pdmp_oracle(1.0)
    assert o.omega == 2.0
    assert o.H(0.5) == 0.5
    assert q.pdmp_h(o, 0.5, 0) == 0.5


def test_root_residuals():
    o2 = q.pdmp_oracle(2.0)
    assert 0 < o2.theta < math.pi
    assert abs(2.0 * math.sin(o2.theta) - o2.theta) <= 1e-12
    assert abs(o2.omega - 2.0 * (1.0 + math.cos(o2.theta))) <= 1e-12
    # the implementer's root finder confirms the sketched value
    assert o2.theta == pytest.approx(1.8954942670339809, abs=1e-9)

    o5 = q.pdmp_oracle(0.5)
    assert o5.theta > 0
    assert abs(0.5 * math.sinh(o5.theta) - o5.theta) <= 1e-12
    assert abs(o5.omega - 0.5 * (1.0 + math.cosh(o5.theta))) <= 1e-12


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_profile_identity(lam):
    # -H'(x) + lam (H(1-x) - H(x)) = -omega H(x), H' by central differences
    o = q.pdmp_oracle(lam)
    xs = np.linspace(1e-3, 1 - 1e-3, 1000)
    h = 1e-6
    Hp = (o.H(xs + h) - o.H(xs - h)) / (2 * h)
    resid = -Hp + lam * (o.H(1 - xs) - o.H(xs)) + o.omega * o.H(xs)
    assert np.max(np.abs(resid)) <= 1e-9


def test_rate_continuity_at_critical_switching():
    assert abs(q.pdmp_oracle(1 + 1e-4).omega - 2.0) <= 1e-3
    assert abs(q.pdmp_oracle(1 - 1e-4).omega - 2.0) <= 1e-3


def test_eigenfunction_vanishes_at_kill_points():
    for lam in (0.5, 1.0, 2.0):
        o = q.pdmp_oracle(lam)
        assert q.pdmp_h(o, 0.0, 0) == 0.0
        assert q.pdmp_h(o, 1.0, 1) == 0.0


def test_h_domain_error():
    o = q.pdmp_oracle(2.0)
    with pytest.raises(ModelError):
        q.pdmp_h(o, 1.5, 0)
    with pytest.raises(ModelError):
        q.pdmp_oracle(-1.0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_qsd_total_mass(lam):
    o = q.pdmp_oracle(lam)
    m0, _ = quad(lambda x: q.pdmp_qsd_density(o, x, 0), 0, 1, epsabs=1e-13)
    m1, _ = quad(lambda x: q.pdmp_qsd_density(o, x, 1), 0, 1, epsabs=1e-13)
    assert abs(m0 + m1 - 1.0) <= 1e-10


def test_qsd_mode_swap_symmetry():
    o = q.pdmp_oracle(2.0)
    xs = np.linspace(0, 1, 33)
    assert np.allclose(o.qsd_density(xs, 0), o.qsd_density(1 - xs, 1), atol=1e-14)


def test_qsd_critical_shape():
    o = q.pdmp_oracle(1.0)
    xs = np.linspace(0, 1, 11)
    assert np.allclose(o.qsd_density(xs, 0), 1 - xs)
    assert np.allclose(o.qsd_density(xs, 1), xs)


def test_qsd_bin_masses_match_quadrature():
    o = q.pdmp_oracle(2.0)
    edges = np.linspace(0, 1, 9)
    masses = o.qsd_bin_masses(edges)
    for b in range(8):
        m, _ = quad(lambda x: o.qsd_density(x, 0), edges[b], edges[b + 1], epsabs=1e-13)
        assert masses[0, b] == pytest.approx(m, abs=1e-12)
    assert masses.sum() == pytest.approx(1.0, abs=1e-12)


def test_expected_exit_values():
    assert q.pdmp_expected_exit(0.5, 1.0) == 1.0
    assert q.pdmp_expected_exit(7.0, 1.0) == 1.0
    assert q.pdmp_expected_exit(2.0, 0.0) == 0.0
    assert q.pdmp_expected_exit(2.0, 0.75) == pytest.approx(1.125)
    assert q.pdmp_exit_maximizer(2.0) == pytest.approx(0.75)
    assert q.pdmp_exit_maximizer(0.5) == 1.0


def test_interval_reference():
    rate, dens = q.interval_diffusion_reference(400)
    assert abs(rate - np.pi**2 / 2) / (np.pi**2 / 2) <= 0.005
    assert abs(dens.sum() - 1.0) <= 1e-12
    assert np.max(np.abs(dens - dens[::-1])) <= 1e-12  # symmetric about 1/2


def test_oracle_json_dump():
    o = q.pdmp_oracle(2.0)
    payload = json.loads(o.to_json())
    assert payload["regime"] == "super"
    assert payload["omega"] == pytest.approx(o.omega)
    assert len(payload["samples"]) == 9
