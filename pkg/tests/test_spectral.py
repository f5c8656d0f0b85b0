import math

import numpy as np
import pytest

import qsdlab as q
from qsdlab.errors import GridError


def _power_left(P, tol=1e-13, max_iter=100_000):
    v = np.ones(P.shape[0]) / P.shape[0]
    for _ in range(max_iter):
        w = v @ P
        s = w.sum()
        w = w / s
        if np.max(np.abs(w - v)) <= tol:
            return w, s
        v = w
    raise AssertionError("reference power iteration stalled")


# -- discretization ----------------------------------------------------------

def test_bm_rate_matches_closed_form(bm_system, bm_solution):
    n = 400
    dx = 1.0 / (n + 1)
    closed = (1.0 - math.cos(math.pi * dx)) / dx**2
    assert bm_solution.rate == pytest.approx(closed, rel=1e-9)
    assert abs(bm_solution.rate - np.pi**2 / 2) / (np.pi**2 / 2) <= 0.005


def test_pure_transport_structure():
    sys = q.discretize_diffusion_1d(lambda x: -np.ones_like(x), lambda x: 0.0 * x, (0, 1), 100)
    L = sys.generator
    assert np.allclose(np.triu(L, k=1), 0.0)  # mass flows left only
    rowsum = L.sum(axis=1)
    assert np.allclose(rowsum[1:], 0.0, atol=1e-9)
    assert rowsum[0] == pytest.approx(-1.0 / sys.cell_widths[0])


def test_degenerate_generator_rejected():
    with pytest.raises(GridError):
        q.discretize_diffusion_1d(lambda x: 0.0 * x, lambda x: 0.0 * x, (0, 1), 32)


def test_negative_diffusion_rejected():
    with pytest.raises(GridError):
        q.discretize_diffusion_1d(lambda x: 0.0 * x, lambda x: -np.ones_like(x), (0, 1), 32)


def test_pdmp_row_sums(pdmp_system):
    L = pdmp_system.generator
    n = pdmp_system.n_states // 2
    dx = pdmp_system.cell_widths[0]
    rowsum = L.sum(axis=1)
    interior = np.ones(2 * n, dtype=bool)
    interior[[0, 2 * n - 1]] = False
    assert np.allclose(rowsum[interior], 0.0, atol=1e-9)
    assert rowsum[0] == pytest.approx(-1.0 / dx)
    assert rowsum[2 * n - 1] == pytest.approx(-1.0 / dx)


@pytest.mark.parametrize("lam,n,tol", [(1.0, 400, 0.01), (2.0, 400, 0.01)])
def test_pdmp_rate_against_oracle(lam, n, tol):
    sys = q.green_matrix(q.discretize_pdmp(q.PDMPModel(lam), n))
    sol = q.principal_eigenpair(sys)
    omega = q.pdmp_oracle(lam).omega
    assert abs(sol.rate - omega) / omega <= tol


# -- Green matrix ------------------------------------------------------------

def test_green_mean_exit_pdmp(pdmp_system):
    n = pdmp_system.n_states // 2
    e_tau = pdmp_system.green @ np.ones(2 * n)
    xs = pdmp_system.grid_points[:n]
    exact = q.pdmp_expected_exit(2.0, xs)
    assert np.max(np.abs(e_tau[:n] - exact)) / exact.max() <= 0.01


def test_green_mean_exit_transport():
    sys = q.green_matrix(
        q.discretize_diffusion_1d(lambda x: -np.ones_like(x), lambda x: 0.0 * x, (0, 1), 100)
    )
    e_tau = sys.green @ np.ones(100)
    assert np.max(np.abs(e_tau - sys.grid_points)) <= 2 * sys.cell_widths[0]


def test_green_mean_exit_bm(bm_system):
    e_tau = bm_system.green @ np.ones(400)
    xs = bm_system.grid_points
    exact = xs * (1 - xs)  # solves (1/2) u'' = -1 with zero boundary values
    assert np.max(np.abs(e_tau - exact)) / exact.max() <= 0.01


def test_green_requires_killing():
    # conservative generator (no kill deficit) must be rejected as singular
    L = np.array([[-1.0, 1.0], [1.0, -1.0]])
    sys = q.GridSystem(
        n_states=2,
        generator=L,
        grid_points=np.array([0.25, 0.75]),
        cell_widths=np.array([0.5, 0.5]),
        kill_distance=np.array([0.25, 0.25]),
    )
    with pytest.raises(GridError):
        q.green_matrix(sys)


# -- principal eigenpair -------------------------------------------------------

def test_pdmp_qsd_matches_oracle(pdmp_system, pdmp_solution):
    o = q.pdmp_oracle(2.0)
    n = pdmp_system.n_states // 2
    xs = pdmp_system.grid_points[:n]
    ref = np.concatenate([o.qsd_density(xs, 0), o.qsd_density(xs, 1)])
    ref = ref / ref.sum()
    assert 0.5 * np.abs(pdmp_solution.qsd - ref).sum() <= 0.01


def test_pdmp_eigenfunction_matches_oracle(pdmp_system, pdmp_solution):
    o = q.pdmp_oracle(2.0)
    n = pdmp_system.n_states // 2
    xs = pdmp_system.grid_points[:n]
    ref = np.concatenate([o.h(xs, 0), o.h(xs, 1)])
    h = pdmp_solution.eigenfunction
    scale = float(h @ ref) / float(ref @ ref)
    assert np.max(np.abs(h - scale * ref)) / np.max(scale * ref) <= 0.01


def test_bm_qsd_is_sine(bm_system, bm_solution):
    _, ref = q.interval_diffusion_reference(400)
    assert np.abs(bm_solution.qsd - ref).sum() <= 1e-9
    assert abs(bm_solution.qsd @ bm_solution.eigenfunction - 1.0) <= 1e-10  # mu(h) = 1


def test_spectral_residual_invariants(pdmp_solution, bm_solution):
    for sol in (pdmp_solution, bm_solution):
        assert sol.residuals["left"] <= 1e-8
        assert sol.residuals["right"] <= 1e-8
        assert abs(sol.qsd.sum() - 1.0) <= 1e-12
        assert sol.eigenfunction.min() > 0


def test_eigenpair_requires_green():
    sys = q.discretize_pdmp(q.PDMPModel(2.0), 16)
    with pytest.raises(GridError):
        q.principal_eigenpair(sys)


# -- fixed point sweep --------------------------------------------------------

def test_fixed_point_matches_power_iteration(pdmp_system, pdmp_solution):
    n = pdmp_system.n_states
    psi = np.zeros(n)
    psi[n // 3 : 2 * n // 3] = 1.0
    mu = q.fixed_point_T_iteration(pdmp_system, psi, np.ones(n) / n)
    assert 0.5 * np.abs(mu - pdmp_solution.qsd).sum() <= 1e-6


def test_fixed_point_fixed_at_solution(pdmp_system, pdmp_solution):
    n = pdmp_system.n_states
    mu = q.fixed_point_T_iteration(pdmp_system, np.ones(n), pdmp_solution.qsd, tol=1e-12)
    assert 0.5 * np.abs(mu - pdmp_solution.qsd).sum() <= 1e-11


def test_fixed_point_limit_independent_of_psi(pdmp_system, pdmp_solution):
    n = pdmp_system.n_states
    mu_flat = q.fixed_point_T_iteration(pdmp_system, np.ones(n), np.ones(n) / n)
    assert 0.5 * np.abs(mu_flat - pdmp_solution.qsd).sum() <= 1e-6


# -- transition matrix and both directions of the Green relation ---------------

def test_dt_matrix_substochastic(pdmp_system):
    P = pdmp_system.dt_matrix
    assert P.min() >= 0.0
    assert P.sum(axis=1).max() <= 1.0 + 1e-12


def test_semigroup_eigenrelation_both_directions(pdmp_system, pdmp_solution):
    P, dt = pdmp_system.dt_matrix, pdmp_system.dt
    mu, per = _power_left(P)
    rate_from_p = -np.log(per) / dt
    assert abs(rate_from_p - pdmp_solution.rate) <= 1e-6
    assert 0.5 * np.abs(mu - pdmp_solution.qsd).sum() <= 1e-6
    # the P-eigenvector satisfies the Green relation in turn
    G = pdmp_system.green
    assert np.max(np.abs(mu @ G - mu / pdmp_solution.rate)) <= 1e-6


def test_identity_suite_residuals(pdmp_system, pdmp_solution, bm_system, bm_solution):
    for sys, sol in ((pdmp_system, pdmp_solution), (bm_system, bm_solution)):
        suite = q.green_identity_suite(sys, sol)
        assert suite["mu_green"] <= 1e-8
        assert suite["h_green"] <= 1e-8
        assert suite["h_semigroup"] <= 1e-8
        assert suite["q_row_sums"] <= 1e-10
        assert suite["pi_invariance"] <= 1e-8
        assert suite["t_iteration_tv"] <= 1e-6


def test_grid_refinement_first_order():
    rates = {}
    for n in (200, 400):
        sys = q.green_matrix(q.discretize_pdmp(q.PDMPModel(2.0), n))
        rates[n] = q.principal_eigenpair(sys).rate
    assert abs(rates[200] - rates[400]) <= 5.0 / 200


# -- Q-process -----------------------------------------------------------------

def test_q_kernel_rows_and_invariance(pdmp_system, pdmp_solution):
    kernels = q.q_process_kernel(pdmp_system, pdmp_solution)
    assert kernels.row_sum_error <= 1e-10
    assert kernels.invariance_error <= 1e-8
    pi = kernels.pi
    assert np.max(np.abs(pi @ kernels.q_semigroup - pi)) <= 1e-8


def test_q_kernel_scale_invariance(pdmp_system, pdmp_solution):
    from dataclasses import replace

    kernels = q.q_process_kernel(pdmp_system, pdmp_solution)
    doubled = replace(pdmp_solution, eigenfunction=2.0 * pdmp_solution.eigenfunction)
    kernels2 = q.q_process_kernel(pdmp_system, doubled)
    assert np.max(np.abs(kernels.q_green - kernels2.q_green)) <= 1e-12


# -- certificates ---------------------------------------------------------------

def test_minorization_pdmp_middle_fifth(pdmp_system):
    n = pdmp_system.n_states // 2
    xs = pdmp_system.grid_points[:n]
    U = np.flatnonzero((xs >= 0.4) & (xs <= 0.6))  # middle fifth of mode 0
    cert = q.certify_minorization(pdmp_system, U, T_steps=30)  # T = 0.3
    assert cert.passed
    assert cert.mass > 0
    # certificate really is a lower bound on every row over U
    rows = np.eye(pdmp_system.n_states)[U]
    for _ in range(30):
        rows = rows @ pdmp_system.dt_matrix
    assert np.all(rows >= cert.xi[None, :] - 1e-15)


def test_minorization_zero_steps():
    sys = q.transition_matrix(q.discretize_pdmp(q.PDMPModel(2.0), 16), 0.01)
    single = q.certify_minorization(sys, [5], T_steps=0)
    assert single.passed and single.mass == pytest.approx(1.0)
    double = q.certify_minorization(sys, [5, 6], T_steps=0)
    assert not double.passed and double.mass == 0.0


def test_minorization_deterministic_transport_negative_control():
    sys = q.discretize_diffusion_1d(lambda x: -np.ones_like(x), lambda x: 0.0 * x, (0, 1), 100)
    dx = sys.cell_widths[0]
    sys = q.transition_matrix(sys, 10 * dx, method="euler")  # exact shift propagator
    cert = q.certify_minorization(sys, [60, 70], T_steps=3)
    assert not cert.passed
    assert cert.mass == 0.0


def test_lyapunov_pdmp(pdmp_system, pdmp_solution):
    cert = q.certify_lyapunov(pdmp_system, pdmp_solution, T0_steps=100)  # T0 = 1
    assert cert.passed
    assert cert.rho < 1.0
    assert cert.C >= 0.0
    # drift inequality holds entrywise by construction of (rho, C)
    kernels = q.q_process_kernel(pdmp_system, pdmp_solution)
    w = cert.V.copy()
    for _ in range(100):
        w = kernels.q_semigroup @ w
    assert np.all(w <= cert.rho * cert.V + cert.C + 1e-9)


def test_lyapunov_bm(bm_system, bm_solution):
    cert = q.certify_lyapunov(bm_system, bm_solution, T0_steps=250)  # T0 = 0.5
    assert cert.passed


def test_lyapunov_zero_steps_fails(pdmp_system, pdmp_solution):
    cert = q.certify_lyapunov(pdmp_system, pdmp_solution, T0_steps=0)
    assert not cert.passed
    assert cert.rho >= 1.0
    assert cert.offending_state is not None


# -- export ---------------------------------------------------------------------

def test_write_dense_matrix(tmp_path):
    sys = q.transition_matrix(q.discretize_pdmp(q.PDMPModel(2.0), 8), 0.01)
    path = tmp_path / "gen.txt"
    q.spectral.write_dense_matrix(path, sys, "generator") if hasattr(q, "spectral") else None
    from qsdlab.spectral import write_dense_matrix

    write_dense_matrix(path, sys, "generator")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# n_states=16")
    assert len(lines) == 2 + 16
    loaded = np.array([[float(v) for v in row.split()] for row in lines[2:]])
    assert np.allclose(loaded, sys.generator)
