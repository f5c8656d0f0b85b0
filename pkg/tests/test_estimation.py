import numpy as np
import pytest

import qsdlab as q
from qsdlab.errors import GridError, MassExtinctionError, NoSurvivorsError
from qsdlab.estimation import Histogram


def _edges():
    return np.linspace(0.0, 1.0, 65)


def _oracle_hist(lam=2.0, bins=64):
    o = q.pdmp_oracle(lam)
    edges = np.linspace(0.0, 1.0, bins + 1)
    return Histogram(edges=(edges,), mass=o.qsd_bin_masses(edges), support_labels=(0, 1))


# -- total variation -----------------------------------------------------------

def test_tv_identical_is_zero():
    h = _oracle_hist()
    assert q.tv_distance(h, h) == 0.0


def test_tv_disjoint_is_one():
    e = np.array([0.0, 0.5, 1.0])
    a = Histogram(edges=(e,), mass=np.array([1.0, 0.0]))
    b = Histogram(edges=(e,), mass=np.array([0.0, 1.0]))
    assert q.tv_distance(a, b) == 1.0


def test_tv_hand_value():
    e = np.array([0.0, 0.5, 1.0])
    a = Histogram(edges=(e,), mass=np.array([0.5, 0.5]))
    b = Histogram(edges=(e,), mass=np.array([1.0, 0.0]))
    assert q.tv_distance(a, b) == 0.5


def test_tv_grid_mismatch():
    a = Histogram(edges=(np.array([0.0, 0.5, 1.0]),), mass=np.array([0.5, 0.5]))
    b = Histogram(edges=(np.array([0.0, 0.4, 1.0]),), mass=np.array([0.5, 0.5]))
    with pytest.raises(GridError):
        q.tv_distance(a, b)


def test_histogram_mass_validation():
    with pytest.raises(GridError):
        Histogram(edges=(np.array([0.0, 1.0]),), mass=np.array([0.5]))


def test_histogram_permutation_invariance():
    rng = np.random.default_rng(0)
    pts = rng.random((500, 1))
    h1 = Histogram.from_points(pts, (_edges(),))
    h2 = Histogram.from_points(pts[::-1], (_edges(),))
    assert q.tv_distance(h1, h2) == 0.0


def test_marginal():
    pts = np.random.default_rng(1).random((2000, 2))
    h = Histogram.from_points(pts, (np.linspace(0, 1, 9), np.linspace(0, 1, 9)))
    m = h.marginal(1)
    assert m.mass.shape == (8,)
    assert m.mass.sum() == pytest.approx(1.0)


# -- Fleming-Viot ----------------------------------------------------------------

def test_fv_pdmp_rate_and_support():
    res = q.fleming_viot_run(
        q.PDMPModel(2.0), None, q.pdmp_uniform_sampler(), 1500, 1e-3, 15.0, q.RngPolicy(42)
    )
    omega = q.pdmp_oracle(2.0).omega
    assert abs(res.rate_estimate - omega) / omega <= 0.05
    for e in res.ensembles:
        assert np.all(q.PDMPModel.in_domain(e.positions, e.modes))


def test_fv_bm_rate():
    bm = q.sde_model(q.constant_field([0.0]), [q.constant_field([1.0])])
    dom = q.interval_domain()
    res = q.fleming_viot_run(bm, dom, q.uniform_sampler(dom), 1200, 2.5e-4, 8.0, q.RngPolicy(42))
    lam = np.pi**2 / 2
    assert abs(res.rate_estimate - lam) / lam <= 0.08
    for e in res.ensembles:
        assert np.all(dom.inside(e.positions))


def test_fv_needs_two_particles():
    with pytest.raises(Exception):
        q.fleming_viot_run(q.PDMPModel(1.0), None, q.pdmp_uniform_sampler(), 1, 1e-3, 1.0, q.RngPolicy(0))


def test_fv_mass_extinction_on_co_located_deterministic_flow():
    # two particles on the same deterministic leftward trajectory exit in the
    # same step: the run must fail loudly, not hang or lie
    ode = q.sde_model(q.constant_field([-1.0]), [])
    dom = q.interval_domain()
    with pytest.raises(MassExtinctionError):
        q.fleming_viot_run(ode, dom, q.delta_sampler([0.5]), 2, 1e-3, 2.0, q.RngPolicy(0))


def test_fv_reproducible():
    def run():
        return q.fleming_viot_run(
            q.PDMPModel(2.0), None, q.pdmp_uniform_sampler(), 300, 1e-3, 5.0, q.RngPolicy(8)
        )

    a, b = run(), run()
    assert a.rate_estimate == b.rate_estimate
    assert np.array_equal(a.kill_times, b.kill_times)
    assert np.array_equal(a.ensembles[-1].positions, b.ensembles[-1].positions)


# -- conditioned ensembles ----------------------------------------------------------

def test_conditioned_t0_returns_initial_law():
    rng = q.RngPolicy(5)
    res = q.conditioned_ensemble(
        q.PDMPModel(2.0), None, q.pdmp_uniform_sampler(), 5000, 1e-3, 0.0, rng
    )
    # conditioning on survival at t=0 is vacuous: the histogram is that of rho0
    gen = q.RngPolicy(5).serial("init")
    x, mode = q.pdmp_uniform_sampler()(5000, gen)
    direct = Histogram.from_modes(x, mode, _edges())
    assert q.tv_distance(res.histogram, direct) == 0.0
    assert res.survivors_at_obs == 5000


def test_conditioned_pdmp_matches_oracle():
    res = q.conditioned_ensemble(
        q.PDMPModel(2.0), None, q.pdmp_uniform_sampler(), 20_000, 1e-3, 4.0, q.RngPolicy(1),
        resample_interval=0.5,
    )
    assert q.tv_distance(res.histogram, _oracle_hist()) <= 0.06
    assert res.n_resamples == 7
    assert res.log_survival < 0


def test_conditioned_no_survivors():
    ode = q.sde_model(q.constant_field([-1.0]), [])
    with pytest.raises(NoSurvivorsError):
        q.conditioned_ensemble(
            ode, q.interval_domain(), q.delta_sampler([0.3]), 200, 1e-3, 0.5, q.RngPolicy(0)
        )


def test_conditioned_and_fv_agree_on_the_pdmp():
    # two estimators, one target: compare at the same late time within twice
    # the combined multinomial noise floor of the two histograms
    t, n_fv, n_ce, bins = 6.0, 6000, 30_000, 64
    fv = q.fleming_viot_run(
        q.PDMPModel(2.0), None, q.pdmp_uniform_sampler(), n_fv, 1e-3, t, q.RngPolicy(12),
        n_records=2,
    )
    fv_hist = fv.ensembles[-1].to_histogram(bins=bins)
    ce = q.conditioned_ensemble(
        q.PDMPModel(2.0), None, q.pdmp_uniform_sampler(), n_ce, 1e-3, t, q.RngPolicy(13),
        resample_interval=0.5, bins=bins,
    )
    cells = 2 * bins
    stat_tol = 0.5 * np.sqrt(2 * cells / (np.pi * n_fv)) + 0.5 * np.sqrt(
        2 * cells / (np.pi * ce.survivors_at_obs)
    )
    assert q.tv_distance(fv_hist, ce.histogram) <= 2 * stat_tol


def test_rate_consistency_between_fv_and_survival_tail():
    model = q.PDMPModel(2.0)
    fv = q.fleming_viot_run(model, None, q.pdmp_uniform_sampler(), 2000, 1e-3, 15.0, q.RngPolicy(3))
    tail = q.survival_tail(model, None, (0.5, 0), dt=1e-3, horizon=8.0, n_paths=20_000, rng=q.RngPolicy(2))
    assert abs(fv.rate_estimate - tail.decay_rate) / tail.decay_rate <= 0.10


# -- convergence rate fit --------------------------------------------------------------

def test_convergence_fit_on_kernel_iteration():
    # exact conditional laws from the discretized kernel, target = spectral qsd
    sys = q.transition_matrix(q.green_matrix(q.discretize_pdmp(q.PDMPModel(2.0), 100)), 0.05)
    sol = q.principal_eigenpair(sys)
    target = q.system_histogram(sys, sol.qsd, bins=64)
    i0 = int(np.argmin(np.abs(sys.grid_points[:100] - 0.9)))
    rho = np.zeros(sys.n_states)
    rho[i0] = 1.0
    series = []
    t = 0.0
    for k in range(40):
        if k > 0:
            rho = rho @ sys.dt_matrix
            t += 0.05
        series.append((t, q.system_histogram(sys, rho / rho.sum(), bins=64)))
    fit = q.convergence_rate_fit(series, target, noise_floor=1e-4)
    assert fit.status == "ok"
    assert fit.alpha > 0
    assert fit.r2 >= 0.9
    evals = np.linalg.eigvals(sys.generator)
    order = np.argsort(-evals.real)
    gap = float(-evals[order[1]].real + evals[order[0]].real)
    assert abs(fit.alpha - gap) / gap <= 0.25


def test_convergence_fit_constant_sequence_reports_floor():
    h = _oracle_hist()
    fit = q.convergence_rate_fit([(0.0, h), (1.0, h), (2.0, h), (3.0, h)], h, noise_floor=0.01)
    assert fit.status == "converged too fast to fit"
    assert fit.alpha is None


def test_convergence_fit_insufficient_points():
    h = _oracle_hist()
    e = h.edges[0]
    tweaked = Histogram(
        edges=(e,),
        mass=(h.mass + 0.3 * np.ones_like(h.mass) / h.mass.size) / 1.3,
        support_labels=h.support_labels,
    )
    fit = q.convergence_rate_fit([(0.0, tweaked), (1.0, h), (2.0, h)], h, noise_floor=0.01)
    assert fit.status == "insufficient points"
    assert fit.to_json_dict()["alpha"] is None


# -- system histogram bridge ------------------------------------------------------------

def test_system_histogram_matches_oracle_binning(pdmp_system, pdmp_solution):
    spectral_hist = q.system_histogram(pdmp_system, pdmp_solution.qsd, bins=64)
    assert q.tv_distance(spectral_hist, _oracle_hist()) <= 0.01


def test_histogram_csv(tmp_path):
    h = _oracle_hist()
    f = tmp_path / "h.csv"
    from qsdlab.estimation import write_histogram_csv

    write_histogram_csv(f, h, reference=h)
    lines = f.read_text().splitlines()
    assert lines[0] == "block,center,mass,reference"
    assert len(lines) == 1 + 2 * 64
