"""Finite-dimensional sub-Markov surrogates and their spectral certificates.

A :class:`GridSystem` holds a killed generator ``L`` (rows sum to <= 0,
off-diagonals >= 0), the Green matrix ``G = -L^{-1}``, and optionally a
transition matrix ``P = exp(dt L)``.  On such a system every identity of the
continuous theory becomes a finite linear-algebra statement that can be
verified to near machine precision:

* ``mu G = mu / rate`` characterizes the quasi-stationary vector (and is
  equivalent to ``mu P = exp(-rate dt) mu``);
* ``G h = h / rate`` defines the positive right eigenfunction, whence
  ``P h = exp(-rate dt) h``;
* ``Q f = rate * G(f h) / h`` is a Markov kernel with invariant law
  ``pi = mu h / mu(h)`` (the process conditioned to survive forever);
* minorization rows and a Lyapunov drift of ``V = 1/h`` certify the two
  hypotheses behind exponential convergence of conditional laws.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConditioningError, ConvergenceError, GridError
from .models import PDMPModel

__all__ = [
    "GridSystem",
    "SpectralSolution",
    "MinorizationCertificate",
    "LyapunovCertificate",
    "QProcessKernels",
    "discretize_diffusion_1d",
    "discretize_pdmp",
    "transition_matrix",
    "green_matrix",
    "principal_eigenpair",
    "fixed_point_T_iteration",
    "q_process_kernel",
    "certify_minorization",
    "certify_lyapunov",
    "green_identity_suite",
    "write_dense_matrix",
]

_GREEN_RESIDUAL_TOL = 1e-8
_GREEN_NEGATIVE_TOL = -1e-12
_ROWSUM_TOL = 1e-12
_EIG_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class GridSystem:
    """Discrete killed generator with optional transition and Green matrices."""

    n_states: int
    generator: np.ndarray
    grid_points: np.ndarray  # position of each state
    cell_widths: np.ndarray
    kill_distance: np.ndarray  # distance of each state to the killing boundary
    mode: Optional[np.ndarray] = None  # mode index per state (two-mode models)
    dt: Optional[float] = None
    dt_matrix: Optional[np.ndarray] = None
    green: Optional[np.ndarray] = None
    label: str = "grid"

    def __post_init__(self):
        L = np.asarray(self.generator, dtype=float)
        if L.shape != (self.n_states, self.n_states):
            raise GridError("generator shape does not match n_states")
        off = L - np.diag(np.diag(L))
        if off.min() < 0:
            i, j = np.unravel_index(np.argmin(off), off.shape)
            raise GridError(
                f"negative off-diagonal generator entry at ({i},{j}): grid too coarse for this drift"
            )
        rowsum = L.sum(axis=1)
        if rowsum.max() > _ROWSUM_TOL:
            raise GridError(f"generator rows must sum to <= 0 (max {rowsum.max():.3g})")
        if self.dt_matrix is not None:
            p = np.asarray(self.dt_matrix)
            if p.min() < _GREEN_NEGATIVE_TOL:
                raise GridError("transition matrix has negative entries")
            if p.sum(axis=1).max() > 1.0 + _ROWSUM_TOL:
                raise GridError("transition matrix rows exceed 1")
        if self.green is not None:
            g = np.asarray(self.green)
            if g.min() < _GREEN_NEGATIVE_TOL:
                raise GridError("Green matrix has negative entries")
            resid = np.linalg.norm(g @ (-np.asarray(self.generator)) - np.eye(self.n_states), 2)
            if resid > _GREEN_RESIDUAL_TOL:
                raise GridError(f"Green residual {resid:.3g} exceeds {_GREEN_RESIDUAL_TOL}")


def discretize_diffusion_1d(
    ito_drift: Callable,
    diffusion_sq: Callable,
    interval: Sequence[float],
    n: int,
) -> GridSystem:
    """Killed 1D diffusion on the interior vertex grid of an interval.

    Central differences for ``sigma^2/2 d^2``, upwinding for the drift, and
    Dirichlet kill at both ends (boundary-adjacent rows keep their deficit).
    Pure transport (``sigma^2 = 0``) is allowed thanks to the upwind stencil;
    zero drift plus zero diffusion is rejected as degenerate.
    """
    if n < 8:
        raise GridError("need at least 8 grid points")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise GridError("interval must have positive length")
    dx = (b - a) / (n + 1)
    xs = a + dx * np.arange(1, n + 1)
    drift = np.asarray(ito_drift(xs), dtype=float).reshape(n)
    sig2 = np.asarray(diffusion_sq(xs), dtype=float).reshape(n)
    if np.any(sig2 < 0):
        raise GridError("diffusion coefficient must be nonnegative")
    if np.all(sig2 == 0) and np.all(drift == 0):
        raise GridError("zero drift and zero diffusion: degenerate generator")

    diff = sig2 / (2.0 * dx * dx)
    up = np.maximum(drift, 0.0) / dx
    down = np.maximum(-drift, 0.0) / dx
    L = np.zeros((n, n))
    idx = np.arange(n)
    L[idx, idx] = -(2.0 * diff + up + down)
    L[idx[:-1], idx[:-1] + 1] = diff[:-1] + up[:-1]
    L[idx[1:], idx[1:] - 1] = diff[1:] + down[1:]

    kill = np.minimum(xs - a, b - xs)
    return GridSystem(
        n_states=n,
        generator=L,
        grid_points=xs,
        cell_widths=np.full(n, dx),
        kill_distance=kill,
        label=f"diffusion1d(n={n})",
    )


def discretize_pdmp(model: PDMPModel, n: int) -> GridSystem:
    """Upwind discretization of the two-mode transport generator.

    2n states (n per mode) on the shared vertex grid ``x_k = k/(n+1)``.
    Mode 0 transports left at rate ``1/dx`` and is killed past ``x = 0``,
    mode 1 transports right and is killed past ``x = 1``; the modes couple
    at the switch rate.  Interior rows sum to 0, kill-adjacent rows to
    ``-1/dx``.
    """
    if n < 8:
        raise GridError("need at least 8 grid points")
    lam = model.switch_rate
    dx = 1.0 / (n + 1)
    xs = dx * np.arange(1, n + 1)
    m = 2 * n
    L = np.zeros((m, m))
    k = np.arange(n)
    # mode 0 block
    L[k, k] -= 1.0 / dx + lam
    L[k[1:], k[1:] - 1] += 1.0 / dx
    L[k, n + k] += lam
    # mode 1 block
    L[n + k, n + k] -= 1.0 / dx + lam
    L[n + k[:-1], n + k[:-1] + 1] += 1.0 / dx
    L[n + k, k] += lam

    grid = np.concatenate([xs, xs])
    mode = np.concatenate([np.zeros(n, dtype=int), np.ones(n, dtype=int)])
    kill = np.concatenate([xs, 1.0 - xs])
    return GridSystem(
        n_states=m,
        generator=L,
        grid_points=grid,
        cell_widths=np.full(m, dx),
        kill_distance=kill,
        mode=mode,
        label=f"pdmp(lam={lam}, n={n})",
    )


def transition_matrix(sys: GridSystem, dt: float, method: str = "expm") -> GridSystem:
    """Attach the sub-stochastic transition matrix ``P = exp(dt L)``.

    ``method="expm"`` scales the generator until ``||dt L|| <= 0.5``,
    exponentiates, and squares back (keeps sub-stochasticity to roundoff).
    ``method="euler"`` uses repeated explicit Euler steps at the positivity
    limit; for pure transport this reproduces the exact shift propagator with
    no numerical diffusion, which is what deterministic negative controls
    need.
    """
    if dt <= 0:
        raise GridError("dt must be positive")
    L = sys.generator
    if method == "expm":
        norm = np.max(np.sum(np.abs(dt * L), axis=1))
        s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
        P = scipy.linalg.expm(dt * L / 2**s)
        for _ in range(s):
            P = P @ P
    elif method == "euler":
        max_diag = np.max(-np.diag(L))
        if max_diag <= 0:
            raise GridError("generator has no outflow")
        n_sub = max(1, int(np.ceil(dt * max_diag)))
        step = np.eye(sys.n_states) + (dt / n_sub) * L
        if step.min() < -1e-15:
            raise GridError("euler substep lost positivity")
        P = np.linalg.matrix_power(step, n_sub)
    else:
        raise GridError(f"unknown transition method {method!r}")
    P = np.maximum(P, 0.0)  # clip roundoff-level negatives
    return replace(sys, dt=float(dt), dt_matrix=P)


def green_matrix(sys: GridSystem) -> GridSystem:
    """Fill ``green = -L^{-1}`` by dense LU and validate the residual."""
    try:
        G = np.linalg.solve(-sys.generator, np.eye(sys.n_states))
    except np.linalg.LinAlgError as exc:
        raise GridError("singular generator: no killing detected") from exc
    G = np.where(np.abs(G) < 1e-300, 0.0, G)
    if G.min() < _GREEN_NEGATIVE_TOL:
        raise GridError("Green matrix has significant negative entries")
    return replace(sys, green=np.maximum(G, 0.0))


@dataclass(frozen=True)
class SpectralSolution:
    """Principal triple (rate, qsd, eigenfunction) with residuals.

    ``qsd`` is the probability left eigenvector of the Green matrix,
    ``eigenfunction`` the positive right one normalized so qsd(h) = 1, and
    ``rate`` the reciprocal Perron eigenvalue.
    """

    rate: float
    qsd: np.ndarray
    eigenfunction: np.ndarray
    residuals: dict
    iterations: int

    def __post_init__(self):
        mu, h = self.qsd, self.eigenfunction
        if mu.min() < 0 or abs(mu.sum() - 1.0) > 1e-12:
            raise GridError("qsd must be a probability vector")
        if h.min() <= 0:
            raise GridError("eigenfunction must be positive on interior states")
        if max(self.residuals["left"], self.residuals["right"]) > _EIG_RESIDUAL_TOL:
            raise GridError(f"eigen-residuals too large: {self.residuals}")

    def to_json_dict(self) -> dict:
        return {
            "rate": float(self.rate),
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "qsd": [float(v) for v in self.qsd],
            "h": [float(v) for v in self.eigenfunction],
        }


def _power_iteration(matvec, start, tol, max_iter):
    v = start / start.sum()
    value = None
    for it in range(1, max_iter + 1):
        w = matvec(v)
        s = w.sum()
        if s <= 0:
            raise ConvergenceError("power iteration lost positivity", iterations=it)
        w = w / s
        delta = np.max(np.abs(w - v))
        v, value = w, s
        if delta <= tol:
            return v, value, it
    raise ConvergenceError(
        "power iteration did not converge (near-degenerate second eigenvalue?)",
        residual=delta,
        iterations=max_iter,
    )


def principal_eigenpair(
    sys: GridSystem, tol: float = 1e-13, max_iter: int = 100_000
) -> SpectralSolution:
    """Perron pair of the Green matrix by two-sided power iteration.

    Positivity is preserved exactly (no general eigensolver); iteration stops
    when successive normalized iterates agree to ``tol`` in max norm.
    """
    if sys.green is None:
        raise GridError("green matrix not computed; call green_matrix first")
    G = sys.green
    n = sys.n_states
    start = np.ones(n)
    mu, val_l, it_l = _power_iteration(lambda v: v @ G, start, tol, max_iter)
    h, val_r, it_r = _power_iteration(lambda v: G @ v, start, tol, max_iter)
    perron = 0.5 * (val_l + val_r)
    rate = 1.0 / perron
    mu = mu / mu.sum()
    h = h / (mu @ h)  # normalization mu(h) = 1
    residuals = {
        "left": float(np.max(np.abs(mu @ G - mu / rate))),
        "right": float(np.max(np.abs(G @ h - h / rate))),
    }
    return SpectralSolution(
        rate=float(rate), qsd=mu, eigenfunction=h, residuals=residuals, iterations=it_l + it_r
    )


def fixed_point_T_iteration(
    sys: GridSystem,
    psi: np.ndarray,
    mu0: np.ndarray,
    tol: float = 1e-14,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Iterate the normalized sweep ``mu -> mu G / (mu G phi)`` with ``phi = G psi``.

    The iteration runs in the ``mu(phi) = 1`` normalization and returns the
    fixed point as a probability vector.  The underflow guard can only fire
    if ``phi`` fails to dominate from below, which the positivity of the
    Green matrix on irreducible systems excludes.
    """
    if sys.green is None:
        raise GridError("green matrix not computed; call green_matrix first")
    G = sys.green
    psi = np.asarray(psi, dtype=float)
    if psi.min() < 0 or psi.max() == 0:
        raise GridError("psi must be nonnegative and nontrivial")
    phi = G @ psi
    if phi.min() <= 0:
        raise GridError("G psi must be positive on interior states")
    mu = np.asarray(mu0, dtype=float)
    if mu.min() < 0 or mu @ phi <= 0:
        raise GridError("mu0 must be nonnegative with mu0(phi) > 0")
    mu = mu / (mu @ phi)
    for it in range(1, max_iter + 1):
        nu = mu @ G
        denom = nu @ phi
        if denom < 1e-300:
            raise ConditioningError("mu G phi underflow in the fixed-point sweep")
        nu = nu / denom
        prob_delta = 0.5 * np.abs(nu / nu.sum() - mu / mu.sum()).sum()
        mu = nu
        if prob_delta <= tol:
            return mu / mu.sum()
    raise ConvergenceError("fixed-point sweep did not converge", iterations=max_iter)


@dataclass(frozen=True)
class QProcessKernels:
    """Survival-conditioned kernels: Green form, semigroup form, invariant law."""

    q_green: np.ndarray
    pi: np.ndarray
    q_semigroup: Optional[np.ndarray]
    row_sum_error: float
    invariance_error: float


def q_process_kernel(sys: GridSystem, sol: SpectralSolution) -> QProcessKernels:
    """Conjugate the killed kernels by the eigenfunction.

    Green form ``Q_ij = rate * G_ij h_j / h_i`` (a Markov matrix), semigroup
    form ``exp(rate dt) P_ij h_j / h_i`` when a transition matrix is
    attached, and invariant law ``pi_i = mu_i h_i / mu(h)``.  Both kernels
    are invariant under rescaling of ``h``.
    """
    if sys.green is None:
        raise GridError("green matrix not computed")
    h = sol.eigenfunction
    if h.min() < 1e-14:
        raise ConditioningError(f"eigenfunction entry {h.min():.3g} too small to divide by")
    ratio = h[None, :] / h[:, None]
    Q = sol.rate * sys.green * ratio
    pi = sol.qsd * h
    pi = pi / pi.sum()
    row_err = float(np.max(np.abs(Q.sum(axis=1) - 1.0)))
    inv_err = float(np.max(np.abs(pi @ Q - pi)))
    if row_err > 1e-10:
        raise GridError(f"Q rows deviate from 1 by {row_err:.3g}")
    if inv_err > 1e-8:
        raise GridError(f"pi Q = pi violated by {inv_err:.3g}")
    q_semi = None
    if sys.dt_matrix is not None:
        q_semi = np.exp(sol.rate * sys.dt) * sys.dt_matrix * ratio
    return QProcessKernels(
        q_green=Q, pi=pi, q_semigroup=q_semi, row_sum_error=row_err, invariance_error=inv_err
    )


@dataclass(frozen=True)
class MinorizationCertificate:
    """Uniform lower bound ``P^T(x, .) >= xi`` over a set of states."""

    set_U: np.ndarray
    horizon_steps: int
    xi: np.ndarray
    mass: float
    passed: bool
    message: str


def certify_minorization(sys: GridSystem, U, T_steps: int) -> MinorizationCertificate:
    """Entrywise minimum of the T-step rows over U.

    ``xi_j = min_{x in U} (P^T)_{x j}``; the certificate passes when the
    retained mass is positive.  Only the |U| rows are propagated.
    """
    if sys.dt_matrix is None:
        raise GridError("transition matrix not computed; call transition_matrix first")
    U = np.asarray(U, dtype=int)
    if U.size == 0:
        raise GridError("U must be nonempty")
    if T_steps < 0:
        raise GridError("T_steps must be nonnegative")
    rows = np.eye(sys.n_states)[U]
    for _ in range(T_steps):
        rows = rows @ sys.dt_matrix
    xi = np.maximum(rows.min(axis=0), 0.0)
    mass = float(xi.sum())
    passed = mass > 0.0
    horizon = T_steps * (sys.dt or 0.0)
    message = (
        f"uniform minorization on |U|={U.size} with mass {mass:.3g} at horizon {horizon:g}"
        if passed
        else f"no uniform minorization on U at horizon {horizon:g}"
    )
    return MinorizationCertificate(U, int(T_steps), xi, mass, passed, message)


@dataclass(frozen=True)
class LyapunovCertificate:
    """Drift certificate ``Q^T0 V <= rho V + C`` for ``V = 1/h``."""

    V: np.ndarray
    rho: float
    C: float
    T0_steps: int
    passed: bool
    boundary_band: np.ndarray
    offending_state: Optional[int]


def certify_lyapunov(
    sys: GridSystem,
    sol: SpectralSolution,
    T0_steps: int,
    band_frac: float = 0.1,
) -> LyapunovCertificate:
    """Split the drift bound along a boundary band.

    ``rho`` is the worst ratio ``(Q^T0 V)/V`` over the states closest to the
    killing boundary (outer ``band_frac`` by kill distance, the discrete
    analogue of the d(x, boundary) < eta split); ``C`` absorbs the remaining
    states.  Fails with the offending state when ``rho >= 1``.
    """
    q = q_process_kernel(sys, sol)
    if q.q_semigroup is None:
        raise GridError("semigroup form unavailable: attach a transition matrix first")
    V = 1.0 / sol.eigenfunction
    w = V.copy()
    for _ in range(T0_steps):
        w = q.q_semigroup @ w
    threshold = np.quantile(sys.kill_distance, band_frac)
    band = sys.kill_distance <= threshold
    if not band.any():
        band = sys.kill_distance <= sys.kill_distance.min()
    rho = float(np.max(w[band] / V[band]))
    interior = ~band
    C = float(np.max(w[interior] - rho * V[interior], initial=0.0)) if interior.any() else 0.0
    C = max(C, 0.0)
    passed = rho < 1.0
    offender = None
    if not passed:
        band_idx = np.flatnonzero(band)
        offender = int(band_idx[np.argmax(w[band] / V[band])])
    return LyapunovCertificate(
        V=V,
        rho=rho,
        C=C,
        T0_steps=int(T0_steps),
        passed=passed,
        boundary_band=band,
        offending_state=offender,
    )


def green_identity_suite(sys: GridSystem, sol: SpectralSolution) -> dict:
    """Residuals of the discrete identity suite on one system.

    Returns max-norm residuals for the left/right Green relations, the
    semigroup eigen-relations, the Q-kernel row sums and invariance, and the
    total-variation gap between the fixed-point sweep and power iteration.
    """
    if sys.green is None or sys.dt_matrix is None:
        raise GridError("need both green and dt_matrix for the identity suite")
    G, P, dt = sys.green, sys.dt_matrix, sys.dt
    mu, h, rate = sol.qsd, sol.eigenfunction, sol.rate
    decay = np.exp(-rate * dt)
    q = q_process_kernel(sys, sol)
    psi = np.zeros(sys.n_states)
    third = slice(sys.n_states // 3, 2 * sys.n_states // 3)
    psi[third] = 1.0
    mu_fp = fixed_point_T_iteration(sys, psi, np.ones(sys.n_states) / sys.n_states)
    return {
        "mu_green": float(np.max(np.abs(mu @ G - mu / rate))),
        "h_green": float(np.max(np.abs(G @ h - h / rate))),
        "h_semigroup": float(np.max(np.abs(P @ h - decay * h))),
        "mu_semigroup": float(np.max(np.abs(mu @ P - decay * mu))),
        "q_row_sums": q.row_sum_error,
        "pi_invariance": q.invariance_error,
        "t_iteration_tv": float(0.5 * np.abs(mu_fp - mu).sum()),
    }


def _overlap_deposit(points, widths, weights, edges):
    # spread each cell's mass over the bins it overlaps (
    # avoids count aliasing when cells and bins are incommensurate)
    a = points - widths / 2.0
    b = points + widths / 2.0
    lo = np.maximum(a[:, None], edges[None, :-1])
    hi = np.minimum(b[:, None], edges[None, 1:])
    frac = np.clip(hi - lo, 0.0, None) / widths[:, None]
    return weights @ frac


def system_histogram(sys: GridSystem, weights: np.ndarray, bins: int = 64):
    """Aggregate a state-weight vector onto a uniform bin grid.

    Mass-preserving: each grid state spreads its weight over the bins its
    cell overlaps (per mode for two-mode systems), which makes spectral
    vectors directly comparable with Monte Carlo histograms.
    """
    from .estimation import Histogram

    w = np.asarray(weights, dtype=float)
    if sys.mode is not None:
        edges = np.linspace(0.0, 1.0, bins + 1)
        rows = []
        for m in range(int(sys.mode.max()) + 1):
            sel = sys.mode == m
            rows.append(
                _overlap_deposit(sys.grid_points[sel], sys.cell_widths[sel], w[sel], edges)
            )
        mass = np.stack(rows)
        mass = mass / mass.sum()
        return Histogram(edges=(edges,), mass=mass, support_labels=tuple(range(len(rows))))
    lo = float(sys.grid_points.min() - sys.cell_widths[0] / 2)
    hi = float(sys.grid_points.max() + sys.cell_widths[-1] / 2)
    edges = np.linspace(lo, hi, bins + 1)
    mass = _overlap_deposit(sys.grid_points, sys.cell_widths, w, edges)
    return Histogram(edges=(edges,), mass=mass / mass.sum())


def write_dense_matrix(path, sys: GridSystem, which: str = "generator") -> None:
    """Dump a system matrix in the plain text exchange format.

    Header line: ``n_states dt label``; then one row per line.
    """
    mat = {"generator": sys.generator, "green": sys.green, "dt_matrix": sys.dt_matrix}[which]
    if mat is None:
        raise GridError(f"{which} not computed")
    with open(path, "w") as fh:
        fh.write(f"# n_states={sys.n_states} dt={sys.dt} which={which} label={sys.label}\n")
        fh.write("# grid_points: " + " ".join(f"{x:.17g}" for x in sys.grid_points) + "\n")
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
