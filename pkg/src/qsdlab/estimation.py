"""Estimators for conditional laws and their long-time limit.

Two estimators, one target.  The Fleming-Viot system keeps N particles alive
by teleporting every killed particle onto a uniformly chosen survivor; its
empirical measure tracks the law of the process conditioned on survival, and
its kill flux estimates the absorption rate.  The conditioned ensemble
propagates a population of independent killed paths and renormalizes by the
survivors; because survival decays exponentially, the population is
periodically resampled back to full size (sequential splitting), which keeps
the estimator usable at horizons where direct conditioning would retain no
paths.  Setting ``resample_interval=None`` recovers plain conditioning.
"""

from dataclasses import dataclass
import json
from typing import Callable, Optional, Sequence

import numpy as np

from .domains import DomainSpec
from .errors import GridError, MassExtinctionError, NoSurvivorsError, SimulationError
from .models import PDMPModel, SDEModel
from .rng import RngPolicy
from .simulate import PdmpBatch, SdeBatch, make_batch, _resolve_initial

__all__ = [
    "Histogram",
    "ParticleEnsemble",
    "FlemingViotResult",
    "ConditionedEnsembleResult",
    "RateFit",
    "tv_distance",
    "fleming_viot_run",
    "conditioned_ensemble",
    "convergence_rate_fit",
    "uniform_sampler",
    "delta_sampler",
    "pdmp_uniform_sampler",
    "pdmp_delta_sampler",
    "write_histogram_csv",
]

DEFAULT_BINS = 64


@dataclass(frozen=True)
class Histogram:
    """Normalized mass on a fixed bin grid.

    ``edges`` holds one edge array per axis; two-mode data carries a leading
    mode axis in ``mass`` and its labels in ``support_labels``.
    """

    edges: tuple
    mass: np.ndarray
    support_labels: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(np.asarray(e, dtype=float) for e in self.edges))
        m = np.asarray(self.mass, dtype=float)
        if m.min() < 0:
            raise GridError("histogram mass must be nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise GridError(f"histogram mass sums to {m.sum()!r}, expected 1")
        object.__setattr__(self, "mass", m)

    def same_grid(self, other: "Histogram") -> bool:
        if len(self.edges) != len(other.edges) or self.mass.shape != other.mass.shape:
            return False
        if self.support_labels != other.support_labels:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))

    def marginal(self, axis: int) -> "Histogram":
        """1D marginal over one spatial axis (modes, if any, are summed out)."""
        m = self.mass
        if self.support_labels is not None:
            m = m.sum(axis=0)
        keep = axis
        other = tuple(i for i in range(m.ndim) if i != keep)
        return Histogram(edges=(self.edges[axis],), mass=m.sum(axis=other))

    @staticmethod
    def from_points(points: np.ndarray, edges) -> "Histogram":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        edges = tuple(np.asarray(e, dtype=float) for e in edges)
        mass, _ = np.histogramdd(points, bins=edges)
        total = mass.sum()
        if total == 0:
            raise GridError("no points fell inside the histogram grid")
        return Histogram(edges=edges, mass=mass / total)

    @staticmethod
    def from_modes(
        x: np.ndarray, mode: np.ndarray, edges, n_modes: int = 2, weights: Optional[np.ndarray] = None
    ) -> "Histogram":
        edges = np.asarray(edges, dtype=float)
        mass = np.stack(
            [
                np.histogram(
                    x[mode == i],
                    bins=edges,
                    weights=None if weights is None else weights[mode == i],
                )[0].astype(float)
                for i in range(n_modes)
            ]
        )
        total = mass.sum()
        if total == 0:
            raise GridError("no points fell inside the histogram grid")
        return Histogram(edges=(edges,), mass=mass / total, support_labels=tuple(range(n_modes)))

    @staticmethod
    def from_weighted_points(points: np.ndarray, weights: np.ndarray, edges) -> "Histogram":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        edges = tuple(np.asarray(e, dtype=float) for e in edges)
        mass, _ = np.histogramdd(points, bins=edges, weights=np.asarray(weights, dtype=float))
        total = mass.sum()
        if total == 0:
            raise GridError("no mass fell inside the histogram grid")
        return Histogram(edges=edges, mass=mass / total)


def tv_distance(a: Histogram, b: Histogram) -> float:
    """Total variation distance ``0.5 * sum |a - b|`` on a shared grid."""
    if not a.same_grid(b):
        raise GridError("histograms live on different bin grids")
    return float(0.5 * np.abs(a.mass - b.mass).sum())


@dataclass(frozen=True)
class ParticleEnsemble:
    """Snapshot of an interacting or conditioned particle population."""

    positions: np.ndarray  # (N, d) for SDE; (N,) positions for two-mode models
    time: float
    kill_count: int
    kill_times: np.ndarray
    modes: Optional[np.ndarray] = None

    @property
    def n_particles(self) -> int:
        return len(self.positions)

    def to_histogram(self, bins: int = DEFAULT_BINS, domain: Optional[DomainSpec] = None) -> Histogram:
        if self.modes is not None:
            edges = np.linspace(0.0, 1.0, bins + 1)
            return Histogram.from_modes(self.positions, self.modes, edges)
        lo, hi = domain.bounding_box
        edges = tuple(np.linspace(lo[j], hi[j], bins + 1) for j in range(domain.dim))
        return Histogram.from_points(self.positions, edges)


@dataclass(frozen=True)
class FlemingViotResult:
    ensembles: tuple
    rate_estimate: float
    kill_times: np.ndarray
    n_particles: int
    horizon: float
    rate_window: tuple


def _fv_rate(kill_times: np.ndarray, n_particles: int, horizon: float) -> tuple:
    # first half is burn-in: convergence to the quasi-stationary regime is
    # exponential from any start, so the tail dominates
    t0 = horizon / 2.0
    kills = int((kill_times > t0).sum())
    rate = kills / (n_particles * (horizon - t0))
    return rate, (t0, horizon)


def fleming_viot_run(
    model,
    domain: Optional[DomainSpec],
    rho0,
    n_particles: int,
    dt: float,
    horizon: float,
    rng: RngPolicy,
    n_records: int = 9,
) -> FlemingViotResult:
    """Evolve the N-particle Fleming-Viot system and estimate the rate.

    SDE models step on the Euler grid with kills resolved per step (donors
    drawn uniformly among the step's survivors, killed indices processed in
    particle order).  The two-mode model runs event-driven: kills happen one
    at a time at exact boundary hits.  The rate estimate is the kill flux per
    particle averaged over the second half of the run.
    """
    if n_particles < 2:
        raise SimulationError("Fleming-Viot needs at least 2 particles")
    x0, mode0 = _resolve_initial(model, domain, rho0, n_particles, rng)
    record_times = np.linspace(0.0, horizon, n_records)
    if isinstance(model, PDMPModel):
        return _fleming_viot_pdmp(model, x0, mode0, horizon, rng, record_times)
    return _fleming_viot_sde(model, domain, x0, dt, horizon, rng, record_times)


def _fleming_viot_sde(model, domain, x0, dt, horizon, rng, record_times):
    batch = SdeBatch(model, domain, x0, dt, rng, label="fv")
    n = batch.n
    kill_times = []
    ensembles = []
    rec = iter(sorted(record_times))
    next_rec = next(rec, None)
    n_steps = int(round(horizon / dt))
    for k in range(n_steps + 1):
        t = k * dt
        while next_rec is not None and t >= next_rec - 1e-12:
            ensembles.append(
                ParticleEnsemble(
                    positions=batch.x.copy(),
                    time=float(next_rec),
                    kill_count=len(kill_times),
                    kill_times=np.array(kill_times),
                )
            )
            next_rec = next(rec, None)
        if k == n_steps:
            break
        killed = batch.step()
        if killed.size:
            if killed.size == n:
                raise MassExtinctionError(
                    "all particles killed in one step; increase N or decrease dt"
                )
            survivors = np.flatnonzero(batch.alive)
            donors = rng.integers("fv_donor", k, 0, survivors.size, killed.size)
            batch.x[killed] = batch.x[survivors[donors]]
            batch.alive[killed] = True
            batch.exit_time[killed] = np.inf
            kill_times.extend([batch.t] * killed.size)
    kill_times = np.array(kill_times)
    rate, window = _fv_rate(kill_times, n, horizon)
    return FlemingViotResult(tuple(ensembles), float(rate), kill_times, n, horizon, window)


def _fleming_viot_pdmp(model, x0, mode0, horizon, rng, record_times):
    import heapq

    lam = model.switch_rate
    gen = rng.serial("fv_events")
    n = len(x0)
    x = np.asarray(x0, dtype=float).copy()
    v = model.velocity(np.asarray(mode0, dtype=int)).astype(float)
    t_last = np.zeros(n)
    version = np.zeros(n, dtype=np.int64)
    heap = []

    def wall_time(i):
        return t_last[i] + (x[i] if v[i] < 0 else 1.0 - x[i])

    def push_events(i):
        t_sw = t_last[i] + gen.exponential(1.0 / lam)
        heapq.heappush(heap, (t_sw, int(version[i]), i, "switch"))
        heapq.heappush(heap, (wall_time(i), int(version[i]), i, "wall"))

    for i in range(n):
        push_events(i)

    kill_times = []
    ensembles = []
    rec = list(sorted(record_times))
    rec_i = 0

    def snapshot(t):
        pos = x + v * (t - t_last)
        modes = ((v + 1) // 2).astype(int)
        ensembles.append(
            ParticleEnsemble(
                positions=pos.copy(),
                time=float(t),
                kill_count=len(kill_times),
                kill_times=np.array(kill_times),
                modes=modes,
            )
        )

    while heap:
        t_ev, ver, i, kind = heap[0]
        while rec_i < len(rec) and rec[rec_i] <= min(t_ev, horizon):
            snapshot(rec[rec_i])
            rec_i += 1
        if t_ev > horizon:
            break
        heapq.heappop(heap)
        if ver != version[i]:
            continue  # stale event
        x[i] = min(max(x[i] + v[i] * (t_ev - t_last[i]), 0.0), 1.0)
        t_last[i] = t_ev
        version[i] += 1
        if kind == "switch":
            v[i] = -v[i]
            push_events(i)
        else:  # boundary hit: teleport onto a surviving particle
            kill_times.append(t_ev)
            j = int(gen.integers(0, n - 1))
            if j >= i:
                j += 1
            x[i] = x[j] + v[j] * (t_ev - t_last[j])
            v[i] = v[j]
            push_events(i)
    while rec_i < len(rec):
        snapshot(rec[rec_i])
        rec_i += 1
    kill_times = np.array(kill_times)
    rate, window = _fv_rate(kill_times, n, horizon)
    return FlemingViotResult(tuple(ensembles), float(rate), kill_times, n, horizon, window)


@dataclass(frozen=True)
class ConditionedEnsembleResult:
    histogram: Histogram
    survivors_at_obs: int
    n_paths: int
    log_survival: float
    n_resamples: int
    snapshots: tuple  # (time, Histogram) pairs at requested record times


def conditioned_ensemble(
    model,
    domain: Optional[DomainSpec],
    rho0,
    n_paths: int,
    dt: float,
    t_obs: float,
    rng: RngPolicy,
    bins: int = DEFAULT_BINS,
    resample_interval: Optional[float] = None,
    record_times: Sequence[float] = (),
) -> ConditionedEnsembleResult:
    """Histogram of the conditional law at ``t_obs`` from independent paths.

    Without ``resample_interval`` this is plain Monte Carlo over the paths
    still alive at ``t_obs``.  With it, the surviving population is resampled
    back to ``n_paths`` at every interval boundary (and at every requested
    record time), so the survivor count never collapses; the product of the
    per-window survival fractions estimates total survival.
    """
    if n_paths < 100:
        raise SimulationError("need at least 100 paths")
    if t_obs < 0:
        raise SimulationError("t_obs must be nonnegative")
    x0, mode0 = _resolve_initial(model, domain, rho0, n_paths, rng)
    is_pdmp = isinstance(model, PDMPModel)

    def current_histogram(batch):
        if is_pdmp:
            xs, ms = batch.alive_states()
            if xs.size == 0:
                return None
            return Histogram.from_modes(xs, ms, np.linspace(0.0, 1.0, bins + 1))
        pos = batch.alive_positions()
        if len(pos) == 0:
            return None
        lo, hi = domain.bounding_box
        edges = tuple(np.linspace(lo[j], hi[j], bins + 1) for j in range(domain.dim))
        return Histogram.from_points(pos, edges)

    batch = make_batch(model, domain, x0, mode0, dt, rng, "cond")
    checkpoints = {float(t) for t in record_times if 0.0 < t < t_obs}
    if resample_interval:
        k = 1
        while k * resample_interval < t_obs - 1e-12:
            checkpoints.add(float(k * resample_interval))
            k += 1
    schedule = sorted(checkpoints) + [float(t_obs)]
    record_set = {float(t) for t in record_times}

    log_survival = 0.0
    n_resamples = 0
    snapshots = []
    t_prev = 0.0
    if 0.0 in record_set:
        h0 = current_histogram(batch)
        snapshots.append((0.0, h0))
    for t_next in schedule:
        if t_next > t_prev:
            batch.advance_to(t_next)
        survivors = int(batch.alive.sum())
        if survivors == 0:
            log_survival = -np.inf
            raise NoSurvivorsError(
                f"no survivors at t = {t_next:g}",
                survival_estimate=0.0,
            )
        if t_next in record_set:
            snapshots.append((t_next, current_histogram(batch)))
        if t_next < t_obs:
            # resample the survivors back to full size
            log_survival += np.log(survivors / n_paths)
            idx_alive = np.flatnonzero(batch.alive)
            donors = rng.integers("cond_resample", n_resamples, 0, idx_alive.size, n_paths)
            chosen = idx_alive[donors]
            batch.x = batch.x[chosen].copy()
            if is_pdmp:
                batch.mode = batch.mode[chosen].copy()
                batch.t = np.full(n_paths, t_next)
            batch.alive = np.ones(n_paths, dtype=bool)
            batch.exit_time = np.full(n_paths, np.inf)
            n_resamples += 1
        t_prev = t_next

    survivors = int(batch.alive.sum())
    log_survival += np.log(survivors / n_paths)
    hist = current_histogram(batch)
    return ConditionedEnsembleResult(
        histogram=hist,
        survivors_at_obs=survivors,
        n_paths=n_paths,
        log_survival=float(log_survival),
        n_resamples=n_resamples,
        snapshots=tuple(snapshots),
    )


@dataclass(frozen=True)
class RateFit:
    """Exponential-decay fit of TV(conditional law at t, target)."""

    alpha: Optional[float]
    amplitude: Optional[float]
    r2: Optional[float]
    noise_floor: float
    times: np.ndarray
    tvs: np.ndarray
    n_used: int
    status: str  # "ok" | "converged too fast to fit" | "insufficient points"

    def to_json_dict(self) -> dict:
        return {
            "alpha": None if self.alpha is None else float(self.alpha),
            "C": None if self.amplitude is None else float(self.amplitude),
            "r2": None if self.r2 is None else float(self.r2),
            "noise_floor": float(self.noise_floor),
        }


def convergence_rate_fit(
    ensembles: Sequence[tuple],
    target: Histogram,
    noise_floor: float,
) -> RateFit:
    """Least-squares fit of ``log TV(t)`` against ``t``.

    ``ensembles`` is a time-indexed sequence ``(t, Histogram)``.  Points at
    or below the noise floor are excluded; at least 4 usable points are
    required.  A sequence that starts at the floor is reported as converged
    too fast, not raised.
    """
    times = np.array([t for t, _ in ensembles], dtype=float)
    tvs = np.array([tv_distance(h, target) for _, h in ensembles])
    if times.size and tvs[0] <= noise_floor:
        return RateFit(None, None, None, noise_floor, times, tvs, 0, "converged too fast to fit")
    mask = tvs > noise_floor
    if mask.sum() < 4:
        return RateFit(None, None, None, noise_floor, times, tvs, int(mask.sum()), "insufficient points")
    tt, logtv = times[mask], np.log(tvs[mask])
    A = np.vstack([tt, np.ones(tt.size)]).T
    coef, *_ = np.linalg.lstsq(A, logtv, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((logtv - pred) ** 2))
    ss_tot = float(np.sum((logtv - logtv.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(
        float(-coef[0]), float(np.exp(coef[1])), float(r2), noise_floor, times, tvs,
        int(mask.sum()), "ok",
    )


# -- initial samplers -------------------------------------------------------

def uniform_sampler(domain: DomainSpec) -> Callable:
    """Uniform draw over the domain by rejection from the bounding box."""

    def sample(n, gen):
        lo, hi = domain.bounding_box
        out = np.empty((n, domain.dim))
        filled = 0
        while filled < n:
            cand = lo + gen.random((2 * (n - filled) + 8, domain.dim)) * (hi - lo)
            cand = cand[domain.inside(cand)]
            take = min(len(cand), n - filled)
            out[filled : filled + take] = cand[:take]
            filled += take
        return out

    return sample


def delta_sampler(x0) -> Callable:
    x0 = np.asarray(x0, dtype=float)

    def sample(n, gen):
        return np.tile(x0, (n, 1))

    return sample


def pdmp_uniform_sampler() -> Callable:
    def sample(n, gen):
        x = gen.random(n)
        mode = gen.integers(0, 2, n)
        return x, mode

    return sample


def pdmp_delta_sampler(x0: float, mode0: int) -> Callable:
    def sample(n, gen):
        return np.full(n, float(x0)), np.full(n, int(mode0))

    return sample


def write_histogram_csv(path, hist: Histogram, reference: Optional[Histogram] = None) -> None:
    """Bin centers and masses, with an optional reference column."""
    if reference is not None and not hist.same_grid(reference):
        raise GridError("reference histogram lives on a different grid")
    edges = hist.edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    flat = hist.mass.reshape(-1, len(centers)) if hist.mass.ndim > 1 else hist.mass[None, :]
    ref = None
    if reference is not None:
        ref = (
            reference.mass.reshape(-1, len(centers))
            if reference.mass.ndim > 1
            else reference.mass[None, :]
        )
    with open(path, "w") as fh:
        header = "block,center,mass" + (",reference" if ref is not None else "") + "\n"
        fh.write(header)
        for b in range(flat.shape[0]):
            for i, c in enumerate(centers):
                line = f"{b},{c:.17g},{flat[b, i]:.17g}"
                if ref is not None:
                    line += f",{ref[b, i]:.17g}"
                fh.write(line + "\n")
