"""Domain geometry as signed-distance oracles.

A domain is described by a membership test, a signed distance (negative
inside), and a normal oracle on the boundary.  Everything the geometric
checks need (exit detection, exterior spheres, inward conditions) reduces to
these queries, so no meshes are involved.  Periodicity is handled by
coordinate wrapping, not by domain duplication.
"""

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import DomainError

__all__ = [
    "DomainSpec",
    "ConsistencyReport",
    "interval_domain",
    "rectangle_domain",
    "disk_domain",
    "cylinder_strip_domain",
    "domain_membership_consistency",
]

_NORMAL_TOL = 1e-12
_MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True)
class DomainSpec:
    """Open domain D with compact closure, queried through oracles.

    ``contains`` and ``signed_distance`` are vectorized over leading axes.
    ``boundary_normal`` maps a boundary point to a list of unit outward
    normals; at nonsmooth points this may be a finite sample of the full
    normal cone (checks quantify over the returned sample only).
    ``periodic_axes`` maps axis index to period; ``reach`` is the exterior
    sphere reach when known analytically (None for generic domains).
    """

    dim: int
    contains: Callable
    signed_distance: Callable
    bounding_box: tuple
    boundary_normal: Optional[Callable] = None
    boundary_sampler: Optional[Callable] = None
    periodic_axes: dict = dc_field(default_factory=dict)
    reach: Optional[float] = None
    label: str = "domain"

    def __post_init__(self):
        lo, hi = (np.asarray(v, dtype=float) for v in self.bounding_box)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise DomainError("bounding_box corners must have shape (dim,)")
        if not np.all(hi > lo):
            raise DomainError("bounding_box must have positive extent")
        object.__setattr__(self, "bounding_box", (lo, hi))
        object.__setattr__(
            self, "periodic_axes", {int(k): float(v) for k, v in dict(self.periodic_axes).items()}
        )

    # -- queries ----------------------------------------------------------
    def inside(self, x) -> np.ndarray:
        return np.asarray(self.contains(self.wrap(np.asarray(x, dtype=float))))

    def distance(self, x) -> np.ndarray:
        return np.asarray(self.signed_distance(self.wrap(np.asarray(x, dtype=float))), dtype=float)

    def wrap(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.periodic_axes:
            return x
        out = x.copy()
        lo, _ = self.bounding_box
        for axis, period in self.periodic_axes.items():
            out[..., axis] = lo[axis] + np.mod(out[..., axis] - lo[axis], period)
        return out

    def normals_at(self, p) -> list:
        if self.boundary_normal is None:
            return []
        normals = [np.asarray(v, dtype=float) for v in self.boundary_normal(np.asarray(p, float))]
        for v in normals:
            n = np.linalg.norm(v)
            if abs(n - 1.0) > _NORMAL_TOL:
                raise DomainError(f"normal {v} at {p} has norm {n}, expected 1")
        return normals

    @property
    def diameter(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    # -- sampling ---------------------------------------------------------
    def sample_box(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.bounding_box
        sampler = qmc.Sobol(d=self.dim, scramble=True, seed=rng)
        u = sampler.random(n)
        return lo + u * (hi - lo)

    def sample_interior(self, n: int, rng: np.random.Generator, max_tries: int = 64) -> np.ndarray:
        """Quasi-uniform interior points (Sobol over the box, filtered)."""
        pts = []
        need = n
        for _ in range(max_tries):
            cand = self.sample_box(max(2 * need, 16), rng)
            keep = cand[self.inside(cand)]
            if keep.size:
                pts.append(keep[:need])
                need -= len(pts[-1])
            if need <= 0:
                return np.concatenate(pts, axis=0)[:n]
        raise DomainError(f"could not draw {n} interior samples of {self.label}")

    def sample_boundary(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.boundary_sampler is not None:
            return np.asarray(self.boundary_sampler(n, rng), dtype=float)
        return _project_boundary_samples(self, n, rng)


def _project_boundary_samples(domain: DomainSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Generic boundary sampler: walk box samples to the zero level set.

    For each interior sample, march along the finite-difference gradient of
    the signed distance until the sign flips, then bisect.
    """
    inner = domain.sample_interior(n, rng)
    out = np.empty_like(inner)
    h = 1e-6
    for i, x in enumerate(inner):
        g = np.array(
            [
                (domain.distance(x + h * _e(domain.dim, j)) - domain.distance(x - h * _e(domain.dim, j)))
                / (2 * h)
                for j in range(domain.dim)
            ]
        )
        gn = np.linalg.norm(g)
        direction = g / gn if gn > 0 else _e(domain.dim, 0)
        step = max(domain.diameter / 64.0, 1e-3)
        a, b = x, None
        for _ in range(40):
            cand = x + step * direction
            if domain.distance(cand) > 0:
                b = cand
                break
            a, step = cand, step * 2.0
        if b is None:
            raise DomainError("failed to bracket the boundary along the distance gradient")
        for _ in range(80):
            mid = 0.5 * (a + b)
            if domain.distance(mid) <= 0:
                a = mid
            else:
                b = mid
        out[i] = 0.5 * (a + b)
    return out


def _e(dim, j):
    v = np.zeros(dim)
    v[j] = 1.0
    return v


# -- built-in domains ------------------------------------------------------

def interval_domain(a: float = 0.0, b: float = 1.0) -> DomainSpec:
    a, b = float(a), float(b)
    if not b > a:
        raise DomainError("interval needs b > a")

    def contains(x):
        return (x[..., 0] > a) & (x[..., 0] < b)

    def sdist(x):
        return np.maximum(a - x[..., 0], x[..., 0] - b)

    def normal(p):
        out = []
        if abs(p[0] - a) <= 1e-9:
            out.append(np.array([-1.0]))
        if abs(p[0] - b) <= 1e-9:
            out.append(np.array([1.0]))
        return out

    def boundary(n, rng):
        pts = np.array([[a], [b]])
        return pts[np.arange(n) % 2]

    return DomainSpec(
        dim=1,
        contains=contains,
        signed_distance=sdist,
        bounding_box=([a], [b]),
        boundary_normal=normal,
        boundary_sampler=boundary,
        reach=np.inf,
        label=f"interval({a},{b})",
    )


def rectangle_domain(lo, hi) -> DomainSpec:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = lo.shape[0]
    if not np.all(hi > lo):
        raise DomainError("rectangle needs hi > lo componentwise")

    def contains(x):
        return np.all((x > lo) & (x < hi), axis=-1)

    def sdist(x):
        # exact SDF of a box
        q = np.maximum(lo - x, x - hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def normal(p):
        out = []
        for j in range(dim):
            if abs(p[j] - lo[j]) <= 1e-9:
                out.append(-_e(dim, j))
            if abs(p[j] - hi[j]) <= 1e-9:
                out.append(_e(dim, j))
        # at corners also return the normalized corner direction (sampled cone)
        if len(out) > 1:
            c = np.sum(out, axis=0)
            out.append(c / np.linalg.norm(c))
        return out

    def boundary(n, rng):
        # perimeter-proportional sampling over the faces
        u = rng.random((n, dim))
        pts = lo + u * (hi - lo)
        face = rng.integers(0, 2 * dim, size=n)
        for i in range(n):
            j, side = divmod(face[i], 2)
            pts[i, j] = lo[j] if side == 0 else hi[j]
        return pts

    return DomainSpec(
        dim=dim,
        contains=contains,
        signed_distance=sdist,
        bounding_box=(lo, hi),
        boundary_normal=normal,
        boundary_sampler=boundary,
        reach=np.inf,
        label="rectangle",
    )


def disk_domain(center=(0.0, 0.0), radius: float = 1.0) -> DomainSpec:
    c = np.asarray(center, dtype=float)
    r = float(radius)
    dim = c.shape[0]

    def contains(x):
        return np.linalg.norm(x - c, axis=-1) < r

    def sdist(x):
        return np.linalg.norm(x - c, axis=-1) - r

    def normal(p):
        v = np.asarray(p, dtype=float) - c
        n = np.linalg.norm(v)
        if n == 0:
            return []
        return [v / n]

    def boundary(n, rng):
        if dim != 2:
            raise DomainError("boundary sampler implemented for planar disks")
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        return c + r * np.stack([np.cos(ang), np.sin(ang)], axis=-1)

    return DomainSpec(
        dim=dim,
        contains=contains,
        signed_distance=sdist,
        bounding_box=(c - r, c + r),
        boundary_normal=normal,
        boundary_sampler=boundary if dim == 2 else None,
        reach=np.inf,
        label=f"disk(r={r})",
    )


def cylinder_strip_domain(y_min: float = 0.0, y_max: float = 1.0, period: float = 1.0) -> DomainSpec:
    """Periodic strip: x lives on a circle of the given period, y in (y_min, y_max)."""
    y0, y1 = float(y_min), float(y_max)
    if not y1 > y0:
        raise DomainError("strip needs y_max > y_min")

    def contains(x):
        return (x[..., 1] > y0) & (x[..., 1] < y1)

    def sdist(x):
        return np.maximum(y0 - x[..., 1], x[..., 1] - y1)

    def normal(p):
        out = []
        if abs(p[1] - y0) <= 1e-9:
            out.append(np.array([0.0, -1.0]))
        if abs(p[1] - y1) <= 1e-9:
            out.append(np.array([0.0, 1.0]))
        return out

    def boundary(n, rng):
        xs = period * (np.arange(n) + 0.5) / n
        ys = np.where(np.arange(n) % 2 == 0, y0, y1)
        return np.stack([xs, ys], axis=-1)

    return DomainSpec(
        dim=2,
        contains=contains,
        signed_distance=sdist,
        bounding_box=([0.0, y0], [period, y1]),
        boundary_normal=normal,
        boundary_sampler=boundary,
        periodic_axes={0: period},
        reach=np.inf,
        label="cylinder_strip",
    )


# -- diagnostics -----------------------------------------------------------

@dataclass(frozen=True)
class ConsistencyReport:
    passed: bool
    n_samples: int
    worst_violation: float
    witness: Optional[np.ndarray]
    message: str


def domain_membership_consistency(
    domain: DomainSpec, n_samples: int, seed: int
) -> ConsistencyReport:
    """Randomized agreement check between ``contains`` and ``signed_distance``.

    Samples the bounding box and flags points where membership claims
    disagree with the sign of the distance (both directions, tolerance 1e-9).
    Diagnostic only: returns a report, never raises.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = domain.bounding_box
    pts = lo + rng.random((n_samples, domain.dim)) * (hi - lo)
    inside = np.asarray(domain.contains(pts), dtype=bool)
    sd = np.asarray(domain.signed_distance(pts), dtype=float)

    # contains => sd <= tol ; sd < -tol => contains
    viol_in = np.where(inside, sd, -np.inf)
    viol_out = np.where(~inside & (sd < -_MEMBERSHIP_TOL), -sd, -np.inf)
    worst = float(max(viol_in.max(initial=-np.inf), viol_out.max(initial=-np.inf)))
    passed = worst <= _MEMBERSHIP_TOL
    witness = None
    message = "contains/signed_distance agree on all samples"
    if not passed:
        idx = int(np.argmax(np.maximum(viol_in, viol_out)))
        witness = pts[idx]
        if viol_in[idx] >= viol_out[idx]:
            message = f"contains(x) true but signed_distance = {sd[idx]:.3g} > 0 at x = {witness}"
        else:
            message = f"signed_distance = {sd[idx]:.3g} < 0 but contains(x) false at x = {witness}"
    return ConsistencyReport(passed, n_samples, worst, witness, message)
