"""Checkable sufficient conditions: accessibility, boundary transversality,
and bracket-generation rank tests.

The controlled system associated with an SDE replaces each Brownian input by
a locally integrable control:

    y' = S0(y) + sum_j u_j(t) S_j(y).

Reachability witnesses come from integrating this system; non-degeneracy
certificates come from a quantitative radial condition (with its explicit
feedback escape control), from inward-pointing tests on boundary normals,
and from the rank of iterated Lie brackets.  Everything here is sampled and
numerical: the checkers produce witnesses or sampled counterexamples, not
proofs.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .domains import DomainSpec
from .errors import BlowUpError, DomainError, ModelError
from .fields import VectorFieldSpec, fd_jacobian
from .models import ControlInput, SDEModel
from .rng import RngPolicy

__all__ = [
    "BracketNode",
    "ReachabilityResult",
    "lie_bracket",
    "bracket_closure",
    "hormander_rank",
    "HormanderResult",
    "integrate_control_ode",
    "pinsky_check",
    "PinskyReport",
    "pinsky_feedback_escape",
    "EscapeResult",
    "inward_condition_check",
    "h2prime_check",
    "BoundaryReport",
    "exterior_sphere_probe",
    "inward_flow_containment",
]

_RANK_RTOL = 1e-8  # relative singular-value threshold: scale-invariant
_TRANSVERSALITY_TOL = 1e-10


# -- Lie brackets -----------------------------------------------------------

def lie_bracket(Y: VectorFieldSpec, Z: VectorFieldSpec) -> VectorFieldSpec:
    """The field ``[Y, Z](x) = J_Z(x) Y(x) - J_Y(x) Z(x)``.

    Jacobians of derived brackets fall back to finite differences, so the
    construction is closed under nesting.
    """
    if Y.dim != Z.dim:
        raise ModelError("bracket of fields with different dimensions")

    def func(x):
        jz = Z.jacobian(x)
        jy = Y.jacobian(x)
        return np.einsum("...ij,...j->...i", jz, Y(x)) - np.einsum("...ij,...j->...i", jy, Z(x))

    return VectorFieldSpec(Y.dim, func, jac=None, label=f"[{Y.label},{Z.label}]")


@dataclass(frozen=True)
class BracketNode:
    """A formal bracket word with its numerical evaluator."""

    word: str
    depth: int
    field: VectorFieldSpec

    def eval(self, x) -> np.ndarray:
        return self.field(x)


def bracket_closure(fields: Sequence[VectorFieldSpec], max_depth: int, max_nodes: int = 4096):
    """Levels of the bracket-generated family, deduplicated by formal word.

    Level 0 is the input family; level k+1 adds all brackets of pairs from
    level k.  Antisymmetric duplicates ([Z,Y] for a kept [Y,Z]) and self
    brackets are skipped.
    """
    if max_depth > 6:
        raise ModelError("max_depth > 6 exceeds the combinatorial guard")
    nodes = [BracketNode(word=f.label, depth=0, field=f) for f in fields]
    seen = {n.word for n in nodes}
    level = list(nodes)
    for depth in range(1, max_depth + 1):
        new = []
        for a in range(len(level)):
            for b in range(a + 1, len(level)):
                Y, Z = level[a], level[b]
                word = f"[{Y.word},{Z.word}]"
                if word in seen or f"[{Z.word},{Y.word}]" in seen:
                    continue
                seen.add(word)
                new.append(BracketNode(word=word, depth=depth, field=lie_bracket(Y.field, Z.field)))
                if len(seen) > max_nodes:
                    raise ModelError(
                        f"bracket enumeration exceeded {max_nodes} nodes at depth {depth}"
                    )
        level = level + new
        nodes = level
    return nodes


def _numerical_rank(vectors: np.ndarray, rtol: float = _RANK_RTOL) -> int:
    if vectors.size == 0:
        return 0
    s = np.linalg.svd(vectors, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > rtol * s[0]).sum())


@dataclass(frozen=True)
class HormanderResult:
    variant: str
    rank: int
    dim: int
    spans: bool
    witnesses: tuple  # minimal greedy set of bracket words achieving the rank
    n_candidates: int
    max_depth: int


def hormander_rank(
    model: SDEModel, point, variant: str, max_depth: int, rank_rtol: float = _RANK_RTOL
) -> HormanderResult:
    """Rank of the bracket-generated family at a point.

    Variants: ``weak`` evaluates the closure of the full family (drift
    included); ``hormander`` evaluates the noise fields plus all brackets of
    pairs taken from the closure of the full family at the previous depth;
    ``strong`` evaluates the closure of the noise fields alone.  Rank is
    counted by singular values above ``rank_rtol * sigma_max``; the witness
    set collects candidates that increased the rank, in generation order.
    """
    x = np.asarray(point, dtype=float)
    dim = model.dim
    drift, noises = model.drift, list(model.noise_fields)
    if variant == "weak":
        candidates = bracket_closure([drift] + noises, max_depth)
    elif variant == "strong":
        candidates = bracket_closure(noises, max_depth)
    elif variant == "hormander":
        base = [BracketNode(word=f.label, depth=0, field=f) for f in noises]
        closure = bracket_closure([drift] + noises, max(max_depth - 1, 0))
        pairs = []
        seen = {n.word for n in base}
        for a in range(len(closure)):
            for b in range(len(closure)):
                if a == b:
                    continue
                Y, Z = closure[a], closure[b]
                word = f"[{Y.word},{Z.word}]"
                if word in seen or f"[{Z.word},{Y.word}]" in seen:
                    continue
                seen.add(word)
                pairs.append(
                    BracketNode(
                        word=word,
                        depth=max(Y.depth, Z.depth) + 1,
                        field=lie_bracket(Y.field, Z.field),
                    )
                )
        candidates = base + pairs
    else:
        raise ModelError(f"unknown variant {variant!r}")

    vectors, witnesses = [], []
    rank = 0
    for node in candidates:
        v = node.eval(x)
        trial = np.array(vectors + [v])
        r = _numerical_rank(trial, rank_rtol)
        if r > rank:
            vectors.append(v)
            witnesses.append(node.word)
            rank = r
        if rank == dim:
            break
    return HormanderResult(
        variant=variant,
        rank=rank,
        dim=dim,
        spans=rank == dim,
        witnesses=tuple(witnesses),
        n_candidates=len(candidates),
        max_depth=max_depth,
    )


# -- controlled ODE ---------------------------------------------------------

@dataclass(frozen=True)
class ReachabilityResult:
    reached: bool
    witness_control: ControlInput
    witness_path: np.ndarray
    times: np.ndarray
    stayed_in_D: bool
    exit_index: Optional[int]
    final_state: np.ndarray


def _rk4_step(f: Callable, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_control_ode(
    model: SDEModel,
    x0,
    control: ControlInput,
    dt: float,
    domain: Optional[DomainSpec] = None,
    target: Optional[Callable] = None,
) -> ReachabilityResult:
    """RK4 integration of the controlled system.

    When a domain is given, the first sample outside it is recorded
    (``exit_index``) and used to decide ``stayed_in_D``; integration
    continues to the end of the control so escape witnesses keep their full
    path.  ``reached`` evaluates ``target`` at the final state (True when no
    target is supplied).
    """
    if dt <= 0:
        raise ModelError("dt must be positive")
    x = np.asarray(x0, dtype=float)

    def vector_field(u):
        def f(y):
            out = model.drift(y)
            for j, s in enumerate(model.noise_fields):
                out = out + u[j] * s(y)
            return out

        return f

    path = [x]
    times = [0.0]
    t = 0.0
    if control.kind == "piecewise_constant":
        segments = control.pieces
    else:
        segments = [(control.duration, None)]

    for duration, u in segments:
        n_steps = max(1, int(np.ceil(duration / dt)))
        h = duration / n_steps
        for _ in range(n_steps):
            if control.kind == "feedback":
                u_now = np.asarray(control.feedback_map(x), dtype=float)
                f = vector_field(u_now)
            else:
                f = vector_field(u)
            x = _rk4_step(f, x, h)
            if not np.all(np.isfinite(x)):
                raise BlowUpError("controlled ODE blow-up", state=path[-1], dt=h, t=t)
            if domain is not None:
                x = domain.wrap(x)
            t += h
            path.append(x)
            times.append(t)

    path = np.array(path)
    times = np.array(times)
    exit_index = None
    stayed = True
    if domain is not None:
        inside = domain.inside(path)
        outside = np.flatnonzero(~inside)
        if outside.size:
            exit_index = int(outside[0])
            stayed = False
    reached = True if target is None else bool(target(path[-1]))
    return ReachabilityResult(
        reached=reached,
        witness_control=control,
        witness_path=path,
        times=times,
        stayed_in_D=stayed,
        exit_index=exit_index,
        final_state=path[-1],
    )


# -- quantitative radial condition ------------------------------------------

@dataclass(frozen=True)
class PinskyReport:
    holds: bool
    delta_hat: float
    worst_point: np.ndarray
    n_samples: int


def pinsky_check(
    model: SDEModel,
    domain: DomainSpec,
    x_tilde,
    n_samples: int = 4096,
    seed: int = 0,
) -> PinskyReport:
    """Sampled infimum of ``sum_j <S_j(x), x - xt>^2 / ||x - xt||^2`` over D.

    A positive infimum makes the complement of the closure reachable by the
    explicit radial feedback control (see :func:`pinsky_feedback_escape`).
    ``x_tilde`` must lie strictly outside the closure.
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    if domain.distance(x_tilde) <= 0:
        raise DomainError("x_tilde must lie outside the closure of the domain")
    pts = domain.sample_interior(n_samples, np.random.default_rng(seed))
    w = pts - x_tilde
    denom = np.sum(w * w, axis=-1)
    num = np.zeros(len(pts))
    for s in model.noise_fields:
        num += np.sum(s(pts) * w, axis=-1) ** 2
    ratio = num / denom
    i = int(np.argmin(ratio))
    delta = float(ratio[i])
    return PinskyReport(holds=delta > _TRANSVERSALITY_TOL, delta_hat=delta, worst_point=pts[i], n_samples=n_samples)


@dataclass(frozen=True)
class EscapeResult:
    escaped: bool
    eps_used: Optional[float]
    retries: int
    path: np.ndarray
    times: np.ndarray
    radial_trace: np.ndarray  # ||x(t) - x_tilde||^2 along the path
    message: str


def pinsky_feedback_escape(
    model: SDEModel,
    domain: DomainSpec,
    x_tilde,
    x0,
    dt: float = 1e-3,
    eps0: Optional[float] = None,
    max_retries: int = 10,
    check: Optional[PinskyReport] = None,
) -> EscapeResult:
    """Drive the closed loop ``u_j(x) = -<S_j(x), x - xt> / (2 delta eps)`` out of K.

    The gain is not known in advance ("eps small enough"): starting from
    ``eps0`` the loop integrates up to a horizon of ten domain diameters of
    travel and halves eps on failure, at most ``max_retries`` times.
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    report = check or pinsky_check(model, domain, x_tilde)
    if not report.holds:
        raise DomainError("radial non-degeneracy fails; escape control undefined")
    delta = report.delta_hat
    x0 = np.asarray(x0, dtype=float)
    if domain.distance(x0) > 0:
        return EscapeResult(
            escaped=True,
            eps_used=None,
            retries=0,
            path=x0[None, :],
            times=np.zeros(1),
            radial_trace=np.array([float(np.sum((x0 - x_tilde) ** 2))]),
            message="start already outside the closure",
        )
    eps = eps0 if eps0 is not None else 1.0
    for retry in range(max_retries):
        def feedback(x, _eps=eps):
            return np.array(
                [-(1.0 / (2.0 * delta * _eps)) * float(np.dot(s(x), x - x_tilde)) for s in model.noise_fields]
            )

        # horizon: ten diameters of travel at the slowest closed-loop speed seen
        probe = domain.sample_interior(256, np.random.default_rng(1))
        speeds = []
        for p in probe[:64]:
            u = feedback(p)
            vel = model.drift(p) + sum(u[j] * s(p) for j, s in enumerate(model.noise_fields))
            speeds.append(np.linalg.norm(vel))
        v_floor = max(min(speeds), 1e-9)
        horizon = 10.0 * domain.diameter / v_floor
        control = ControlInput.feedback(feedback, horizon=horizon)
        res = integrate_control_ode(model, x0, control, dt, domain=domain)
        trace = np.sum((res.witness_path - x_tilde) ** 2, axis=-1)
        if res.exit_index is not None:
            cut = res.exit_index + 1
            return EscapeResult(
                escaped=True,
                eps_used=eps,
                retries=retry,
                path=res.witness_path[:cut],
                times=res.times[:cut],
                radial_trace=trace[:cut],
                message=f"left the closure at t = {res.times[res.exit_index]:.4g} with eps = {eps:g}",
            )
        eps *= 0.5
    return EscapeResult(
        escaped=False,
        eps_used=eps,
        retries=max_retries,
        path=res.witness_path,
        times=res.times,
        radial_trace=trace,
        message=f"escape not achieved after {max_retries} retries; final ||x - xt||^2 = {trace[-1]:.4g}",
    )


# -- boundary conditions ------------------------------------------------------

@dataclass(frozen=True)
class BoundaryReport:
    holds: bool
    points: tuple  # per-point dicts with the evaluated quantities
    n_failures: int
    note: str


def _sampled_boundary(model, domain, n_boundary_samples, seed):
    pts = domain.sample_boundary(n_boundary_samples, np.random.default_rng(seed))
    normal_sets = [domain.normals_at(p) for p in pts]
    if all(len(ns) == 0 for ns in normal_sets):
        raise DomainError("domain provides no normal oracle at any sampled boundary point")
    return pts, normal_sets


def inward_condition_check(
    model: SDEModel, domain: DomainSpec, n_boundary_samples: int = 256, seed: int = 0
) -> BoundaryReport:
    """Inward-pointing condition at sampled boundary points.

    At each point, every returned normal ``v`` must satisfy
    ``<S0(p), v> < 0`` or ``sum_i <S_i(p), v>^2 != 0``; opposed normal pairs
    (v and -v both present) are flagged as failures.  With sampled normal
    cones the verdict is necessary-only at nonsmooth points, which the note
    records.
    """
    pts, normal_sets = _sampled_boundary(model, domain, n_boundary_samples, seed)
    records = []
    failures = 0
    for p, normals in zip(pts, normal_sets):
        entry = {"point": p, "normals": normals, "ok": True, "reason": ""}
        if not normals:
            entry["reason"] = "no normals returned"
            records.append(entry)
            continue
        for v in normals:
            if any(np.allclose(v, -w, atol=1e-9) for w in normals):
                entry["ok"] = False
                entry["reason"] = "opposed normals at this point"
                break
            drift_in = float(np.dot(model.drift(p), v))
            noise_sq = float(sum(np.dot(s(p), v) ** 2 for s in model.noise_fields))
            if not (drift_in < 0 or noise_sq > _TRANSVERSALITY_TOL):
                entry["ok"] = False
                entry["reason"] = (
                    f"<S0,v> = {drift_in:.3g} >= 0 and sum <S_i,v>^2 = {noise_sq:.3g} ~ 0"
                )
                break
        failures += not entry["ok"]
        records.append(entry)
    return BoundaryReport(
        holds=failures == 0,
        points=tuple(records),
        n_failures=failures,
        note="normals are sampled; verdicts at nonsmooth points cover the returned sample only",
    )


def h2prime_check(
    model: SDEModel, domain: DomainSpec, n_boundary_samples: int = 256, seed: int = 0
) -> BoundaryReport:
    """Noise transversality at sampled boundary points.

    Passes at ``p`` when some returned normal and some noise field give
    ``|<S_i(p), v>|`` above tolerance.
    """
    pts, normal_sets = _sampled_boundary(model, domain, n_boundary_samples, seed)
    records = []
    failures = 0
    for p, normals in zip(pts, normal_sets):
        best = 0.0
        for v in normals:
            for s in model.noise_fields:
                best = max(best, abs(float(np.dot(s(p), v))))
        ok = best > _TRANSVERSALITY_TOL
        failures += not ok
        records.append({"point": p, "max_transversality": best, "ok": ok})
    return BoundaryReport(
        holds=failures == 0,
        points=tuple(records),
        n_failures=failures,
        note="normals are sampled; verdicts at nonsmooth points cover the returned sample only",
    )


def exterior_sphere_probe(
    domain: DomainSpec,
    radius: float,
    n_boundary_samples: int = 128,
    n_witness: int = 4096,
    seed: int = 0,
) -> dict:
    """Sampled necessary condition for an exterior tangent ball of given radius.

    For built-in domains with a known reach the answer is analytic and
    certified.  Otherwise the check verifies, for each sampled boundary
    point and normal, that ``d(p + r v, K) >= r (1 - tol)`` against sampled
    closure points; this can refute but never certify the condition.
    """
    if domain.reach is not None:
        return {
            "certified": True,
            "holds": radius <= domain.reach,
            "reach": domain.reach,
            "note": "analytic reach for a built-in domain",
        }
    rng = np.random.default_rng(seed)
    pts = domain.sample_boundary(n_boundary_samples, rng)
    closure = np.concatenate([domain.sample_interior(n_witness, rng), pts])
    worst = np.inf
    for p in pts:
        for v in domain.normals_at(p):
            center = p + radius * v
            d = np.min(np.linalg.norm(closure - center, axis=-1))
            worst = min(worst, d / radius)
    return {
        "certified": False,
        "holds": bool(worst >= 1.0 - 1e-3),
        "worst_ratio": float(worst),
        "note": "sampled necessary condition only; not a certificate",
    }


def inward_flow_containment(
    field: VectorFieldSpec,
    domain: DomainSpec,
    horizon: float = 1.0,
    dt: float = 1e-3,
    n_starts: int = 64,
    seed: int = 0,
) -> dict:
    """Simulation test of flow containment for an inward-pointing field.

    Integrates the flow from points at (numerically just inside) the
    boundary and reports whether every trajectory stays in the domain on
    (0, horizon] and gains interior distance.
    """
    rng = np.random.default_rng(seed)
    starts = domain.sample_boundary(n_starts, rng)
    model = SDEModel(drift=field, noise_fields=(), ito_drift=field)
    ok = True
    min_gain = np.inf
    for p in starts:
        # nudge inward so the start is a domain point
        g = np.array(
            [
                (domain.distance(p + 1e-6 * e) - domain.distance(p - 1e-6 * e)) / 2e-6
                for e in np.eye(domain.dim)
            ]
        )
        x0 = p - 1e-9 * g / max(np.linalg.norm(g), 1e-12)
        control = ControlInput.piecewise([(horizon, np.zeros(max(1, model.n_noise)))])
        res = integrate_control_ode(model, x0, control, dt, domain=domain)
        stayed = res.exit_index is None
        gain = -float(domain.distance(res.final_state))
        ok = ok and stayed
        min_gain = min(min_gain, gain)
    return {"contained": bool(ok), "min_final_depth": float(min_gain), "n_starts": n_starts}
