"""Process models: SDEs in Stratonovich form and the velocity-switching PDMP.

An :class:`SDEModel` is declared in Stratonovich form (drift plus a list of
noise fields); its Ito drift is derived once at build time as

    ito_drift(x) = drift(x) + 1/2 * sum_j J_j(x) @ S_j(x)

with ``J_j`` the Jacobian of noise field ``S_j``.  Simulation always steps
the Ito form.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ModelError, DomainError
from .fields import VectorFieldSpec

__all__ = [
    "SDEModel",
    "PDMPModel",
    "ControlInput",
    "build_ito_drift",
    "stratonovich_correction",
]


def stratonovich_correction(noise_fields: Sequence[VectorFieldSpec]) -> Callable:
    """Batched evaluator of ``1/2 sum_j J_j(x) S_j(x)``."""

    def corr(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for s in noise_fields:
            j = s.jacobian(x)
            v = s(x)
            out += 0.5 * np.einsum("...ij,...j->...i", j, v)
        return out

    return corr


@dataclass(frozen=True)
class SDEModel:
    """Stratonovich SDE ``dX = drift dt + sum_j noise_j o dB^j``."""

    drift: VectorFieldSpec
    noise_fields: tuple
    ito_drift: Optional[VectorFieldSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "noise_fields", tuple(self.noise_fields))
        dims = {self.drift.dim} | {s.dim for s in self.noise_fields}
        if len(dims) != 1:
            raise ModelError(f"field dimensions disagree: {sorted(dims)}")
        if self.ito_drift is not None and self.ito_drift.dim != self.drift.dim:
            raise ModelError("ito_drift dimension mismatch")

    @property
    def dim(self) -> int:
        return self.drift.dim

    @property
    def n_noise(self) -> int:
        return len(self.noise_fields)


def build_ito_drift(model: SDEModel) -> SDEModel:
    """Complete a model with its derived Ito drift.

    For constant noise fields the correction vanishes and the Ito drift
    coincides with the Stratonovich one.
    """
    if model.ito_drift is not None:
        return model
    corr = stratonovich_correction(model.noise_fields)
    drift = model.drift

    def func(x):
        return drift(x) + corr(x)

    ito = VectorFieldSpec(drift.dim, func, jac=None, label=f"ito({drift.label})")
    return SDEModel(drift=model.drift, noise_fields=model.noise_fields, ito_drift=ito)


def sde_model(drift: VectorFieldSpec, noise_fields: Sequence[VectorFieldSpec]) -> SDEModel:
    """Build an SDE model and derive its Ito drift in one go."""
    return build_ito_drift(SDEModel(drift=drift, noise_fields=tuple(noise_fields)))


@dataclass(frozen=True)
class PDMPModel:
    """Two-mode transport process on the unit interval.

    Position moves at velocity ``2*mode - 1`` (mode 0: left, mode 1: right)
    and the mode flips at constant rate ``switch_rate``.  The process is
    killed when the position exits ``]0, 1[``; at that instant position and
    mode agree, so the live set is the double branch
    ``]0,1] x {0}  u  [0,1) x {1}`` (half-open per mode).
    """

    switch_rate: float

    def __post_init__(self):
        if not self.switch_rate > 0:
            raise ModelError("switch_rate must be positive")

    interval = (0.0, 1.0)

    @staticmethod
    def velocity(mode) -> np.ndarray:
        return 2 * np.asarray(mode) - 1

    @staticmethod
    def in_domain(x, mode) -> np.ndarray:
        """Membership in the double-branch live set (vectorized)."""
        x = np.asarray(x, dtype=float)
        mode = np.asarray(mode)
        on0 = (mode == 0) & (x > 0.0) & (x <= 1.0)
        on1 = (mode == 1) & (x >= 0.0) & (x < 1.0)
        return on0 | on1

    @staticmethod
    def time_to_kill(x, mode) -> np.ndarray:
        """Time until the killing boundary along the current mode's motion."""
        x = np.asarray(x, dtype=float)
        return np.where(np.asarray(mode) == 0, x, 1.0 - x)

    def require_in_domain(self, x, mode) -> None:
        if not np.all(self.in_domain(x, mode)):
            raise DomainError(f"state (x={x}, mode={mode}) outside the branch domain")


@dataclass(frozen=True)
class ControlInput:
    """Control for the associated deterministic system.

    Either a finite list of ``(duration, u)`` pieces (piecewise constant) or
    a state-feedback map ``x -> u``; ``u`` has one entry per noise field.
    """

    kind: str  # "piecewise_constant" | "feedback"
    pieces: Optional[tuple] = None
    feedback_map: Optional[Callable] = None
    horizon: Optional[float] = None  # required for feedback controls

    def __post_init__(self):
        if self.kind == "piecewise_constant":
            if not self.pieces:
                raise ModelError("piecewise control needs at least one piece")
            pieces = tuple(
                (float(d), np.asarray(u, dtype=float).reshape(-1)) for d, u in self.pieces
            )
            if any(d <= 0 for d, _ in pieces):
                raise ModelError("piece durations must be positive")
            if not np.isfinite(sum(d for d, _ in pieces)):
                raise ModelError("total control duration must be finite")
            object.__setattr__(self, "pieces", pieces)
        elif self.kind == "feedback":
            if self.feedback_map is None:
                raise ModelError("feedback control needs a feedback_map")
            if self.horizon is None or not np.isfinite(self.horizon) or self.horizon <= 0:
                raise ModelError("feedback control needs a finite positive horizon")
        else:
            raise ModelError(f"unknown control kind {self.kind!r}")

    @property
    def duration(self) -> float:
        if self.kind == "piecewise_constant":
            return float(sum(d for d, _ in self.pieces))
        return float(self.horizon)

    @staticmethod
    def piecewise(pieces) -> "ControlInput":
        return ControlInput(kind="piecewise_constant", pieces=tuple(pieces))

    @staticmethod
    def feedback(feedback_map: Callable, horizon: float) -> "ControlInput":
        return ControlInput(kind="feedback", feedback_map=feedback_map, horizon=horizon)
