"""Closed-form ground truth for the benchmark processes.

The two-mode transport process admits an explicit eigensystem: an absorption
rate, a positive right eigenfunction built from a profile ``H``, and an
explicit quasi-stationary density.  The profile solves

    -H'(x) + lam * (H(1-x) - H(x)) = -omega * H(x)

with regime-dependent shape: ``sin(theta x)/theta`` above the critical switch
rate (``lam sin(theta) = theta``), ``x`` at ``lam = 1``, and
``sinh(theta x)/theta`` below (``lam sinh(theta) = theta``).  The interval
diffusion reference provides the analogous ground truth for killed Brownian
motion on (0, 1), computed from the explicit tridiagonal eigenpair so it is
independent of the grid solvers.
"""

from dataclasses import dataclass
import json
import math

import numpy as np

from .errors import ModelError

__all__ = [
    "PDMPOracle",
    "pdmp_oracle",
    "pdmp_h",
    "pdmp_qsd_density",
    "pdmp_expected_exit",
    "pdmp_exit_maximizer",
    "interval_diffusion_reference",
]

_CRITICAL_TOL = 1e-14
_BISECT_STEPS = 200


def _bisect(f, lo, hi, steps=_BISECT_STEPS):
    flo = f(lo)
    if flo == 0.0:
        return lo
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class PDMPOracle:
    """Eigen-system of the killed two-mode transport process."""

    lam: float
    regime: str  # "sub" | "critical" | "super"
    theta: float
    omega: float

    def H(self, x):
        x = np.asarray(x, dtype=float)
        if self.regime == "super":
            return np.sin(self.theta * x) / self.theta
        if self.regime == "critical":
            return x + 0.0
        return np.sinh(self.theta * x) / self.theta

    def H_antiderivative(self, x):
        """Exact primitive of H with value 0 at x = 0 (used for binned masses)."""
        x = np.asarray(x, dtype=float)
        if self.regime == "super":
            return (1.0 - np.cos(self.theta * x)) / self.theta**2
        if self.regime == "critical":
            return 0.5 * x**2
        return (np.cosh(self.theta * x) - 1.0) / self.theta**2

    @property
    def int_H(self) -> float:
        """Closed-form integral of H over [0, 1]."""
        if self.regime == "super":
            return (1.0 - math.cos(self.theta)) / self.theta**2
        if self.regime == "critical":
            return 0.5
        return (math.cosh(self.theta) - 1.0) / self.theta**2

    def h(self, x, mode):
        """Right eigenfunction: H(x) in mode 0, H(1-x) in mode 1."""
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise ModelError("h is defined on [0, 1]")
        mode = np.asarray(mode)
        return np.where(mode == 0, self.H(x), self.H(1.0 - x))

    def qsd_density(self, x, mode):
        """Quasi-stationary density: the modes swap the profile of ``h``."""
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise ModelError("density is defined on [0, 1]")
        mode = np.asarray(mode)
        z = 2.0 * self.int_H
        return np.where(mode == 0, self.H(1.0 - x), self.H(x)) / z

    def qsd_bin_masses(self, edges) -> np.ndarray:
        """Exact masses of the QSD on bins per mode, shape (2, n_bins)."""
        edges = np.asarray(edges, dtype=float)
        prim = self.H_antiderivative
        z = 2.0 * self.int_H
        # mode 0 density H(1-x): primitive is -H_antideriv(1-x)
        mode0 = (prim(1.0 - edges[:-1]) - prim(1.0 - edges[1:])) / z
        mode1 = (prim(edges[1:]) - prim(edges[:-1])) / z
        return np.stack([mode0, mode1])

    def to_json(self, n_samples: int = 9) -> str:
        xs = np.linspace(0.0, 1.0, n_samples)
        return json.dumps(
            {
                "lambda": self.lam,
                "regime": self.regime,
                "theta": self.theta,
                "omega": self.omega,
                "samples": [
                    {"x": float(x), "H": float(self.H(x)), "qsd_mode0": float(self.qsd_density(x, 0))}
                    for x in xs
                ],
            },
            sort_keys=True,
        )


def pdmp_oracle(lam: float) -> PDMPOracle:
    """Solve the regime-dispatched root problem for the absorption rate."""
    if not lam > 0:
        raise ModelError("switch rate must be positive")
    if abs(lam - 1.0) <= _CRITICAL_TOL:
        return PDMPOracle(lam=lam, regime="critical", theta=0.0, omega=2.0)
    tiny = 1e-12
    if lam > 1.0:
        f = lambda th: lam * math.sin(th) - th
        theta = _bisect(f, tiny, math.pi - tiny)
        omega = lam * (1.0 + math.cos(theta))
        return PDMPOracle(lam=lam, regime="super", theta=theta, omega=omega)
    # subcritical: bracket the positive root of lam*sinh(theta) = theta by doubling
    f = lambda th: lam * math.sinh(th) - th
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise ModelError("failed to bracket the subcritical root")
    theta = _bisect(f, tiny, hi)
    omega = lam * (1.0 + math.cosh(theta))
    return PDMPOracle(lam=lam, regime="sub", theta=theta, omega=omega)


def pdmp_h(oracle: PDMPOracle, x, mode):
    return oracle.h(x, mode)


def pdmp_qsd_density(oracle: PDMPOracle, x, mode):
    return oracle.qsd_density(x, mode)


def pdmp_expected_exit(lam: float, x):
    """Expected exit time started in mode 0: ``x (1 + lam - lam x)``."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ModelError("expected exit time is defined on [0, 1]")
    return x * (1.0 + lam - lam * x)


def pdmp_exit_maximizer(lam: float) -> float:
    """Argmax of the mode-0 expected exit time."""
    return 1.0 if lam <= 1.0 else (1.0 + lam) / (2.0 * lam)


def interval_diffusion_reference(n: int):
    """Principal Dirichlet eigenpair of the discrete half-Laplacian on (0, 1).

    Uses the explicit tridiagonal formulas (no linear algebra): rate
    ``(1 - cos(pi dx)) / dx^2`` with ``dx = 1/(n+1)`` and eigenvector
    ``sin(pi k dx)`` on the interior vertices, normalized to unit mass.
    Independent of the grid-solver module by construction.
    """
    if n < 8:
        raise ModelError("need at least 8 grid points")
    dx = 1.0 / (n + 1)
    rate = (1.0 - math.cos(math.pi * dx)) / dx**2
    k = np.arange(1, n + 1)
    density = np.sin(math.pi * k * dx)
    density = density / density.sum()
    return rate, density
