"""Vector fields with optional analytic Jacobians.

A field maps points to vectors of the same dimension.  Evaluation must be
pure and accept batches: input of shape ``(..., dim)`` yields output of the
same shape.  When no analytic Jacobian is supplied, a central finite
difference with step ``FD_STEP`` is substituted and flagged in
``jacobian_source``.
"""

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import ModelError

__all__ = [
    "FD_STEP",
    "VectorFieldSpec",
    "fd_jacobian",
    "constant_field",
    "linear_field",
    "polynomial_field",
    "horizontal_drift",
    "unit_field",
]

FD_STEP = 1e-6  # balances truncation against roundoff at double precision


def fd_jacobian(func: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``func`` at ``x`` (batched).

    Returns shape ``(..., dim, dim)`` with ``J[..., i, j] = d f_i / d x_j``.
    """
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    cols = []
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = step
        cols.append((func(x + e) - func(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class VectorFieldSpec:
    """A smooth vector field on R^dim.

    ``func`` must return finite vectors on the region of interest; ``jac``,
    when given, must follow the same batching contract and return
    ``(..., dim, dim)`` arrays.
    """

    dim: int
    func: Callable
    jac: Optional[Callable] = None
    label: str = "field"

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError(f"field dimension must be positive, got {self.dim}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.func(x), dtype=float)
        if out.shape != x.shape:
            raise ModelError(
                f"field '{self.label}' returned shape {out.shape} for input {x.shape}"
            )
        return out

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            jac = np.asarray(self.jac(x), dtype=float)
            want = x.shape + (self.dim,)
            if jac.shape != want:
                raise ModelError(
                    f"jacobian of '{self.label}' returned shape {jac.shape}, expected {want}"
                )
            return jac
        return fd_jacobian(self.__call__, x)

    @property
    def jacobian_source(self) -> str:
        return "analytic" if self.jac is not None else "finite_difference"


def constant_field(vector, label: str = "const") -> VectorFieldSpec:
    v = np.asarray(vector, dtype=float)
    dim = v.shape[0]

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(v, x.shape).copy()

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (dim,))

    return VectorFieldSpec(dim, func, jac, label)


def unit_field(dim: int, axis: int, label: Optional[str] = None) -> VectorFieldSpec:
    v = np.zeros(dim)
    v[axis] = 1.0
    return constant_field(v, label or f"e{axis}")


def linear_field(matrix, offset=None, label: str = "linear") -> VectorFieldSpec:
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError("linear field needs a square matrix")
    dim = a.shape[0]
    b = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float)

    def func(x):
        x = np.asarray(x, dtype=float)
        return x @ a.T + b

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(a, x.shape + (dim,)).copy()

    return VectorFieldSpec(dim, func, jac, label)


def polynomial_field(dim: int, components, label: str = "poly") -> VectorFieldSpec:
    """Componentwise multivariate polynomial field.

    ``components[i]`` is a list of ``(coef, exponents)`` terms; ``exponents``
    is a length-``dim`` tuple of nonnegative integers.  The Jacobian is
    differentiated term by term.
    """
    comps = [[(float(c), tuple(int(e) for e in ex)) for c, ex in comp] for comp in components]
    if len(comps) != dim:
        raise ModelError(f"need {dim} components, got {len(comps)}")

    def _monomial(x, ex):
        out = np.ones(x.shape[:-1])
        for k, e in enumerate(ex):
            if e:
                out = out * x[..., k] ** e
        return out

    def func(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for i, comp in enumerate(comps):
            for c, ex in comp:
                out[..., i] += c * _monomial(x, ex)
        return out

    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (dim,))
        for i, comp in enumerate(comps):
            for c, ex in comp:
                for j, e in enumerate(ex):
                    if e == 0:
                        continue
                    dex = list(ex)
                    dex[j] -= 1
                    out[..., i, j] += c * e * _monomial(x, tuple(dex))
        return out

    return VectorFieldSpec(dim, func, jac, label)


def horizontal_drift(a_coeffs, label: str = "a(y) dx") -> VectorFieldSpec:
    """Planar field ``(a(y), 0)`` with ``a`` a polynomial in the second coordinate.

    Covers the benchmark strip models: ``a_coeffs=[1]`` gives the constant
    horizontal drift, ``a_coeffs=[1, 0, 1]`` gives ``a(y) = 1 + y^2``.
    """
    a = np.polynomial.Polynomial(np.asarray(a_coeffs, dtype=float))
    da = a.deriv()

    def func(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out[..., 0] = a(x[..., 1])
        return out

    def jac(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (2,))
        out[..., 0, 1] = da(x[..., 1])
        return out

    return VectorFieldSpec(2, func, jac, label)
