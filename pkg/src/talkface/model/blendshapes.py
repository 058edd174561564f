"""Blendshape basis and box-constrained coefficient fitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from ..errors import ShapeError


@dataclass
class BlendshapeBasis:
    """``neutral`` (V x 3) plus ``basis`` (K x V x 3) displacement shapes."""

    neutral: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        self.neutral = np.asarray(self.neutral, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.neutral.ndim != 2 or self.neutral.shape[1] != 3:
            raise ShapeError("neutral must be V x 3")
        if self.basis.ndim != 3 or self.basis.shape[1:] != self.neutral.shape or self.basis.shape[0] < 1:
            raise ShapeError("basis must be K x V x 3 with K >= 1")
        if not (np.all(np.isfinite(self.neutral)) and np.all(np.isfinite(self.basis))):
            raise ShapeError("blendshape basis must be finite")

    @property
    def size(self) -> int:
        return self.basis.shape[0]

    def matrix(self) -> np.ndarray:
        return self.basis.reshape(self.size, -1).T

    def evaluate(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=np.float64)
        return self.neutral + np.tensordot(c, self.basis, axes=1)


def fit_blendshape_coeffs(V, basis: BlendshapeBasis) -> np.ndarray:
    """Least-squares coefficients in [0, 1]^K reproducing ``V``.

    The unconstrained minimum-norm solution is returned when it already
    lies in the box; otherwise the bounded problem is solved exactly with
    BVLS.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.shape != basis.neutral.shape:
        raise ShapeError(f"vertices shape {V.shape} does not match basis {basis.neutral.shape}")
    A = basis.matrix()
    y = (V - basis.neutral).ravel()
    c, *_ = np.linalg.lstsq(A, y, rcond=None)
    if np.all((c >= 0.0) & (c <= 1.0)):
        return c
    return lsq_linear(A, y, bounds=(0.0, 1.0), method="bvls", tol=1e-12).x


def blendshape_residual(V, basis: BlendshapeBasis, coeffs) -> float:
    return float(np.sum((np.asarray(V) - basis.evaluate(coeffs)) ** 2))
