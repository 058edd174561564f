"""PCA initialization of the last geometry layer."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ShapeError


@dataclass
class PCABasis:
    components: np.ndarray   # k x D, orthonormal rows
    mean: np.ndarray         # D
    singular_values: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def reconstruct(self, deltas, k: int | None = None) -> np.ndarray:
        P = self.components[: (k or self.k)]
        X = np.asarray(deltas, dtype=np.float64) - self.mean
        return self.mean + (X @ P.T) @ P


def pca_init(vertex_deltas, k: int = 150) -> PCABasis:
    """Top-``k`` principal directions of an N x D delta matrix (rows are frames)."""
    X = np.asarray(vertex_deltas, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("vertex deltas must be an N x D matrix")
    n, d = X.shape
    if n < k:
        warnings.warn(f"only {n} training frames; reducing PCA rank from {k} to {n}")
        k = n
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    return PCABasis(vt[:k].copy(), mean, s[:k].copy())


def apply_pca_init(geometry_decoder, basis: PCABasis) -> None:
    """Set the 150 -> 1404 layer: weight columns = components, bias = mean delta.

    Unused hidden units (k < hidden width) get zero columns.
    """
    fc = geometry_decoder.fc2
    hidden = fc.weight.shape[1]
    w = np.zeros((fc.weight.shape[0], hidden))
    k = min(basis.k, hidden)
    w[:, :k] = basis.components[:k].T
    with torch.no_grad():
        fc.weight.copy_(torch.as_tensor(w, dtype=fc.weight.dtype))
        fc.bias.copy_(torch.as_tensor(basis.mean, dtype=fc.bias.dtype))
