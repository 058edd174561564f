"""Differentiable SSIM and the combined texture / geometry / blendshape loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as nnf

from ..metrics import SSIM_K1, SSIM_K2, gaussian_window

ALPHA_GEO = 3.0
ALPHA_BS = 0.3


def ssim_torch(a, b, data_range: float = 1.0):
    """Per-sample SSIM of N x C x H x W batches over fully interior 11x11 windows.

    Matches :func:`talkface.metrics.ssim` on the same images.
    """
    c = a.shape[1]
    win = torch.as_tensor(gaussian_window(), dtype=a.dtype)[None, None].repeat(c, 1, 1, 1)
    filt = lambda z: nnf.conv2d(z, win, groups=c)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = filt(a), filt(b)
    sxx = filt(a * a) - mx * mx
    syy = filt(b * b) - my * my
    sxy = filt(a * b) - mx * my
    m = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return m.mean(dim=(1, 2, 3))


def geometry_error(pred_vertices, true_vertices, eps: float = 1e-12):
    """Mean per-vertex Euclidean distance, averaged over the batch."""
    return torch.sqrt(((pred_vertices - true_vertices) ** 2).sum(-1) + eps).mean()


@dataclass
class LossTerms:
    total: torch.Tensor
    tex: torch.Tensor
    geo: torch.Tensor
    bs: torch.Tensor | None

    def as_floats(self) -> dict:
        return {k: (None if v is None else float(v.detach())) for k, v in
                (("total", self.total), ("tex", self.tex), ("geo", self.geo), ("bs", self.bs))}


def combine_terms(tex, geo, bs=None, alpha_geo: float = ALPHA_GEO, alpha_bs: float = ALPHA_BS):
    total = tex + alpha_geo * geo
    if bs is not None:
        total = total + alpha_bs * bs
    return total


def combined_loss(pred: dict, truth: dict, alpha_geo: float = ALPHA_GEO, alpha_bs: float = ALPHA_BS,
                  heads=("tex", "geo", "bs")) -> LossTerms:
    """R = (1 - SSIM) + alpha_geo * mean vertex distance + alpha_bs * mean |dB|.

    The blendshape term is dropped when either side has no coefficients.
    ``heads`` restricts the total to a subset of terms (used for per-head
    gradient checks).
    """
    tex = 1.0 - ssim_torch(pred["crop"], truth["crop"]).mean()
    geo = geometry_error(pred["vertices"], truth["vertices"])
    bs = None
    if pred.get("blendshapes") is not None and truth.get("blendshapes") is not None:
        bs = (pred["blendshapes"] - truth["blendshapes"]).abs().mean()
    total = combine_terms(tex if "tex" in heads else tex * 0,
                          geo if "geo" in heads else geo * 0,
                          bs if (bs is not None and "bs" in heads) else None,
                          alpha_geo, alpha_bs)
    return LossTerms(total, tex, geo, bs)
