"""Evaluation metrics (SSIM, mouth landmark distance) and sequence reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ShapeError, TalkfaceError
from .topology import FaceTopology

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
REPORT_SCHEMA = "talkface.eval/1"


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _as_channels(img):
    a = np.asarray(img, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM (channel mean) with reflected borders."""
    a, b = _as_channels(a), _as_channels(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    win = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    maps = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        filt = lambda z: ndimage.correlate(z, win, mode="reflect")
        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        maps.append(((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return np.mean(maps, axis=0)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over windows lying fully inside the image (Gaussian 11x11, sigma 1.5)."""
    m = ssim_map(a, b, data_range)
    r = SSIM_WINDOW // 2
    if m.shape[0] <= 2 * r or m.shape[1] <= 2 * r:
        return float(m.mean())
    return float(m[r:-r, r:-r].mean())


def ssim_masked(a, b, mask) -> float:
    """Mean of the SSIM map over ``mask`` pixels; both images are zeroed outside the mask first."""
    mask = np.asarray(mask, dtype=bool)
    keep = mask[..., None] if np.ndim(a) == 3 else mask
    m = ssim_map(np.where(keep, a, 0.0), np.where(keep, b, 0.0))
    if not mask.any():
        raise TalkfaceError("empty SSIM mask")
    return float(m[mask].mean())


def lmd(pred_vertices, gt_vertices, topo: FaceTopology) -> float:
    """Mean image-plane (x, y) distance over the mouth vertices, in pixels."""
    p = np.asarray(pred_vertices, dtype=np.float64)
    g = np.asarray(gt_vertices, dtype=np.float64)
    if p.shape != g.shape or p.shape[-1] != 3:
        raise ShapeError("lmd expects two Nx3 vertex arrays of equal shape")
    idx = topo.mouth_indices
    if idx.size == 0:
        raise TalkfaceError("topology has no mouth vertices")
    d = p[idx, :2] - g[idx, :2]
    return float(np.sqrt((d ** 2).sum(axis=1)).mean())


@dataclass
class EvalReport:
    ssim: list = field(default_factory=list)
    lmd: list = field(default_factory=list)
    ssim_mean: float | None = None
    ssim_std: float | None = None
    lmd_mean: float | None = None
    lmd_std: float | None = None
    config: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA
    lmd_units: str = "pixels"
    lmd_normalization: str = "none"

    def finalize(self) -> "EvalReport":
        if self.ssim:
            self.ssim_mean = float(np.mean(self.ssim))
            self.ssim_std = float(np.std(self.ssim))
        if self.lmd:
            self.lmd_mean = float(np.mean(self.lmd))
            self.lmd_std = float(np.std(self.lmd))
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate_frames(pred_images, gt_images, masks=None, pred_vertices=None, gt_vertices=None,
                    topo: FaceTopology | None = None, config: dict | None = None) -> EvalReport:
    if len(pred_images) != len(gt_images):
        raise TalkfaceError(f"frame count mismatch: {len(pred_images)} vs {len(gt_images)}")
    rep = EvalReport(config=dict(config or {}))
    for i, (p, g) in enumerate(zip(pred_images, gt_images)):
        if masks is not None and masks[i] is not None:
            rep.ssim.append(ssim_masked(p, g, masks[i]))
        else:
            rep.ssim.append(ssim(p, g))
    if pred_vertices is not None and gt_vertices is not None:
        if len(pred_vertices) != len(gt_vertices):
            raise TalkfaceError("landmark count mismatch")
        rep.lmd = [lmd(p, g, topo) for p, g in zip(pred_vertices, gt_vertices)]
    return rep.finalize()


def _frame_mask(image_file: Path):
    from . import imageio

    mask_file = image_file.with_name(image_file.name.replace("atlas_", "mask_").rsplit(".", 1)[0] + ".pgm")
    if mask_file.exists() and mask_file != image_file:
        return imageio.read_mask(mask_file)
    return None


def evaluate_sequence(pred_dir, gt_dir, topo: FaceTopology | None = None, config: dict | None = None) -> EvalReport:
    """Compare matching numbered images (and ``landmarks.lmk`` if both exist) of two directories.

    The face region is the ground truth's ``mask_*.pgm`` when present, else
    the nonzero pixels of the ground-truth image; a prediction mask, if
    present, is intersected with it.
    """
    from . import imageio
    from .landmarks import read_landmarks
    from .topology import default_topology, load_topology

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_files = imageio.list_frames(pred_dir)
    gt_files = imageio.list_frames(gt_dir)
    if len(pred_files) != len(gt_files):
        raise TalkfaceError(f"frame count mismatch: {len(pred_files)} vs {len(gt_files)}")
    preds, gts, masks = [], [], []
    for pf, gf in zip(pred_files, gt_files):
        p = imageio.read_image(pf)
        g = imageio.read_image(gf)
        mask = _frame_mask(gf)
        if mask is None:
            mask = np.asarray(g).max(axis=-1) > 0
        pmask = _frame_mask(pf)
        if pmask is not None:
            mask &= pmask
        preds.append(p)
        gts.append(g)
        masks.append(mask if mask.any() else None)
    pv = gv = None
    if (pred_dir / "landmarks.lmk").exists() and (gt_dir / "landmarks.lmk").exists():
        pv = [f.vertices for f in read_landmarks(pred_dir / "landmarks.lmk")]
        gv = [f.vertices for f in read_landmarks(gt_dir / "landmarks.lmk")]
        if topo is None:
            topo_file = gt_dir / "topology.txt"
            topo = load_topology(topo_file) if topo_file.exists() else default_topology()
    return evaluate_frames(preds, gts, masks, pv, gv, topo, config)
