"""Training with teacher forcing, PCA-initialized geometry and a step-decayed Adam schedule."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..errors import ConfigError, ShapeError, TrainingError
from .losses import ALPHA_BS, ALPHA_GEO, combined_loss
from .networks import CROP, N_VERTICES, ModelConfig, TalkingFaceModel
from .pca import apply_pca_init, pca_init

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 500
    alpha_geo: float = ALPHA_GEO
    alpha_bs: float = ALPHA_BS
    learning_rate: float = 1e-4
    lr_decay: float = 0.8
    lr_decay_steps: int = 30000
    zero_atlas_prob: float = 0.2
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    pca_rank: int = 150
    seed: int = 0
    max_seconds: float | None = None

    def validate(self) -> None:
        for name in ("batch_size", "epochs", "learning_rate", "lr_decay", "lr_decay_steps", "pca_rank"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.zero_atlas_prob <= 1.0:
            raise ConfigError("zero_atlas_prob must lie in [0, 1]")
        if self.alpha_geo < 0 or self.alpha_bs < 0:
            raise ConfigError("loss weights must be non-negative")

    def learning_rate_at(self, step: int) -> float:
        return self.learning_rate * self.lr_decay ** (step // self.lr_decay_steps)


@dataclass
class TrainingSet:
    """Frame-aligned arrays; ``prev_index[i]`` is the previous frame of ``i`` or -1.

    Shapes: specs N x 2 x 256 x 24, vertices N x 468 x 3, crops N x 3 x 128 x 128,
    blendshapes N x K (optional).
    """

    specs: np.ndarray
    vertices: np.ndarray
    crops: np.ndarray
    prev_index: np.ndarray
    reference_vertices: np.ndarray
    reference_crop: np.ndarray
    blendshapes: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.specs)
        if n == 0:
            raise TrainingError("empty training set")
        if self.specs.shape[1:] != (2, 256, 24):
            raise ShapeError(f"specs must be N x 2 x 256 x 24, got {self.specs.shape}")
        if self.vertices.shape != (n, N_VERTICES, 3):
            raise ShapeError("vertices must be N x 468 x 3")
        if self.crops.shape != (n, 3, CROP, CROP):
            raise ShapeError("crops must be N x 3 x 128 x 128")
        if self.prev_index.shape != (n,):
            raise ShapeError("prev_index must have one entry per frame")
        if self.blendshapes is not None and len(self.blendshapes) != n:
            raise ShapeError("blendshapes must have one row per frame")

    def __len__(self):
        return len(self.specs)

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        remap = -np.ones(len(self), dtype=np.int64)
        remap[idx] = np.arange(idx.size)
        prev = self.prev_index[idx]
        prev = np.where(prev >= 0, remap[np.clip(prev, 0, None)], -1)
        return TrainingSet(self.specs[idx], self.vertices[idx], self.crops[idx], prev,
                           self.reference_vertices, self.reference_crop,
                           None if self.blendshapes is None else self.blendshapes[idx])


def crop_atlas(atlas, lip_crop) -> np.ndarray:
    """H x W x 3 atlas (or N x H x W x 3 stack) to the 128 x 128 lip crop, channels first."""
    x, y, w, h = (int(v) for v in lip_crop)
    a = np.asarray(atlas)
    c = a[..., y:y + h, x:x + w, :]
    return np.moveaxis(c, -1, -3)


def build_training_set(specs, vertices, atlases, lip_crop, reference_vertices, reference_atlas,
                       blendshapes=None, sequence_starts=(0,)) -> TrainingSet:
    """Assemble a :class:`TrainingSet` from per-frame arrays of one or more concatenated clips."""
    specs = np.asarray(specs, dtype=np.float32)
    n = len(specs)
    prev = np.arange(n) - 1
    for s in sequence_starts:
        prev[s] = -1
    return TrainingSet(specs, np.asarray(vertices, dtype=np.float32),
                       crop_atlas(np.asarray(atlases, dtype=np.float32), lip_crop).astype(np.float32),
                       prev, np.asarray(reference_vertices, dtype=np.float32),
                       crop_atlas(np.asarray(reference_atlas, dtype=np.float32), lip_crop).astype(np.float32),
                       None if blendshapes is None else np.asarray(blendshapes, dtype=np.float32))


@dataclass
class TrainResult:
    model: TalkingFaceModel
    history: list
    steps: int
    seconds: float
    stopped_early: bool
    config: TrainConfig


def prepare_model(data: TrainingSet, model_cfg: ModelConfig, cfg: TrainConfig) -> TalkingFaceModel:
    """Seeded construction, reference buffers, spectrogram scale and PCA geometry init."""
    torch.manual_seed(cfg.seed)
    if data.blendshapes is not None and model_cfg.n_blendshapes not in (0, data.blendshapes.shape[1]):
        raise ShapeError("blendshape count of the data and the model differ")
    model = TalkingFaceModel(model_cfg)
    scale = float(np.sqrt(np.mean(np.asarray(data.specs, dtype=np.float64) ** 2)))
    with torch.no_grad():
        model.reference_vertices.copy_(torch.as_tensor(data.reference_vertices))
        model.reference_crop.copy_(torch.as_tensor(data.reference_crop))
        model.spec_scale.fill_(scale if scale > 0 else 1.0)
    deltas = (data.vertices - data.reference_vertices[None]).reshape(len(data), -1)
    apply_pca_init(model.geometry_decoder, pca_init(deltas, min(cfg.pca_rank, model_cfg.geometry_hidden)))
    return model


def _batch(data: TrainingSet, idx, zero_mask, autoregressive: bool):
    spec = torch.as_tensor(data.specs[idx])
    prev = None
    if autoregressive:
        p = data.prev_index[idx]
        prev_np = np.zeros((len(idx), 3, CROP, CROP), dtype=np.float32)
        use = (p >= 0) & ~zero_mask
        prev_np[use] = data.crops[p[use]]
        prev = torch.as_tensor(prev_np)
    truth = {"crop": torch.as_tensor(data.crops[idx]), "vertices": torch.as_tensor(data.vertices[idx])}
    if data.blendshapes is not None:
        truth["blendshapes"] = torch.as_tensor(data.blendshapes[idx])
    return spec, prev, truth


def train(data: TrainingSet, model_cfg: ModelConfig | None = None, cfg: TrainConfig | None = None,
          model: TalkingFaceModel | None = None, on_epoch=None) -> TrainResult:
    """Adam on the combined loss; deterministic for a given seed and thread count.

    The AR input of each sample is the ground-truth previous crop, replaced
    by zeros with probability ``zero_atlas_prob`` (and always for the first
    frame of a clip). One history row is recorded per epoch.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    model_cfg = model_cfg or ModelConfig()
    if model is None:
        model = prepare_model(data, model_cfg, cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps)
    history = []
    step = 0
    start = time.monotonic()
    stopped = False
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        zero_draw = rng.random(n) < cfg.zero_atlas_prob
        sums = {"total": 0.0, "tex": 0.0, "geo": 0.0, "bs": 0.0}
        count = 0
        for b in range(0, n, cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            lr = cfg.learning_rate_at(step)
            for g in opt.param_groups:
                g["lr"] = lr
            spec, prev, truth = _batch(data, idx, zero_draw[b:b + cfg.batch_size], model.autoregressive)
            out = model(spec, prev)
            terms = combined_loss(out, truth, cfg.alpha_geo, cfg.alpha_bs)
            if not torch.isfinite(terms.total):
                raise TrainingError(f"loss diverged at epoch {epoch}, step {step}: {terms.as_floats()}")
            opt.zero_grad()
            terms.total.backward()
            opt.step()
            step += 1
            for k, v in terms.as_floats().items():
                if v is not None:
                    sums[k] += v * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "step": step, "lr": cfg.learning_rate_at(step - 1)}
        row.update({k: sums[k] / count for k in sums})
        if data.blendshapes is None or model.blendshape_decoder is None:
            row["bs"] = None
        history.append(row)
        log.info("epoch %d step %d loss %.5f", epoch, step, row["total"])
        if on_epoch is not None:
            on_epoch(epoch, model, row)
        if cfg.max_seconds is not None and time.monotonic() - start > cfg.max_seconds and epoch < cfg.epochs:
            stopped = True
            log.warning("time budget reached after epoch %d", epoch)
            break
    model.eval()
    return TrainResult(model, history, step, time.monotonic() - start, stopped, cfg)


def evaluate_loss(model: TalkingFaceModel, data: TrainingSet, teacher_forcing: bool = True,
                  batch_size: int = 64) -> float:
    """Mean combined loss (eval mode); the AR input is the true previous crop, or zeros."""
    model.eval()
    total = 0.0
    with torch.no_grad():
        for b in range(0, len(data), batch_size):
            idx = np.arange(b, min(b + batch_size, len(data)))
            zero = np.full(idx.size, not teacher_forcing)
            spec, prev, truth = _batch(data, idx, zero, model.autoregressive)
            total += float(combined_loss(model(spec, prev), truth).total) * idx.size
    return total / len(data)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["adam_betas"] = list(cfg.adam_betas)
    return d


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
