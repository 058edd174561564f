"""Pipeline configuration as plain ``key = value`` text.

Every tunable constant of the pipeline lives here with its default; any
key not listed is rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class PipelineConfig:
    # geometry / atlas
    atlas_size: int = 256
    lip_crop_size: int = 128
    reference_frame: int = -1          # -1: most frontal frame
    # audio
    sample_rate: int = 16000
    fps: float = 30.0
    # lighting
    irls_temperature: float = 0.1
    irls_patch_size: int = 16
    irls_iterations: int = 8
    irls_grid_stride: int = 4
    specular_sigma: float = 2.0
    specular_percentile: float = 90.0
    fill_iterations: int = 200
    fill_tolerance: float = 1e-4
    # model
    n_audio_latent: int = 32
    n_atlas_latent: int = 2
    n_blendshapes: int = 4
    channel_scale: float = 0.25
    audio_preset: str = "geometric"
    geometry_hidden: int = 150
    dropout: float = 0.5
    # training
    batch_size: int = 128
    epochs: int = 500
    alpha_geo: float = 3.0
    alpha_bs: float = 0.3
    learning_rate: float = 1e-4
    lr_decay: float = 0.8
    lr_decay_steps: int = 30000
    zero_atlas_prob: float = 0.2
    pca_rank: int = 150
    max_train_seconds: float = 0.0     # 0: no limit
    # synthesis
    chin_band_px: int = 40
    blend_feather_px: int = 12
    crop_feather_px: int = 8

    def validate(self) -> None:
        if self.atlas_size != 256 or self.lip_crop_size != 128:
            raise ConfigError("the network architecture fixes the atlas at 256 and the lip crop at 128")
        if not 0.0 <= self.zero_atlas_prob <= 1.0:
            raise ConfigError("zero_atlas_prob must lie in [0, 1]")
        if not 0.0 < self.specular_percentile < 100.0:
            raise ConfigError("specular_percentile must lie in (0, 100)")
        for name in ("irls_temperature", "irls_patch_size", "irls_iterations", "irls_grid_stride",
                     "batch_size", "epochs", "learning_rate", "sample_rate", "fps", "n_audio_latent"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.audio_preset not in ("geometric", "appendix"):
            raise ConfigError("audio_preset must be 'geometric' or 'appendix'")

    def light_params(self):
        from .light import LightParams

        return LightParams(self.irls_temperature, self.irls_patch_size, self.irls_iterations,
                           self.irls_grid_stride, self.specular_sigma, self.specular_percentile,
                           self.fill_iterations, self.fill_tolerance)

    def model_config(self):
        from .model.networks import ModelConfig

        return ModelConfig(self.n_audio_latent, self.n_atlas_latent, self.n_blendshapes, self.channel_scale,
                           self.audio_preset, self.geometry_hidden, self.dropout)

    def train_config(self, seed: int = 0):
        from .model.train import TrainConfig

        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, alpha_geo=self.alpha_geo,
                           alpha_bs=self.alpha_bs, learning_rate=self.learning_rate, lr_decay=self.lr_decay,
                           lr_decay_steps=self.lr_decay_steps, zero_atlas_prob=self.zero_atlas_prob,
                           pca_rank=self.pca_rank, seed=seed,
                           max_seconds=self.max_train_seconds or None)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


def _coerce(name, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    known = cfg.to_dict()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, value, known[key]))
    cfg.validate()
    return cfg


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{p}: config file not found")
    return parse_config(p.read_text())
