"""Audio encoder and geometry / texture / blendshape decoders with the auto-regressive atlas encoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as nnf
from torch import nn

from ..errors import ShapeError

SPEC_SHAPE = (256, 24, 2)
CROP = 128
N_VERTICES = 468

ENCODER_CHANNELS = (128, 256, 512, 1024, 2048)
DECODER_CHANNELS = (1024, 512, 256, 128, 64)


def audio_channel_preset(name: str, scale: float) -> list[int]:
    """Channels of the 12 audio-encoder layers."""
    if name == "geometric":
        base = [64 * 4 ** (i / 11) for i in range(12)]
    elif name == "appendix":
        # earlier 14-layer table, first twelve channel counts
        base = [72, 72, 72, 94, 121, 158, 205, 256, 256, 256, 256, 256]
    else:
        raise ValueError(f"unknown audio channel preset {name!r}")
    return [max(1, int(round(c * scale))) for c in base]


@dataclass
class ModelConfig:
    n_audio_latent: int = 32
    n_atlas_latent: int = 2
    n_blendshapes: int = 4
    channel_scale: float = 0.25
    audio_preset: str = "geometric"
    geometry_hidden: int = 150
    dropout: float = 0.5
    encoder_channels: tuple = field(default=ENCODER_CHANNELS)
    decoder_channels: tuple = field(default=DECODER_CHANNELS)

    def to_dict(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["decoder_channels"] = list(self.decoder_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["encoder_channels"] = tuple(d["encoder_channels"])
        d["decoder_channels"] = tuple(d["decoder_channels"])
        return cls(**d)

    def scaled(self, chans):
        return [max(1, int(round(c * self.channel_scale))) for c in chans]


class AudioEncoder(nn.Module):
    """Six stride-2 convolutions over frequency (256 -> 4), six over time (24 -> 1), then dense."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = audio_channel_preset(cfg.audio_preset, cfg.channel_scale)
        layers = []
        c_in = 2
        for i, c in enumerate(chans):
            if i < 6:
                layers.append(nn.Conv2d(c_in, c, kernel_size=(3, 1), stride=(2, 1), padding=(1, 0)))
            else:
                layers.append(nn.Conv2d(c_in, c, kernel_size=(1, 3), stride=(1, 2), padding=(0, 1)))
            c_in = c
        self.convs = nn.ModuleList(layers)
        self.fc = nn.Linear(4 * 1 * c_in, cfg.n_audio_latent)

    def forward(self, spec):
        # spec: (N, 2, 256, 24)
        if spec.shape[1:] != (2, SPEC_SHAPE[0], SPEC_SHAPE[1]):
            raise ShapeError(f"spectrogram batch must be Nx2x256x24, got {tuple(spec.shape)}")
        x = spec
        for conv in self.convs:
            x = nnf.leaky_relu(conv(x), 0.2)
        return self.fc(x.flatten(1))


class GeometryDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.n_audio_latent, cfg.geometry_hidden)
        self.drop = nn.Dropout(cfg.dropout)
        self.fc2 = nn.Linear(cfg.geometry_hidden, N_VERTICES * 3)

    def forward(self, latent, reference_vertices):
        delta = self.fc2(self.drop(self.fc1(latent))).view(-1, N_VERTICES, 3)
        return reference_vertices + delta


class AtlasEncoder(nn.Module):
    """Five 5x5 stride-2 ReLU convolutions (128 -> 4) and a tanh dense layer."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = cfg.scaled(cfg.encoder_channels)
        c_in = 3
        convs = []
        for c in chans:
            convs.append(nn.Conv2d(c_in, c, 5, stride=2, padding=2))
            c_in = c
        self.convs = nn.ModuleList(convs)
        self.fc = nn.Linear(4 * 4 * c_in, cfg.n_atlas_latent)

    def forward(self, atlas):
        if atlas.shape[1:] != (3, CROP, CROP):
            raise ShapeError(f"atlas batch must be Nx3x128x128, got {tuple(atlas.shape)}")
        x = atlas
        for conv in self.convs:
            x = nnf.relu(conv(x))
        return torch.tanh(self.fc(x.flatten(1)))


class TextureDecoder(nn.Module):
    """Dense to 4x4xC, then five (bilinear x2, conv) stages to a 128x128x3 tanh update."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = cfg.scaled(cfg.decoder_channels)
        self.c0 = chans[0]
        self.fc = nn.Linear(cfg.n_audio_latent + cfg.n_atlas_latent, 16 * chans[0])
        convs = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            convs.append(nn.Conv2d(c_in, c_out, 3, padding=1))
        convs.append(nn.Conv2d(chans[-1], 3, 5, padding=2))
        self.convs = nn.ModuleList(convs)

    def forward(self, latent):
        x = nnf.relu(self.fc(latent)).view(-1, self.c0, 4, 4)
        for i, conv in enumerate(self.convs):
            x = nnf.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = conv(x)
            x = torch.tanh(x) if i == len(self.convs) - 1 else nnf.relu(x)
        return x


class TalkingFaceModel(nn.Module):
    """Shared audio encoder feeding geometry, texture and (optional) blendshape heads.

    ``reference_vertices`` (468x3) and ``reference_crop`` (3x128x128) are
    buffers so a checkpoint is self-contained; ``spec_scale`` divides the
    input spectrogram.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.audio_encoder = AudioEncoder(self.cfg)
        self.geometry_decoder = GeometryDecoder(self.cfg)
        self.texture_decoder = TextureDecoder(self.cfg)
        self.atlas_encoder = AtlasEncoder(self.cfg) if self.cfg.n_atlas_latent > 0 else None
        self.blendshape_decoder = nn.Linear(self.cfg.n_audio_latent, self.cfg.n_blendshapes) \
            if self.cfg.n_blendshapes > 0 else None
        self.register_buffer("reference_vertices", torch.zeros(N_VERTICES, 3))
        self.register_buffer("reference_crop", torch.zeros(3, CROP, CROP))
        self.register_buffer("spec_scale", torch.ones(()))

    @property
    def autoregressive(self) -> bool:
        return self.atlas_encoder is not None

    def encode_audio(self, spec):
        return self.audio_encoder(spec / self.spec_scale)

    def decode_texture(self, audio_latent, prev_crop=None):
        """Returns (clamped crop, raw tanh update)."""
        z = audio_latent
        if self.autoregressive:
            if prev_crop is None:
                prev_crop = torch.zeros(audio_latent.shape[0], 3, CROP, CROP, dtype=audio_latent.dtype)
            z = torch.cat([z, self.atlas_encoder(prev_crop)], dim=1)
        delta = self.texture_decoder(z)
        return torch.clamp(self.reference_crop + delta, 0.0, 1.0), delta

    def forward(self, spec, prev_crop=None):
        latent = self.encode_audio(spec)
        crop, delta = self.decode_texture(latent, prev_crop)
        out = {
            "latent": latent,
            "vertices": self.geometry_decoder(latent, self.reference_vertices),
            "crop": crop,
            "delta": delta,
        }
        if self.blendshape_decoder is not None:
            out["blendshapes"] = self.blendshape_decoder(latent)
        return out

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def layer_shapes(model: TalkingFaceModel) -> list[tuple[str, tuple]]:
    """Output shape of every layer for a single zero input (batch dimension dropped)."""
    shapes = []
    hooks = []
    for name, mod in model.named_modules():
        if isinstance(mod, (nn.Conv2d, nn.Linear)):
            hooks.append(mod.register_forward_hook(
                lambda m, i, o, name=name: shapes.append((name, tuple(o.shape[1:])))))
    try:
        with torch.no_grad():
            dtype = next(model.parameters()).dtype
            spec = torch.zeros(1, 2, SPEC_SHAPE[0], SPEC_SHAPE[1], dtype=dtype)
            prev = torch.zeros(1, 3, CROP, CROP, dtype=dtype) if model.autoregressive else None
            model.eval()
            model(spec, prev)
    finally:
        for h in hooks:
            h.remove()
    return shapes
