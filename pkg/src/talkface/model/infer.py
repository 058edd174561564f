"""Auto-regressive rollout over a spectrogram sequence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..audio import Spectrogram, spectrogram_batch
from .networks import CROP, TalkingFaceModel


@dataclass
class InferenceResult:
    vertices: np.ndarray            # T x 468 x 3
    crops: np.ndarray               # T x 128 x 128 x 3
    blendshapes: np.ndarray | None  # T x K

    def __len__(self):
        return len(self.vertices)


def infer_sequence(specs, model: TalkingFaceModel, batch_size: int = 64) -> InferenceResult:
    """Predict geometry, lip crop and blendshapes for every frame.

    ``specs`` is a list of :class:`Spectrogram` or an N x 2 x 256 x 24
    array. Frame 0 is conditioned on an all-zeros previous crop and frame
    t on the crop predicted for t - 1.
    """
    if len(specs) and isinstance(specs[0], Spectrogram):
        specs = spectrogram_batch(specs)
    dtype = model.reference_crop.dtype
    x = torch.as_tensor(np.asarray(specs), dtype=dtype)
    model.eval()
    n = x.shape[0]
    with torch.no_grad():
        latents = torch.cat([model.encode_audio(x[b:b + batch_size]) for b in range(0, n, batch_size)]) \
            if n else torch.zeros(0, model.cfg.n_audio_latent, dtype=dtype)
        verts = model.geometry_decoder(latents, model.reference_vertices) if n else \
            torch.zeros(0, *model.reference_vertices.shape, dtype=dtype)
        bs = model.blendshape_decoder(latents) if model.blendshape_decoder is not None else None
        if model.autoregressive:
            crops = []
            prev = torch.zeros(1, 3, CROP, CROP, dtype=dtype)
            for t in range(n):
                crop, _ = model.decode_texture(latents[t:t + 1], prev)
                crops.append(crop)
                prev = crop
            crops = torch.cat(crops) if crops else torch.zeros(0, 3, CROP, CROP, dtype=dtype)
        else:
            crops = torch.cat([model.decode_texture(latents[b:b + batch_size])[0]
                               for b in range(0, n, batch_size)]) if n else torch.zeros(0, 3, CROP, CROP)
    return InferenceResult(verts.numpy().astype(np.float64),
                           np.moveaxis(crops.numpy(), 1, -1).astype(np.float64),
                           None if bs is None else bs.numpy().astype(np.float64))
