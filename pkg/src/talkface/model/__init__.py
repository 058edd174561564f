"""Joint audio-to-face network, losses, training and inference (PyTorch)."""

from .blendshapes import BlendshapeBasis, fit_blendshape_coeffs
from .networks import ModelConfig, TalkingFaceModel

__all__ = ["BlendshapeBasis", "ModelConfig", "TalkingFaceModel", "fit_blendshape_coeffs"]
