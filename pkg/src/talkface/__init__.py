"""Personalized audio-driven 3D talking faces.

Pose and lighting normalization of face videos into frontal texture
atlases, a joint audio-to-(geometry, texture, blendshape) model, and the
synthesis path that puts predictions back into video frames.
"""

__version__ = "0.1.0"

from .errors import (AlignmentDegenerateError, AudioError, ConfigError, DegenerateCylinderError, FormatError,
                     ShapeError, TalkfaceError, TrainingError, UndefinedAzimuthError)
from .geom import (CylinderRef, SimilarityTransform, TextureAtlas, cylinder_uv, fit_reference_cylinder,
                   normalize_pose, umeyama_align, unroll_texture, warp_triangles)
from .landmarks import LandmarkFrame, read_landmarks, write_landmarks
from .light import (ColorTransform, LightParams, estimate_color_transform, estimate_gain_irls, normalize_sequence,
                    normalize_temporal, remove_specularity, rgb_yuv_convert, symmetrize_reference)
from .metrics import EvalReport, evaluate_sequence, lmd, ssim
from .topology import FaceTopology, default_topology, load_topology, save_topology

__all__ = [
    "AlignmentDegenerateError", "AudioError", "ColorTransform", "ConfigError", "CylinderRef",
    "DegenerateCylinderError", "EvalReport", "FaceTopology", "FormatError", "LandmarkFrame", "LightParams",
    "ShapeError", "SimilarityTransform", "TalkfaceError", "TextureAtlas", "TrainingError",
    "UndefinedAzimuthError", "cylinder_uv", "default_topology", "estimate_color_transform", "estimate_gain_irls",
    "evaluate_sequence", "fit_reference_cylinder", "lmd", "load_topology", "normalize_pose", "normalize_sequence",
    "normalize_temporal", "read_landmarks", "remove_specularity", "rgb_yuv_convert", "save_topology", "ssim",
    "symmetrize_reference", "umeyama_align", "unroll_texture", "warp_triangles", "write_landmarks",
]
