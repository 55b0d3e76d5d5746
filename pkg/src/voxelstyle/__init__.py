"""Two-branch hash-grid radiance fields with AdaIN stylization on voxel-grid features."""

from .hash_encoder import HashGridParams, HashGridSpec, encode, encode_backward
from .radiance_model import BranchId, ModelSpec, RadianceModel, full_forward
from .stylizer import (
    Direction,
    FeatureMoments,
    StyleBlend,
    VoxelGridSpec,
    adain,
    adain_blend,
    compute_moments,
    render_stylized,
)
from .trainer import TrainConfig, psnr, train
from .volume_renderer import Camera, RenderConfig, render_image

__version__ = "0.1.0"

__all__ = [
    "BranchId", "Camera", "Direction", "FeatureMoments", "HashGridParams", "HashGridSpec",
    "ModelSpec", "RadianceModel", "RenderConfig", "StyleBlend", "TrainConfig", "VoxelGridSpec",
    "adain", "adain_blend", "compute_moments", "encode", "encode_backward", "full_forward",
    "psnr", "render_image", "render_stylized", "train",
]
