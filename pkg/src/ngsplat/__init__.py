"""Desk-scale differentiable Gaussian splatting with noise-guided surface
opacity and the surface opacity score (SOS) benchmark."""

from .benchmark import MetricsReport, evaluate, insert_infill, recolor, sos, transmittance_map
from .core import (
    Camera,
    Dataset,
    FreezeFlags,
    Gaussian3D,
    GaussianSet,
    OccupancyGrid,
    RenderOutput,
    Role,
    TrainConfig,
    View,
)
from .datasets import load_dataset, save_dataset, synth_scene
from .errors import NgsplatError
from .losses import alpha_consistency_loss, photometric_loss, psnr, ssim
from .ngs import convex_hull, depth_prune, erode, finetune_noise, multiscale_fill, voxelize_hull
from .plyio import ply_read, ply_write
from .rasterizer import RenderOptions, decompose_pixel, render, render_backward
from .trainer import TrainResult, initialize_from_masks, train

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "Dataset",
    "FreezeFlags",
    "Gaussian3D",
    "GaussianSet",
    "MetricsReport",
    "NgsplatError",
    "OccupancyGrid",
    "RenderOptions",
    "RenderOutput",
    "Role",
    "TrainConfig",
    "TrainResult",
    "View",
    "alpha_consistency_loss",
    "convex_hull",
    "decompose_pixel",
    "depth_prune",
    "erode",
    "evaluate",
    "finetune_noise",
    "initialize_from_masks",
    "insert_infill",
    "load_dataset",
    "multiscale_fill",
    "photometric_loss",
    "ply_read",
    "ply_write",
    "psnr",
    "recolor",
    "render",
    "render_backward",
    "save_dataset",
    "sos",
    "ssim",
    "synth_scene",
    "train",
    "transmittance_map",
    "voxelize_hull",
]
