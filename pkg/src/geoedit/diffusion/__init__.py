"""Toy diffusion stack: schedule, synthetic data, denoiser, edits, sampling."""

from .dataset import (
    IMAGE_SIZE,
    Sample,
    SyntheticDataset,
    paired_brightness_dataset,
    render_shape,
)
from .denoiser import (
    DenoiserModel,
    DenoiserTrainConfig,
    ToyDenoiser,
    baseline_denoising_loss,
    heldout_denoising_loss,
    noised_batch,
    np_conv2d,
    train_denoiser,
)
from .editing import (
    EditTrainConfig,
    GeodesicEditor,
    TangentHead,
    masked_mean_probe,
    mean_offset_norm,
    train_edit_module,
)
from .sampler import (
    EditConfig,
    InversionResult,
    ddim_generate,
    ddim_invert,
    edit_image,
    recon_grid,
    reconstruct,
)
from .schedule import T_MAX, NoiseSchedule, timestep_embedding

__all__ = [
    "IMAGE_SIZE",
    "T_MAX",
    "DenoiserModel",
    "DenoiserTrainConfig",
    "EditConfig",
    "EditTrainConfig",
    "GeodesicEditor",
    "InversionResult",
    "NoiseSchedule",
    "Sample",
    "SyntheticDataset",
    "TangentHead",
    "ToyDenoiser",
    "baseline_denoising_loss",
    "ddim_generate",
    "ddim_invert",
    "edit_image",
    "heldout_denoising_loss",
    "masked_mean_probe",
    "mean_offset_norm",
    "noised_batch",
    "np_conv2d",
    "paired_brightness_dataset",
    "recon_grid",
    "reconstruct",
    "render_shape",
    "timestep_embedding",
    "train_denoiser",
    "train_edit_module",
]
