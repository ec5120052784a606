"""Analytic FLOPs accounting for attention-vs-convolution U-Net budgets.

Conventions (also emitted in the report header):
  - one multiply-add counts as 2 FLOPs;
  - softmax, normalization, and activation costs are excluded (dominated
    by the matmul terms at every size this report covers);
  - attention over N tokens at C channels costs 8*N*C^2 (Q, K, V, output
    projections) + 4*N^2*C (QK^T and AV);
  - a k x k convolution at spatial side s costs 2*s^2*c_in*c_out*k^2.

The shipped reference architecture approximates a DDPM-style U-Net; the
exact backbone behind published GFLOPs breakdowns is not reproduced here,
so only orderings (share, ratio growth with resolution) are asserted
against it, never absolute numbers.
"""

import importlib.resources
import json
from dataclasses import dataclass

from .errors import ConfigError

FLOPS_CONVENTION = "multiply-add = 2 FLOPs; softmax/normalization excluded"

_STAGE_KEYS = {"downsample", "channels", "res_blocks", "attention_blocks"}
_ARCH_KEYS = {
    "name",
    "note",
    "kernel",
    "image_channels",
    "time_embed_dim",
    "mirror_decoder",
    "stages",
}


def flops_attention(n_tokens: int, channels: int) -> int:
    """Self-attention FLOPs: QKVO projections plus the two N^2 matmuls."""
    if n_tokens <= 0 or channels <= 0:
        raise ConfigError(f"attention sizes must be positive, got N={n_tokens} C={channels}")
    return 8 * n_tokens * channels * channels + 4 * n_tokens * n_tokens * channels


def flops_conv(side: int, c_in: int, c_out: int, kernel: int = 3) -> int:
    """Conv FLOPs at output side `side` (same-padding, stride 1)."""
    if min(side, c_in, c_out, kernel) <= 0:
        raise ConfigError(f"conv sizes must be positive, got {side=} {c_in=} {c_out=} {kernel=}")
    return 2 * side * side * c_in * c_out * kernel * kernel


@dataclass(frozen=True)
class FlopsReport:
    resolution: int
    attention: int
    convolution: int  # stem in/out convs
    resnet: int       # residual-block convs
    other: int        # timestep-embedding projections

    @property
    def total(self) -> int:
        return self.attention + self.convolution + self.resnet + self.other

    @property
    def attention_share(self) -> float:
        return self.attention / self.total if self.total else 0.0

    @property
    def attention_to_conv_ratio(self) -> float:
        conv_like = self.convolution + self.resnet
        return self.attention / conv_like if conv_like else float("inf")

    def as_row(self) -> dict:
        return {
            "resolution": self.resolution,
            "attention_flops": self.attention,
            "convolution_flops": self.convolution,
            "resnet_flops": self.resnet,
            "other_flops": self.other,
            "attention_share": self.attention_share,
            "attention_to_conv_ratio": self.attention_to_conv_ratio,
        }


def _check_int(value, name, minimum):
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def validate_arch(arch: dict) -> dict:
    if not isinstance(arch, dict):
        raise ConfigError(f"arch config must be an object, got {type(arch).__name__}")
    unknown = set(arch) - _ARCH_KEYS
    if unknown:
        raise ConfigError(f"unknown arch config keys: {sorted(unknown)}")
    stages = arch.get("stages")
    if not isinstance(stages, list) or not stages:
        raise ConfigError("arch config needs a nonempty 'stages' list")
    for i, stage in enumerate(stages):
        if not isinstance(stage, dict):
            raise ConfigError(f"stage {i} must be an object")
        unknown = set(stage) - _STAGE_KEYS
        if unknown:
            raise ConfigError(f"stage {i} has unknown keys: {sorted(unknown)}")
        _check_int(stage.get("downsample"), f"stage {i} downsample", 1)
        _check_int(stage.get("channels"), f"stage {i} channels", 1)
        _check_int(stage.get("res_blocks", 0), f"stage {i} res_blocks", 0)
        _check_int(stage.get("attention_blocks", 0), f"stage {i} attention_blocks", 0)
    _check_int(arch.get("kernel", 3), "kernel", 1)
    _check_int(arch.get("image_channels", 0), "image_channels", 0)
    _check_int(arch.get("time_embed_dim", 0), "time_embed_dim", 0)
    return arch


def unet_flops_breakdown(arch: dict, resolution: int) -> FlopsReport:
    """Sum per-kind FLOPs for `arch` run at `resolution` x `resolution`.

    Every stage's downsample factor must divide the resolution; the decoder
    mirrors the encoder when `mirror_decoder` is set (skip-connection
    channel growth is ignored, which undercounts decoder convs slightly).
    """
    validate_arch(arch)
    _check_int(resolution, "resolution", 1)
    kernel = arch.get("kernel", 3)
    mirror = 2 if arch.get("mirror_decoder", True) else 1
    ted = arch.get("time_embed_dim", 0)
    attention = resnet = other = 0
    for i, stage in enumerate(arch["stages"]):
        ds = stage["downsample"]
        if resolution % ds != 0 or resolution < ds:
            raise ConfigError(f"stage {i} downsample {ds} does not divide resolution {resolution}")
        side = resolution // ds
        c = stage["channels"]
        nb = stage.get("res_blocks", 0)
        na = stage.get("attention_blocks", 0)
        resnet += mirror * nb * 2 * flops_conv(side, c, c, kernel)
        if na:
            attention += mirror * na * flops_attention(side * side, c)
        if ted and nb:
            other += mirror * nb * 2 * ted * c
    convolution = 0
    img_c = arch.get("image_channels", 0)
    if img_c:
        stem_c = arch["stages"][0]["channels"]
        convolution = flops_conv(resolution, img_c, stem_c, kernel) + flops_conv(
            resolution, stem_c, img_c, kernel
        )
    return FlopsReport(
        resolution=resolution,
        attention=attention,
        convolution=convolution,
        resnet=resnet,
        other=other,
    )


def reference_arch() -> dict:
    """The bundled DDPM-style approximation used by the `flops` subcommand."""
    text = importlib.resources.files("geoedit.data").joinpath("ddpm_unet_approx.json").read_text()
    return validate_arch(json.loads(text))


def load_arch_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            arch = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"arch config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"arch config {path} is not valid JSON: {exc}") from None
    return validate_arch(arch)
