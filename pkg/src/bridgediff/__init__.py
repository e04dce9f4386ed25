"""Desk-scale text-to-image diffusion with frozen backbones bridged by
low-rank adapters and a feedforward adapter."""

from .bridge import (
    Adapter,
    AdapterSpec,
    BridgedModel,
    LoRAConfig,
    ParameterReport,
    count_parameters,
    inject,
    verify_frozen,
)
from .config import RunConfig, load_config, write_config
from .denoisers import DenoiserConfig, DiT, UNet, build_denoiser
from .diffusion import (
    NoiseSchedule,
    SampleConfig,
    cfg_combine,
    ddim_step,
    ddpm_loss,
    forward_noise,
    make_linear_schedule,
    sample,
)
from .errors import CheckpointError, ConfigError, ContractViolation, NumericalError
from .evalmetrics import REJECT, alignment_score, classify_image, frechet_distance
from .scenes import SceneSpec, caption_for, generate_scene, parse_caption, render
from .text import TextEncoder, TextEncoding, Vocabulary, build_text_encoder, tokenize
from .training import Trainer, build_bridged_model, train_step

__all__ = [
    "Adapter", "AdapterSpec", "BridgedModel", "LoRAConfig", "ParameterReport",
    "count_parameters", "inject", "verify_frozen",
    "RunConfig", "load_config", "write_config",
    "DenoiserConfig", "DiT", "UNet", "build_denoiser",
    "NoiseSchedule", "SampleConfig", "cfg_combine", "ddim_step", "ddpm_loss",
    "forward_noise", "make_linear_schedule", "sample",
    "CheckpointError", "ConfigError", "ContractViolation", "NumericalError",
    "REJECT", "alignment_score", "classify_image", "frechet_distance",
    "SceneSpec", "caption_for", "generate_scene", "parse_caption", "render",
    "TextEncoder", "TextEncoding", "Vocabulary", "build_text_encoder", "tokenize",
    "Trainer", "build_bridged_model", "train_step",
]

__version__ = "0.1.0"
