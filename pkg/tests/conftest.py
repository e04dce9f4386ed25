import numpy as np
import pytest
import torch

from bridgediff.bridge import Adapter, AdapterSpec, LoRAConfig, inject
from bridgediff.denoisers import DenoiserConfig, UNet
from bridgediff.diffusion import NoiseSchedule, make_linear_schedule
from bridgediff.text import build_text_encoder


def custom_schedule(alpha_bars) -> NoiseSchedule:
    """Schedule with prescribed alpha_bar values (test-only construction)."""
    ab = torch.as_tensor(alpha_bars, dtype=torch.float64)
    alphas = ab / torch.cat([torch.ones(1, dtype=torch.float64), ab[:-1]])
    return NoiseSchedule(len(ab), 1.0 - alphas, alphas, ab)


TINY_UNET = DenoiserConfig(kind="unet", base_channels=8, channel_multipliers=(1, 2),
                           cross_dim=16, num_heads=2, resolution=8)


@pytest.fixture
def default_schedule():
    return make_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def tiny_bridged():
    """Smallest full assembly: lm-small + a micro U-Net, rank-2 LoRA."""
    lm = build_text_encoder("lm-small", seed=3, max_len=8)
    vm = UNet(TINY_UNET, seed=5)
    adapter = Adapter(AdapterSpec(64, 32, 16), seed=9)
    return inject(lm, vm, LoRAConfig(rank=2), LoRAConfig(rank=2), adapter, seed=21)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


def seeded_rng(seed=0):
    return np.random.default_rng(seed)
