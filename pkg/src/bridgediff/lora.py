"""Low-rank adaptation wrappers for linear and convolutional layers.

A wrapped layer computes base(x) + (alpha/r) * B(A(x)). B starts at exactly
zero so the delta path contributes nothing until trained; the base weights
are frozen at injection time and are never touched by the delta path.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

DEFAULT_A_STD = 0.02


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float,
                 gen: torch.Generator | None = None):
        super().__init__()
        if rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scale = alpha / rank
        dtype = base.weight.dtype
        a = torch.randn(rank, base.in_features, generator=gen, dtype=dtype) * DEFAULT_A_STD
        self.lora_A = nn.Parameter(a)
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank, dtype=dtype))

    def forward(self, x):
        return self.base(x) + self.scale * F.linear(F.linear(x, self.lora_A), self.lora_B)

    def delta_weight(self) -> torch.Tensor:
        """(alpha/r) * B @ A, foldable into the base weight."""
        return self.scale * self.lora_B @ self.lora_A

    def merged(self) -> nn.Linear:
        """A fresh unwrapped Linear with the delta folded in (test utility)."""
        out = nn.Linear(self.base.in_features, self.base.out_features,
                        bias=self.base.bias is not None)
        with torch.no_grad():
            out.weight.copy_(self.base.weight + self.delta_weight())
            if self.base.bias is not None:
                out.bias.copy_(self.base.bias)
        return out


class LoRAConv2d(nn.Module):
    """Delta path: k x k conv to r channels (A) then 1x1 conv to c_out (B)."""

    def __init__(self, base: nn.Conv2d, rank: int, alpha: float,
                 gen: torch.Generator | None = None):
        super().__init__()
        if rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scale = alpha / rank
        c_in = base.in_channels
        k = base.kernel_size
        dtype = base.weight.dtype
        a = torch.randn(rank, c_in, *k, generator=gen, dtype=dtype) * DEFAULT_A_STD
        self.lora_A = nn.Parameter(a)
        self.lora_B = nn.Parameter(torch.zeros(base.out_channels, rank, 1, 1, dtype=dtype))

    def forward(self, x):
        mid = F.conv2d(x, self.lora_A, stride=self.base.stride,
                       padding=self.base.padding, dilation=self.base.dilation)
        return self.base(x) + self.scale * F.conv2d(mid, self.lora_B)

    def delta_weight(self) -> torch.Tensor:
        co, r = self.lora_B.shape[:2]
        flat_a = self.lora_A.view(r, -1)
        delta = self.scale * self.lora_B.view(co, r) @ flat_a
        return delta.view(co, *self.lora_A.shape[1:])


def lora_param_count(module) -> int:
    return module.lora_A.numel() + module.lora_B.numel()
