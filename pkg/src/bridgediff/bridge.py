"""Freeze two backbones, inject LoRA at architecture-specific sites, and
connect them with a two-layer feedforward adapter.

The trainable set of the assembled model is exactly: every LoRA A/B pair plus
the adapter weights. Everything else is bit-frozen and verifiable as such.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fnmatch import fnmatch

import torch
import torch.nn as nn

from .errors import ConfigError, ContractViolation
from .lora import LoRAConv2d, LoRALinear
from .text import TextEncoding, TextEncoder
from .utils import init_parameters

# Injection sites by architecture. Language models and DiT: all linear layers
# of the attention stacks. U-Net: ResBlock convs (incl. channel-matching skip)
# plus self/cross-attention projections. Time-embedding projections excluded.
LM_LORA_PATTERNS = ("blocks.*.attn.*_proj",)
UNET_LORA_PATTERNS = ("*.conv1", "*.conv2", "*.skip", "*.attn.*_proj")
DIT_LORA_PATTERNS = ("*.attn.*_proj", "*.cross.*_proj")


def default_patterns(model) -> tuple:
    if isinstance(model, TextEncoder):
        return LM_LORA_PATTERNS
    kind = getattr(getattr(model, "config", None), "kind", None)
    if kind == "unet":
        return UNET_LORA_PATTERNS
    if kind == "dit":
        return DIT_LORA_PATTERNS
    raise ConfigError(f"no default LoRA patterns for {type(model).__name__}")


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 4
    alpha: float | None = None  # defaults to rank (net delta scale 1)
    target_patterns: tuple = ()

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("LoRA rank must be >= 1")

    @property
    def effective_alpha(self) -> float:
        return self.rank if self.alpha is None else self.alpha


@dataclass(frozen=True)
class AdapterSpec:
    d_in: int
    d_hidden: int
    d_out: int


class Adapter(nn.Module):
    """Two feedforward layers bridging d_L text embeddings to d_V."""

    def __init__(self, spec: AdapterSpec, seed: int = 0, activation: nn.Module | None = None):
        super().__init__()
        self.spec = spec
        self.fc1 = nn.Linear(spec.d_in, spec.d_hidden)
        self.fc2 = nn.Linear(spec.d_hidden, spec.d_out)
        self.act = activation if activation is not None else nn.GELU()
        init_parameters(self, seed)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        if c.shape[-1] != self.spec.d_in:
            raise ContractViolation(
                f"adapter expects input dim {self.spec.d_in}, got {c.shape[-1]}"
            )
        return self.fc2(self.act(self.fc1(c)))


@dataclass(frozen=True)
class InjectionSite:
    name: str          # qualified layer name within lm/vm
    shape: tuple       # base weight shape
    rank: int
    param_count: int


def _match_targets(model: nn.Module, patterns) -> list[tuple[str, nn.Module]]:
    hits = []
    for name, mod in model.named_modules():
        if isinstance(mod, (nn.Linear, nn.Conv2d)) and any(fnmatch(name, p) for p in patterns):
            hits.append((name, mod))
    return hits


def _replace_module(root: nn.Module, name: str, new: nn.Module) -> None:
    parts = name.rsplit(".", 1)
    parent = root.get_submodule(parts[0]) if len(parts) == 2 else root
    leaf = parts[-1]
    if leaf.isdigit():
        parent[int(leaf)] = new
    else:
        setattr(parent, leaf, new)


def _inject_one(model: nn.Module, cfg: LoRAConfig, gen: torch.Generator,
                component: str) -> list[InjectionSite]:
    if getattr(model, "_lora_injected", False):
        raise ConfigError(f"{component} model already carries LoRA (double injection)")
    patterns = cfg.target_patterns or default_patterns(model)
    targets = _match_targets(model, patterns)
    if not targets:
        raise ConfigError(
            f"LoRA patterns {list(patterns)} matched no linear/conv layer in {component}"
        )
    for p in model.parameters():
        p.requires_grad_(False)
    sites = []
    for name, mod in targets:
        wrapper_cls = LoRALinear if isinstance(mod, nn.Linear) else LoRAConv2d
        wrapped = wrapper_cls(mod, cfg.rank, cfg.effective_alpha, gen=gen)
        _replace_module(model, name, wrapped)
        count = wrapped.lora_A.numel() + wrapped.lora_B.numel()
        sites.append(InjectionSite(name, tuple(mod.weight.shape), cfg.rank, count))
    model._lora_injected = True
    return sites


@dataclass
class ParameterReport:
    language_base: int
    vision_base: int
    adapter: int
    language_lora: int
    vision_lora: int

    @property
    def base_total(self):
        return self.language_base + self.vision_base

    @property
    def trainable_total(self):
        return self.adapter + self.language_lora + self.vision_lora

    @property
    def trainable_fraction(self):
        return self.trainable_total / (self.base_total + self.trainable_total)

    def to_text(self) -> str:
        lines = [
            f"language_base={self.language_base}",
            f"vision_base={self.vision_base}",
            f"adapter={self.adapter}",
            f"language_lora={self.language_lora}",
            f"vision_lora={self.vision_lora}",
            f"base_total={self.base_total}",
            f"trainable_total={self.trainable_total}",
            f"trainable_fraction={self.trainable_fraction:.6f}",
        ]
        return "\n".join(lines)


@dataclass
class FrozenReport:
    passed: bool
    mismatches: list = field(default_factory=list)  # (name, max_abs_diff)

    @property
    def max_abs_diff(self):
        return max((d for _, d in self.mismatches), default=0.0)


class BridgedModel(nn.Module):
    """Frozen language + vision backbones with trainable LoRA deltas and adapter."""

    def __init__(self, lm, vm, adapter: Adapter,
                 lm_sites: list[InjectionSite], vm_sites: list[InjectionSite]):
        super().__init__()
        self.lm = lm
        self.vm = vm
        self.adapter = adapter
        self.lm_sites = lm_sites
        self.vm_sites = vm_sites

    # -- text side -----------------------------------------------------
    def encode(self, ids, mask) -> TextEncoding:
        return self.lm.encode(ids, mask)

    def encode_prompt(self, prompt: str) -> TextEncoding:
        return self.lm.encode_prompt(prompt)

    def null_encoding(self) -> TextEncoding:
        return self.lm.null_encoding()

    # -- bridge + vision side -------------------------------------------
    def adapt(self, enc: TextEncoding) -> torch.Tensor:
        return self.adapter(enc.embeddings)

    def predict_eps(self, x_t, t, enc: TextEncoding) -> torch.Tensor:
        return self.vm(x_t, t, self.adapt(enc), enc.mask)

    # -- parameter bookkeeping -------------------------------------------
    def trainable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def snapshot_base(self) -> dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self.named_parameters()
                if not p.requires_grad}

    def site_report(self) -> str:
        lines = []
        for prefix, sites in (("lm", self.lm_sites), ("vm", self.vm_sites)):
            for s in sites:
                lines.append(
                    f"{prefix}.{s.name} -> (shape={s.shape}, r={s.rank}, params={s.param_count})"
                )
        return "\n".join(lines)


def inject(lm, vm, cfg_lm: LoRAConfig, cfg_vm: LoRAConfig, adapter: Adapter,
           seed: int = 0) -> BridgedModel:
    """Freeze both backbones, wrap matched layers with LoRA, attach the adapter."""
    if adapter.spec.d_in != lm.embed_dim:
        raise ConfigError(
            f"adapter d_in {adapter.spec.d_in} != language embed dim {lm.embed_dim}"
        )
    if adapter.spec.d_out != vm.cross_dim:
        raise ConfigError(
            f"adapter d_out {adapter.spec.d_out} != vision cross dim {vm.cross_dim}"
        )
    gen = torch.Generator().manual_seed(seed)
    lm_sites = _inject_one(lm, cfg_lm, gen, "language")
    vm_sites = _inject_one(vm, cfg_vm, gen, "vision")
    return BridgedModel(lm, vm, adapter, lm_sites, vm_sites)


def count_parameters(model: BridgedModel) -> ParameterReport:
    def split(mod):
        base = sum(p.numel() for n, p in mod.named_parameters() if "lora_" not in n)
        lora = sum(p.numel() for n, p in mod.named_parameters() if "lora_" in n)
        return base, lora

    lm_base, lm_lora = split(model.lm)
    vm_base, vm_lora = split(model.vm)
    adapter = sum(p.numel() for p in model.adapter.parameters())
    return ParameterReport(lm_base, vm_base, adapter, lm_lora, vm_lora)


def verify_frozen(before: dict[str, torch.Tensor],
                  after: dict[str, torch.Tensor]) -> FrozenReport:
    """Bit-exact comparison of two base-parameter snapshots."""
    if set(before) != set(after):
        missing = set(before).symmetric_difference(after)
        raise ContractViolation(f"snapshot key mismatch: {sorted(missing)[:5]}")
    mismatches = []
    for name in sorted(before):
        a, b = before[name], after[name]
        if not torch.equal(a, b):
            mismatches.append((name, float((a - b).abs().max())))
    return FrozenReport(passed=not mismatches, mismatches=mismatches)
