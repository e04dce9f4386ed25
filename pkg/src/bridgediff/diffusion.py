"""Noise schedules, forward noising, the DDPM objective, DDIM sampling and CFG.

Timesteps are 1-based: t runs over 1..T, and t=0 denotes the clean-data
boundary with alpha_bar(0) == 1. Schedule tables are kept in float64 so the
running-product invariant holds to 1e-12; model-facing coefficients are cast
to the dtype of the arrays they scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/alpha_bar tables for a T-step diffusion."""

    num_steps: int
    betas: torch.Tensor       # float64, shape [T]
    alphas: torch.Tensor      # float64, shape [T]
    alpha_bars: torch.Tensor  # float64, shape [T]

    def alpha_bar(self, t):
        """alpha_bar at timestep t (int or integer tensor); alpha_bar(0) = 1."""
        if torch.is_tensor(t):
            if (t < 0).any() or (t > self.num_steps).any():
                raise ContractViolation(f"timestep out of range 0..{self.num_steps}")
            padded = torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bars])
            return padded[t.long()]
        if not 0 <= t <= self.num_steps:
            raise ContractViolation(f"timestep {t} out of range 0..{self.num_steps}")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    if not (0.0 <= beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"betas must satisfy 0 <= beta_start <= beta_end < 1, "
            f"got [{beta_start}, {beta_end}]"
        )
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    return NoiseSchedule(T, betas, alphas, alpha_bars)


def _gather_coeff(sched: NoiseSchedule, t, ref: torch.Tensor) -> torch.Tensor:
    """alpha_bar(t) broadcastable against ref (per-item when t is batched)."""
    ab = sched.alpha_bar(t)
    if torch.is_tensor(ab) and ab.dim() > 0:
        ab = ab.view(-1, *([1] * (ref.dim() - 1)))
        return ab.to(ref.dtype)
    return torch.as_tensor(ab, dtype=ref.dtype)


def forward_noise(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Closed-form marginal x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    if x0.shape != eps.shape:
        raise ContractViolation(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    ab = _gather_coeff(sched, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def ddpm_loss(eps_pred: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements (the epsilon-prediction objective)."""
    if eps_pred.shape != eps.shape:
        raise ContractViolation(
            f"eps_pred shape {tuple(eps_pred.shape)} != eps shape {tuple(eps.shape)}"
        )
    return torch.mean((eps_pred - eps) ** 2)


def ddim_step(
    x_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """One reverse step t -> t_prev. Deterministic for eta=0."""
    if t_prev >= t:
        raise ContractViolation(f"ddim_step requires t_prev < t, got {t_prev} >= {t}")
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    x0_hat = (x_t - (1.0 - ab_t) ** 0.5 * eps_pred) / ab_t ** 0.5
    if eta == 0.0:
        return ab_prev ** 0.5 * x0_hat + (1.0 - ab_prev) ** 0.5 * eps_pred
    sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t)) ** 0.5 * (1.0 - ab_t / ab_prev) ** 0.5
    dir_coeff = max(1.0 - ab_prev - sigma**2, 0.0) ** 0.5
    noise = torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype, device=x_t.device)
    return ab_prev ** 0.5 * x0_hat + dir_coeff * eps_pred + sigma * noise


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, s: float) -> torch.Tensor:
    """Classifier-free guidance: eps_u + s * (eps_c - eps_u)."""
    if eps_uncond.shape != eps_cond.shape:
        raise ContractViolation("cfg_combine: shape mismatch between branches")
    # exact endpoints: floating-point u + s*(c-u) would not return c bitwise
    if s == 0.0:
        return eps_uncond.clone()
    if s == 1.0:
        return eps_cond.clone()
    return eps_uncond + s * (eps_cond - eps_uncond)


@dataclass(frozen=True)
class SampleConfig:
    num_inference_steps: int = 50
    cfg_scale: float = 7.5
    eta: float = 0.0
    seed: int = 0
    resolution: int = 32

    def __post_init__(self):
        if self.num_inference_steps < 1:
            raise ConfigError("num_inference_steps must be positive")
        if self.cfg_scale < 0:
            raise ConfigError("cfg_scale must be >= 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.resolution < 1:
            raise ConfigError("resolution must be positive")


def inference_timesteps(T: int, num_steps: int) -> list[int]:
    """Strictly decreasing uniform-stride subsequence of 1..T ending above 0."""
    if num_steps > T:
        raise ConfigError(f"num_inference_steps {num_steps} exceeds T={T}")
    if T % num_steps != 0:
        raise ConfigError(f"num_inference_steps {num_steps} must divide T={T} evenly")
    stride = T // num_steps
    return list(range(T, 0, -stride))


def sample(model, cond, uncond, cfg: SampleConfig, sched: NoiseSchedule,
           in_channels: int = 3) -> torch.Tensor:
    """Run the full DDIM chain with classifier-free guidance.

    `model` needs a `predict_eps(x_t, t, encoding)` method; `cond`/`uncond`
    are TextEncodings from the model's own language component. Output is a
    [1, C, R, R] image clamped to [-1, 1], bit-stable for a fixed seed when
    eta=0.
    """
    gen = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn(1, in_channels, cfg.resolution, cfg.resolution, generator=gen)
    ts = inference_timesteps(sched.num_steps, cfg.num_inference_steps)
    prevs = ts[1:] + [0]
    with torch.no_grad():
        for t, t_prev in zip(ts, prevs):
            tt = torch.full((x.shape[0],), t, dtype=torch.long)
            eps_c = model.predict_eps(x, tt, cond)
            eps_u = model.predict_eps(x, tt, uncond)
            eps = cfg_combine(eps_u, eps_c, cfg.cfg_scale)
            # Clip the implied x0 to the valid image range and fold the clip
            # back into eps. Near t=T, alpha_bar is tiny and small prediction
            # errors blow up the implied x0; without this the chain diverges.
            ab_t = sched.alpha_bar(t)
            x0_hat = (x - (1.0 - ab_t) ** 0.5 * eps) / ab_t ** 0.5
            clipped = x0_hat.clamp(-1.0, 1.0)
            if not torch.equal(clipped, x0_hat):
                eps = (x - ab_t ** 0.5 * clipped) / (1.0 - ab_t) ** 0.5
            x = ddim_step(x, eps, t, t_prev, sched, eta=cfg.eta, rng=gen)
    return x.clamp(-1.0, 1.0)
