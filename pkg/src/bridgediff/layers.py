"""Attention primitives and timestep embeddings shared by all model stacks."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import ContractViolation


def timestep_embedding(t, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Sinusoidal embedding, interleaved sin/cos at geometric frequencies.

    t may be an int or a 1-D integer tensor; returns [dim] or [B, dim].
    t=0 yields all-zero sin slots and all-one cos slots.
    """
    if dim % 2 != 0:
        raise ContractViolation(f"timestep embedding dim must be even, got {dim}")
    scalar = not torch.is_tensor(t)
    tt = torch.as_tensor([t] if scalar else t, dtype=torch.float64)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    phase = tt[:, None] * freqs[None, :]
    out = torch.empty(tt.shape[0], dim, dtype=torch.float64)
    out[:, 0::2] = torch.sin(phase)
    out[:, 1::2] = torch.cos(phase)
    out = out.to(dtype)
    return out[0] if scalar else out


def scaled_dot_attention(q, k, v, key_mask=None, causal=False):
    """softmax(q k^T / sqrt(d_head)) v over the last two dims.

    q: [..., Nq, dh]; k, v: [..., Nk, dh]; key_mask: [B, Nk] bool, True = keep.
    Returns (mix, weights).
    """
    scores = q @ k.transpose(-1, -2) * q.shape[-1] ** -0.5
    if key_mask is not None:
        expand = key_mask.view(key_mask.shape[0], *([1] * (scores.dim() - 2)), -1)
        scores = scores.masked_fill(~expand, float("-inf"))
    if causal:
        nq, nk = scores.shape[-2], scores.shape[-1]
        tri = torch.ones(nq, nk, dtype=torch.bool).tril()
        scores = scores.masked_fill(~tri, float("-inf"))
    weights = scores.softmax(dim=-1)
    return weights @ v, weights


class Attention(nn.Module):
    """Multi-head attention with separate query and key/value input dims.

    Self-attention when forward() is given one stream, cross-attention when
    given an external key/value stream. All four projections are plain
    nn.Linear so they are LoRA-injectable by name (*_proj).
    """

    def __init__(self, d_q_in: int, d_kv_in: int, d_model: int, num_heads: int):
        super().__init__()
        if d_model % num_heads != 0:
            raise ContractViolation(f"d_model {d_model} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.q_proj = nn.Linear(d_q_in, d_model)
        self.k_proj = nn.Linear(d_kv_in, d_model)
        self.v_proj = nn.Linear(d_kv_in, d_model)
        self.out_proj = nn.Linear(d_model, d_q_in)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.num_heads, self.d_head).transpose(1, 2)

    def forward(self, q_in, kv_in=None, key_mask=None, causal=False):
        if kv_in is None:
            kv_in = q_in
        q = self._split(self.q_proj(q_in))
        k = self._split(self.k_proj(kv_in))
        v = self._split(self.v_proj(kv_in))
        mix, _ = scaled_dot_attention(q, k, v, key_mask=key_mask, causal=causal)
        b, _, n, _ = mix.shape
        mix = mix.transpose(1, 2).reshape(b, n, self.num_heads * self.d_head)
        return self.out_proj(mix)


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.ff1 = nn.Linear(d, hidden)
        self.ff2 = nn.Linear(hidden, d)
        self.act = nn.GELU()

    def forward(self, x):
        return self.ff2(self.act(self.ff1(x)))
