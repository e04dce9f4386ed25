"""Tokenizer, vocabulary, and the three miniature language-model stacks.

Each architecture kind (encoder_only, encoder_decoder, decoder_only) produces
per-position hidden states c of shape [B, L, d] with a validity mask; the
encoder-decoder variant carries a decoder stack for parameter parity with its
full-size counterparts but only its encoder output feeds the bridge.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import torch
import torch.nn as nn

from .errors import ConfigError, ContractViolation
from .layers import Attention, FeedForward
from .utils import init_parameters

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("[PAD]", "[BOS]", "[EOS]", "[UNK]")

ARCH_KINDS = ("encoder_only", "encoder_decoder", "decoder_only")


class Vocabulary:
    """Dense token<->id bijection with the four reserved ids first."""

    def __init__(self, tokens: list[str]):
        if list(tokens[:4]) != list(RESERVED):
            raise ConfigError("vocabulary must start with [PAD],[BOS],[EOS],[UNK]")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.strip() for line in fh if line.strip()])


def default_vocabulary() -> Vocabulary:
    ref = resources.files("bridgediff").joinpath("data/vocab.txt")
    return Vocabulary([ln.strip() for ln in ref.read_text("utf-8").splitlines() if ln.strip()])


def tokenize(vocab: Vocabulary, prompt: str, max_len: int):
    """Lowercase, whitespace-split, wrap BOS..EOS, pad/truncate to max_len.

    Returns (ids, mask) LongTensor/BoolTensor of shape [max_len]; mask is True
    at non-PAD positions.
    """
    words = prompt.lower().split()
    ids = [BOS] + [vocab.id(w) for w in words]
    ids = ids[: max_len - 1] + [EOS]
    mask = [True] * len(ids) + [False] * (max_len - len(ids))
    ids = ids + [PAD] * (max_len - len(ids))
    return torch.tensor(ids, dtype=torch.long), torch.tensor(mask, dtype=torch.bool)


@dataclass(frozen=True)
class TextEncoderConfig:
    arch_kind: str
    num_layers: int
    embed_dim: int
    num_heads: int
    max_len: int
    vocab_size: int

    def __post_init__(self):
        if self.arch_kind not in ARCH_KINDS:
            raise ConfigError(f"unknown arch_kind {self.arch_kind!r}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError("embed_dim must be divisible by num_heads")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")


@dataclass
class TextEncoding:
    """Embedding matrix c with its validity mask. Batched: [B, L, d], [B, L]."""

    embeddings: torch.Tensor
    mask: torch.Tensor


class EncoderBlock(nn.Module):
    """Pre-LN self-attention + feedforward."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = Attention(d, d, d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.ff = FeedForward(d, 4 * d)

    def forward(self, x, key_mask=None, causal=False):
        x = x + self.attn(self.norm1(x), key_mask=key_mask, causal=causal)
        return x + self.ff(self.norm2(x))


class DecoderBlock(nn.Module):
    """Causal self-attention, cross-attention to encoder states, feedforward."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = Attention(d, d, d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.cross = Attention(d, d, d, heads)
        self.norm3 = nn.LayerNorm(d)
        self.ff = FeedForward(d, 4 * d)

    def forward(self, x, enc, enc_mask=None):
        x = x + self.attn(self.norm1(x), causal=True)
        x = x + self.cross(self.norm2(x), enc, key_mask=enc_mask)
        return x + self.ff(self.norm3(x))


class TextEncoder(nn.Module):
    """Miniature language model producing c = f(y)."""

    def __init__(self, config: TextEncoderConfig, vocab: Vocabulary, seed: int = 0):
        super().__init__()
        if config.vocab_size != len(vocab):
            raise ConfigError("config.vocab_size disagrees with the vocabulary")
        self.config = config
        self.vocab = vocab
        d = config.embed_dim
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_len, d)
        self.blocks = nn.ModuleList(
            EncoderBlock(d, config.num_heads) for _ in range(config.num_layers)
        )
        if config.arch_kind == "encoder_decoder":
            self.dec_tok_emb = nn.Embedding(config.vocab_size, d)
            self.dec_blocks = nn.ModuleList(
                DecoderBlock(d, config.num_heads) for _ in range(config.num_layers)
            )
        init_parameters(self, seed)
        self._null_cache = None

    @property
    def embed_dim(self):
        return self.config.embed_dim

    def encode(self, ids: torch.Tensor, mask: torch.Tensor) -> TextEncoding:
        """Final-layer hidden states for a [B, L] token batch."""
        if ids.dim() == 1:
            ids, mask = ids[None], mask[None]
        if ids.shape[1] > self.config.max_len:
            raise ContractViolation(
                f"sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}"
            )
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None]
        causal = self.config.arch_kind == "decoder_only"
        key_mask = None if causal else mask
        for block in self.blocks:
            x = block(x, key_mask=key_mask, causal=causal)
        x = x * mask[..., None].to(x.dtype)
        return TextEncoding(x, mask)

    def encode_prompt(self, prompt: str) -> TextEncoding:
        ids, mask = tokenize(self.vocab, prompt, self.config.max_len)
        return self.encode(ids, mask)

    def null_encoding(self) -> TextEncoding:
        """Encoding of the empty prompt; cached while the model is in eval mode."""
        if self.training:
            self._null_cache = None
            return self.encode_prompt("")
        if self._null_cache is None:
            with torch.no_grad():
                self._null_cache = self.encode_prompt("")
        return self._null_cache

    def train(self, mode: bool = True):
        self._null_cache = None
        return super().train(mode)


LM_PRESETS = {
    "lm-small": dict(num_layers=2, embed_dim=64, num_heads=4),
    "lm-base": dict(num_layers=4, embed_dim=128, num_heads=4),
    "lm-large": dict(num_layers=6, embed_dim=192, num_heads=6),
}

DEFAULT_MAX_LEN = 16


def build_text_encoder(
    preset: str,
    arch_kind: str = "encoder_only",
    vocab: Vocabulary | None = None,
    seed: int = 0,
    max_len: int = DEFAULT_MAX_LEN,
) -> TextEncoder:
    if preset not in LM_PRESETS:
        raise ConfigError(f"unknown language preset {preset!r}; have {sorted(LM_PRESETS)}")
    vocab = vocab or default_vocabulary()
    cfg = TextEncoderConfig(
        arch_kind=arch_kind, max_len=max_len, vocab_size=len(vocab), **LM_PRESETS[preset]
    )
    return TextEncoder(cfg, vocab, seed=seed)
