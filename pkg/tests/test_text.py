import math

import pathlib

import numpy as np
import pytest
import torch

from bridgediff.errors import ConfigError, ContractViolation
from bridgediff.text import (
    BOS, EOS, PAD, TextEncoder, TextEncoderConfig, Vocabulary,
    build_text_encoder, default_vocabulary, tokenize,
)

REG = np.load(str(pathlib.Path(__file__).parent / "data" / "regression.npz"))


@pytest.fixture(scope="module")
def vocab():
    return default_vocabulary()


class TestVocabulary:
    def test_reserved_ids(self, vocab):
        assert vocab.id("[PAD]") == PAD == 0
        assert vocab.id("[BOS]") == BOS == 1
        assert vocab.id("[EOS]") == EOS == 2
        assert vocab.id("[UNK]") == 3

    def test_bijection_over_words(self, vocab):
        assert len(set(vocab.id_to_token)) == len(vocab)
        for i, tok in enumerate(vocab.id_to_token):
            assert vocab.token_to_id[tok] == i

    def test_rejects_bad_reserved_order(self):
        with pytest.raises(ConfigError):
            Vocabulary(["[BOS]", "[PAD]", "[EOS]", "[UNK]", "a"])


class TestTokenize:
    def test_empty_prompt(self, vocab):
        ids, mask = tokenize(vocab, "", 8)
        assert ids.tolist() == [BOS, EOS, PAD, PAD, PAD, PAD, PAD, PAD]
        assert mask.tolist() == [True, True] + [False] * 6

    def test_shipped_vocab_lookup(self, vocab):
        ids, _ = tokenize(vocab, "a red circle", 16)
        expected = [BOS, vocab.id("a"), vocab.id("red"), vocab.id("circle"), EOS]
        assert ids.tolist()[:5] == expected
        assert ids.tolist()[:5] == [1, 4, 5, 9, 2]  # frozen from the committed file
        assert ids.tolist()[5:] == [PAD] * 11

    def test_unknown_maps_to_unk(self, vocab):
        ids, _ = tokenize(vocab, "a zorp circle", 16)
        assert ids.tolist()[2] == 3

    def test_deterministic(self, vocab):
        a = tokenize(vocab, "a red circle above a blue square", 16)
        b = tokenize(vocab, "a red circle above a blue square", 16)
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])

    def test_truncation(self, vocab):
        ids, mask = tokenize(vocab, " ".join(["a"] * 30), 8)
        assert len(ids) == 8 and ids[-1] == EOS and mask.all()


def _manual_layer_norm(x, ln):
    mu = x.mean(-1, keepdim=True)
    var = x.var(-1, keepdim=True, unbiased=False)
    return (x - mu) / torch.sqrt(var + ln.eps) * ln.weight + ln.bias


def _manual_attention(attn, x, mask):
    # straight-line reference: per-head loops, no fused ops
    L, d = x.shape
    h, dh = attn.num_heads, attn.d_head
    q = x @ attn.q_proj.weight.T + attn.q_proj.bias
    k = x @ attn.k_proj.weight.T + attn.k_proj.bias
    v = x @ attn.v_proj.weight.T + attn.v_proj.bias
    out = torch.zeros(L, d)
    for head in range(h):
        qs = q[:, head * dh:(head + 1) * dh]
        ks = k[:, head * dh:(head + 1) * dh]
        vs = v[:, head * dh:(head + 1) * dh]
        for i in range(L):
            scores = torch.tensor([
                float(qs[i] @ ks[j]) / math.sqrt(dh) if mask[j] else -math.inf
                for j in range(L)
            ])
            w = torch.softmax(scores, dim=0)
            out[i, head * dh:(head + 1) * dh] = sum(w[j] * vs[j] for j in range(L))
    return out @ attn.out_proj.weight.T + attn.out_proj.bias


def _reference_encode(model, ids, mask):
    x = model.tok_emb.weight[ids] + model.pos_emb.weight[: len(ids)]
    for block in model.blocks:
        x = x + _manual_attention(block.attn, _manual_layer_norm(x, block.norm1), mask)
        h = _manual_layer_norm(x, block.norm2)
        h = h @ block.ff.ff1.weight.T + block.ff.ff1.bias
        h = 0.5 * h * (1.0 + torch.erf(h / math.sqrt(2.0)))
        x = x + h @ block.ff.ff2.weight.T + block.ff.ff2.bias
    return x * mask[:, None]


class TestEncode:
    def test_zero_layer_degenerate(self, vocab):
        cfg = TextEncoderConfig("encoder_only", 0, 32, 4, 8, len(vocab))
        model = TextEncoder(cfg, vocab, seed=0)
        ids, mask = tokenize(vocab, "a red circle", 8)
        enc = model.encode(ids, mask)
        pos = torch.arange(8)
        expected = (model.tok_emb(ids) + model.pos_emb(pos)) * mask[:, None]
        assert torch.equal(enc.embeddings[0], expected)

    def test_reference_forward_oracle(self, vocab):
        model = build_text_encoder("lm-small", seed=7)
        ids, mask = tokenize(vocab, "a red circle above a blue square", 16)
        with torch.no_grad():
            enc = model.encode(ids, mask)
            ref = _reference_encode(model, ids, mask)
        assert (enc.embeddings[0] - ref).abs().max() < 1e-5

    def test_regression_tensor(self, vocab):
        model = build_text_encoder("lm-small", seed=7)
        ids, mask = tokenize(vocab, "a red circle above a blue square", 16)
        with torch.no_grad():
            enc = model.encode(ids, mask)
        assert np.allclose(enc.embeddings.numpy(), REG["text"], atol=1e-6)

    def test_too_long_rejected(self, vocab):
        model = build_text_encoder("lm-small", max_len=8)
        with pytest.raises(ContractViolation):
            model.encode(torch.zeros(16, dtype=torch.long), torch.ones(16, dtype=torch.bool))

    def test_decoder_causality(self, vocab):
        model = build_text_encoder("lm-small", arch_kind="decoder_only", seed=1)
        a = model.encode_prompt("a red circle")
        b = model.encode_prompt("a red circle above a blue square")
        # shared 4-word prefix: BOS + 3 tokens agree exactly
        with torch.no_grad():
            assert torch.equal(a.embeddings[0, :4], b.embeddings[0, :4])

    def test_encoder_decoder_exposes_encoder_stack(self, vocab):
        model = build_text_encoder("lm-small", arch_kind="encoder_decoder", seed=1)
        assert len(model.dec_blocks) == 2  # decoder exists for parameter parity
        enc = model.encode_prompt("a red circle")
        assert enc.embeddings.shape == (1, 16, 64)

    def test_mask_discipline(self, vocab):
        for arch in ("encoder_only", "decoder_only", "encoder_decoder"):
            model = build_text_encoder("lm-small", arch_kind=arch, seed=2)
            ids, mask = tokenize(vocab, "a red circle", 16)
            altered = ids.clone()
            altered[mask == 0] = vocab.id("blue")
            with torch.no_grad():
                a = model.encode(ids, mask)
                b = model.encode(altered, mask)
            assert torch.equal(a.embeddings[0][mask], b.embeddings[0][mask]), arch

    def test_permutation_equivariance_without_positions(self, vocab):
        model = build_text_encoder("lm-small", seed=3, max_len=6)
        with torch.no_grad():
            model.pos_emb.weight.zero_()
        ids = torch.tensor([4, 5, 9, 6, 11, 7])
        mask = torch.ones(6, dtype=torch.bool)
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        with torch.no_grad():
            enc = model.encode(ids, mask)
            enc_p = model.encode(ids[perm], mask)
        assert (enc.embeddings[0][perm] - enc_p.embeddings[0]).abs().max() < 1e-6


class TestNullEncoding:
    def test_equals_empty_prompt(self):
        model = build_text_encoder("lm-small", seed=4).eval()
        with torch.no_grad():
            direct = model.encode_prompt("")
        null = model.null_encoding()
        assert torch.equal(null.embeddings, direct.embeddings)

    def test_cached_and_stable(self):
        model = build_text_encoder("lm-small", seed=4).eval()
        a = model.null_encoding()
        b = model.null_encoding()
        assert a is b
        # switching back to train mode invalidates the cache
        model.train()
        assert model._null_cache is None


class TestConfigValidation:
    def test_bad_arch(self, vocab):
        with pytest.raises(ConfigError):
            TextEncoderConfig("bidirectional", 2, 64, 4, 16, len(vocab))

    def test_head_divisibility(self, vocab):
        with pytest.raises(ConfigError):
            TextEncoderConfig("encoder_only", 2, 65, 4, 16, len(vocab))
