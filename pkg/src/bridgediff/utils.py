"""Deterministic initialization and lossless image I/O helpers."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
from PIL import Image


def init_parameters(module: nn.Module, seed: int) -> None:
    """Reinitialize every parameter of `module` deterministically from `seed`.

    Parameters are visited in sorted-name order with a single generator, so
    the resulting weights depend only on the seed and the set of parameter
    shapes, not on construction order. Conventions: fan-in-scaled normals for
    linear/conv weights, N(0, 0.02) for embeddings and free parameters, ones
    and zeros for norm layers, zeros for biases.
    """
    gen = torch.Generator().manual_seed(seed)
    kinds = {}
    for mod_name, mod in module.named_modules():
        for p_name, _ in mod.named_parameters(recurse=False):
            full = f"{mod_name}.{p_name}" if mod_name else p_name
            kinds[full] = (type(mod), p_name)
    with torch.no_grad():
        for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            mod_type, p_name = kinds[name]
            if issubclass(mod_type, (nn.LayerNorm, nn.GroupNorm)):
                p.fill_(1.0 if p_name == "weight" else 0.0)
            elif p_name == "bias":
                p.zero_()
            elif issubclass(mod_type, nn.Embedding):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)
            elif issubclass(mod_type, (nn.Linear, nn.Conv2d)):
                fan_in = int(np.prod(p.shape[1:]))
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * fan_in**-0.5)
            else:
                # free tensors (positional tables etc.)
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)


def to_uint8(img: np.ndarray | torch.Tensor) -> np.ndarray:
    """[-1,1] float CHW -> uint8 HWC via affine map with round-half-even."""
    if torch.is_tensor(img):
        img = img.detach().cpu().numpy()
    arr = np.rint((np.clip(img, -1.0, 1.0) + 1.0) * 127.5)
    return arr.astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """uint8 HWC -> [-1,1] float32 CHW (inverse of to_uint8 up to quantization)."""
    return (arr.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def save_image(img, path) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    return from_uint8(np.asarray(Image.open(path).convert("RGB")))


def image_grid(images, cols: int = 8, pad: int = 2) -> np.ndarray:
    """Tile a list of [-1,1] CHW images into one contact-sheet array."""
    arrs = [to_uint8(im) for im in images]
    h, w, _ = arrs[0].shape
    rows = (len(arrs) + cols - 1) // cols
    sheet = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), 32, np.uint8)
    for i, a in enumerate(arrs):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        sheet[y:y + h, x:x + w] = a
    return sheet
