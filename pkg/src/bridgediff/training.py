"""Model assembly and the bridged training loop.

Only the LoRA deltas and the adapter receive optimizer updates; the backbones
are reconstructed from their init seeds on resume, so checkpoints carry just
the trainable tensors, AdamW moments, and RNG states. Runs are bit-reproducible
for a fixed config and resumable without divergence.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .bridge import Adapter, AdapterSpec, BridgedModel, LoRAConfig, inject
from .checkpoint import CheckpointRecord, load_checkpoint, save_checkpoint
from .config import RunConfig
from .denoisers import build_denoiser
from .diffusion import NoiseSchedule, ddpm_loss, forward_noise, make_linear_schedule
from .errors import CheckpointError, NumericalError
from .scenes import generate_scene, render
from .text import build_text_encoder, tokenize
from .utils import init_parameters


class LinearAdapter(nn.Module):
    """Single linear map, the degraded adapter used for the ablation run."""

    def __init__(self, spec: AdapterSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.fc = nn.Linear(spec.d_in, spec.d_out)
        init_parameters(self, seed)

    def forward(self, c):
        return self.fc(c)


def build_bridged_model(cfg: RunConfig) -> tuple[BridgedModel, NoiseSchedule]:
    """Assemble the frozen backbones, adapter, and (optionally) LoRA deltas."""
    lm = build_text_encoder(cfg.language.preset, cfg.language.arch, seed=cfg.language.seed)
    vm = build_denoiser(cfg.vision.preset, resolution=cfg.train.resolution,
                        seed=cfg.vision.seed)
    d_in, d_out = lm.embed_dim, vm.cross_dim
    hidden = cfg.bridge.adapter_hidden or max(d_in, d_out)
    spec = AdapterSpec(d_in, hidden, d_out)
    if cfg.bridge.adapter_kind == "linear":
        adapter = LinearAdapter(AdapterSpec(d_in, 0, d_out), seed=cfg.bridge.seed)
    else:
        adapter = Adapter(spec, seed=cfg.bridge.seed)
    if cfg.bridge.use_lora:
        lora = LoRAConfig(rank=cfg.bridge.rank,
                          alpha=cfg.bridge.alpha or None)
        model = inject(lm, vm, lora, lora, adapter, seed=cfg.bridge.seed)
    else:
        for p in lm.parameters():
            p.requires_grad_(False)
        for p in vm.parameters():
            p.requires_grad_(False)
        model = BridgedModel(lm, vm, adapter, [], [])
    sched = make_linear_schedule(cfg.schedule.num_steps, cfg.schedule.beta_start,
                                 cfg.schedule.beta_end)
    return model, sched


def conditioning_drop_mask(batch: int, p_uncond: float,
                           gen: torch.Generator) -> torch.Tensor:
    """Per-sample mask of prompts to replace with the null prompt."""
    return torch.rand(batch, generator=gen) < p_uncond


def train_step(model: BridgedModel, images, token_ids, token_masks,
               sched: NoiseSchedule, optimizer, gen: torch.Generator,
               p_uncond: float = 0.1, null_tokens=None) -> float:
    """One optimization step over a rendered batch; returns the loss value."""
    batch = images.shape[0]
    t = torch.randint(1, sched.num_steps + 1, (batch,), generator=gen)
    eps = torch.randn(images.shape, generator=gen, dtype=images.dtype)
    drop = conditioning_drop_mask(batch, p_uncond, gen)
    if drop.any():
        if null_tokens is None:
            null_tokens = tokenize(model.lm.vocab, "", model.lm.config.max_len)
        token_ids = token_ids.clone()
        token_masks = token_masks.clone()
        token_ids[drop] = null_tokens[0]
        token_masks[drop] = null_tokens[1]
    x_t = forward_noise(images, t, eps, sched)
    enc = model.encode(token_ids, token_masks)
    eps_pred = model.predict_eps(x_t, t, enc)
    loss = ddpm_loss(eps_pred, eps)
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite training loss at step (loss={loss.item()})")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


class Trainer:
    """Deterministic producer of scene batches plus the AdamW update loop."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.model, self.sched = build_bridged_model(cfg)
        self.model.train()
        self.optimizer = torch.optim.AdamW(
            [p for _, p in self.model.trainable_parameters()],
            lr=cfg.train.learning_rate, weight_decay=cfg.train.weight_decay,
        )
        self.torch_gen = torch.Generator().manual_seed(cfg.train.seed)
        self.scene_rng = np.random.default_rng(cfg.train.seed)
        self.step = 0
        self._null = tokenize(self.model.lm.vocab, "", self.model.lm.config.max_len)

    def next_batch(self):
        images, ids, masks = [], [], []
        for _ in range(self.cfg.train.batch_size):
            spec, caption = generate_scene(self.scene_rng)
            images.append(torch.from_numpy(render(spec, self.cfg.train.resolution)))
            tid, tmask = tokenize(self.model.lm.vocab, caption,
                                  self.model.lm.config.max_len)
            ids.append(tid)
            masks.append(tmask)
        return torch.stack(images), torch.stack(ids), torch.stack(masks)

    def run_step(self) -> float:
        images, ids, masks = self.next_batch()
        loss = train_step(self.model, images, ids, masks, self.sched, self.optimizer,
                          self.torch_gen, p_uncond=self.cfg.train.p_uncond,
                          null_tokens=self._null)
        self.step += 1
        return loss

    # -- checkpointing -----------------------------------------------------
    def _optimizer_tensors(self) -> dict[str, torch.Tensor]:
        named = self.model.trainable_parameters()
        out = {}
        for name, p in named:
            state = self.optimizer.state.get(p)
            if not state:
                continue
            out[f"{name}.exp_avg"] = state["exp_avg"]
            out[f"{name}.exp_avg_sq"] = state["exp_avg_sq"]
            step = state["step"]
            out[f"{name}.step"] = step if torch.is_tensor(step) \
                else torch.tensor(float(step))
        return out

    def save(self, path) -> None:
        save_checkpoint(
            path,
            step=self.step,
            config=self.cfg.to_dict(),
            tensors={n: p for n, p in self.model.trainable_parameters()},
            optimizer_tensors=self._optimizer_tensors(),
            torch_rng_state=bytes(self.torch_gen.get_state().numpy().tobytes()),
            numpy_rng_state=self.scene_rng.bit_generator.state,
        )

    def restore(self, record: CheckpointRecord) -> None:
        named = dict(self.model.trainable_parameters())
        if set(named) != set(record.tensors):
            raise CheckpointError("checkpoint tensor names do not match this model")
        with torch.no_grad():
            for name, tensor in record.tensors.items():
                if named[name].shape != tensor.shape:
                    raise CheckpointError(
                        f"checkpoint tensor {name} has shape {tuple(tensor.shape)}, "
                        f"model expects {tuple(named[name].shape)}"
                    )
                named[name].copy_(tensor)
        for name, p in self.model.trainable_parameters():
            key = f"{name}.exp_avg"
            if key in record.optimizer_tensors:
                self.optimizer.state[p] = {
                    "step": record.optimizer_tensors[f"{name}.step"],
                    "exp_avg": record.optimizer_tensors[key].clone(),
                    "exp_avg_sq": record.optimizer_tensors[f"{name}.exp_avg_sq"].clone(),
                }
        state = torch.from_numpy(
            np.frombuffer(record.torch_rng_state, dtype=np.uint8).copy()
        )
        self.torch_gen.set_state(state)
        self.scene_rng.bit_generator.state = record.numpy_rng_state
        self.step = record.step

    @classmethod
    def from_checkpoint(cls, path) -> "Trainer":
        record = load_checkpoint(path)
        cfg = RunConfig.from_dict(record.config)
        trainer = cls(cfg)
        trainer.restore(record)
        return trainer


def load_model_for_sampling(path) -> tuple[BridgedModel, NoiseSchedule, RunConfig]:
    """Rebuild a trained model (eval mode) from a checkpoint file."""
    record = load_checkpoint(path)
    cfg = RunConfig.from_dict(record.config)
    model, sched = build_bridged_model(cfg)
    named = dict(model.trainable_parameters())
    if set(named) != set(record.tensors):
        raise CheckpointError("checkpoint tensor names do not match this config")
    with torch.no_grad():
        for name, tensor in record.tensors.items():
            named[name].copy_(tensor)
    model.eval()
    return model, sched, cfg
