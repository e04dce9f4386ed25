"""Train the bridge for a handful of steps on a tiny configuration, checkpoint
it, resume, and confirm the resumed run matches an uninterrupted one.

Run from the repo root:  python3 demos/04_train_tiny.py
(takes about a minute on CPU)
"""

import tempfile
from pathlib import Path

import torch

from bridgediff.bridge import verify_frozen
from bridgediff.config import RunConfig
from bridgediff.training import Trainer

cfg = RunConfig()
cfg.language.preset = "lm-small"
cfg.vision.preset = "unet-small"
cfg.bridge.rank = 2
cfg.train.steps = 6
cfg.train.batch_size = 4
cfg.train.resolution = 16
cfg.schedule.num_steps = 100
cfg.validate()

trainer = Trainer(cfg)
frozen_before = trainer.model.snapshot_base()
print("training (tiny config):")
losses = []
while trainer.step < cfg.train.steps:
    losses.append(trainer.run_step())
    print(f"  step {trainer.step}  loss {losses[-1]:.4f}")

frozen = verify_frozen(frozen_before, trainer.model.snapshot_base())
print(f"\nbackbones untouched after training: {frozen.passed}")

with tempfile.TemporaryDirectory() as tmp:
    mid = Path(tmp) / "mid.bin"
    # re-run the first half, checkpoint, resume, and compare end states
    first = Trainer(cfg)
    for _ in range(3):
        first.run_step()
    first.save(mid)
    resumed = Trainer.from_checkpoint(mid)
    for _ in range(3):
        resumed.run_step()
    same = all(torch.equal(pa, pb) for (_, pa), (_, pb)
               in zip(trainer.model.trainable_parameters(),
                      resumed.model.trainable_parameters()))
    print(f"resume matches uninterrupted run exactly: {same}")
