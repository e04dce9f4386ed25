"""Command-line surface: dataset, train, sample, eval, params.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure. Every
command is deterministic given config + seed; wall-clock log lines are
prefixed with '#'.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import diffusion
from .bridge import count_parameters
from .config import RunConfig, load_config, write_config
from .errors import CheckpointError, ConfigError, NumericalError
from .evalmetrics import alignment_score, frechet_distance, pooled_features
from .scenes import generate_scene, render
from .training import Trainer, load_model_for_sampling
from .utils import image_grid, load_image, save_image

GRID_PROMPTS = (
    "a red circle",
    "a blue square",
    "a green triangle",
    "a yellow circle",
)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.sample.seed = args.seed
        cfg.eval.reference_seed = args.seed
    if args.out is not None:
        cfg.output.dir = args.out
    return cfg


def _prepare_out_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


def cmd_dataset(args) -> int:
    cfg = _load_run_config(args)
    out = Path(cfg.output.dir)
    _prepare_out_dir(out, args.force)
    rng = np.random.default_rng(cfg.train.seed)
    records = []
    for i in range(args.n):
        spec, caption = generate_scene(rng)
        fname = f"sample_{i:06d}.png"
        save_image(render(spec, cfg.train.resolution), out / fname)
        records.append({"index": i, "file": fname, "caption": caption,
                        "spec": spec.to_dict()})
    with open(out / "scenes.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    manifest = {"kind": "dataset", "seed": cfg.train.seed, "count": args.n,
                "resolution": cfg.train.resolution}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return 0


def _sample_grid(model, sched, cfg: RunConfig, path: Path) -> None:
    model.eval()
    images = []
    for i, prompt in enumerate(GRID_PROMPTS):
        sample_cfg = diffusion.SampleConfig(
            num_inference_steps=cfg.sample.num_inference_steps,
            cfg_scale=cfg.sample.cfg_scale, eta=cfg.sample.eta,
            seed=cfg.sample.seed ^ i, resolution=cfg.train.resolution,
        )
        cond = model.encode_prompt(prompt)
        img = diffusion.sample(model, cond, model.null_encoding(), sample_cfg, sched)
        images.append(img[0])
    Image.fromarray(image_grid(images, cols=len(GRID_PROMPTS)), mode="RGB").save(path)
    model.train()


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoints = sorted(out.glob("ckpt_*.bin"))
    if args.resume and checkpoints:
        trainer = Trainer.from_checkpoint(checkpoints[-1])
        cfg = trainer.cfg
        # keep writing into the directory resolved for this invocation, not
        # the one recorded when the checkpoint was written
        cfg.output.dir = str(out)
        log_mode = "a"
    else:
        trainer = Trainer(cfg)
        log_mode = "w"
    write_config(cfg, out / "resolved.ini")
    every = cfg.train.snapshot_every or cfg.train.steps
    with open(out / "loss.log", log_mode, encoding="utf-8") as log:
        log.write(f"# run started {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        while trainer.step < cfg.train.steps:
            loss = trainer.run_step()
            log.write(f"{trainer.step} {loss:.6f}\n")
            if trainer.step % every == 0:
                trainer.save(out / f"ckpt_{trainer.step:06d}.bin")
                _sample_grid(trainer.model, trainer.sched, cfg,
                             out / f"snapshot_{trainer.step:06d}.png")
    return 0


def cmd_sample(args) -> int:
    cfg = _load_run_config(args)
    model, sched, ckpt_cfg = load_model_for_sampling(args.checkpoint)
    sample_cfg = ckpt_cfg.sample
    num_steps = args.num_steps if args.num_steps else sample_cfg.num_inference_steps
    cfg_scale = args.cfg_scale if args.cfg_scale is not None else sample_cfg.cfg_scale
    eta = args.eta if args.eta is not None else sample_cfg.eta
    seed = args.seed if args.seed is not None else sample_cfg.seed
    out = Path(cfg.output.dir if args.out is None else args.out)
    _prepare_out_dir(out, args.force)
    prompts = Path(args.prompts).read_text(encoding="utf-8").splitlines()
    prompts = [p.strip() for p in prompts if p.strip()]
    items = []
    max_words = model.lm.config.max_len - 2
    for i, prompt in enumerate(prompts):
        if len(prompt.split()) > max_words:
            print(f"warning: prompt {i} exceeds max length, skipped", file=sys.stderr)
            continue
        scfg = diffusion.SampleConfig(
            num_inference_steps=num_steps, cfg_scale=cfg_scale, eta=eta,
            seed=seed ^ i, resolution=ckpt_cfg.train.resolution,
        )
        cond = model.encode_prompt(prompt)
        img = diffusion.sample(model, cond, model.null_encoding(), scfg, sched)
        fname = f"sample_{i:04d}.png"
        save_image(img[0], out / fname)
        items.append({"index": i, "prompt": prompt, "file": fname})
    manifest = {"kind": "samples", "seed": seed, "count": len(items), "items": items}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    samples_dir = Path(args.samples)
    manifest_path = samples_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    pairs = []
    images = []
    for item in manifest.get("items", []):
        img = load_image(samples_dir / item["file"])
        pairs.append((item["prompt"], img))
        images.append(img)
    report = alignment_score(pairs)
    lines = [report.to_text()]
    if len(images) >= 2:
        rng = np.random.default_rng(cfg.eval.reference_seed)
        resolution = images[0].shape[-1]
        refs = [render(generate_scene(rng)[0], resolution)
                for _ in range(cfg.eval.reference_count)]
        fd = frechet_distance(pooled_features(images), pooled_features(refs),
                              cfg.eval.frechet_eps)
        lines.append(f"frechet_distance={fd:.6f}")
    else:
        lines.append("frechet_distance=absent")
    text = "\n".join(lines) + "\n"
    report_path = Path(args.report) if args.report else samples_dir / "report.txt"
    report_path.write_text(text)
    if images:
        sheet = image_grid(images[:64], cols=8)
        Image.fromarray(sheet, mode="RGB").save(samples_dir / "contact_sheet.png")
    print(text, end="")
    return 0


def cmd_params(args) -> int:
    cfg = _load_run_config(args)
    from .training import build_bridged_model

    model, _ = build_bridged_model(cfg)
    report = count_parameters(model)
    print(report.to_text())
    print()
    print("injection sites:")
    print(model.site_report() or "(none)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridgediff")
    parser.add_argument("--config", help="path to an INI run config")
    parser.add_argument("--seed", type=int, help="override train/sample seeds")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--force", action="store_true",
                        help="allow writing into a non-empty directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a captioned synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="run the bridged training loop")
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in the output dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompts", required=True, help="text file, one prompt per line")
    p.add_argument("--num-steps", type=int, dest="num_steps")
    p.add_argument("--cfg-scale", type=float, dest="cfg_scale")
    p.add_argument("--eta", type=float)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score a sample directory")
    p.add_argument("--samples", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="print the parameter report")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())
