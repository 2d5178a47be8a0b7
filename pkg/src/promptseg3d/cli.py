"""Command line entry points: train, infer, eval, synth, transplant, serve."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ModelConfig, load_config, save_config, tiny_config
from .data.io import load_volume, save_mask
from .data.manifest import entries_for_split, load_manifest, resolve_path
from .data.preprocess import preprocess_case
from .data.synthetic import SyntheticSpec, write_synthetic_dataset
from .inference import centroid_foreground_prompt, infer_volume
from .models.vit3d import (EncoderConfig, VolumeTransformerEncoder,
                           build_transplant_plan, transplant_pretrained)
from .prompts import load_prompts
from .training import load_checkpoint, train_model

log = logging.getLogger(__name__)


def _load_model_config(path: str | None) -> ModelConfig:
    return load_config(path) if path else tiny_config()


def cmd_train(args) -> int:
    config = _load_model_config(args.config)
    result = train_model(config, manifest_path=args.manifest,
                         n_epochs=args.epochs, out_dir=args.out_dir)
    save_config(config, Path(args.out_dir) / "config.json")
    last = result.history[-1] if result.history else {}
    print(json.dumps({"checkpoint": str(result.checkpoint_path),
                      "epochs": len(result.history),
                      "final_loss": last.get("mean_loss"),
                      "best_val_dice": result.best_val_dice}))
    return 0


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    config = model.config
    volume, gt = load_volume(args.volume, args.gt)
    if not args.no_preprocess:
        volume, gt = preprocess_case(volume, gt, config.data.preprocess)
    prompts = load_prompts(args.prompts)
    mask, report = infer_volume(volume, prompts, model, config,
                                policy=args.policy, gt=gt,
                                tolerance_mm=args.tolerance_mm)
    save_mask(mask, args.out)
    out = {"out": str(args.out), "foreground_voxels": int(mask.data.sum())}
    if report:
        out["metrics"] = report
    print(json.dumps(out))
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    config = model.config
    entries = entries_for_split(load_manifest(args.manifest), args.split)
    if not entries:
        print(f"no cases in split {args.split!r}", file=sys.stderr)
        return 1
    rows = []
    for entry in entries:
        image = resolve_path(entry.image_path, args.manifest)
        gt_path = resolve_path(entry.mask_path, args.manifest) if entry.mask_path else None
        volume, gt = load_volume(image, gt_path)
        volume, gt = preprocess_case(volume, gt, config.data.preprocess)
        if gt is None:
            log.warning("skipping %s: no ground truth", entry.image_path)
            continue
        prompt = centroid_foreground_prompt(gt)
        _, report = infer_volume(volume, [prompt], model, config,
                                 policy=args.policy, gt=gt,
                                 tolerance_mm=args.tolerance_mm)
        rows.append(report)
        log.info("%s dice %.4f nsd %.4f", report["case_id"], report["dice"],
                 report["nsd"])
    summary = {
        "n_cases": len(rows),
        "mean_dice": float(np.mean([r["dice"] for r in rows])) if rows else None,
        "mean_nsd": float(np.mean([r["nsd"] for r in rows])) if rows else None,
        "tolerance_mm": args.tolerance_mm,
        "split": args.split,
    }
    Path(args.report).write_text(
        json.dumps({"summary": summary, "cases": rows}, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec()
    if args.spec:
        data = json.loads(Path(args.spec).read_text())
        known = {f.name for f in dataclasses.fields(SyntheticSpec)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {unknown}")
        for key in ("shape", "blob_radius_range"):
            if key in data:
                data[key] = tuple(data[key])
        spec = SyntheticSpec(**data)
    manifest = write_synthetic_dataset(args.out_dir, args.n_cases, spec,
                                       seed=args.seed, file_format=args.format)
    print(json.dumps({"manifest": str(manifest), "n_cases": args.n_cases}))
    return 0


def cmd_transplant(args) -> int:
    if args.config:
        encoder_cfg = load_config(args.config).encoder
    else:
        encoder_cfg = EncoderConfig.vit_b()
    payload = torch.load(args.checkpoint, map_location="cpu", weights_only=True)
    for key in ("state_dict", "model", "model_state_dict"):
        if isinstance(payload, dict) and key in payload:
            payload = payload[key]
            break
    if not isinstance(payload, dict):
        print("checkpoint does not contain a state dict", file=sys.stderr)
        return 1
    if args.dry_run:
        mapping, skipped = build_transplant_plan(payload.keys(), encoder_cfg)
        print(json.dumps({"mapping": mapping, "skipped_source_keys": skipped},
                         indent=2))
        return 0
    encoder = VolumeTransformerEncoder(encoder_cfg)
    report = transplant_pretrained(encoder, payload)
    if args.out:
        torch.save({"encoder_state_dict": encoder.state_dict(),
                    "encoder_config": dataclasses.asdict(encoder_cfg)}, args.out)
    print(json.dumps({"copied": len(report.mapping),
                      "skipped": len(report.skipped),
                      "frozen": len(report.partition.frozen),
                      "trainable": len(report.partition.trainable),
                      "out": args.out}))
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    model, _ = load_checkpoint(args.ckpt)
    serve(model, model.config, host=args.host, port=args.port,
          max_volumes=args.max_volumes)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptseg3d",
        description="Prompt-driven 3D segmentation: training, inference, "
                    "evaluation, synthetic data, and the HTTP service.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a dataset manifest")
    p.add_argument("--config", help="ModelConfig JSON (default: desk-scale tiny)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int, default=None,
                   help="cap epochs below the configured maximum")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="segment one volume from point prompts")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--prompts", required=True, help="JSON {points: [...]}")
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="ground-truth mask for metrics")
    p.add_argument("--policy", default="prompt_centered",
                   choices=("prompt_centered", "tiled"))
    p.add_argument("--tolerance-mm", type=float, default=1.0)
    p.add_argument("--no-preprocess", action="store_true",
                   help="volume is already at the training spec")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--policy", default="prompt_centered",
                   choices=("prompt_centered", "tiled"))
    p.add_argument("--tolerance-mm", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset + manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-cases", type=int, default=10)
    p.add_argument("--spec", help="SyntheticSpec JSON overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", default="nii.gz", choices=("nii.gz", "nii", "raw"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("transplant",
                       help="import 2D ViT weights into the volume encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="ModelConfig JSON naming the target encoder")
    p.add_argument("--out", help="where to save the transplanted encoder")
    p.add_argument("--dry-run", action="store_true",
                   help="print the key mapping as JSON and exit")
    p.set_defaults(func=cmd_transplant)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-volumes", type=int, default=8)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
