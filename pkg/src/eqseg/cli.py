"""Command-line entry point: ``eqseg {gen-data,train,eval,check-equivariance,predict}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

EQUIVARIANCE_TOLERANCE = 1e-4


def cmd_gen_data(args) -> int:
    from .data import generate_synthetic

    out = generate_synthetic(args.n, args.size, args.seed, args.out)
    print(f"wrote {args.n} samples to {out}")
    return 0


def cmd_train(args) -> int:
    from .train import TrainConfig, train

    cfg = TrainConfig.from_file(args.config)
    result = train(cfg)
    best = result.history[result.best_epoch - 1]
    print(f"best epoch {result.best_epoch}: " + " ".join(f"{k}={v:.4f}" for k, v in best.items() if k != "epoch"))
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset, rotated_test_set, select
    from .metrics import evaluate
    from .train import load_checkpoint

    model, cfg, _ = load_checkpoint(args.checkpoint)
    samples, split = load_dataset(args.data or cfg.data)
    subset = select(samples, split[args.split])
    if not subset:
        raise ValueError(f"split {args.split!r} is empty")
    if args.rotated != "none":
        subset = rotated_test_set(subset, args.rotated, args.seed)
    report = evaluate(model, subset, pooled=args.pooled)
    report.extra.update(split=args.split, rotated=args.rotated, seg_aggregation="pooled" if args.pooled else "per_sample")
    print(report.to_table())
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"eval_{args.split}_{args.rotated}.txt")
    out.write_text(report.to_keyvalue())
    return 0


def cmd_check_equivariance(args) -> int:
    from .data import load_dataset, stack
    from .metrics import equivariance_error
    from .train import load_checkpoint

    model, cfg, _ = load_checkpoint(args.checkpoint)
    angles = [float(a) for a in args.angles.split(",") if a.strip()]
    rng = np.random.Generator(np.random.Philox(args.seed))
    data_dir = args.data or cfg.data
    if data_dir and Path(data_dir, "labels.csv").is_file():
        samples, _ = load_dataset(data_dir)
        pick = rng.choice(len(samples), size=min(args.n, len(samples)), replace=False)
        images, _, _ = stack([samples[i] for i in sorted(pick)])
    else:
        s = cfg.image_size
        images = rng.random((args.n, 3, s, s)).astype(np.float32)
    errors = {}
    for i in range(0, len(images), 8):
        for a, e in equivariance_error(model, images[i:i + 8], angles).items():
            errors[a] = max(errors.get(a, 0.0), e)
    print(f"variant {cfg.variant}  group C{cfg.model_config().group_order}  images {len(images)}")
    failed = False
    for a in angles:
        quarter = a % 90 == 0
        flag = ""
        if cfg.variant == "equivariant" and quarter and errors[a] > EQUIVARIANCE_TOLERANCE:
            flag, failed = "  FAIL", True
        elif not quarter:
            flag = "  (diagnostic)"
        print(f"angle {a:g}: max abs error {errors[a]:.3e}{flag}")
    return 1 if failed else 0


def overlay(image: np.ndarray, pred_mask: np.ndarray, true_mask=None, alpha: float = 0.5) -> np.ndarray:
    """Blend predicted pixels towards blue and trace the true-mask boundary in red.

    image: [H, W, 3] uint8; masks: [H, W] bool.
    """
    out = image.astype(np.float64).copy()
    blue = np.array([0.0, 0.0, 255.0])
    out[pred_mask] = (1 - alpha) * out[pred_mask] + alpha * blue
    out = np.round(out).astype(np.uint8)
    if true_mask is not None:
        m = np.pad(true_mask, 1)
        interior = m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
        out[true_mask & ~interior] = (255, 0, 0)
    return out


def cmd_predict(args) -> int:
    from .data import DriverLabel, read_image, read_mask
    from .train import load_checkpoint

    model, cfg, _ = load_checkpoint(args.checkpoint)
    image = read_image(args.image)
    s = cfg.image_size
    if image.shape[1:] != (s, s):
        raise ValueError(f"image {args.image} is {image.shape[2]}x{image.shape[1]}, model expects {s}x{s}")
    seg, cls = model.forward(image[None], training=False)
    pred = seg.data[0, 0] > 0
    true = read_mask(args.mask)[0].astype(bool) if args.mask else None
    if true is not None and true.shape != pred.shape:
        raise ValueError(f"mask {args.mask} does not match the image size")
    rgb = np.round(image.transpose(1, 2, 0) * 255).astype(np.uint8)
    out = Path(args.out)
    Image.fromarray(overlay(rgb, pred, true)).save(out)
    mask_out = Path(args.mask_out) if args.mask_out else out.with_name(out.stem + "_mask.png")
    Image.fromarray((pred * 255).astype(np.uint8)).save(mask_out)
    print(f"driver: {DriverLabel(int(cls.data[0].argmax())).display_name}")
    print(f"overlay: {out}\nmask: {mask_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eqseg", description="Rotation-equivariant deforestation segmentation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--n", type=int, default=400)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a key = value config file")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--rotated", default="none", choices=("none", "quarter", "arbitrary"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--pooled", action="store_true", help="pool pixels across samples for segmentation accuracy")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check-equivariance", help="measure rotation stability of the segmentation map")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--angles", default="90,180,270")
    c.add_argument("--n", type=int, default=16)
    c.add_argument("--data")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check_equivariance)

    r = sub.add_parser("predict", help="write a segmentation overlay for one image")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--mask")
    r.add_argument("--mask-out")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as e:  # every failure becomes a message and a nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
