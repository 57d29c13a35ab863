"""
Command-line entry point: synthetic data, training, heatmaps, detection,
kernel export and the dense-vs-saccade benchmark.

    python -m app.main synth --count 20 --seed 42 --out data/
    python -m app.main train --images data/ --landmarks data/landmarks.txt --seed 42 --out runs/model.dift
    python -m app.main detect --model runs/model.dift --image data/000001.ppm --mode saccade --out det/
"""
import argparse
import csv
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from .config import (
    AGREEMENT_RADIUS,
    BATCHES,
    BATCHSIZE,
    BORDER,
    DETECT_THRESHOLD,
    DROPOUT,
    LANDMARKS_FILENAME,
    LOG_LEVEL,
    LR,
    MOMENTUM,
    NMS_RADIUS,
    OUT_CHANNELS,
    PATCH_SIZE,
    SACCADE_STRIDE,
    THREADS,
)
from .errors import DataError, NumericError
from .imaging import read_image, write_image, write_ppm
from .network import Model, export_kernels, init_model, load_model, save_model
from .saccade import (
    annotate,
    benchmark_image,
    dense_heatmap,
    detect_image,
    export_heatmaps,
    quantize_heatmap,
    write_detections_csv,
)
from .sampler import IMAGE_EXTENSIONS, load_dataset, save_celeba_landmarks, synth_dataset
from .schemas import ArchConfig, BoundaryParams, DetectParams, PatchSpec, TrainConfig
from .trainer import train, write_loss_csv
from .utils import atomic_write, compute_file_hash, rng_for

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# ---------- path checks ----------
def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")
    return path


def _require_dir(path: str, what: str) -> str:
    if not os.path.isdir(path):
        raise DataError(f"{what} is not a directory: {path}")
    return path


def _parent_dir(path: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    return directory


def _load_model(path: str) -> Model:
    model = load_model(_require_file(path, "model file"))
    logger.info(f"[CLI] Loaded {path}: {model.parameter_count} parameters, sha256 {compute_file_hash(path, 12)}")
    return model


def _list_images(images_dir: str) -> List[str]:
    names = sorted(n for n in os.listdir(images_dir) if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS)
    if not names:
        raise DataError(f"no PPM/PGM images in {images_dir}")
    return [os.path.join(images_dir, n) for n in names]


# ---------- subcommands ----------
def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    items = synth_dataset(args.seed, args.count)
    for item in items:
        write_image(os.path.join(args.out, item.id), item.image)
    landmarks_path = os.path.join(args.out, LANDMARKS_FILENAME)
    save_celeba_landmarks(landmarks_path, {item.id: item.landmarks for item in items})
    logger.info(f"[CLI] Wrote {len(items)} synthetic images and {landmarks_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require_dir(args.images, "images directory")
    _require_file(args.landmarks, "landmark file")
    _parent_dir(args.out)

    patch = PatchSpec(size=args.patch, border=args.border)
    cfg = TrainConfig(
        seed=args.seed,
        batches=args.batches,
        batchsize=args.batchsize,
        lr=args.lr,
        momentum=args.momentum,
        patch=patch,
        sampling=args.sampling,
        boundary=BoundaryParams(stride=args.stride),
    )
    arch = ArchConfig(patch_size=args.patch, out_channels=OUT_CHANNELS, dropout=args.dropout)
    dataset = load_dataset(args.images, args.landmarks)

    model = init_model(arch, rng_for(args.seed, "init"))
    logger.info(f"[CLI] Training {model.parameter_count} parameters on {len(dataset)} images")
    model, trace = train(model, dataset, cfg)

    save_model(model, args.out)
    loss_path = os.path.join(os.path.dirname(os.path.abspath(args.out)), "loss.csv")
    write_loss_csv(trace, loss_path)
    logger.info(f"[CLI] Saved model to {args.out} (sha256 {compute_file_hash(args.out, 12)}) and loss trace to {loss_path}")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    model = _load_model(args.model)
    img = read_image(_require_file(args.image, "image"))
    field = dense_heatmap(model, img, threads=args.threads)
    export_heatmaps(field, img, args.out)
    if args.quantize:
        export_heatmaps(quantize_heatmap(field), img, args.out, prefix="quantized", overlay=False)
    return EXIT_OK


def _detect_params(args) -> DetectParams:
    return DetectParams(
        threshold=args.threshold,
        nms_radius=args.nms,
        prune=not args.no_prune,
        boundary=BoundaryParams(stride=args.stride),
        agreement_radius=AGREEMENT_RADIUS,
    )


def cmd_detect(args) -> int:
    model = _load_model(args.model)
    img = read_image(_require_file(args.image, "image"))
    os.makedirs(args.out, exist_ok=True)
    detections, evals = detect_image(model, img, args.mode, _detect_params(args), threads=args.threads)
    write_detections_csv(os.path.join(args.out, "detections.csv"), detections, evals)
    write_ppm(os.path.join(args.out, "annotated.ppm"), annotate(img, detections))
    logger.info(f"[CLI] {len(detections)} detections, {evals} evaluations ({args.mode})")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    model = _load_model(args.model)
    paths = _list_images(_require_dir(args.images, "images directory"))
    _parent_dir(args.out)
    params = _detect_params(args)
    channels = model.arch.out_channels

    rows = []
    for path in paths:
        result = benchmark_image(model, read_image(path), params, threads=args.threads)
        logger.info(
            f"[CLI] {os.path.basename(path)}: {result['saccade_evals']}/{result['dense_evals']} evaluations "
            f"(ratio {result['ratio']:.4f})"
        )
        rows.append((os.path.basename(path), result))

    header = ["image", "dense_evals", "saccade_evals", "ratio", "dense_seconds", "saccade_seconds"]
    header += [f"agreement_c{c}" for c in range(channels)]

    def fmt(name, r):
        values = [name, r["dense_evals"], r["saccade_evals"], f"{r['ratio']:.6f}"]
        values += [f"{r['dense_seconds']:.4f}", f"{r['saccade_seconds']:.4f}"]
        return values + [f"{a:.4f}" for a in r["agreement"]]

    results = [r for _, r in rows]
    summary = {
        key: float(np.mean([r[key] for r in results]))
        for key in ("dense_evals", "saccade_evals", "ratio", "dense_seconds", "saccade_seconds")
    }
    summary["dense_evals"] = f"{summary['dense_evals']:.1f}"
    summary["saccade_evals"] = f"{summary['saccade_evals']:.1f}"
    summary["agreement"] = np.mean([r["agreement"] for r in results], axis=0).tolist()

    with atomic_write(args.out, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for name, r in rows:
            writer.writerow(fmt(name, r))
        writer.writerow(fmt("mean", summary))
    logger.info(f"[CLI] Mean evaluation ratio {summary['ratio']:.4f} over {len(rows)} images")
    return EXIT_OK


def cmd_kernels(args) -> int:
    model = _load_model(args.model)
    os.makedirs(args.out, exist_ok=True)
    export_kernels(model, os.path.join(args.out, "kernel_"))
    return EXIT_OK


# ---------- parser ----------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dift", description="Distance-to-feature patch scoring and saccaded search")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render synthetic labeled scenes and a CelebA-format landmark file")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the patch scorer")
    p.add_argument("--images", required=True, help="directory of PPM/PGM images")
    p.add_argument("--landmarks", required=True, help="CelebA-format landmark file")
    p.add_argument("--batches", type=int, default=BATCHES)
    p.add_argument("--batchsize", type=int, default=BATCHSIZE)
    p.add_argument("--lr", type=float, default=LR)
    p.add_argument("--momentum", type=float, default=MOMENTUM)
    p.add_argument("--patch", type=int, default=PATCH_SIZE)
    p.add_argument("--border", type=int, default=BORDER, help="default: half the patch size")
    p.add_argument("--dropout", type=float, default=DROPOUT)
    p.add_argument("--sampling", choices=("uniform", "saccade"), default="uniform")
    p.add_argument("--stride", type=int, default=SACCADE_STRIDE, help="saccade point stride (saccade sampling)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="model file; loss.csv is written beside it")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("heatmap", help="dense score maps as PGM/PPM")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--quantize", action="store_true", help="also write the three-level quantized maps")
    p.add_argument("--threads", type=int, default=THREADS)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_heatmap)

    for name, func, help_text in (
        ("detect", cmd_detect, "detect feature centroids in one image"),
        ("benchmark", cmd_benchmark, "compare dense and saccade detection over a directory"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", required=True)
        if name == "detect":
            p.add_argument("--image", required=True)
            p.add_argument("--mode", choices=("dense", "saccade"), default="dense")
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--images", required=True)
            p.add_argument("--out", required=True, help="report CSV")
        p.add_argument("--threshold", type=float, default=DETECT_THRESHOLD)
        p.add_argument("--nms", type=float, default=NMS_RADIUS)
        p.add_argument("--stride", type=int, default=SACCADE_STRIDE)
        p.add_argument("--no-prune", action="store_true", help="climb from every saccade start")
        p.add_argument("--threads", type=int, default=THREADS)
        p.set_defaults(func=func)

    p = sub.add_parser("kernels", help="export the first-layer kernels as PGM images")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_kernels)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        return args.func(args)
    except NumericError as e:
        logger.error(f"[CLI] {args.command} failed: {e}")
        return EXIT_NUMERIC
    except (ValueError, OSError) as e:
        logger.error(f"[CLI] {args.command} failed: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
