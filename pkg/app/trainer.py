# app/trainer.py
"""
Training loop: every batch draws one image, samples patch centers on it,
regresses the multi-channel distance scores with MSE and applies SGD with
momentum.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .config import TRAIN_LOG_EVERY
from .errors import DataError, NumericError
from .imaging import image_tensor
from .network import Model, loss_and_grads
from .numerics import LayerGrads
from .saccade import boundary_chains, saccade_points
from .sampler import LabeledImage, extract_patches, rand_coords_batch
from .schemas import TrainConfig
from .score import target_matrix
from .utils import atomic_write, rng_for

logger = logging.getLogger("trainer")


@dataclass
class LossTrace:
    losses: List[float] = field(default_factory=list)
    running: List[float] = field(default_factory=list)

    def append(self, loss: float) -> None:
        self.losses.append(loss)
        n = len(self.losses)
        prev = self.running[-1] if self.running else 0.0
        self.running.append(prev + (loss - prev) / n)

    def __len__(self) -> int:
        return len(self.losses)

    @property
    def running_mean(self) -> float:
        return self.running[-1] if self.running else float("nan")

    def window_mean(self, start: int, stop: Optional[int] = None) -> float:
        window = self.losses[start:stop]
        return float(np.mean(window)) if window else float("nan")


def sgd_step(
    model: Model,
    grads: LayerGrads,
    velocity: Dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> Tuple[Model, Dict[str, np.ndarray]]:
    """v <- momentum * v + g; theta <- theta - lr * v. Velocities start at zero. Updates in place."""
    for name, param in model.params.items():
        g = grads.params.get(name)
        if g is None or g.shape != param.shape:
            raise ValueError(f"gradient for {name} has shape {None if g is None else g.shape}, parameter {param.shape}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(param)
        v = param.dtype.type(momentum) * v + g
        velocity[name] = v
        param -= param.dtype.type(lr) * v
    return model, velocity


class _CenterSampler:
    """Patch centers for one image: uniform over the border-constrained region, or over its saccade points."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self._saccade_cache: Dict[str, np.ndarray] = {}

    def _saccade_points(self, item: LabeledImage) -> np.ndarray:
        if item.id not in self._saccade_cache:
            b = self.cfg.boundary
            chains = boundary_chains(item.image, b.window, b.min_contrast, b.min_chain_length)
            pts = saccade_points(chains, b.stride, self.cfg.patch.border)
            self._saccade_cache[item.id] = np.array(pts, dtype=np.int64).reshape(-1, 2)
            logger.info(f"[Trainer] {item.id}: {len(pts)} saccade-centered sampling points")
        return self._saccade_cache[item.id]

    def __call__(self, item: LabeledImage, rng: np.random.Generator) -> np.ndarray:
        n = self.cfg.batchsize
        if self.cfg.sampling == "saccade":
            pts = self._saccade_points(item)
            if len(pts):
                return pts[rng.integers(0, len(pts), size=n)]
        return rand_coords_batch(item.image.width, item.image.height, self.cfg.patch, rng, n)


def train(
    model: Model,
    dataset: List[LabeledImage],
    cfg: TrainConfig,
    on_batch: Optional[Callable[[int, float, float], None]] = None,
) -> Tuple[Model, LossTrace]:
    """
    Run cfg.batches SGD steps. Image choice, patch centers and dropout masks all
    come from one generator seeded by cfg.seed, so runs are reproducible.
    """
    if not dataset:
        raise DataError("training needs at least one labeled image")
    if cfg.patch.size != model.arch.patch_size:
        raise DataError(f"patch size {cfg.patch.size} does not match the model's {model.arch.patch_size}")
    for item in dataset:
        if item.image.width <= 2 * cfg.patch.border or item.image.height <= 2 * cfg.patch.border:
            raise DataError(f"{item.id}: {item.image.width}x{item.image.height} image is too small for border {cfg.patch.border}")
        if len(item.landmarks) != model.arch.out_channels:
            raise DataError(f"{item.id}: {len(item.landmarks)} landmark channels, model outputs {model.arch.out_channels}")

    rng = rng_for(cfg.seed, "train")
    sampler = _CenterSampler(cfg)
    tensors: Dict[str, np.ndarray] = {}
    velocity: Dict[str, np.ndarray] = {}
    trace = LossTrace()

    logger.info(
        f"[Trainer] {cfg.batches} batches x {cfg.batchsize} patches, lr={cfg.lr}, momentum={cfg.momentum}, "
        f"{len(dataset)} images, sampling={cfg.sampling}"
    )
    for i in range(cfg.batches):
        item = dataset[int(rng.integers(0, len(dataset)))]
        if item.id not in tensors:
            tensors[item.id] = image_tensor(item.image)
        centers = sampler(item, rng)
        batch = extract_patches(tensors[item.id], centers, cfg.patch.size)
        targets = target_matrix(centers, item.landmarks, cfg.score)

        loss, grads = loss_and_grads(model, batch, targets, mode="train", rng=rng)
        if not math.isfinite(loss):
            logger.error(f"[Trainer] Non-finite loss at batch {i} on {item.id}")
            raise NumericError(f"non-finite loss {loss} at batch {i}")
        sgd_step(model, grads, velocity, cfg.lr, cfg.momentum)
        trace.append(loss)

        if TRAIN_LOG_EVERY and i % TRAIN_LOG_EVERY == 0:
            logger.info(f"[Trainer] {i} :  {trace.running_mean:.6f}")
        if on_batch is not None:
            on_batch(i, loss, trace.running_mean)

    return model, trace


def write_loss_csv(trace: LossTrace, path: str) -> None:
    with atomic_write(path, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["batch", "loss", "running_mean"])
        for i, (loss, running) in enumerate(zip(trace.losses, trace.running)):
            writer.writerow([i, repr(float(loss)), repr(float(running))])
