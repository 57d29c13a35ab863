# app/saccade.py
"""
Saccaded search: dark/light boundary chains as interest points, coarse-to-fine
hill climbing on the predicted score, the dense-scan baseline, NMS and the
dense-vs-saccade benchmark.
"""
import csv
import logging
import os
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import cv2
import numpy as np

from .config import THREADS
from .errors import DataError
from .imaging import ImageBuf, image_tensor, to_gray, unit_to_u8, write_pgm, write_ppm
from .network import Model, forward, forward_dense
from .sampler import extract_patches
from .schemas import DetectParams, ScoreParams
from .score import LandmarkChannels, Point, euclid_dist, score_to_distance, target_matrix
from .utils import atomic_write

logger = logging.getLogger("saccade")

# tie-break order for hill climbing: N, NE, E, SE, S, SW, W, NW
DIRECTIONS = ((0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))
# chain tracing order
_TRACE_ORDER = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
# red = eyes, green = nose, blue = mouth corners
CHANNEL_COLORS = ((255, 0, 0), (0, 255, 0), (0, 0, 255))


@dataclass
class BoundaryChains:
    chains: List[np.ndarray]  # each [n, 2] (x, y), consecutive points 8-adjacent
    width: int
    height: int

    @property
    def total(self) -> int:
        return int(sum(len(c) for c in self.chains))

    @property
    def fraction(self) -> float:
        return self.total / float(self.width * self.height)


@dataclass
class ScoreField:
    data: np.ndarray  # [C, h, w], cell (y, x) is the patch centered at (x + border, y + border)
    border: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def at(self, channel: int, point: Point) -> float:
        return float(self.data[channel, point[1] - self.border, point[0] - self.border])


@dataclass
class Detection:
    channel: int
    point: Point
    score: float
    evals_used: int


# ---------- interest points ----------
def _sign_map(gray: np.ndarray, window: int, min_contrast: int) -> Tuple[np.ndarray, np.ndarray]:
    """Dark / light masks: luminance against the box mean over `window`, with a +-min_contrast dead zone."""
    lo, hi = window // 2, window - 1 - window // 2
    padded = np.pad(gray, ((lo, hi), (lo, hi)), mode="reflect")
    integral = cv2.integral(padded).astype(np.int64)
    h, w = gray.shape
    box = (
        integral[window : window + h, window : window + w]
        - integral[0:h, window : window + w]
        - integral[window : window + h, 0:w]
        + integral[0:h, 0:w]
    )
    n = window * window
    scaled = gray.astype(np.int64) * n - box  # n * (luminance - mean), exact in integers
    return scaled < -min_contrast * n, scaled > min_contrast * n


def boundary_mask(img: ImageBuf, window: int = 15, min_contrast: int = 8) -> np.ndarray:
    """Dark pixels with at least one light 4-neighbor."""
    if window > img.width or window > img.height:
        raise ValueError(f"window {window} is larger than the {img.width}x{img.height} image")
    dark, light = _sign_map(to_gray(img), window, min_contrast)
    near_light = np.zeros_like(light)
    near_light[1:, :] |= light[:-1, :]
    near_light[:-1, :] |= light[1:, :]
    near_light[:, 1:] |= light[:, :-1]
    near_light[:, :-1] |= light[:, 1:]
    return dark & near_light


def _walk(mask: np.ndarray, visited: np.ndarray, start: Tuple[int, int]) -> List[Tuple[int, int]]:
    h, w = mask.shape
    path = []
    x, y = start
    while True:
        for dx, dy in _TRACE_ORDER:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not visited[ny, nx]:
                visited[ny, nx] = True
                path.append((nx, ny))
                x, y = nx, ny
                break
        else:
            return path


def boundary_chains(img: ImageBuf, window: int = 15, min_contrast: int = 8, min_length: int = 4) -> BoundaryChains:
    """
    Link boundary pixels into 8-connected chains, seeded in raster order and
    grown in both directions from the seed. Chains shorter than `min_length`
    are dropped.
    """
    mask = boundary_mask(img, window, min_contrast)
    visited = np.zeros_like(mask)
    chains = []
    ys, xs = np.nonzero(mask)
    for y, x in zip(ys.tolist(), xs.tolist()):
        if visited[y, x]:
            continue
        visited[y, x] = True
        forward_part = _walk(mask, visited, (x, y))
        backward_part = _walk(mask, visited, (x, y))
        chain = backward_part[::-1] + [(x, y)] + forward_part
        if len(chain) >= min_length:
            chains.append(np.array(chain, dtype=np.int64))
    result = BoundaryChains(chains, img.width, img.height)
    logger.info(f"[Saccade] {len(chains)} boundary chains, {result.total} pixels ({100 * result.fraction:.1f}% of image)")
    return result


def saccade_points(chains: BoundaryChains, stride: int = 5, border: int = 17) -> List[Point]:
    """Every stride-th chain pixel that is a valid patch center, in chain discovery order."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x_max, y_max = chains.width - border - 1, chains.height - border - 1
    points = []
    for chain in chains.chains:
        for x, y in chain[::stride].tolist():
            if border <= x <= x_max and border <= y <= y_max:
                points.append(Point(x, y))
    return points


# ---------- scorers ----------
class Scorer(ABC):
    """
    Memoized per-point channel scores over the valid patch-center region.
    `evals` counts distinct points evaluated; one evaluation yields all channels.
    """

    def __init__(self, width: int, height: int, border: int, channels: int):
        if width <= 2 * border or height <= 2 * border:
            raise DataError(f"{width}x{height} image has no valid patch centers for border {border}")
        self.width, self.height, self.border, self.channels = width, height, border, channels
        self.evals = 0
        self._memo: Dict[Tuple[int, int], np.ndarray] = {}

    def is_valid(self, point) -> bool:
        x, y = point
        return self.border <= x < self.width - self.border and self.border <= y < self.height - self.border

    def score(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        keys = [(int(x), int(y)) for x, y in pts]
        missing = [k for k in dict.fromkeys(keys) if k not in self._memo]
        if missing:
            values = self._evaluate(np.array(missing, dtype=np.int64))
            for k, v in zip(missing, values):
                self._memo[k] = v
            self.evals += len(missing)
        if not keys:
            return np.zeros((0, self.channels), dtype=np.float32)
        return np.stack([self._memo[k] for k in keys])

    @abstractmethod
    def field(self) -> ScoreField:
        """Scores at every valid center, [C, H-2b, W-2b]."""

    @abstractmethod
    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        """Channel scores [N, C] for (x, y) rows not yet memoized."""


class ModelScorer(Scorer):
    def __init__(self, model: Model, img: ImageBuf, threads: int = THREADS):
        super().__init__(img.width, img.height, model.arch.patch_size // 2, model.arch.out_channels)
        self.model, self.threads = model, threads
        self.tensor = image_tensor(img)

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        batch = extract_patches(self.tensor, points, self.model.arch.patch_size)
        return forward(self.model, batch, mode="infer")

    def field(self) -> ScoreField:
        return ScoreField(forward_dense(self.model, self.tensor, threads=self.threads), self.border)


class AnalyticScorer(Scorer):
    """Exact score profile around known landmarks, standing in for a perfectly trained network."""

    def __init__(self, landmarks: LandmarkChannels, params: ScoreParams, width: int, height: int, border: int):
        super().__init__(width, height, border, len(landmarks))
        self.landmarks, self.params = landmarks, params

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        return target_matrix(points, self.landmarks, self.params, dtype=np.float64)

    def field(self) -> ScoreField:
        ys, xs = np.mgrid[self.border : self.height - self.border, self.border : self.width - self.border]
        grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
        values = target_matrix(grid, self.landmarks, self.params, dtype=np.float64)
        return ScoreField(values.T.reshape(self.channels, *xs.shape), self.border)


def dense_heatmap(model: Model, img: ImageBuf, threads: int = THREADS) -> ScoreField:
    """Network output at every valid patch center, infer mode."""
    return ModelScorer(model, img, threads).field()


def quantize_heatmap(field: ScoreField) -> ScoreField:
    """Three levels: below 0.5 -> 0, [0.5, 0.8) -> 0.5, 0.8 and above -> 0.8."""
    data = field.data
    out = np.where(data >= 0.8, 0.8, np.where(data >= 0.5, 0.5, 0.0)).astype(data.dtype)
    return ScoreField(out, field.border)


# ---------- search ----------
def hill_climb(
    scorer: Scorer,
    start,
    channel: int,
    steps: Sequence[int] = (4, 2, 1),
    max_iters: int = 50,
) -> Tuple[Point, float, int]:
    """
    Coarse-to-fine neighborhood ascent. At step s the 8 neighbors at offset s
    are scored; the walk moves to the first strict maximum (N, NE, E, SE, S,
    SW, W, NW order) and shrinks s when nothing improves. A start scoring
    exactly 0 sits on the flat zero plateau and is returned unmoved; negative
    starts climb like any other.
    Returns (point, score, evaluations spent).
    """
    if not scorer.is_valid(start):
        raise ValueError(f"start {tuple(start)} is outside the valid patch-center region")
    before = scorer.evals
    current = Point(int(start[0]), int(start[1]))
    current_score = float(scorer.score([current])[0, channel])
    if current_score == 0.0:
        return current, current_score, scorer.evals - before

    level, iters = 0, 0
    while level < len(steps) and iters < max_iters:
        s = steps[level]
        iters += 1
        candidates = [Point(current.x + dx * s, current.y + dy * s) for dx, dy in DIRECTIONS]
        candidates = [c for c in candidates if scorer.is_valid(c)]
        if not candidates:
            level += 1
            continue
        values = scorer.score(candidates)[:, channel]
        best = int(np.argmax(values))
        if values[best] > current_score:
            current, current_score = candidates[best], float(values[best])
        else:
            level += 1
    return current, current_score, scorer.evals - before


def nms(detections: List[Detection], radius: float) -> List[Detection]:
    """Greedy suppression per channel: keep the best, drop anything within `radius` of a kept one."""
    kept: List[Detection] = []
    for det in sorted(detections, key=lambda d: (d.channel, -d.score, d.point.y, d.point.x)):
        if all(k.channel != det.channel or euclid_dist(k.point, det.point) > radius for k in kept):
            kept.append(det)
    return kept


def _local_maxima(plane: np.ndarray, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    plane = np.ascontiguousarray(plane, dtype=np.float32)
    peaks = (plane >= threshold) & (plane == cv2.dilate(plane, np.ones((3, 3), np.uint8)))
    return np.nonzero(peaks)


def _detect_dense(scorer: Scorer, params: DetectParams) -> Tuple[List[Detection], int]:
    field = scorer.field()
    evals = int(field.data[0].size)
    found = []
    for c in range(field.channels):
        ys, xs = _local_maxima(field.data[c], params.threshold)
        for y, x in zip(ys.tolist(), xs.tolist()):
            found.append(Detection(c, Point(x + field.border, y + field.border), float(field.data[c, y, x]), evals))
    return nms(found, params.nms_radius), evals


def _detect_saccade(scorer: Scorer, img: ImageBuf, params: DetectParams) -> Tuple[List[Detection], int]:
    before = scorer.evals
    b = params.boundary
    chains = boundary_chains(img, b.window, b.min_contrast, b.min_chain_length)
    starts = saccade_points(chains, b.stride, scorer.border)
    if not starts:
        return [], 0
    start_scores = scorer.score(starts)

    found = []
    climbs = 0
    for c in range(scorer.channels):
        endpoints: List[Point] = []
        for idx in np.argsort(-start_scores[:, c], kind="stable").tolist():
            s = float(start_scores[idx, c])
            if s < params.start_min_score:
                break
            start = starts[idx]
            if params.prune:
                reach = score_to_distance(s, params.score) + params.prune_slack
                if any(euclid_dist(start, e) <= reach for e in endpoints):
                    continue
            point, score, evals = hill_climb(scorer, start, c, params.climb.steps, params.climb.max_iters)
            climbs += 1
            endpoints.append(point)
            if score >= params.threshold:
                found.append(Detection(c, point, score, evals))
    total = scorer.evals - before
    logger.info(f"[Saccade] {len(starts)} starts, {climbs} climbs, {total} evaluations")
    return nms(found, params.nms_radius), total


def detect(scorer: Scorer, img: ImageBuf, mode: str = "dense", params: DetectParams = DetectParams()) -> Tuple[List[Detection], int]:
    """Detections (NMS applied per channel) and the network evaluations the mode consumed."""
    if mode == "dense":
        return _detect_dense(scorer, params)
    if mode == "saccade":
        return _detect_saccade(scorer, img, params)
    raise ValueError(f"mode must be 'dense' or 'saccade', got {mode!r}")


def detect_image(
    model: Model, img: ImageBuf, mode: str = "dense", params: DetectParams = DetectParams(), threads: int = THREADS
) -> Tuple[List[Detection], int]:
    return detect(ModelScorer(model, img, threads), img, mode, params)


# ---------- benchmark ----------
def agreement(reference: List[Detection], candidate: List[Detection], channels: int, radius: float) -> List[float]:
    """Per channel, the share of reference detections matched by a candidate within `radius` (1.0 if none)."""
    shares = []
    for c in range(channels):
        ref = [d for d in reference if d.channel == c]
        if not ref:
            shares.append(1.0)
            continue
        cand = [d for d in candidate if d.channel == c]
        hits = sum(1 for r in ref if any(euclid_dist(r.point, k.point) <= radius for k in cand))
        shares.append(hits / len(ref))
    return shares


def benchmark_image(model: Model, img: ImageBuf, params: DetectParams = DetectParams(), threads: int = THREADS) -> dict:
    t0 = time.perf_counter()
    dense, dense_evals = detect_image(model, img, "dense", params, threads)
    t1 = time.perf_counter()
    sacc, sacc_evals = detect_image(model, img, "saccade", params, threads)
    t2 = time.perf_counter()
    return {
        "dense_evals": dense_evals,
        "saccade_evals": sacc_evals,
        "ratio": sacc_evals / dense_evals if dense_evals else 0.0,
        "dense_seconds": t1 - t0,
        "saccade_seconds": t2 - t1,
        "agreement": agreement(dense, sacc, model.arch.out_channels, params.agreement_radius),
    }


# ---------- export ----------
def field_planes(field: ScoreField, width: int, height: int) -> np.ndarray:
    """Field embedded in an image-sized [C, H, W] canvas (zeros outside the valid region)."""
    planes = np.zeros((field.channels, height, width), dtype=np.float32)
    b = field.border
    _, h, w = field.data.shape
    planes[:, b : b + h, b : b + w] = field.data
    return planes


def heatmap_rgb(planes: np.ndarray) -> np.ndarray:
    """Channels 0..2 -> R, G, B, clamped to [0, 1] and scaled by 255."""
    rgb = np.zeros((planes.shape[1], planes.shape[2], 3), dtype=np.float32)
    n = min(3, planes.shape[0])
    rgb[:, :, :n] = planes[:n].transpose(1, 2, 0)
    return unit_to_u8(rgb)


def export_heatmaps(
    field: ScoreField, img: ImageBuf, out_dir: str, prefix: str = "heatmap", overlay: bool = True
) -> List[str]:
    """
    `{prefix}_c{c}.pgm` per channel, `{prefix}.ppm` with channels as RGB and,
    with `overlay`, `overlay.ppm` blending the RGB map half and half with the input.
    """
    os.makedirs(out_dir, exist_ok=True)
    planes = field_planes(field, img.width, img.height)
    paths = []
    for c in range(planes.shape[0]):
        path = os.path.join(out_dir, f"{prefix}_c{c}.pgm")
        write_pgm(path, unit_to_u8(planes[c]))
        paths.append(path)
    rgb = heatmap_rgb(planes)
    path = os.path.join(out_dir, f"{prefix}.ppm")
    write_ppm(path, rgb)
    paths.append(path)
    if overlay:
        blend = ((img.rgb().astype(np.uint16) + rgb.astype(np.uint16) + 1) // 2).astype(np.uint8)
        path = os.path.join(out_dir, "overlay.ppm")
        write_ppm(path, blend)
        paths.append(path)
    logger.info(f"[Saccade] Wrote {len(paths)} heatmap files to {out_dir}")
    return paths


def annotate(img: ImageBuf, detections: List[Detection]) -> np.ndarray:
    canvas = np.ascontiguousarray(img.rgb().copy())
    for det in detections:
        color = CHANNEL_COLORS[det.channel % len(CHANNEL_COLORS)]
        cv2.drawMarker(canvas, (int(det.point.x), int(det.point.y)), color, markerType=cv2.MARKER_CROSS, markerSize=9, thickness=1)
    return canvas


def write_detections_csv(path: str, detections: List[Detection], evals: int) -> None:
    with atomic_write(path, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["channel", "x", "y", "score", "evals"])
        for d in detections:
            writer.writerow([d.channel, d.point.x, d.point.y, f"{d.score:.6f}", d.evals_used])
        f.write(f"# evals={evals}\n")
