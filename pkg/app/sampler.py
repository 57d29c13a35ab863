# app/sampler.py
"""
Training-patch extraction, CelebA landmark files and synthetic labeled scenes.
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .errors import DataError
from .imaging import ImageBuf, read_image
from .schemas import PatchSpec, SynthSpec
from .score import LandmarkChannels, Point
from .utils import atomic_write, rng_for

logger = logging.getLogger("sampler")

# CelebA aligned-landmark column order (from the dataset's own header line)
LANDMARK_COLUMNS = ("lefteye", "righteye", "nose", "leftmouth", "rightmouth")
CELEBA_HEADER = tuple(f"{name}_{axis}" for name in LANDMARK_COLUMNS for axis in ("x", "y"))

# eyes / nose / mouth corners, one channel each
DEFAULT_GROUPING: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("eyes", ("lefteye", "righteye")),
    ("nose", ("nose",)),
    ("mouth_corners", ("leftmouth", "rightmouth")),
)

IMAGE_EXTENSIONS = (".ppm", ".pgm")


@dataclass
class LabeledImage:
    image: ImageBuf
    landmarks: LandmarkChannels
    id: str

    def __post_init__(self):
        for c, p in self.landmarks.all_points():
            if not (0 <= p.x < self.image.width and 0 <= p.y < self.image.height):
                raise DataError(f"{self.id}: landmark {tuple(p)} of channel {c} lies outside the image")


# ---------- patch sampling ----------
def _check_room(width: int, height: int, border: int, image_id: str = "") -> None:
    if width <= 2 * border or height <= 2 * border:
        label = f"{image_id}: " if image_id else ""
        raise DataError(f"{label}{width}x{height} image is too small for border {border}")


def valid_center_count(width: int, height: int, border: int) -> int:
    """Number of patch centers that keep the border constraint."""
    _check_room(width, height, border)
    return (width - 2 * border) * (height - 2 * border)


def rand_coords(width: int, height: int, spec: PatchSpec, rng: np.random.Generator) -> Point:
    """Uniform over [border, width-border-1] x [border, height-border-1]."""
    _check_room(width, height, spec.border)
    x = int(rng.integers(spec.border, width - spec.border))
    y = int(rng.integers(spec.border, height - spec.border))
    return Point(x, y)


def rand_coords_batch(width: int, height: int, spec: PatchSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """n draws of rand_coords as an [n, 2] (x, y) array, same sequence as n single draws."""
    return np.array([rand_coords(width, height, spec, rng) for _ in range(n)], dtype=np.int64).reshape(n, 2)


def extract_patch(img: ImageBuf, center: Point, size: int) -> np.ndarray:
    """Planar [3, size, size] float32 patch in [0, 1]; center pixel at (size//2, size//2)."""
    half = size // 2
    x, y = int(center[0]), int(center[1])
    if x - half < 0 or y - half < 0 or x + half >= img.width or y + half >= img.height:
        raise DataError(f"patch of size {size} at ({x}, {y}) leaves the {img.width}x{img.height} image")
    window = img.data[y - half : y + half + 1, x - half : x + half + 1]
    if img.channels == 1:
        window = np.repeat(window, 3, axis=2)
    return np.ascontiguousarray(window.transpose(2, 0, 1), dtype=np.float32) / np.float32(255.0)


def extract_patches(tensor: np.ndarray, centers: np.ndarray, size: int) -> np.ndarray:
    """Batch of patches cut from a [3, H, W] image tensor at [B, 2] (x, y) centers."""
    half = size // 2
    _, height, width = tensor.shape
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    out = np.empty((centers.shape[0], tensor.shape[0], size, size), dtype=tensor.dtype)
    for i, (x, y) in enumerate(centers):
        if x - half < 0 or y - half < 0 or x + half >= width or y + half >= height:
            raise DataError(f"patch of size {size} at ({x}, {y}) leaves the {width}x{height} image")
        out[i] = tensor[:, y - half : y + half + 1, x - half : x + half + 1]
    return out


# ---------- CelebA landmark files ----------
def load_celeba_landmarks(path: str, grouping=DEFAULT_GROUPING) -> Dict[str, LandmarkChannels]:
    """
    Parse a CelebA aligned-landmark file: a count line, a header naming the ten
    columns, then `filename x1 y1 ... x5 y5` per image.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read landmark file {path}: {e}") from e

    if not lines:
        raise DataError(f"{path}:1: missing count line")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise DataError(f"{path}:1: count line is not an integer: {lines[0]!r}")

    body_start = 1
    if len(lines) > 1:
        header = tuple(lines[1].split())
        if header != CELEBA_HEADER:
            raise DataError(f"{path}:2: unexpected header {' '.join(header)!r}")
        body_start = 2
    elif count:
        raise DataError(f"{path}:2: missing header line")

    column_index = {name: i for i, name in enumerate(LANDMARK_COLUMNS)}
    result: Dict[str, LandmarkChannels] = {}
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 1 + len(CELEBA_HEADER):
            raise DataError(f"{path}:{lineno}: expected filename and {len(CELEBA_HEADER)} integers, got {len(tokens) - 1} values")
        try:
            values = [int(t) for t in tokens[1:]]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer coordinate in {line!r}")
        points = [Point(values[2 * i], values[2 * i + 1]) for i in range(len(LANDMARK_COLUMNS))]
        result[tokens[0]] = LandmarkChannels(
            [(name, [points[column_index[col]] for col in cols]) for name, cols in grouping]
        )

    if len(result) != count:
        raise DataError(f"{path}: count line says {count} images, found {len(result)}")
    logger.info(f"[Sampler] Loaded landmarks for {count} images from {path}")
    return result


def save_celeba_landmarks(path: str, mapping: Dict[str, LandmarkChannels], grouping=DEFAULT_GROUPING) -> None:
    rows = []
    for image_id, landmarks in mapping.items():
        if len(landmarks) != len(grouping):
            raise DataError(f"{image_id}: {len(landmarks)} channels, grouping expects {len(grouping)}")
        by_column: Dict[str, Point] = {}
        for c, (_, cols) in enumerate(grouping):
            pts = landmarks.points(c)
            if len(pts) != len(cols):
                raise DataError(f"{image_id}: channel {c} has {len(pts)} points, grouping expects {len(cols)}")
            by_column.update(zip(cols, pts))
        values = [v for col in LANDMARK_COLUMNS for v in by_column[col]]
        rows.append(" ".join([image_id, *map(str, values)]))
    with atomic_write(path, "w") as f:
        f.write(f"{len(rows)}\n")
        f.write(" ".join(CELEBA_HEADER) + "\n")
        for row in rows:
            f.write(row + "\n")


def _resolve_image_path(images_dir: str, filename: str) -> str:
    direct = os.path.join(images_dir, filename)
    if os.path.splitext(filename)[1].lower() in IMAGE_EXTENSIONS and os.path.exists(direct):
        return direct
    stem = os.path.splitext(filename)[0]
    for ext in IMAGE_EXTENSIONS:
        candidate = os.path.join(images_dir, stem + ext)
        if os.path.exists(candidate):
            return candidate
    raise DataError(f"no PPM/PGM image for '{filename}' in {images_dir}")


def load_dataset(images_dir: str, landmarks_path: str, grouping=DEFAULT_GROUPING) -> List[LabeledImage]:
    """Pair every landmark row with its decoded image (`000001.jpg` resolves to `000001.ppm`)."""
    mapping = load_celeba_landmarks(landmarks_path, grouping)
    return [
        LabeledImage(read_image(_resolve_image_path(images_dir, name)), landmarks, name)
        for name, landmarks in mapping.items()
    ]


# ---------- synthetic scenes ----------
def _try_layout(rng: np.random.Generator, spec: SynthSpec) -> Optional[List[Tuple[int, Tuple[int, int]]]]:
    placed: List[Tuple[int, Tuple[int, int]]] = []
    for channel, count in enumerate(spec.counts):
        for _ in range(count):
            for _ in range(50):
                x = int(rng.integers(spec.margin, spec.width - spec.margin))
                y = int(rng.integers(spec.margin, spec.height - spec.margin))
                fits = True
                for other, (ox, oy) in placed:
                    gap = np.hypot(x - ox, y - oy)
                    limit = spec.min_same_channel if other == channel else spec.min_separation
                    if gap <= limit:
                        fits = False
                        break
                if fits:
                    placed.append((channel, (x, y)))
                    break
            else:
                return None
    return placed


def _jitter(rng: np.random.Generator, base: Sequence[int], spread: int = 15) -> Tuple[int, int, int]:
    return tuple(int(np.clip(b + rng.integers(-spread, spread + 1), 0, 255)) for b in base)


def _draw_feature(img: np.ndarray, kind: int, center: Tuple[int, int], radius: int, rng: np.random.Generator) -> None:
    if kind == 0:  # ring
        cv2.circle(img, center, radius, _jitter(rng, (40, 40, 40)), thickness=3, lineType=cv2.LINE_8)
    elif kind == 1:  # filled disc
        cv2.circle(img, center, radius, _jitter(rng, (230, 230, 230), 12), thickness=-1, lineType=cv2.LINE_8)
    else:  # cross
        color = _jitter(rng, (35, 35, 115))
        x, y = center
        cv2.line(img, (x - radius, y), (x + radius, y), color, thickness=3, lineType=cv2.LINE_8)
        cv2.line(img, (x, y - radius), (x, y + radius), color, thickness=3, lineType=cv2.LINE_8)


def synth_image(seed: int, spec: SynthSpec = SynthSpec(), image_id: Optional[str] = None) -> LabeledImage:
    """
    Render a deterministic labeled scene: rings, filled discs and crosses (one
    class per channel) over a blocky textured background with pixel noise.
    Landmarks are the exact feature centers.
    """
    rng = rng_for(seed, "synth")
    w, h = spec.width, spec.height
    base = int(rng.integers(110, 141))
    img = np.full((h, w, 3), base, dtype=np.uint8)

    for _ in range(int(rng.integers(spec.rect_count[0], spec.rect_count[1] + 1))):
        rw, rh = (int(v) for v in rng.integers(spec.rect_size[0], spec.rect_size[1] + 1, size=2))
        x0 = int(rng.integers(0, max(1, w - rw + 1)))
        y0 = int(rng.integers(0, max(1, h - rh + 1)))
        level = base + int(rng.choice([-1, 1])) * int(rng.integers(30, 61))
        level = int(np.clip(level, 60, 200))
        cv2.rectangle(img, (x0, y0), (x0 + rw - 1, y0 + rh - 1), _jitter(rng, (level,) * 3, 6), thickness=-1)

    layout = None
    for _ in range(spec.max_attempts):
        layout = _try_layout(rng, spec)
        if layout is not None:
            break
    if layout is None:
        raise DataError(f"cannot place {sum(spec.counts)} features after {spec.max_attempts} attempts")

    for channel, center in layout:
        radius = int(rng.integers(spec.radius[0], spec.radius[1] + 1))
        _draw_feature(img, channel, center, radius, rng)

    if spec.noise:
        noise = rng.integers(-spec.noise, spec.noise + 1, size=img.shape)
        img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)

    groups = [[Point(*c) for ch, c in layout if ch == channel] for channel in range(len(spec.counts))]
    landmarks = LandmarkChannels(list(zip(spec.channel_names, groups)))
    return LabeledImage(ImageBuf(img), landmarks, image_id or f"synth-{seed}")


def synth_dataset(seed: int, count: int, spec: SynthSpec = SynthSpec()) -> List[LabeledImage]:
    """`count` scenes with per-image seeds spawned from `seed`, named 000001.ppm, 000002.ppm, ..."""
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    seeds = np.random.SeedSequence(seed).generate_state(count) if count else []
    return [synth_image(int(s), spec, f"{i + 1:06d}.ppm") for i, s in enumerate(seeds)]
