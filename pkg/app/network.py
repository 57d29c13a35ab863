# app/network.py
"""
The patch scorer: two valid convolutions and a five-layer dense head with Mish
activations and optional dropout, trained to regress per-channel DiFT scores.

    conv1 -> drop -> mish -> conv2 -> flatten spatial -> drop -> mish -> linear1
    -> flatten -> (drop -> mish -> linear_k) for k = 2..5

The output is the raw final affine map; it is not squashed into [0, 1].
"""
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import HEATMAP_CHUNK_ROWS
from .errors import ArchMismatchError, DataError
from .imaging import unit_to_u8, write_pgm
from .numerics import LayerGrads, Tape, conv2d_valid, dropout, linear, mish, mse_grad, mse_loss
from .schemas import ArchConfig
from .utils import atomic_write

logger = logging.getLogger("network")

MAGIC = b"DIFT"
FORMAT_VERSION = 1
INIT_UNIFORM_FAN_IN = 1  # init-scheme tag stored in the file header
DENSE_LAYERS = ("linear2", "linear3", "linear4", "linear5")


def param_shapes(arch: ArchConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered parameter names and shapes for an architecture."""
    dense_in = [arch.flat, *arch.hidden]
    dense_out = [*arch.hidden, arch.out_channels]
    shapes = {
        "conv1.w": (arch.conv1_out, arch.in_channels, arch.conv1_kernel, arch.conv1_kernel),
        "conv1.b": (arch.conv1_out,),
        "conv2.w": (arch.conv2_out, arch.conv1_out, arch.conv2_kernel, arch.conv2_kernel),
        "conv2.b": (arch.conv2_out,),
        "linear1.w": (arch.row_width, arch.spatial),
        "linear1.b": (arch.row_width,),
    }
    for name, n_in, n_out in zip(DENSE_LAYERS, dense_in, dense_out):
        shapes[f"{name}.w"] = (n_out, n_in)
        shapes[f"{name}.b"] = (n_out,)
    return shapes


@dataclass
class Model:
    arch: ArchConfig
    params: Dict[str, np.ndarray]
    init_scheme: int = INIT_UNIFORM_FAN_IN

    def __post_init__(self):
        expected = param_shapes(self.arch)
        if list(self.params) != list(expected):
            raise ArchMismatchError(f"parameter names {list(self.params)} do not match {list(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ArchMismatchError(f"{name}: shape {self.params[name].shape}, architecture needs {shape}")

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "Model":
        return Model(self.arch, {k: v.astype(dtype) for k, v in self.params.items()}, self.init_scheme)

    def copy(self) -> "Model":
        return self.astype(next(iter(self.params.values())).dtype)


def init_model(arch: ArchConfig, rng: np.random.Generator) -> Model:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    params = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    model = Model(arch, params)
    logger.info(f"[Network] Initialized {model.parameter_count} parameters (patch {arch.patch_size}, C={arch.out_channels})")
    return model


def zero_model(arch: ArchConfig) -> Model:
    return Model(arch, {k: np.zeros(s, dtype=np.float32) for k, s in param_shapes(arch).items()})


# ---------- forward ----------
def forward(
    model: Model,
    batch: np.ndarray,
    mode: str = "infer",
    rng: Optional[np.random.Generator] = None,
    tape: Optional[Tape] = None,
    shapes: Optional[List[Tuple[int, ...]]] = None,
) -> np.ndarray:
    """
    [B, 3, S, S] patches -> [B, C] raw scores. `mode` is "train" or "infer";
    pass a Tape to record the pass for backward, and a list as `shapes` to
    collect the intermediate activation shapes.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    arch, p = model.arch, model.params
    size = arch.patch_size
    if batch.ndim != 4 or batch.shape[1] != arch.in_channels or batch.shape[2:] != (size, size):
        raise DataError(f"expected [B,{arch.in_channels},{size},{size}] patches, got {batch.shape}")
    training = mode == "train"

    def conv(x, name):
        if tape is not None:
            return tape.conv2d_valid(x, name, p[f"{name}.w"], p[f"{name}.b"])
        return conv2d_valid(x, p[f"{name}.w"], p[f"{name}.b"])

    def dense(x, name):
        if tape is not None:
            return tape.linear(x, name, p[f"{name}.w"], p[f"{name}.b"])
        return linear(x, p[f"{name}.w"], p[f"{name}.b"])

    def drop_act(x):
        if tape is not None:
            return tape.mish(tape.dropout(x, arch.dropout, training, rng))
        return mish(dropout(x, arch.dropout, training, rng))

    def reshape(x, shape):
        return tape.reshape(x, shape) if tape is not None else x.reshape(shape)

    def note(x):
        if shapes is not None:
            shapes.append(tuple(x.shape))
        return x

    b = batch.shape[0]
    x = note(conv(batch, "conv1"))
    x = drop_act(x)
    x = note(conv(x, "conv2"))
    x = note(reshape(x, (b, arch.conv2_out, arch.spatial)))
    x = note(dense(drop_act(x), "linear1"))
    x = note(reshape(x, (b, arch.flat)))
    for name in DENSE_LAYERS:
        x = note(dense(drop_act(x), name))
    return x


def loss_and_grads(
    model: Model,
    batch: np.ndarray,
    targets: np.ndarray,
    mode: str = "train",
    rng: Optional[np.random.Generator] = None,
    with_grads: bool = True,
    need_input_grad: bool = False,
) -> Tuple[float, Optional[LayerGrads]]:
    """MSE loss of one batch and, unless with_grads is False, its gradients."""
    tape = Tape() if with_grads else None
    pred = forward(model, batch, mode=mode, rng=rng, tape=tape)
    loss = mse_loss(pred, targets)
    if not with_grads:
        return loss, None
    return loss, tape.backward(mse_grad(pred, targets), need_input_grad=need_input_grad)


def forward_dense(model: Model, tensor: np.ndarray, chunk_rows: int = HEATMAP_CHUNK_ROWS, threads: int = 1) -> np.ndarray:
    """
    Scores for every valid patch center of a [3, H, W] image in infer mode:
    [C, H-S+1, W-S+1]. Both convolutions run once over the whole image; the
    dense head then runs per center on the shared feature maps, so results
    match per-patch `forward` up to float rounding.
    """
    arch, p = model.arch, model.params
    size = arch.patch_size
    if tensor.ndim != 3 or tensor.shape[0] != arch.in_channels:
        raise DataError(f"expected a [{arch.in_channels},H,W] image tensor, got {tensor.shape}")
    _, height, width = tensor.shape
    if height < size or width < size:
        raise DataError(f"{width}x{height} image is smaller than the {size}x{size} patch")

    f1 = mish(conv2d_valid(tensor, p["conv1.w"], p["conv1.b"]))
    f2 = mish(conv2d_valid(f1, p["conv2.w"], p["conv2.b"]))  # [18, H-25, W-25] for the default arch
    side = arch.conv2_side
    out_h, out_w = height - size + 1, width - size + 1
    w1 = p["linear1.w"]

    def run_rows(y0: int) -> np.ndarray:
        y1 = min(y0 + chunk_rows, out_h)
        windows = sliding_window_view(f2[:, y0 : y1 + side - 1, :], (side, side), axis=(1, 2))
        rows = windows.reshape(arch.conv2_out, y1 - y0, out_w, arch.spatial)
        h = mish(rows @ w1.T + p["linear1.b"])  # [C2, rows, W, row_width]
        h = h.transpose(1, 2, 0, 3).reshape(-1, arch.flat)
        for name in DENSE_LAYERS[:-1]:
            h = mish(linear(h, p[f"{name}.w"], p[f"{name}.b"]))
        h = linear(h, p["linear5.w"], p["linear5.b"])
        return h.reshape(y1 - y0, out_w, arch.out_channels)

    starts = list(range(0, out_h, max(1, chunk_rows)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run_rows, starts))
    else:
        blocks = [run_rows(y0) for y0 in starts]
    return np.ascontiguousarray(np.concatenate(blocks, axis=0).transpose(2, 0, 1))


# ---------- serialization ----------
def _pack_model(model: Model) -> bytes:
    arch = model.arch
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<IIfB", arch.patch_size, arch.out_channels, arch.dropout, model.init_scheme),
    ]
    for name, tensor in model.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", tensor.ndim) + struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(model: Model, path: str) -> None:
    with atomic_write(path, "wb") as f:
        f.write(_pack_model(model))
    logger.info(f"[Network] Saved model ({model.parameter_count} parameters) to {path}")


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"{self.path}: truncated model file while reading {what}")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_model(path: str, arch: Optional[ArchConfig] = None) -> Model:
    """
    Read a model file. When `arch` is given, the stored patch size and output
    channel count must match it.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read model file {path}: {e}") from e

    r = _Reader(blob, path)
    if r.take(4, "magic") != MAGIC:
        raise DataError(f"{path}: bad magic, not a model file")
    (version,) = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    patch_size, out_channels, drop, init_scheme = r.unpack("<IIfB", "architecture block")
    if arch is not None and (arch.patch_size, arch.out_channels) != (patch_size, out_channels):
        raise ArchMismatchError(
            f"{path}: file holds patch {patch_size} / C={out_channels}, "
            f"expected patch {arch.patch_size} / C={arch.out_channels}"
        )
    try:
        stored = ArchConfig(patch_size=patch_size, out_channels=out_channels, dropout=drop)
    except ValueError as e:
        raise DataError(f"{path}: invalid architecture block: {e}") from e

    params = {}
    for name, shape in param_shapes(stored).items():
        (name_len,) = r.unpack("<H", "tensor name length")
        got = r.take(name_len, "tensor name").decode("utf-8", errors="replace")
        if got != name:
            raise DataError(f"{path}: expected tensor '{name}', found '{got}'")
        (rank,) = r.unpack("<B", f"{name} rank")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        if tuple(dims) != shape:
            raise DataError(f"{path}: tensor '{name}' has dims {dims}, architecture needs {shape}")
        count = int(np.prod(dims))
        params[name] = np.frombuffer(r.take(4 * count, f"{name} data"), dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(blob):
        raise DataError(f"{path}: {len(blob) - r.pos} trailing bytes after the last tensor")
    return Model(stored, params, init_scheme)


# ---------- kernel export ----------
def export_kernels(model: Model, prefix: str) -> List[str]:
    """
    Write each conv1 kernel as a PGM (`{prefix}{i:02d}.pgm`), averaged over
    input channels and min-max normalized to 0-255; constant kernels become 128.
    """
    paths = []
    directory = os.path.dirname(prefix)
    if directory:
        os.makedirs(directory, exist_ok=True)
    for i, kernel in enumerate(model.params["conv1.w"]):
        plane = kernel.astype(np.float64).mean(axis=0)
        lo, hi = plane.min(), plane.max()
        if hi > lo:
            pixels = unit_to_u8((plane - lo) / (hi - lo))
        else:
            pixels = np.full(plane.shape, 128, dtype=np.uint8)
        path = f"{prefix}{i:02d}.pgm"
        write_pgm(path, pixels)
        paths.append(path)
    logger.info(f"[Network] Exported {len(paths)} conv1 kernels with prefix {prefix}")
    return paths
