# app/numerics.py
"""
Dense layer kernels for the patch scorer.

Tensors are plain numpy arrays, row-major and contiguous. Kernels keep the
dtype of their inputs: training runs in float32, the finite-difference oracle
promotes everything to float64.

Forward kernels are pure functions. `Tape` records the fixed layer sequence as
it runs so `Tape.backward` can replay it in reverse and return exact gradients
for every named parameter (and optionally the input).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger("numerics")

SOFTPLUS_CLAMP = 20.0


# ---------- forward kernels ----------
def _batched(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"conv input must be [C,H,W] or [B,C,H,W], got rank {x.ndim}")


def _check_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> None:
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"conv weight must be [O,C,K,K], got {weight.shape}")
    out_ch, in_ch, k, _ = weight.shape
    if x.shape[1] != in_ch:
        raise ValueError(f"channel axis mismatch: input has {x.shape[1]}, weight expects {in_ch}")
    if x.shape[2] < k:
        raise ValueError(f"height axis too small: {x.shape[2]} < kernel {k}")
    if x.shape[3] < k:
        raise ValueError(f"width axis too small: {x.shape[3]} < kernel {k}")
    if bias.shape != (out_ch,):
        raise ValueError(f"bias axis mismatch: expected ({out_ch},), got {bias.shape}")


def conv2d_valid(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    Valid (no padding), stride-1 cross-correlation plus per-channel bias.
    Accepts [C,H,W] or [B,C,H,W]; output is [O,H-K+1,W-K+1] (batched likewise).
    """
    xb, squeeze = _batched(x)
    _check_conv(xb, weight, bias)
    k = weight.shape[2]
    windows = sliding_window_view(xb, (k, k), axis=(2, 3))  # [B,C,Ho,Wo,K,K]
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))  # [B,Ho,Wo,O]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]
    return out[0] if squeeze else out


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map on the last axis, broadcast over the leading axes."""
    if weight.ndim != 2:
        raise ValueError(f"linear weight must be [M,N], got {weight.shape}")
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"last axis mismatch: input has {x.shape[-1]}, weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"bias axis mismatch: expected ({weight.shape[0]},), got {bias.shape}")
    return x @ weight.T + bias


def softplus(x: np.ndarray) -> np.ndarray:
    clamped = np.minimum(x, SOFTPLUS_CLAMP)
    return np.where(x > SOFTPLUS_CLAMP, x, np.log1p(np.exp(clamped)))


def mish(x: np.ndarray) -> np.ndarray:
    """x * tanh(softplus(x)); softplus input clamped at 20 before exponentiation."""
    return x * np.tanh(softplus(x))


def mish_grad(x: np.ndarray) -> np.ndarray:
    sp = softplus(x)
    t = np.tanh(sp)
    sig = -np.expm1(-sp)  # sigmoid(x) == 1 - exp(-softplus(x))
    return t + x * (1.0 - t * t) * sig


def dropout_mask(shape, p: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability p, 1/(1-p) otherwise."""
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype(1.0 - p)


def dropout(x: np.ndarray, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    return x * dropout_mask(x.shape, p, rng, x.dtype.type)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    return (pred - target) * pred.dtype.type(2.0 / pred.size)


# ---------- backward kernels ----------
def conv2d_valid_backward(
    grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray, need_input_grad: bool = True
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Gradients of conv2d_valid w.r.t. weight, bias and (optionally) input."""
    xb, squeeze = _batched(x)
    gb = grad_out[None] if squeeze else grad_out
    k = weight.shape[2]
    windows = sliding_window_view(xb, (k, k), axis=(2, 3))  # [B,C,Ho,Wo,K,K]
    grad_w = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))  # [O,C,K,K]
    grad_b = gb.sum(axis=(0, 2, 3))
    grad_x = None
    if need_input_grad:
        # full correlation of the upstream gradient with the flipped kernel
        padded = np.pad(gb, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        pw = sliding_window_view(padded, (k, k), axis=(2, 3))  # [B,O,H,W,K,K]
        flipped = weight[:, :, ::-1, ::-1]
        grad_x = np.tensordot(pw, flipped, axes=([1, 4, 5], [0, 2, 3]))  # [B,H,W,C]
        grad_x = np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2))
        if squeeze:
            grad_x = grad_x[0]
    return grad_w, grad_b, grad_x


def linear_backward(
    grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    g2 = grad_out.reshape(-1, weight.shape[0])
    x2 = x.reshape(-1, weight.shape[1])
    return g2.T @ x2, g2.sum(axis=0), grad_out @ weight


# ---------- recorded forward / reverse pass ----------
@dataclass
class LayerGrads:
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    input: Optional[np.ndarray] = None


class Tape:
    """
    Records the ops of one forward pass (conv, linear, mish, dropout, reshape)
    so they can be differentiated in reverse order.
    """

    def __init__(self):
        self._records: List[tuple] = []

    def __len__(self) -> int:
        return len(self._records)

    def conv2d_valid(self, x, name: str, weight, bias):
        out = conv2d_valid(x, weight, bias)
        self._records.append(("conv2d", name, x, weight))
        return out

    def linear(self, x, name: str, weight, bias):
        out = linear(x, weight, bias)
        self._records.append(("linear", name, x, weight))
        return out

    def mish(self, x):
        self._records.append(("mish", x))
        return mish(x)

    def dropout(self, x, p: float, training: bool, rng=None):
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        if not training or p == 0:
            self._records.append(("identity",))
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a seeded generator")
        mask = dropout_mask(x.shape, p, rng, x.dtype.type)
        self._records.append(("dropout", mask))
        return x * mask

    def reshape(self, x, shape):
        self._records.append(("reshape", x.shape))
        return x.reshape(shape)

    def backward(self, upstream: np.ndarray, need_input_grad: bool = True) -> LayerGrads:
        if not self._records:
            raise RuntimeError("backward called before forward: the tape is empty")
        grads = LayerGrads()
        g = upstream
        for i in range(len(self._records) - 1, -1, -1):
            rec = self._records[i]
            kind = rec[0]
            wants_input = need_input_grad or i > 0
            if kind == "conv2d":
                _, name, x, weight = rec
                gw, gbias, g = conv2d_valid_backward(g, x, weight, need_input_grad=wants_input)
                grads.params[f"{name}.w"], grads.params[f"{name}.b"] = gw, gbias
            elif kind == "linear":
                _, name, x, weight = rec
                gw, gbias, g = linear_backward(g, x, weight)
                grads.params[f"{name}.w"], grads.params[f"{name}.b"] = gw, gbias
            elif kind == "mish":
                g = g * mish_grad(rec[1])
            elif kind == "dropout":
                g = g * rec[1]
            elif kind == "reshape":
                g = g.reshape(rec[1])
            if g is None:
                break
        grads.input = g if need_input_grad else None
        return grads


def backward(tape: Tape, upstream: np.ndarray, need_input_grad: bool = True) -> LayerGrads:
    return tape.backward(upstream, need_input_grad=need_input_grad)


# ---------- finite-difference oracle ----------
def grad_check(
    model,
    patch: np.ndarray,
    target: np.ndarray,
    eps: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
    samples_per_layer: int = 200,
    grads: Optional[LayerGrads] = None,
    floor: float = 1e-6,
) -> float:
    """
    Worst relative error |a-n| / max(|a|, |n|, floor) between analytic gradients
    and 64-bit central differences over a random subsample of each parameter
    tensor. Pass `grads` to audit an externally computed gradient set.
    """
    from .network import loss_and_grads  # network builds on these kernels

    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    rng = rng if rng is not None else np.random.default_rng(0)
    model64 = model.astype(np.float64)
    batch = np.asarray(patch, dtype=np.float64)
    batch = batch[None] if batch.ndim == 3 else batch
    targets = np.asarray(target, dtype=np.float64)
    targets = targets[None] if targets.ndim == 1 else targets

    if grads is None:
        _, grads = loss_and_grads(model64, batch, targets, mode="infer")

    worst = 0.0
    for name, param in model64.params.items():
        flat = param.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples_per_layer, flat.size), replace=False)
        analytic = np.asarray(grads.params[name], dtype=np.float64).reshape(-1)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            plus, _ = loss_and_grads(model64, batch, targets, mode="infer", with_grads=False)
            flat[idx] = orig - eps
            minus, _ = loss_and_grads(model64, batch, targets, mode="infer", with_grads=False)
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    logger.info(f"[GradCheck] worst relative error {worst:.3e} (eps={eps})")
    return worst
