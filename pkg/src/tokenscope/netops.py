"""Minimal numeric kernels for the fixed architecture, with hand-derived
gradients. No ML framework: everything is plain numpy with explicit
backward rules, verified against finite differences in the test suite.

Conventions fixed here and relied on by the backward pass:
  - ReLU subgradient at 0 is 0.
  - Max-pool ties route gradient to the first (lowest) index only.
  - Dropout is inverted (scaled at train time); eval mode is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass
class FilterBank:
    """A bank of width-K convolution filters over D-dimensional token vectors.

    weights has shape (M, K*D): filter m's window is laid out position-major,
    i.e. weights[m, k*D + d] multiplies input[d, p + k].
    """

    width: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ShapeError("filter width must be >= 1")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("filter bank weights/bias shapes disagree")
        if self.weights.shape[1] % self.width != 0:
            raise ShapeError("weights width not a multiple of filter width")

    @property
    def count(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1] // self.width


@dataclass
class PoolRecord:
    """Winning feature-map index and pooled value per filter."""

    indices: np.ndarray  # (M,) int
    values: np.ndarray  # (M,) float, >= 0 post-ReLU


def sliding_windows(x: np.ndarray, width: int) -> np.ndarray:
    """View of x (D, N) as (N-K+1, K*D) windows, position-major per window."""
    d, n = x.shape
    if n < width:
        raise ShapeError("document shorter than filter")
    windows = np.lib.stride_tricks.sliding_window_view(x, width, axis=1)
    # windows: (D, N-K+1, K) -> (N-K+1, K, D) -> (N-K+1, K*D)
    return windows.transpose(1, 2, 0).reshape(n - width + 1, width * d)


def conv1d_forward(x: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Valid 1-D convolution of x (D, N) against the bank: returns (M, N-K+1).

    h[m, p] = bias[m] + sum over the width-K window starting at column p,
    dotted with filter m's weights. No implicit padding.
    """
    if x.ndim != 2:
        raise ShapeError("input must be a D x N matrix")
    if x.shape[0] != bank.dim:
        raise ShapeError(
            f"input dim {x.shape[0]} does not match filter dim {bank.dim}"
        )
    win = sliding_windows(x, bank.width)  # (P, K*D)
    return bank.weights @ win.T + bank.bias[:, None]


def conv1d_backward(
    x: np.ndarray, bank: FilterBank, d_h: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(d_h * h) w.r.t. (weights, bias, x)."""
    win = sliding_windows(x, bank.width)  # (P, K*D)
    d_w = d_h @ win
    d_b = d_h.sum(axis=1)
    d_win = d_h.T @ bank.weights  # (P, K*D)
    d_x = np.zeros_like(x)
    d, k = x.shape[0], bank.width
    per_pos = d_win.reshape(-1, k, d)  # (P, K, D)
    for kk in range(k):
        d_x[:, kk : kk + per_pos.shape[0]] += per_pos[:, kk, :].T
    return d_w, d_b, d_x


def relu_maxpool(feature_map: np.ndarray) -> PoolRecord:
    """ReLU then max over the position axis, tracking the winning index.

    Ties resolve to the first index; an all-nonpositive map pools to 0 with
    index 0 (and passes no gradient).
    """
    if feature_map.ndim != 2 or feature_map.shape[1] == 0:
        raise ShapeError("feature map must be M x P with P >= 1")
    clipped = np.maximum(feature_map, 0.0)
    indices = np.argmax(clipped, axis=1)  # first max
    values = clipped[np.arange(clipped.shape[0]), indices]
    indices = np.where(values > 0.0, indices, 0)
    return PoolRecord(indices=indices.astype(np.int64), values=values)


def relu_maxpool_backward(
    feature_map: np.ndarray, record: PoolRecord, d_values: np.ndarray
) -> np.ndarray:
    """Route gradient to the winning index of each filter; gate at ReLU 0."""
    d_h = np.zeros_like(feature_map)
    live = record.values > 0.0
    rows = np.nonzero(live)[0]
    d_h[rows, record.indices[rows]] = d_values[rows]
    return d_h


def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if w.ndim != 2 or x.shape != (w.shape[1],) or b.shape != (w.shape[0],):
        raise ShapeError(
            f"affine shapes disagree: x{x.shape} w{w.shape} b{b.shape}"
        )
    return w @ x + b


def dropout_mask(
    size: int, rate: float, rng: np.random.Generator
) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(size)
    return (rng.random(size) >= rate).astype(np.float64) / (1.0 - rate)


def dropout(
    x: np.ndarray,
    rate: float,
    mode: str,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Returns (output, mask); mask is None in eval mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout requires an RNG")
    mask = dropout_mask(x.shape[0], rate, rng)
    return x * mask, mask


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softplus(z: np.ndarray | float) -> np.ndarray | float:
    """log(1 + exp(z)) computed without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def bce_with_logits(z: np.ndarray | float, y: np.ndarray | float) -> np.ndarray | float:
    """-y*log(sigmoid(z)) - (1-y)*log(1-sigmoid(z)), stable in z."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return softplus(z) - y * z


def bce_with_logits_grad(z: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
    """d/dz of bce_with_logits: sigmoid(z) - y."""
    return np.asarray(sigmoid(z)) - np.asarray(y, dtype=np.float64)


def finite_difference(
    loss_fn,
    tensors: dict[str, np.ndarray],
    h: float = 1e-5,
    skip: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar loss over named tensors.

    loss_fn() is re-evaluated after perturbing entries in place. ``skip`` maps
    tensor names to boolean masks of entries to leave at zero (e.g. pinned
    rows). Tensors must be float64 for the stated tolerances to hold.
    """
    grads = {}
    for name, tensor in tensors.items():
        grad = np.zeros_like(tensor)
        mask = None if skip is None else skip.get(name)
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        mflat = None if mask is None else mask.reshape(-1)
        for i in range(flat.shape[0]):
            if mflat is not None and mflat[i]:
                continue
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = grad
    return grads


def max_relative_error(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    floor: float = 1e-8,
) -> float:
    """max over entries of |a - n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
