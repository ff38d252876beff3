"""Forward and backward kernels for the layer types of the embedding
network. All functions are pure and operate on ``(B, C, H, W)`` or
``(B, F)`` arrays in the caller's float dtype.
"""
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

#: Pre-normalisation norms below this map to the all-zero embedding.
NORM_EPSILON = 1e-12


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid-padding cross-correlation, stride 1.

    ``x`` is ``(B, C, H, W)``, ``weight`` is ``(K, C, kh, kw)``; the
    result is ``(B, K, H - kh + 1, W - kw + 1)``.
    """
    kh, kw = weight.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    out = np.einsum("bchwij,kcij->bkhw", windows, weight, optimize=True)
    return out + bias[np.newaxis, :, np.newaxis, np.newaxis]


def conv2d_backward(
    dout: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_forward`.

    :return: ``(dx, dweight, dbias)``.
    """
    kh, kw = weight.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    dweight = np.einsum("bkhw,bchwij->kcij", dout, windows, optimize=True)
    dbias = dout.sum(axis=(0, 2, 3))

    # full correlation of the zero-padded upstream with the flipped kernel
    padded = np.pad(dout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    dwindows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    dx = np.einsum(
        "bkhwij,kcij->bchw", dwindows, weight[:, :, ::-1, ::-1], optimize=True
    )
    return dx, dweight, dbias


def relu_forward(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0)


def relu_backward(dout: np.ndarray, z: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is 0
    return dout * (z > 0)


def maxpool_forward(x: np.ndarray, pool: int) -> Tuple[np.ndarray, np.ndarray]:
    """Non-overlapping ``pool x pool`` max pooling.

    Rows and columns past the last full window are dropped
    (``H_out = H // pool``).

    :return: ``(out, argmax)``; ``argmax`` indexes the flattened window and
      picks the first maximum on ties.
    """
    batch, channels, height, width = x.shape
    out_h, out_w = height // pool, width // pool
    cropped = x[:, :, : out_h * pool, : out_w * pool]
    windows = cropped.reshape(batch, channels, out_h, pool, out_w, pool)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(
        batch, channels, out_h, out_w, pool * pool
    )
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., np.newaxis], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(
    dout: np.ndarray, argmax: np.ndarray, input_shape: Tuple[int, ...], pool: int
) -> np.ndarray:
    batch, channels, height, width = input_shape
    out_h, out_w = dout.shape[2:]

    routed = (np.arange(pool * pool) == argmax[..., np.newaxis]) * dout[..., np.newaxis]
    routed = routed.reshape(batch, channels, out_h, out_w, pool, pool)
    routed = routed.transpose(0, 1, 2, 4, 3, 5).reshape(
        batch, channels, out_h * pool, out_w * pool
    )

    dx = np.zeros(input_shape, dtype=dout.dtype)
    dx[:, :, : out_h * pool, : out_w * pool] = routed
    return dx


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``x @ weight.T + bias`` with ``weight`` of shape ``(out, in)``."""
    return x @ weight.T + bias


def dense_backward(
    dout: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def l2_normalize_forward(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise unit normalisation.

    :return: ``(y, norms)``; rows with norm below :data:`NORM_EPSILON`
      become zero.
    """
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    degenerate = norms < NORM_EPSILON
    safe = np.where(degenerate, 1.0, norms)
    y = np.where(degenerate, 0.0, z / safe).astype(z.dtype, copy=False)
    return y, norms


def l2_normalize_backward(
    dy: np.ndarray, y: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    degenerate = norms < NORM_EPSILON
    safe = np.where(degenerate, 1.0, norms)
    dz = (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / safe
    return np.where(degenerate, 0.0, dz).astype(dy.dtype, copy=False)
