"""Dense volumes and the raw 3D sliding-window kernels.

A volume is a rank-4 ``numpy`` array with axes ``(x, y, z, c)``, stored
row-major with the channel axis fastest.  Batched variants prepend a sample
axis ``(n, x, y, z, c)``; the public single-volume operations below are thin
wrappers over the batched kernels used by the layer graph.

All kernels are pure functions.  Accumulation precision follows the input
dtype: float64 inputs give the single-order deterministic results the test
oracles rely on, float32 is the training path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError

__all__ = [
    "Kernel",
    "conv_output_extent",
    "correlate3d",
    "correlate3d_vjp",
    "maxpool3d",
    "maxpool3d_vjp",
    "global_avg_pool3d",
    "flatten",
]


@dataclass
class Kernel:
    """Cubic correlation kernel: weights ``(k, k, k, c_in, c_out)``, bias ``(c_out,)``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 5 or not (w.shape[0] == w.shape[1] == w.shape[2]):
            raise ShapeError(f"kernel weights must be (k, k, k, c_in, c_out), got {w.shape}")
        if w.shape[0] < 1 or w.shape[3] < 1 or w.shape[4] < 1:
            raise ShapeError("kernel dims must all be >= 1")
        b = np.asarray(self.bias)
        if b.shape != (w.shape[4],):
            raise ShapeError(f"bias must have shape ({w.shape[4]},), got {b.shape}")
        self.weights = w
        self.bias = b

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[3]

    @property
    def c_out(self) -> int:
        return self.weights.shape[4]


def conv_output_extent(extent: int, k: int, padding: int, stride: int) -> int:
    """Shape law: floor((in + 2*padding - k) / stride) + 1."""
    out = (extent + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"window {k} does not fit extent {extent} with padding {padding}"
        )
    return out


def _check_volume(vol: np.ndarray, name: str = "input") -> np.ndarray:
    vol = np.asarray(vol)
    if vol.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (x, y, z, c), got shape {vol.shape}")
    if min(vol.shape) < 1:
        raise ShapeError(f"{name} dims must all be >= 1, got {vol.shape}")
    return vol


def _require_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def _windows(batch: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Strided view of all kernel windows: (n, ox, oy, oz, c, k, k, k)."""
    if padding:
        pad = [(0, 0)] + [(padding, padding)] * 3 + [(0, 0)]
        batch = np.pad(batch, pad)
    for axis in range(1, 4):
        if batch.shape[axis] < k:
            raise ShapeError(
                f"kernel size {k} exceeds padded extent {batch.shape[axis]} on axis {axis - 1}"
            )
    win = sliding_window_view(batch, (k, k, k), axis=(1, 2, 3))
    return win[:, ::stride, ::stride, ::stride]


def correlate3d_batch(batch: np.ndarray, kernel: Kernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate a batch ``(n, x, y, z, c_in)`` with a cubic kernel."""
    if batch.shape[4] != kernel.c_in:
        raise ShapeError(f"input channels {batch.shape[4]} != kernel c_in {kernel.c_in}")
    win = _windows(batch, kernel.k, stride, padding)
    out = np.tensordot(win, kernel.weights, axes=([5, 6, 7, 4], [0, 1, 2, 3]))
    out += kernel.bias
    return out


def correlate3d_vjp_batch(batch, kernel: Kernel, grad_out, stride: int = 1, padding: int = 0):
    """Vector-Jacobian products of :func:`correlate3d_batch`.

    Returns ``(grad_input, grad_weights, grad_bias)``.
    """
    k = kernel.k
    n, ox, oy, oz, c_out = grad_out.shape
    expect = (batch.shape[0],) + tuple(
        conv_output_extent(batch.shape[i + 1], k, padding, stride) for i in range(3)
    ) + (kernel.c_out,)
    if grad_out.shape != expect:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expect}")

    win = _windows(batch, k, stride, padding)
    # (n, ox, oy, oz, c_in, k, k, k) x (n, ox, oy, oz, c_out) over the batch axes
    gw = np.tensordot(win, grad_out, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
    grad_weights = gw.transpose(1, 2, 3, 0, 4)
    grad_bias = grad_out.sum(axis=(0, 1, 2, 3))

    padded_shape = (n,) + tuple(batch.shape[i + 1] + 2 * padding for i in range(3)) + (kernel.c_in,)
    grad_padded = np.zeros(padded_shape, dtype=grad_out.dtype)
    # Scatter one kernel offset at a time; k^3 strided slice-adds.
    for a in range(k):
        for b in range(k):
            for c in range(k):
                gi = np.tensordot(grad_out, kernel.weights[a, b, c], axes=([4], [1]))
                grad_padded[
                    :,
                    a : a + stride * ox : stride,
                    b : b + stride * oy : stride,
                    c : c + stride * oz : stride,
                    :,
                ] += gi
    if padding:
        grad_input = grad_padded[:, padding:-padding, padding:-padding, padding:-padding, :]
    else:
        grad_input = grad_padded
    return grad_input, grad_weights, grad_bias


def maxpool3d_batch(batch: np.ndarray, window: int, stride: int):
    """Valid max pooling over a batch; returns (output, argmax flat indices).

    Argmax indices address the flattened input batch and route gradients in
    the backward pass.  Ties resolve to the first maximal index in scan
    order.
    """
    n, x, y, z, c = batch.shape
    for extent in (x, y, z):
        if window > extent:
            raise ShapeError(f"pool window {window} exceeds spatial extent {extent}")
    win = sliding_window_view(batch, (window, window, window), axis=(1, 2, 3))
    win = win[:, ::stride, ::stride, ::stride]
    ox, oy, oz = win.shape[1:4]
    flat = win.reshape(n, ox, oy, oz, c, window**3)
    local = flat.argmax(axis=5)
    out = np.take_along_axis(flat, local[..., None], axis=5)[..., 0]

    # Convert the within-window argmax to flat indices into the input batch.
    wa, rem = np.divmod(local, window * window)
    wb, wc = np.divmod(rem, window)
    ix = stride * np.arange(ox).reshape(1, ox, 1, 1, 1) + wa
    iy = stride * np.arange(oy).reshape(1, 1, oy, 1, 1) + wb
    iz = stride * np.arange(oz).reshape(1, 1, 1, oz, 1) + wc
    ib = np.arange(n).reshape(n, 1, 1, 1, 1)
    ic = np.arange(c).reshape(1, 1, 1, 1, c)
    indices = (((ib * x + ix) * y + iy) * z + iz) * c + ic
    return out, indices


def maxpool3d_vjp_batch(indices: np.ndarray, grad_out: np.ndarray, input_shape) -> np.ndarray:
    if indices.shape != grad_out.shape:
        raise ShapeError(f"indices shape {indices.shape} != grad_out shape {grad_out.shape}")
    grad = np.zeros(int(np.prod(input_shape)), dtype=grad_out.dtype)
    np.add.at(grad, indices.ravel(), grad_out.ravel())
    return grad.reshape(input_shape)


# ---------------------------------------------------------------------------
# Single-volume API


def correlate3d(vol: np.ndarray, kernel: Kernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Correlate one volume ``(x, y, z, c_in)`` with a cubic kernel."""
    vol = _check_volume(vol)
    out = correlate3d_batch(vol[None], kernel, stride, padding)[0]
    _require_finite(out, "correlate3d output")
    return out


def correlate3d_vjp(vol, kernel: Kernel, grad_out, stride: int = 1, padding: int = 0):
    vol = _check_volume(vol)
    gi, gw, gb = correlate3d_vjp_batch(vol[None], kernel, grad_out[None], stride, padding)
    return gi[0], gw, gb


def maxpool3d(vol: np.ndarray, window: int, stride: int):
    vol = _check_volume(vol)
    out, idx = maxpool3d_batch(vol[None], window, stride)
    return out[0], idx


def maxpool3d_vjp(indices: np.ndarray, grad_out: np.ndarray, input_shape) -> np.ndarray:
    return maxpool3d_vjp_batch(indices, grad_out[None], (1,) + tuple(input_shape))[0]


def global_avg_pool3d(vol: np.ndarray) -> np.ndarray:
    """Mean over all spatial positions, per channel; returns a length-c vector."""
    vol = _check_volume(vol)
    return vol.mean(axis=(0, 1, 2))


def flatten(vol: np.ndarray) -> np.ndarray:
    """Row-major (channel fastest) flattening to a length x*y*z*c vector."""
    vol = _check_volume(vol)
    return vol.reshape(-1)
