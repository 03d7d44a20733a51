"""Forward ops with their backward rules.

Video tensors are ``[T, C, H, W]`` (one clip) or ``[B, T, C, H, W]`` (a stack of
clips). Spatial ops act on every frame independently; temporal ops act along T
within each clip. Per-frame feature rows are ``[T, C]`` / ``[B, T, C]``.
"""

from __future__ import annotations

import contextlib
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result


class ShapeError(ValueError):
    """Operand shapes are incompatible with the op."""


class DilationWarning(UserWarning):
    """A temporal kernel span covers at least twice the clip length."""


class MacCounter:
    """Accumulates multiply-accumulates of conv/linear ops executed while active."""

    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


_mac_counter: MacCounter | None = None


@contextlib.contextmanager
def count_macs():
    """Instrument every conv/linear call in the block; yields a ``MacCounter``."""
    global _mac_counter
    prev = _mac_counter
    _mac_counter = MacCounter()
    try:
        yield _mac_counter
    finally:
        _mac_counter = prev


def _count(op: str, n: int) -> None:
    if _mac_counter is not None:
        _mac_counter.add(op, n)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _video5(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 4:
        return x.data[None], True
    if x.ndim == 5:
        return x.data, False
    raise ShapeError(f"{op}: expected [T,C,H,W] or [B,T,C,H,W], got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution core: x [B,T,C,H,W], w [O,C,kt,kh,kw], temporal stride 1


def _out_size(n, k, stride):
    return (n - k) // stride + 1


def _im2col(xp, kt, kh, kw, stride, dil_t, To, Ho, Wo):
    """Columns ``[B, To, C*kt*kh*kw, Ho*Wo]``: each frame stays a row block so matmul
    against the flattened weight lands directly in ``[B, T, O, H*W]`` layout."""
    B, _, C = xp.shape[:3]
    view = sliding_window_view(xp, (dil_t * (kt - 1) + 1, kh, kw), axis=(1, 3, 4))
    view = view[:, :To, :, :stride * (Ho - 1) + 1:stride, :stride * (Wo - 1) + 1:stride, ::dil_t]
    cols = np.ascontiguousarray(view.transpose(0, 1, 2, 5, 6, 7, 3, 4))
    return cols.reshape(B, To, C * kt * kh * kw, Ho * Wo)


# below this many output pixels per frame, fold (B, T, HW) into one matrix instead
_SMALL_HW = 16


def _rows(a):
    """``[B, T, F, HW] -> [B*T*HW, F]``."""
    return a.transpose(0, 1, 3, 2).reshape(-1, a.shape[2])


def _unrows(m, B, T, HW):
    return m.reshape(B, T, HW, -1).transpose(0, 1, 3, 2)


def _conv_forward(x, w, stride, pad, dil_t):
    pt, ph, pw = pad
    O, C, kt, kh, kw = w.shape
    B, T, _, H, W = x.shape
    if kt == kh == kw == 1 and stride == 1 and pad == (0, 0, 0):
        cols = x.reshape(B, T, C, H * W)
        Ho, Wo = H, W
    else:
        xp = np.pad(x, ((0, 0), (pt, pt), (0, 0), (ph, ph), (pw, pw))) if any(pad) else x
        Ho, Wo = _out_size(H + 2 * ph, kh, stride), _out_size(W + 2 * pw, kw, stride)
        To = T + 2 * pt - dil_t * (kt - 1)
        cols = _im2col(xp, kt, kh, kw, stride, dil_t, To, Ho, Wo)
    To = cols.shape[1]
    if Ho * Wo < _SMALL_HW:
        y = _unrows(_rows(cols) @ w.reshape(O, -1).T, B, To, Ho * Wo)
    else:
        y = np.matmul(w.reshape(O, -1), cols)
    return np.ascontiguousarray(y).reshape(B, To, O, Ho, Wo), cols


def _conv_backward(g, x, cols, w, stride, pad, dil_t, need_gx=True):
    pt, ph, pw = pad
    O, C, kt, kh, kw = w.shape
    B, To, _, Ho, Wo = g.shape
    g2 = g.reshape(B, To, O, Ho * Wo)
    small = Ho * Wo < _SMALL_HW
    if small:
        grows = _rows(g2)
        gw = (grows.T @ _rows(cols)).reshape(w.shape)
    else:
        gw = np.matmul(g2, cols.swapaxes(-1, -2)).sum(axis=(0, 1)).reshape(w.shape)
    if not need_gx:
        return None, gw
    if small:
        gcols = np.ascontiguousarray(_unrows(grows @ w.reshape(O, -1), B, To, Ho * Wo))
    else:
        gcols = np.matmul(w.reshape(O, -1).T, g2)
    if kt == kh == kw == 1 and stride == 1 and pad == (0, 0, 0):
        return gcols.reshape(x.shape), gw
    gcols = gcols.reshape(B, To, C, kt, kh, kw, Ho, Wo)
    T, H, W = x.shape[1], x.shape[3], x.shape[4]
    gxp = np.zeros((B, T + 2 * pt, C, H + 2 * ph, W + 2 * pw), dtype=g.dtype)
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    for a in range(kt):
        t0 = a * dil_t
        for i in range(kh):
            for j in range(kw):
                gxp[:, t0:t0 + To, :, i:i + hs:stride, j:j + ws:stride] += gcols[:, :, :, a, i, j]
    return np.ascontiguousarray(gxp[:, pt:pt + T, :, ph:ph + H, pw:pw + W]), gw


def _conv_op(name, x, w5, b, stride, pad, dil_t, w_shape):
    x5, squeeze = _video5(x, name)
    y, cols = _conv_forward(x5, w5.astype(x5.dtype, copy=False), stride, pad, dil_t)
    O, C, kt, kh, kw = w5.shape
    _count(name, O * C * kt * kh * kw * y.shape[0] * y.shape[1] * y.shape[3] * y.shape[4])
    if b is not None:
        y += b.data.reshape(1, 1, -1, 1, 1)
    out_data = y[0] if squeeze else y

    def backward_fn(g):
        g5 = g[None] if squeeze else g
        gx, gw = _conv_backward(g5, x5, cols, w5, stride, pad, dil_t, need_gx=x.requires_grad)
        if gx is not None and squeeze:
            gx = gx[0]
        grads = [gx, gw.reshape(w_shape)]
        if b is not None:
            grads.append(g5.sum(axis=(0, 1, 3, 4)))
        return grads

    return out_data, backward_fn


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Per-frame 2D cross-correlation with zero padding.

    ``x`` is ``[T,Cin,H,W]`` (or batched), ``w`` is ``[Cout,Cin,kh,kw]``.
    """
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be [Cout,Cin,kh,kw], got {w.shape}")
    Cout, Cin, kh, kw = w.shape
    if x.ndim not in (4, 5) or x.shape[-3] != Cin:
        raise ShapeError(f"conv2d: input channels {x.shape[-3:-2] if x.ndim >= 3 else x.shape} do not match weight Cin={Cin} (x {x.shape}, w {w.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd, got {kh}x{kw}")
    if pad < 0 or stride < 1:
        raise ShapeError(f"conv2d: invalid pad={pad} stride={stride}")
    if x.shape[-2] + 2 * pad < kh or x.shape[-1] + 2 * pad < kw:
        raise ShapeError(f"conv2d: padded input {x.shape[-2:]} (+{pad}) smaller than kernel {kh}x{kw}")
    _check_bias(b, Cout, "conv2d")
    w5 = w.data[:, :, None]
    data, bwd = _conv_op("conv2d", x, w5, b, stride, (0, pad, pad), 1, w.shape)
    return make_result(data, (x, w) if b is None else (x, w, b), "conv2d", bwd)


def conv1d_temporal(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Dilated 1D convolution along T, mixing all channels, shared over (h, w).

    Zero padding of ``dilation*(k-1)/2`` frames per side keeps T unchanged.
    """
    if w.ndim != 3:
        raise ShapeError(f"conv1d_temporal: weight must be [Cout,Cin,k], got {w.shape}")
    Cout, Cin, k = w.shape
    if x.ndim not in (4, 5) or x.shape[-3] != Cin:
        raise ShapeError(f"conv1d_temporal: input channels do not match weight Cin={Cin} (x {x.shape}, w {w.shape})")
    if k % 2 == 0:
        raise ShapeError(f"conv1d_temporal: kernel must be odd, got {k}")
    if dilation < 1:
        raise ShapeError(f"conv1d_temporal: dilation must be >= 1, got {dilation}")
    T = x.shape[-4]
    if dilation * (k - 1) >= 2 * T:
        warnings.warn(
            f"temporal span {dilation * (k - 1) + 1} (k={k}, dilation={dilation}) covers >= 2x the clip length T={T}; "
            "outputs are dominated by zero padding",
            DilationWarning,
            stacklevel=2,
        )
    _check_bias(b, Cout, "conv1d_temporal")
    pad_t = dilation * (k - 1) // 2
    w5 = w.data[:, :, :, None, None]
    data, bwd = _conv_op("conv1d_temporal", x, w5, b, 1, (pad_t, 0, 0), dilation, w.shape)
    return make_result(data, (x, w) if b is None else (x, w, b), "conv1d_temporal", bwd)


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: tuple[int, int, int] = (1, 1, 1)) -> Tensor:
    """Spatio-temporal convolution ``[Cout,Cin,kt,kh,kw]``; spatial stride only."""
    if w.ndim != 5:
        raise ShapeError(f"conv3d: weight must be [Cout,Cin,kt,kh,kw], got {w.shape}")
    Cout, Cin, kt, kh, kw = w.shape
    if x.ndim not in (4, 5) or x.shape[-3] != Cin:
        raise ShapeError(f"conv3d: input channels do not match weight Cin={Cin} (x {x.shape}, w {w.shape})")
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv3d: kernel must be odd, got {kt}x{kh}x{kw}")
    pad = tuple(int(p) for p in pad)
    if x.shape[-4] + 2 * pad[0] < kt or x.shape[-2] + 2 * pad[1] < kh or x.shape[-1] + 2 * pad[2] < kw:
        raise ShapeError(f"conv3d: padded input smaller than kernel ({x.shape}, pad {pad})")
    _check_bias(b, Cout, "conv3d")
    data, bwd = _conv_op("conv3d", x, w.data, b, stride, pad, 1, w.shape)
    return make_result(data, (x, w) if b is None else (x, w, b), "conv3d", bwd)


def _check_bias(b, cout, op):
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"{op}: bias must be [{cout}], got {b.shape}")


# --------------------------------------------------------------------------
# pooling


def _pool_windows(xp, k, stride):
    view = sliding_window_view(xp, (k, k), axis=(3, 4))
    return view[:, :, :, ::stride, ::stride]


def maxpool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    """Per-frame max pool. Gradient goes to the first maximal element in row-major order."""
    x5, squeeze = _video5(x, "maxpool2d")
    H, W = x5.shape[3], x5.shape[4]
    if H + 2 * pad < k or W + 2 * pad < k:
        raise ShapeError(f"maxpool2d: input {H}x{W} (pad {pad}) smaller than window {k}")
    xp = np.pad(x5, ((0, 0),) * 3 + ((pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x5
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    taps = [
        xp[:, :, :, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride]
        for di in range(k)
        for dj in range(k)
    ]
    y = taps[0].copy()
    for tap in taps[1:]:
        np.maximum(y, tap, out=y)
    # first tap (row-major) that attains the max
    idx = np.full(y.shape, k * k, dtype=np.int16)
    for j in range(k * k - 1, -1, -1):
        idx[taps[j] == y] = j

    def backward_fn(g):
        g5 = g[None] if squeeze else g
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for j in range(k * k):
            di, dj = divmod(j, k)
            gxp[:, :, :, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride] += np.where(idx == j, g5, 0)
        gx = gxp[:, :, :, pad:pad + H, pad:pad + W]
        return [np.ascontiguousarray(gx[0] if squeeze else gx)]

    return make_result(y[0] if squeeze else y, (x,), "maxpool2d", backward_fn)


def avgpool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    """Per-frame average pool with zero padding counted in the divisor."""
    x5, squeeze = _video5(x, "avgpool2d")
    H, W = x5.shape[3], x5.shape[4]
    if H + 2 * pad < k or W + 2 * pad < k:
        raise ShapeError(f"avgpool2d: input {H}x{W} (pad {pad}) smaller than window {k}")
    xp = np.pad(x5, ((0, 0),) * 3 + ((pad, pad), (pad, pad))) if pad else x5
    y = _pool_windows(xp, k, stride).mean(axis=(-2, -1))
    Ho, Wo = y.shape[3], y.shape[4]

    def backward_fn(g):
        g5 = (g[None] if squeeze else g) / (k * k)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for di in range(k):
            for dj in range(k):
                gxp[:, :, :, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride] += g5
        gx = gxp[:, :, :, pad:pad + H, pad:pad + W]
        return [np.ascontiguousarray(gx[0] if squeeze else gx)]

    return make_result(y[0] if squeeze else y, (x,), "avgpool2d", backward_fn)


def maxpool_temporal(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max pool along T within each clip (no padding)."""
    x5, squeeze = _video5(x, "maxpool_temporal")
    T = x5.shape[1]
    if T < k:
        raise ShapeError(f"maxpool_temporal: T={T} smaller than window {k}")
    view = sliding_window_view(x5, k, axis=1)[:, ::stride]
    idx = view.argmax(axis=-1)
    y = np.take_along_axis(view, idx[..., None], axis=-1)[..., 0]
    To = y.shape[1]

    def backward_fn(g):
        g5 = g[None] if squeeze else g
        gx = np.zeros(x5.shape, dtype=g.dtype)
        for j in range(k):
            gx[:, j:j + stride * (To - 1) + 1:stride] += np.where(idx == j, g5, 0)
        return [gx[0] if squeeze else gx]

    return make_result(y[0] if squeeze else y, (x,), "maxpool_temporal", backward_fn)


def avgpool_temporal(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Average pool along T within each clip (no padding)."""
    x5, squeeze = _video5(x, "avgpool_temporal")
    if x5.shape[1] < k:
        raise ShapeError(f"avgpool_temporal: T={x5.shape[1]} smaller than window {k}")
    y = sliding_window_view(x5, k, axis=1)[:, ::stride].mean(axis=-1)
    To = y.shape[1]

    def backward_fn(g):
        g5 = (g[None] if squeeze else g) / k
        gx = np.zeros(x5.shape, dtype=g.dtype)
        for j in range(k):
            gx[:, j:j + stride * (To - 1) + 1:stride] += g5
        return [gx[0] if squeeze else gx]

    return make_result(y[0] if squeeze else y, (x,), "avgpool_temporal", backward_fn)


def spatial_avgpool(x: Tensor) -> Tensor:
    """Mean over all H*W sites: ``[..., T, C, H, W] -> [..., T, C]``."""
    if x.ndim not in (4, 5):
        raise ShapeError(f"spatial_avgpool: expected a video tensor, got {x.shape}")
    H, W = x.shape[-2], x.shape[-1]
    y = x.data.mean(axis=(-2, -1))

    def backward_fn(g):
        return [np.broadcast_to((g / (H * W))[..., None, None], x.shape).copy()]

    return make_result(y, (x,), "spatial_avgpool", backward_fn)


# --------------------------------------------------------------------------
# dense / elementwise


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-row affine map ``x @ w.T + b`` with ``w`` of shape ``[K, C]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: inner dims differ (x {x.shape}, w {w.shape})")
    _check_bias(b, w.shape[0], "linear")
    y = x.data @ w.data.T.astype(x.dtype, copy=False)
    _count("linear", w.shape[0] * w.shape[1] * (x.size // w.shape[1]))
    if b is not None:
        y = y + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        g2 = g.reshape(-1, w.shape[0])
        x2 = x.data.reshape(-1, w.shape[1])
        grads = [(g @ w.data).astype(x.dtype, copy=False), g2.T @ x2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_result(y, inputs, "linear", backward_fn)


def _same_shape(x: Tensor, y: Tensor, op: str) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shapes differ {x.shape} vs {y.shape} (no implicit broadcasting)")


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "add")
    return make_result(x.data + y.data, (x, y), "add", lambda g: [g, g])


def mul(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "mul")
    return make_result(x.data * y.data, (x, y), "mul", lambda g: [g * y.data, g * x.data])


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN, so bad inputs surface in the loss instead of vanishing
    return make_result(np.maximum(x.data, 0).astype(x.dtype, copy=False), (x,), "relu", lambda g: [g * mask])


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_result(s, (x,), "sigmoid", lambda g: [g * s * (1 - s)])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), "sum", lambda g: [np.full(x.shape, g, dtype=x.dtype)])


def mean(x: Tensor) -> Tensor:
    n = x.size
    return make_result(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,), "mean", lambda g: [np.full(x.shape, g / n, dtype=x.dtype)]
    )


def repeat_time(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour temporal upsampling of ``[..., T, K]`` rows to ``[..., T*factor, K]``."""
    if factor == 1:
        return x
    y = np.repeat(x.data, factor, axis=-2)

    def backward_fn(g):
        shp = g.shape[:-2] + (g.shape[-2] // factor, factor, g.shape[-1])
        return [g.reshape(shp).sum(axis=-2)]

    return make_result(y, (x,), "repeat_time", backward_fn)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels, stable form."""
    y = np.asarray(labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: labels {y.shape} vs logits {logits.shape}")
    z = logits.data
    n = z.size
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()

    def backward_fn(g):
        return [(g * (_sigmoid(z) - y) / n).astype(z.dtype)]

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), "bce_with_logits", backward_fn)
