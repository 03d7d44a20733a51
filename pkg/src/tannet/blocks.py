"""Spatial bottleneck block and the temporal aggregation (TA) module.

Both operate on ``[T, C, H, W]`` (or batched ``[B, T, C, H, W]``) feature maps and
take their weights as a flat ``{name: Tensor}`` mapping whose keys are listed by
``param_shapes()``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autograd import Tensor, ops


@dataclass(frozen=True)
class BottleneckSpec:
    """1x1 reduce -> 3x3 -> 1x1 expand, plus a residual shortcut.

    ``temporal_kernel=3`` turns the 3x3 into a 3x3x3 convolution (the 3D baseline).
    """

    in_channels: int
    out_channels: int
    mid_channels: int | None = None
    spatial_stride: int = 1
    temporal_kernel: int = 1

    def __post_init__(self):
        if self.mid_channels is None:
            object.__setattr__(self, "mid_channels", max(1, self.out_channels // 4))
        if min(self.in_channels, self.out_channels, self.mid_channels, self.spatial_stride) < 1:
            raise ValueError(f"invalid bottleneck spec {self}")
        if self.temporal_kernel not in (1, 3):
            raise ValueError(f"temporal_kernel must be 1 or 3, got {self.temporal_kernel}")

    @property
    def has_projection(self) -> bool:
        return self.in_channels != self.out_channels or self.spatial_stride != 1

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        cin, m, cout = self.in_channels, self.mid_channels, self.out_channels
        mid_w = (m, m, 3, 3) if self.temporal_kernel == 1 else (m, m, self.temporal_kernel, 3, 3)
        shapes = {
            "conv1/weight": (m, cin, 1, 1),
            "conv1/bias": (m,),
            "conv2/weight": mid_w,
            "conv2/bias": (m,),
            "conv3/weight": (cout, m, 1, 1),
            "conv3/bias": (cout,),
        }
        if self.has_projection:
            shapes["proj/weight"] = (cout, cin, 1, 1)
            shapes["proj/bias"] = (cout,)
        return shapes

    def num_params(self) -> int:
        cin, m, cout = self.in_channels, self.mid_channels, self.out_channels
        kt = self.temporal_kernel
        n = (cin * m + m) + (m * m * 9 * kt + m) + (m * cout + cout)
        if self.has_projection:
            n += cin * cout + cout
        return n


@dataclass(frozen=True)
class TAModuleSpec:
    """Parallel dilated temporal convolutions (channels -> channels) plus identity."""

    channels: int
    kernel: int = 3
    dilations: tuple[int, ...] = field(default=(1, 2, 3))

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.channels < 1:
            raise ValueError(f"channels must be positive, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if not self.dilations:
            raise ValueError("dilations must be non-empty")
        if min(self.dilations) < 1:
            raise ValueError(f"dilations must be positive, got {self.dilations}")
        if len(set(self.dilations)) != len(self.dilations):
            raise ValueError(f"dilations must be distinct, got {self.dilations}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c, k = self.channels, self.kernel
        shapes = {}
        for d in self.dilations:
            shapes[f"branch_d{d}/weight"] = (c, c, k)
            shapes[f"branch_d{d}/bias"] = (c,)
        return shapes

    def num_params(self) -> int:
        c = self.channels
        return len(self.dilations) * (c * c * self.kernel + c)


def he_normal(rng: np.random.Generator, shape, fan_in: int, scale: float = 1.0, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * (scale * np.sqrt(2.0 / fan_in))).astype(dtype)


def _fan_in(shape) -> int:
    return int(np.prod(shape[1:]))


def init_bottleneck(spec: BottleneckSpec, rng: np.random.Generator, dtype=np.float32, zero_last: bool = True) -> dict[str, Tensor]:
    """He-normal conv weights, zero biases.

    With ``zero_last`` the final 1x1 conv starts at zero so every block begins as
    its shortcut; without normalisation layers this keeps initial logits tame.
    """
    out = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("bias") or (zero_last and name == "conv3/weight"):
            out[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        else:
            out[name] = Tensor(he_normal(rng, shape, _fan_in(shape), dtype=dtype), requires_grad=True)
    return out


def init_ta(spec: TAModuleSpec, rng: np.random.Generator, dtype=np.float32, zero: bool = True) -> dict[str, Tensor]:
    """Zero branch weights by default, so a fresh module passes its input through.

    With ``zero=False`` branches get He-normal weights scaled by 1/len(dilations)
    so the branch sum stays unit order.
    """
    out = {}
    scale = 1.0 / len(spec.dilations)
    for name, shape in spec.param_shapes().items():
        if name.endswith("bias") or zero:
            out[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        else:
            out[name] = Tensor(he_normal(rng, shape, _fan_in(shape), scale, dtype), requires_grad=True)
    return out


def _check_weights(weights: Mapping[str, Tensor], shapes: Mapping[str, tuple], what: str) -> None:
    missing = [n for n in shapes if n not in weights]
    if missing:
        raise ValueError(f"{what}: missing weights {missing}")
    for n, shp in shapes.items():
        if tuple(weights[n].shape) != tuple(shp):
            raise ValueError(f"{what}: weight {n} has shape {weights[n].shape}, expected {shp}")


def _conv(x, w, b, pad):
    if w.ndim == 5:
        return ops.conv3d(x, w, b, pad=(w.shape[2] // 2, pad, pad))
    return ops.conv2d(x, w, b, pad=pad)


def bottleneck_forward(x: Tensor, spec: BottleneckSpec, weights: Mapping[str, Tensor], check: bool = True, activation=ops.relu) -> Tensor:
    """``relu(conv3(relu(conv2(relu(conv1(x))))) + shortcut(x))``, frame by frame."""
    if check:
        _check_weights(weights, spec.param_shapes(), "bottleneck")
        if x.shape[-3] != spec.in_channels:
            raise ValueError(f"bottleneck: input has {x.shape[-3]} channels, spec expects {spec.in_channels}")
    s = spec.spatial_stride
    h = activation(ops.conv2d(x, weights["conv1/weight"], weights["conv1/bias"], stride=s))
    h = activation(_conv(h, weights["conv2/weight"], weights["conv2/bias"], pad=1))
    h = ops.conv2d(h, weights["conv3/weight"], weights["conv3/bias"])
    if spec.has_projection:
        shortcut = ops.conv2d(x, weights["proj/weight"], weights["proj/bias"], stride=s)
    else:
        shortcut = x
    return activation(ops.add(h, shortcut))


def ta_forward(x: Tensor, spec: TAModuleSpec, weights: Mapping[str, Tensor], check: bool = True, activation=ops.relu) -> Tensor:
    """``relu(x + sum_d branch_d(x))``; every dimension of ``x`` is preserved.

    ``activation`` can be swapped (e.g. for an identity) when probing linear behaviour.
    """
    if check:
        _check_weights(weights, spec.param_shapes(), "TA module")
        if x.shape[-3] != spec.channels:
            raise ValueError(f"TA module: input has {x.shape[-3]} channels, spec expects {spec.channels}")
    acc = x
    for d in spec.dilations:
        acc = ops.add(acc, ops.conv1d_temporal(x, weights[f"branch_d{d}/weight"], weights[f"branch_d{d}/bias"], dilation=d))
    return activation(acc)


def ta_receptive_field(spec: TAModuleSpec) -> int:
    """Frames seen by one TA output: the widest branch footprint (the identity covers 1)."""
    return 1 + max(spec.dilations) * (spec.kernel - 1)
