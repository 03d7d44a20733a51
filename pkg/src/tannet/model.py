"""Full network: stem, four levels of bottlenecks each capped by a temporal module, dense head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .autograd import Tensor, ops
from .blocks import (
    BottleneckSpec,
    TAModuleSpec,
    bottleneck_forward,
    he_normal,
    init_bottleneck,
    init_ta,
    ta_forward,
)

VARIANTS = ("tan", "res3d", "res2d", "tan_plainconv")
STEM_KERNEL = 7
STEM_POOL = 3
# res3d halves T at the stem pool and after levels 1 and 2
RES3D_TEMPORAL_POOLS = ("stem", 1, 2)


class ConfigError(ValueError):
    """An architecture or run configuration violates its invariants."""


@dataclass
class ArchConfig:
    """Declarative description of one network variant."""

    input_spatial: int = 32
    temporal_len: int = 16
    channels: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_level: tuple[int, ...] = (2, 2, 2, 2)
    ta_enabled: tuple[bool, ...] = (True, True, True, True)
    ta_dilations: tuple[int, ...] = (1, 2, 3)
    ta_kernel: int = 3
    num_classes: int = 8
    variant: str = "tan"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.blocks_per_level = tuple(int(b) for b in self.blocks_per_level)
        self.ta_enabled = tuple(bool(f) for f in self.ta_enabled)
        self.ta_dilations = tuple(int(d) for d in self.ta_dilations)
        self.validate()

    def validate(self) -> None:
        for name in ("channels", "blocks_per_level", "ta_enabled"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"{name} must have 4 entries (one per level), got {getattr(self, name)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_spatial < 32 or self.input_spatial % 32:
            raise ConfigError(f"input_spatial must be a positive multiple of 32, got {self.input_spatial}")
        if self.temporal_len < 1:
            raise ConfigError(f"temporal_len must be positive, got {self.temporal_len}")
        if self.variant == "res3d" and self.temporal_len % 8:
            raise ConfigError(f"res3d halves T three times; temporal_len must be a multiple of 8, got {self.temporal_len}")
        if min(self.channels) < 4:
            raise ConfigError(f"channels must be >= 4, got {self.channels}")
        if min(self.blocks_per_level) < 1:
            raise ConfigError(f"blocks_per_level must be >= 1, got {self.blocks_per_level}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
        TAModuleSpec(self.channels[0], self.ta_kernel, self.ta_dilations)

    def replace(self, **changes) -> "ArchConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown ArchConfig keys: {unknown}")
        return cls(**d)

    # -- derived structure

    def has_temporal(self, level: int) -> bool:
        """Whether level ``level`` (1-based) ends in a temporal module."""
        return self.variant != "res2d" and self.ta_enabled[level - 1]

    def temporal_strides(self) -> dict:
        if self.variant != "res3d":
            return {}
        return {k: 2 for k in RES3D_TEMPORAL_POOLS}

    def output_length(self) -> int:
        """T reaching the head."""
        return self.temporal_len // (2 ** len(self.temporal_strides()))

    def bottleneck_specs(self, level: int) -> list[BottleneckSpec]:
        kt = 3 if self.variant == "res3d" else 1
        cout = self.channels[level - 1]
        cin = self.channels[level - 2] if level > 1 else self.channels[0]
        specs = []
        for b in range(self.blocks_per_level[level - 1]):
            specs.append(BottleneckSpec(cin if b == 0 else cout, cout, temporal_kernel=kt))
        return specs

    def temporal_spec(self, level: int) -> TAModuleSpec | None:
        if not self.has_temporal(level):
            return None
        c = self.channels[level - 1]
        if self.variant == "tan_plainconv":
            return TAModuleSpec(c, 3, (1,))
        return TAModuleSpec(c, self.ta_kernel, self.ta_dilations)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Every parameter name and shape, in registry order."""
        c0 = self.channels[0]
        shapes = {"stem/conv/weight": (c0, 3, STEM_KERNEL, STEM_KERNEL), "stem/conv/bias": (c0,)}
        for lv in range(1, 5):
            for b, spec in enumerate(self.bottleneck_specs(lv)):
                for n, s in spec.param_shapes().items():
                    shapes[f"level{lv}/block{b}/{n}"] = s
            tspec = self.temporal_spec(lv)
            if tspec is not None:
                for n, s in tspec.param_shapes().items():
                    shapes[f"{self._temporal_prefix(lv)}/{n}"] = s
        shapes["head/fc/weight"] = (self.num_classes, self.channels[3])
        shapes["head/fc/bias"] = (self.num_classes,)
        return shapes

    def _temporal_prefix(self, level: int) -> str:
        return f"level{level}/temporal" if self.variant == "tan_plainconv" else f"level{level}/ta"


def is_temporal_param(name: str) -> bool:
    """Parameters that belong to a TA module or plain temporal conv (not to any 2D layer)."""
    parts = name.split("/")
    return len(parts) > 1 and parts[1] in ("ta", "temporal")


def _identity(x):
    return x


class TANModel:
    """Parameter registry plus the forward pass for one ``ArchConfig``.

    ``params`` maps hierarchical names (``level2/block0/conv1/weight``) to leaf
    tensors, in a fixed registry order shared with the checkpoint format.
    """

    def __init__(self, config: ArchConfig, params: dict[str, Tensor] | None = None, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.params = params if params is not None else self._init_params(seed, dtype)

    def _init_params(self, seed, dtype) -> dict[str, Tensor]:
        cfg = self.config
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        stem_shape = cfg.param_shapes()["stem/conv/weight"]
        params["stem/conv/weight"] = Tensor(he_normal(rng, stem_shape, 3 * STEM_KERNEL**2, dtype=dtype), requires_grad=True)
        params["stem/conv/bias"] = Tensor(np.zeros(stem_shape[0], dtype=dtype), requires_grad=True)
        for lv in range(1, 5):
            for b, spec in enumerate(cfg.bottleneck_specs(lv)):
                for n, t in init_bottleneck(spec, rng, dtype).items():
                    params[f"level{lv}/block{b}/{n}"] = t
            tspec = cfg.temporal_spec(lv)
            if tspec is not None:
                for n, t in init_ta(tspec, rng, dtype).items():
                    params[f"{cfg._temporal_prefix(lv)}/{n}"] = t
        K, C = cfg.num_classes, cfg.channels[3]
        params["head/fc/weight"] = Tensor((rng.standard_normal((K, C)) / np.sqrt(C)).astype(dtype), requires_grad=True)
        params["head/fc/bias"] = Tensor(np.zeros(K, dtype=dtype), requires_grad=True)
        assert list(params) == list(cfg.param_shapes())
        return params

    # -- registry helpers

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_params(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def copy(self) -> "TANModel":
        params = {n: Tensor(t.data.copy(), requires_grad=t.requires_grad) for n, t in self.params.items()}
        return TANModel(self.config, params)

    def _sub(self, prefix: str) -> dict[str, Tensor]:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix + "/")}

    # -- forward

    def feature_maps(self, clip: Tensor, linear_probe: bool = False, upto: int = 4) -> Tensor:
        """Stem plus levels ``1..upto``; returns the last level's map before its pool.

        With ``linear_probe`` every ReLU becomes the identity and every max pool an
        average pool, which keeps the network linear for receptive-field probing.
        """
        cfg = self.config
        act = _identity if linear_probe else ops.relu
        pool2d = ops.avgpool2d if linear_probe else ops.maxpool2d
        poolt = ops.avgpool_temporal if linear_probe else ops.maxpool_temporal
        tstrides = cfg.temporal_strides()
        p = self.params

        x = act(ops.conv2d(clip, p["stem/conv/weight"], p["stem/conv/bias"], stride=2, pad=STEM_KERNEL // 2))
        x = pool2d(x, STEM_POOL, 2, pad=STEM_POOL // 2)
        if "stem" in tstrides:
            x = poolt(x, 2, 2)
        for lv in range(1, upto + 1):
            if lv > 1:
                x = pool2d(x, 2, 2)
                if lv - 1 in tstrides:
                    x = poolt(x, 2, 2)
            for b, spec in enumerate(cfg.bottleneck_specs(lv)):
                x = bottleneck_forward(x, spec, self._sub(f"level{lv}/block{b}"), check=False, activation=act)
            tspec = cfg.temporal_spec(lv)
            if tspec is not None:
                x = ta_forward(x, tspec, self._sub(cfg._temporal_prefix(lv)), check=False, activation=act)
        return x

    def features(self, clip: Tensor, linear_probe: bool = False) -> Tensor:
        """Spatially pooled level-4 rows ``[..., T_out, C4]``."""
        return ops.spatial_avgpool(self.feature_maps(clip, linear_probe))

    def forward(self, clip: Tensor) -> Tensor:
        """Per-frame logits ``[T, K]`` (or ``[B, T, K]``) at the input frame rate."""
        cfg = self.config
        if not isinstance(clip, Tensor):
            clip = Tensor(np.asarray(clip, dtype=self.params["head/fc/weight"].dtype))
        expected = (3, cfg.input_spatial, cfg.input_spatial)
        if clip.ndim not in (4, 5) or tuple(clip.shape[-3:]) != expected:
            raise ConfigError(f"clip must be [T,3,{cfg.input_spatial},{cfg.input_spatial}] (optionally batched), got {clip.shape}")
        T = clip.shape[-4]
        if cfg.variant == "res3d" and T % 8:
            raise ConfigError(f"res3d needs T divisible by 8, got {T}")
        feats = self.features(clip)
        logits = ops.linear(feats, self.params["head/fc/weight"], self.params["head/fc/bias"])
        return ops.repeat_time(logits, T // feats.shape[-2])

    __call__ = forward


def build(config: ArchConfig, seed: int = 0) -> TANModel:
    """Construct a freshly initialised model for ``config``."""
    return TANModel(config, seed=seed)


def forward_dense(model: TANModel, clip) -> Tensor:
    """Dense per-frame logits; ``sigmoid`` of these are the multi-label scores."""
    return model.forward(clip)


def video_score(frame_scores) -> np.ndarray:
    """Average per-frame scores over time: ``[T, K] -> [K]``."""
    s = frame_scores.data if isinstance(frame_scores, Tensor) else np.asarray(frame_scores)
    if s.ndim < 2 or s.shape[-2] < 1:
        raise ValueError(f"frame scores must be [T, K] with T >= 1, got {s.shape}")
    return s.mean(axis=-2)
