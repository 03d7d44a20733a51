"""Receptive fields, parameter and MAC accounting, and cross-variant comparison."""

from __future__ import annotations

import csv
import io as _io
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import io
from .autograd import DilationWarning, Tensor, backward, count_macs, no_grad, ops
from .model import STEM_KERNEL, STEM_POOL, ArchConfig, TANModel, build

LAYER_KINDS = ("conv2d", "conv1d_t", "pool2d", "pool_t")
_SPATIAL = ("conv2d", "pool2d")
_TEMPORAL = ("conv1d_t", "pool_t")


@dataclass(frozen=True)
class LayerDescriptor:
    """One layer as seen by receptive-field arithmetic.

    A 3x3x3 convolution is described as a ``conv2d`` and a ``conv1d_t`` pair; each
    axis sees only its own factor.
    """

    kind: str
    kernel: int
    stride: int = 1
    dilation: int = 1
    in_channels: int = 0
    out_channels: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"kind must be one of {LAYER_KINDS}, got {self.kind!r}")
        if min(self.kernel, self.stride, self.dilation) < 1:
            raise ValueError(f"kernel, stride and dilation must be >= 1 ({self.name or self.kind})")


def receptive_field(layers, axis: str) -> int:
    """Receptive field of the last layer's output along ``axis`` ('spatial' or 'temporal')."""
    if axis not in ("spatial", "temporal"):
        raise ValueError(f"axis must be 'spatial' or 'temporal', got {axis!r}")
    if not layers:
        raise ValueError("receptive_field needs at least one layer")
    kinds = _SPATIAL if axis == "spatial" else _TEMPORAL
    r, j = 1, 1
    for layer in layers:
        if layer.kind not in kinds:
            continue
        r += (layer.kernel - 1) * layer.dilation * j
        j *= layer.stride
    return r


def layers_for_config(config: ArchConfig, upto: int = 4) -> list[LayerDescriptor]:
    """Layer sequence from the input to the end of level ``upto`` (before its pool).

    Parallel branches (TA dilations, projection shortcuts) contribute their widest
    member, which is the union of their footprints.
    """
    c0 = config.channels[0]
    tstrides = config.temporal_strides()
    out = [
        LayerDescriptor("conv2d", STEM_KERNEL, 2, 1, 3, c0, "stem/conv"),
        LayerDescriptor("pool2d", STEM_POOL, 2, 1, c0, c0, "stem/pool"),
    ]
    if "stem" in tstrides:
        out.append(LayerDescriptor("pool_t", 2, 2, 1, c0, c0, "stem/tpool"))
    for lv in range(1, upto + 1):
        if lv > 1:
            c = config.channels[lv - 2]
            out.append(LayerDescriptor("pool2d", 2, 2, 1, c, c, f"level{lv - 1}/pool"))
            if lv - 1 in tstrides:
                out.append(LayerDescriptor("pool_t", 2, 2, 1, c, c, f"level{lv - 1}/tpool"))
        for b, spec in enumerate(config.bottleneck_specs(lv)):
            pre = f"level{lv}/block{b}"
            mid = spec.mid_channels
            out.append(LayerDescriptor("conv2d", 1, 1, 1, spec.in_channels, mid, f"{pre}/conv1"))
            out.append(LayerDescriptor("conv2d", 3, spec.spatial_stride, 1, mid, mid, f"{pre}/conv2"))
            if spec.temporal_kernel > 1:
                out.append(LayerDescriptor("conv1d_t", spec.temporal_kernel, 1, 1, mid, mid, f"{pre}/conv2"))
            out.append(LayerDescriptor("conv2d", 1, 1, 1, mid, spec.out_channels, f"{pre}/conv3"))
        tspec = config.temporal_spec(lv)
        if tspec is not None:
            c = tspec.channels
            out.append(LayerDescriptor("conv1d_t", tspec.kernel, 1, max(tspec.dilations), c, c, config._temporal_prefix(lv)))
    return out


class ProbeSaturatedError(ValueError):
    """The measured footprint reached the probe input's border."""

    def __init__(self, axis: str, input_extent: int):
        self.axis = axis
        self.input_extent = input_extent
        super().__init__(f"{axis} impulse footprint saturated the {input_extent}-wide probe input; enlarge the probe")


def _probe_params(model: TANModel) -> dict[str, Tensor]:
    # positive weights normalised by fan-in keep magnitudes bounded through depth
    out = {}
    for name, t in model.params.items():
        if name.endswith("bias"):
            arr = np.zeros(t.shape)
        else:
            fan_in = int(np.prod(t.shape[1:])) if t.ndim > 1 else 1
            arr = np.full(t.shape, 1.0 / fan_in)
        out[name] = Tensor(arr)
    return out


def impulse_probe(model: TANModel, axis: str, level: int = 4, extent: int | None = None) -> int:
    """Measured receptive field of one unit of level ``level``'s output map.

    Builds a linearised copy of ``model`` (identity activations, average pools,
    positive weights, zero biases), back-propagates a unit impulse from the
    centre unit to the input and returns the extent of the nonzero input
    footprint along ``axis``. ``extent`` is the probe input's size along that
    axis (frames or pixels); raises ``ProbeSaturatedError`` when the footprint
    touches the input border.
    """
    if axis not in ("spatial", "temporal"):
        raise ValueError(f"axis must be 'spatial' or 'temporal', got {axis!r}")
    cfg = model.config
    min_t = 8 if cfg.variant == "res3d" else 1
    if axis == "temporal":
        T = extent or 64
        S = cfg.input_spatial
        if cfg.variant == "res3d" and T % 8:
            raise ValueError(f"res3d probes need a frame count divisible by 8, got {T}")
    else:
        T = min_t
        S = extent or 384
        if S % 32:
            raise ValueError(f"spatial probe extent must be a multiple of 32, got {S}")
    probe_cfg = cfg.replace(input_spatial=S, temporal_len=T)
    linear = TANModel(probe_cfg, params=_probe_params(model))
    x = Tensor(np.zeros((T, 3, S, S)), requires_grad=True)
    with warnings.catch_warnings():
        # a one-frame spatial probe trips the short-clip dilation warning
        warnings.simplefilter("ignore", DilationWarning)
        fmap = linear.feature_maps(x, linear_probe=True, upto=level)
    seed = np.zeros(fmap.shape)
    seed[fmap.shape[0] // 2, :, fmap.shape[2] // 2, fmap.shape[3] // 2] = 1.0
    backward(ops.sum(ops.mul(fmap, Tensor(seed))))
    g = np.abs(x.grad)
    profile = g.sum(axis=(1, 2, 3)) if axis == "temporal" else g.sum(axis=(0, 1, 3))
    nz = np.flatnonzero(profile)
    if nz.size == 0:
        return 0
    size = profile.size
    if nz[0] == 0 or nz[-1] == size - 1:
        if size == 1:
            return 1
        raise ProbeSaturatedError(axis, size)
    return int(nz[-1] - nz[0] + 1)


@dataclass
class LevelStats:
    level: int
    spatial_rf: int
    temporal_rf: int
    params: int
    macs_per_frame: float


@dataclass
class AnalysisReport:
    """Per-level receptive fields with cumulative params and MACs per input frame."""

    variant: str
    levels: list
    params: int
    macs_per_frame: float
    spatial_rf: int
    temporal_rf: int
    input_t: int
    output_t: int
    checks: dict = field(default_factory=dict)

    def table(self) -> str:
        rows = [("level", "spatial_rf", "temporal_rf", "params", "macs_per_frame")]
        for s in self.levels:
            rows.append((str(s.level), str(s.spatial_rf), str(s.temporal_rf), str(s.params), f"{s.macs_per_frame:.0f}"))
        rows.append(("total", str(self.spatial_rf), str(self.temporal_rf), str(self.params), f"{self.macs_per_frame:.0f}"))
        return format_table(rows)


def _conv_macs(shape, positions: int) -> int:
    return int(np.prod(shape)) * positions


def _level_accounting(config: ArchConfig):
    """Analytic params and MACs (whole clip) per section: stem, levels 1-4, head."""
    shapes = config.param_shapes()
    T = config.temporal_len
    stem_out = config.input_spatial // 2
    S = stem_out // 2
    t = T // 2 if config.variant == "res3d" else T
    params = {"stem": sum(int(np.prod(shapes[n])) for n in ("stem/conv/weight", "stem/conv/bias"))}
    macs = {"stem": _conv_macs(shapes["stem/conv/weight"], T * stem_out * stem_out)}
    tstrides = config.temporal_strides()
    for lv in range(1, 5):
        if lv > 1:
            S //= 2
            if lv - 1 in tstrides:
                t //= 2
        prefix = f"level{lv}/"
        p = m = 0
        for name, shape in shapes.items():
            if not name.startswith(prefix):
                continue
            p += int(np.prod(shape))
            if name.endswith("weight"):
                m += _conv_macs(shape, t * S * S)
        params[lv], macs[lv] = p, m
    params["head"] = int(np.prod(shapes["head/fc/weight"])) + int(np.prod(shapes["head/fc/bias"]))
    macs["head"] = int(np.prod(shapes["head/fc/weight"])) * t
    return params, macs


def count_params_flops(config: ArchConfig, verify: bool = True, probe: bool = False) -> AnalysisReport:
    """Analytic complexity report, cross-checked against the built model.

    With ``verify`` the analytic totals are compared to registry enumeration,
    a MAC-counting forward pass and checkpoint entry accounting; mismatches raise
    ``AssertionError``. With ``probe`` per-level receptive fields are also measured
    by ``impulse_probe`` and stored in ``checks``.
    """
    params, macs = _level_accounting(config)
    T = config.temporal_len
    levels = []
    cum_p = params["stem"]
    cum_m = macs["stem"]
    for lv in range(1, 5):
        cum_p += params[lv]
        cum_m += macs[lv]
        layers = layers_for_config(config, lv)
        levels.append(LevelStats(lv, receptive_field(layers, "spatial"), receptive_field(layers, "temporal"), cum_p, cum_m / T))
    total_p = cum_p + params["head"]
    total_m = cum_m + macs["head"]
    report = AnalysisReport(
        config.variant,
        levels,
        total_p,
        total_m / T,
        levels[-1].spatial_rf,
        levels[-1].temporal_rf,
        T,
        config.output_length(),
    )
    if verify:
        model = build(config)
        registry = model.num_params()
        S = config.input_spatial
        with no_grad(), count_macs() as counter, warnings.catch_warnings():
            warnings.simplefilter("ignore", DilationWarning)
            model.forward(Tensor(np.zeros((T, 3, S, S), dtype=np.float32)))
        shapes = config.param_shapes()
        header = len(io.MAGIC) + 8
        nbytes = header + sum(io.entry_size(n, s) for n, s in shapes.items())
        # payload bytes of each entry, minus its name/shape header, over 4 bytes per value
        from_bytes = sum((io.entry_size(n, s) - 3 - len(n.encode()) - 4 * len(s)) // 4 for n, s in shapes.items())
        report.checks = {
            "registry_params": registry,
            "instrumented_macs": counter.total,
            "checkpoint_bytes": nbytes,
            "checkpoint_params": from_bytes,
        }
        assert registry == total_p, f"registry has {registry} params, analytic count {total_p}"
        assert counter.total == total_m, f"instrumented forward counted {counter.total} MACs, analytic {total_m}"
        assert from_bytes == total_p and nbytes > header
    if probe:
        model = build(config)
        for s in levels:
            for axis in ("spatial", "temporal"):
                try:
                    report.checks[f"probe_{axis}_level{s.level}"] = impulse_probe(model, axis, s.level)
                except ProbeSaturatedError as e:
                    report.checks[f"probe_{axis}_level{s.level}"] = f"saturated@{e.input_extent}"
    return report


COMPARE_COLUMNS = ("variant", "params", "macs", "temporal_rf", "spatial_rf", "output_t")


def compare_variants(configs) -> list[dict]:
    """One row per config with the comparison columns."""
    rows = []
    for cfg in configs:
        rep = count_params_flops(cfg, verify=False)
        rows.append(
            {
                "variant": cfg.variant,
                "params": rep.params,
                "macs": int(round(rep.macs_per_frame * cfg.temporal_len)),
                "temporal_rf": rep.temporal_rf,
                "spatial_rf": rep.spatial_rf,
                "output_t": rep.output_t,
            }
        )
    return rows


def format_table(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(v).rjust(w) for v, w in zip(r, widths)) for r in rows)


def rows_to_text(rows: list[dict], columns=COMPARE_COLUMNS) -> str:
    return format_table([columns] + [tuple(r[c] for c in columns) for r in rows])


def rows_to_csv(rows: list[dict], columns=COMPARE_COLUMNS) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] for c in columns])
    return buf.getvalue()
