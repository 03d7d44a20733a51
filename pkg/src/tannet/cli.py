"""``tan`` command line: gen, train, eval, analyze, compare, ablate, predict.

Every command takes an optional JSON run config (``--config``); flags override it.
Exit codes: 0 ok, 1 I/O, 2 config, 3 checkpoint/model state mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt
from . import io
from .analysis import (
    ProbeSaturatedError,
    compare_variants,
    count_params_flops,
    impulse_probe,
    layers_for_config,
    receptive_field,
    rows_to_csv,
    rows_to_text,
)
from .data import DataConfigError, ManifestError, MissingFramesError, VideoDataset, generate, load_dataset, save_dataset
from .experiments import TEST_SEED_OFFSET, run_ablation
from .metrics import evaluate_scores, parse_protocol, write_predictions
from .model import ArchConfig, ConfigError, build
from .training import DEFAULT_LR, OptimState, evaluate, predict_scores, step_schedule, train, write_log

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_STATE = 0, 1, 2, 3
ARCH_FIELDS = tuple(f.name for f in dataclasses.fields(ArchConfig))
CHECKPOINT_NAME = "model.tanckpt"
OPTIM_NAME = "optim.tanckpt"
LOG_NAME = "train_log.csv"

log = logging.getLogger("tannet")


class StateMismatchError(Exception):
    """A checkpoint or its sidecar does not fit the configured model."""


@dataclass
class RunConfig:
    input_spatial: int = 32
    temporal_len: int = 16
    channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    blocks_per_level: list = field(default_factory=lambda: [2, 2, 2, 2])
    ta_enabled: list = field(default_factory=lambda: [True, True, True, True])
    ta_dilations: list = field(default_factory=lambda: [1, 2, 3])
    ta_kernel: int = 3
    num_classes: int = 8
    variant: str = "tan"
    seed: int = 7
    epochs: int = 10
    lr: float = DEFAULT_LR
    lr_schedule: list | None = None
    batch_size: int = 8
    data: str | None = None
    eval_data: str | None = None
    videos: int = 200
    eval_videos: int = 100
    sample_factor: int = 1
    protocol: str = "sampled:25"
    out_dir: str = "run"
    ablate_seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def arch(self) -> ArchConfig:
        d = {k: getattr(self, k) for k in ARCH_FIELDS}
        d["temporal_len"] = self.temporal_len // self.sample_factor
        return ArchConfig.from_dict(d)

    def _check_types(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
            if default is None:
                ok = value is None or isinstance(value, (str, list))
            elif isinstance(default, bool) or isinstance(default, str):
                ok = isinstance(value, type(default))
            elif isinstance(default, int):
                ok = isinstance(value, int) and not isinstance(value, bool)
            elif isinstance(default, float):
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            else:
                ok = isinstance(value, (list, tuple))
            if not ok:
                raise ConfigError(f"{f.name}: expected {type(default).__name__ if default is not None else 'path'}, got {value!r}")

    def validate(self) -> None:
        self._check_types()
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.videos < 1 or self.eval_videos < 1:
            raise ConfigError(f"videos and eval_videos must be >= 1, got {self.videos}, {self.eval_videos}")
        if self.sample_factor < 1 or self.temporal_len % self.sample_factor:
            raise ConfigError(f"sample_factor {self.sample_factor} must divide temporal_len {self.temporal_len}")
        if self.lr_schedule is not None:
            if not self.lr_schedule or any(len(p) != 2 for p in self.lr_schedule):
                raise ConfigError(f"lr_schedule must be a list of [epoch, lr] pairs, got {self.lr_schedule}")
        try:
            parse_protocol(self.protocol)
        except ValueError as e:
            raise ConfigError(f"protocol: {e}") from None
        for key in ("data", "eval_data"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_dir():
                raise ConfigError(f"{key}: {path} is not a directory")
        self.arch()

    def schedule(self, total_epochs: int) -> list[tuple[int, float]]:
        if self.lr_schedule is not None:
            return [(int(e), float(lr)) for e, lr in self.lr_schedule]
        return step_schedule(total_epochs, self.lr)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return RunConfig(**raw)


# flag name -> RunConfig field
_OVERRIDES = {
    "seed": "seed",
    "epochs": "epochs",
    "lr": "lr",
    "batch_size": "batch_size",
    "variant": "variant",
    "classes": "num_classes",
    "frames": "temporal_len",
    "size": "input_spatial",
    "videos": "videos",
    "eval_videos": "eval_videos",
    "data": "data",
    "eval_data": "eval_data",
    "sample_factor": "sample_factor",
    "protocol": "protocol",
    "out": "out_dir",
    "dilations": "ta_dilations",
    "ta_levels": "ta_enabled",
}


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    for flag, name in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "ta_levels":
            levels = {int(v) for v in value.split(",") if v}
            value = [lv in levels for lv in range(1, 5)]
        elif flag == "dilations":
            value = [int(v) for v in value.split(",")]
        setattr(cfg, name, value)
    cfg.validate()
    return cfg


def _header(cfg: RunConfig, **extra) -> list[str]:
    lines = [f"seed={cfg.seed}"]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return lines


def _emit(lines, out=None) -> None:
    out = out or sys.stdout
    for ln in lines:
        out.write(ln + "\n")


def _datasets(cfg: RunConfig, need_train: bool = True) -> tuple[VideoDataset | None, VideoDataset]:
    T, K, S = cfg.temporal_len, cfg.num_classes, cfg.input_spatial
    train_set = None
    if need_train:
        train_set = load_dataset(cfg.data) if cfg.data else generate(cfg.seed, cfg.videos, T, K, S)
    if cfg.eval_data:
        eval_set = load_dataset(cfg.eval_data)
    elif cfg.data and not need_train:
        eval_set = load_dataset(cfg.data)
    else:
        eval_set = generate(cfg.seed + TEST_SEED_OFFSET, cfg.eval_videos, T, K, S)
    for ds in (train_set, eval_set):
        if ds is None:
            continue
        if ds.num_classes != K:
            raise ConfigError(f"dataset has {ds.num_classes} classes but num_classes={K}")
        if ds.num_frames != T or ds.clips.shape[-1] != S:
            raise ConfigError(f"dataset clips are {ds.num_frames} frames at {ds.clips.shape[-1]}px, config wants {T} at {S}px")
    if cfg.sample_factor > 1:
        train_set = train_set.resample(cfg.sample_factor) if train_set is not None else None
        eval_set = eval_set.resample(cfg.sample_factor)
    return train_set, eval_set


# --------------------------------------------------------------------------
# checkpoint sidecars


def _sidecar(path) -> Path:
    return Path(f"{path}.json")


def _write_sidecar(path, cfg: RunConfig, arch: ArchConfig, epochs_done: int) -> None:
    meta = {"arch": arch.to_dict(), "seed": cfg.seed, "epochs_done": epochs_done, "schedule": cfg.schedule(epochs_done)}
    tmp = f"{_sidecar(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, _sidecar(path))


def _read_sidecar(path) -> dict:
    side = _sidecar(path)
    if not side.exists():
        raise StateMismatchError(f"{path}: missing sidecar {side.name} (needed to rebuild the model)")
    with open(side, encoding="utf-8") as f:
        return json.load(f)


def _save_optim(path, state: OptimState) -> None:
    tensors = {"step": np.array([state.step], dtype=np.float32)}
    for n in state.m:
        tensors[f"m/{n}"] = state.m[n]
        tensors[f"v/{n}"] = state.v[n]
    io.write_tensors(path, tensors)


def _load_optim(path, model, schedule) -> OptimState:
    tensors = io.read_tensors(path)
    state = OptimState(schedule=list(schedule), step=int(tensors.pop("step")[0]))
    for key, arr in tensors.items():
        kind, name = key.split("/", 1)
        if name not in model.params or model.params[name].shape != arr.shape:
            raise StateMismatchError(f"{path}: optimizer entry {key} does not match the model")
        (state.m if kind == "m" else state.v)[name] = arr.copy()
    return state


def _model_from_checkpoint(path, cfg: RunConfig | None = None):
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    meta = _read_sidecar(path)
    try:
        arch = ArchConfig.from_dict(meta["arch"])
    except (ConfigError, TypeError, KeyError) as e:
        raise StateMismatchError(f"{path}: sidecar architecture is invalid ({e})") from None
    if cfg is not None and arch.num_classes != cfg.num_classes:
        raise StateMismatchError(f"checkpoint predicts {arch.num_classes} classes, config has {cfg.num_classes}")
    model = build(arch)
    try:
        ckpt.load_checkpoint(model, path)
    except (ckpt.MissingParameterError, ckpt.UnexpectedParameterError, ckpt.ShapeMismatchError) as e:
        raise StateMismatchError(str(e)) from None
    return model, meta


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    try:
        ds = generate(cfg.seed, cfg.videos, cfg.temporal_len, cfg.num_classes, cfg.input_spatial)
    except DataConfigError as e:
        raise ConfigError(str(e)) from None
    save_dataset(ds, out)
    _emit(["# " + h for h in _header(cfg, videos=cfg.videos, classes=cfg.num_classes, frames=cfg.temporal_len)])
    _emit([f"wrote {len(ds)} videos to {out}", f"labels_per_frame={ds.mean_labels_per_frame():.4f}"])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    arch = cfg.arch()
    out = Path(cfg.out_dir)
    train_set, eval_set = _datasets(cfg)
    state = None
    start_epoch = 0
    if args.resume:
        model, meta = _model_from_checkpoint(args.resume, cfg)
        want = arch.to_dict()
        diff = sorted(k for k in set(want) | set(meta["arch"]) if meta["arch"].get(k) != want.get(k))
        if diff:
            detail = ", ".join(f"{k}: checkpoint {meta['arch'].get(k)!r} vs config {want.get(k)!r}" for k in diff)
            raise StateMismatchError(f"{args.resume} was trained with a different architecture ({detail})")
        start_epoch = int(meta["epochs_done"])
        optim_path = Path(args.resume).with_name(OPTIM_NAME)
        if not optim_path.exists():
            raise StateMismatchError(f"{optim_path}: optimizer state missing, cannot resume exactly")
        state = _load_optim(optim_path, model, cfg.schedule(start_epoch + cfg.epochs))
    else:
        model = build(arch, seed=cfg.seed)
        state = OptimState(schedule=cfg.schedule(cfg.epochs))
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / LOG_NAME
    header = _header(
        cfg,
        variant=arch.variant,
        input_t=arch.temporal_len,
        output_t=arch.output_length(),
        protocol=cfg.protocol,
    )
    if arch.output_length() != arch.temporal_len:
        header.append(f"temporal resolution reduced {arch.temporal_len} -> {arch.output_length()} before the head")
    append = args.resume is not None and log_path.exists()
    if not append:
        write_log(log_path, [], header)

    def on_epoch(rec):
        write_log(log_path, [rec], append=True)

    total = start_epoch + cfg.epochs
    history = train(
        model,
        train_set,
        cfg.epochs,
        seed=cfg.seed,
        schedule=cfg.schedule(total),
        batch_size=cfg.batch_size,
        eval_dataset=eval_set,
        protocol=cfg.protocol,
        state=state,
        start_epoch=start_epoch,
        on_epoch=on_epoch,
    )
    path = out / CHECKPOINT_NAME
    ckpt.save_checkpoint(model, path)
    _write_sidecar(path, cfg, arch, total)
    _save_optim(out / OPTIM_NAME, state)
    _emit(["# " + h for h in header])
    for r in history:
        _emit([f"epoch {r.epoch} loss {r.mean_loss:.6f} frame_mAP {r.frame_map:.6f} video_mAP {r.video_map:.6f}"])
    _emit([f"checkpoint {path}"])
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _, eval_set = _datasets(cfg, need_train=False)
    if args.oracle:
        scores = eval_set.labels.astype(np.float64)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --oracle)")
        model, _ = _model_from_checkpoint(args.checkpoint, cfg)
        scores = predict_scores(model, eval_set.clips)
    report = evaluate_scores(scores, eval_set.labels, cfg.protocol)
    _emit([f"# seed={cfg.seed}", report.summary()])
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    _, eval_set = _datasets(cfg, need_train=False)
    model, _ = _model_from_checkpoint(args.checkpoint, cfg)
    scores = predict_scores(model, eval_set.clips)
    write_predictions(args.output, eval_set.video_ids, scores)
    _emit([f"# seed={cfg.seed}", f"wrote {scores.size} scores for {len(eval_set)} videos to {args.output}"])
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    arch = cfg.arch()
    lines = [f"# seed={cfg.seed}", f"# variant={arch.variant}"]
    if args.rf:
        analytic = receptive_field(layers_for_config(arch), args.rf)
        try:
            measured = impulse_probe(build(arch), args.rf)
            lines.append(f"{args.rf}_rf={measured}")
        except ProbeSaturatedError as e:
            lines.append(f"{args.rf}_rf=saturated (probe input {e.input_extent})")
        lines.append(f"{args.rf}_rf_analytic={analytic}")
    report = count_params_flops(arch, verify=True)
    if args.params:
        lines.append(f"params={report.params}")
        lines.append(f"checkpoint_params={report.checks['checkpoint_params']}")
        lines.append(f"checkpoint_bytes={report.checks['checkpoint_bytes']}")
    if args.macs:
        lines.append(f"macs_per_frame={report.macs_per_frame:.0f}")
    if not (args.rf or args.params or args.macs):
        rows = [
            {"level": s.level, "spatial_rf": s.spatial_rf, "temporal_rf": s.temporal_rf, "params": s.params, "macs_per_frame": int(round(s.macs_per_frame))}
            for s in report.levels
        ]
        cols = ("level", "spatial_rf", "temporal_rf", "params", "macs_per_frame")
        lines.append(rows_to_csv(rows, cols).rstrip("\n") if args.csv else rows_to_text(rows, cols))
        lines.append(f"total_params={report.params} output_t={report.output_t}")
    _emit(lines)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    base = cfg.arch()
    configs = []
    for v in args.variants:
        T = base.temporal_len
        if v == "res3d" and T % 8:
            raise ConfigError(f"res3d needs temporal_len divisible by 8, got {T}")
        configs.append(base.replace(variant=v))
    rows = compare_variants(configs)
    _emit([f"# seed={cfg.seed}"])
    _emit([rows_to_csv(rows).rstrip("\n") if args.csv else rows_to_text(rows)])
    return EXIT_OK


ABLATE_COLUMNS = ("row", "ta_levels", "dilation", "frame_map", "video_map", "frame_map_per_seed")


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(cfg.ablate_seeds)
    base = cfg.arch()
    data = None
    if cfg.data:
        train_set, eval_set = _datasets(cfg)
        data = lambda seed: (train_set, eval_set)  # noqa: E731
    rows = run_ablation(seeds, cfg.epochs, cfg.lr, base, cfg.videos, cfg.eval_videos, data=data)
    table = [
        {
            "row": r.label,
            "ta_levels": "+".join(str(lv) for lv in r.levels),
            "dilation": "yes" if r.dilated else "no",
            "frame_map": f"{r.frame_map:.4f}",
            "video_map": f"{r.video_map:.4f}",
            "frame_map_per_seed": " ".join(f"{v:.4f}" for v in r.frame_maps),
        }
        for r in rows.values()
    ]
    _emit([f"# seed={cfg.seed}", f"# seeds={','.join(map(str, seeds))} epochs={cfg.epochs}"])
    _emit([rows_to_csv(table, ABLATE_COLUMNS).rstrip("\n") if args.csv else rows_to_text(table, ABLATE_COLUMNS)])
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=("tan", "res3d", "res2d", "tan_plainconv"))
    p.add_argument("--classes", type=int, help="number of classes K")
    p.add_argument("--frames", type=int, help="frames per clip T")
    p.add_argument("--size", type=int, help="frame side in pixels")
    p.add_argument("--dilations", help="comma-separated TA dilations, e.g. 1,2,3")
    p.add_argument("--ta-levels", help="comma-separated levels with a temporal module, e.g. 3,4")
    p.add_argument("--data", help="dataset directory (written by 'gen')")
    p.add_argument("--eval-data", help="held-out dataset directory")
    p.add_argument("--protocol", help="'dense' or 'sampled:N'")
    p.add_argument("--sample-factor", type=int, help="keep every Nth frame (labels OR-pooled)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tan", description="Temporal aggregation networks for dense multi-label video classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--videos", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model; writes checkpoint and CSV log")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--videos", type=int, help="generated training videos when --data is not given")
    p.add_argument("--eval-videos", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--eval-videos", type=int)
    p.add_argument("--oracle", action="store_true", help="score with the ground-truth labels")
    p.add_argument("--csv", help="write the metric report CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="dump dense per-frame scores")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eval-videos", type=int)
    p.add_argument("--output", required=True, help="CSV path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", help="receptive fields, params and MACs of one config")
    _common(p)
    p.add_argument("--rf", choices=("spatial", "temporal"))
    p.add_argument("--params", action="store_true")
    p.add_argument("--macs", action="store_true")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="compare variants structurally")
    _common(p)
    p.add_argument("variants", nargs="+", choices=("tan", "res3d", "res2d", "tan_plainconv"))
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="train the temporal-module placement ladder")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--videos", type=int)
    p.add_argument("--eval-videos", type=int)
    p.add_argument("--seeds", help="comma-separated seeds (default from config)")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = os.environ.get("TAN_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"error: TAN_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=limit):
            return args.func(args)
    except StateMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STATE
    except (ConfigError, DataConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.FormatError, ManifestError, MissingFramesError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
