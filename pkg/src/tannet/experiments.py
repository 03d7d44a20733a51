"""Seed-controlled training comparisons: placement ladder, plain-conv swap, sampling rate."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autograd import DilationWarning
from .data import VideoDataset, generate
from .metrics import MetricReport
from .model import ArchConfig, build
from .training import DEFAULT_LR, evaluate, step_schedule, train

# ladder rows: (label, levels with a temporal module, dilated?)
ABLATION_ROWS = (
    ("TA@4", (4,), True),
    ("TA@3-4", (3, 4), True),
    ("TA@2-4", (2, 3, 4), True),
    ("TA@1-4", (1, 2, 3, 4), True),
    ("TA@1-4 no dilation", (1, 2, 3, 4), False),
)
TEST_SEED_OFFSET = 1000


def split_for_seed(seed: int, n_train: int = 200, n_test: int = 100, T: int = 16, K: int = 8, size: int = 32):
    """Train set from ``seed``, held-out test set from ``seed + 1000``."""
    return generate(seed, n_train, T, K, size), generate(seed + TEST_SEED_OFFSET, n_test, T, K, size)


def fit_and_score(
    config: ArchConfig,
    train_set: VideoDataset,
    test_set: VideoDataset,
    seed: int,
    epochs: int = 10,
    lr: float = DEFAULT_LR,
    batch_size: int = 8,
    protocol="dense",
) -> MetricReport:
    model = build(config, seed=seed)
    with warnings.catch_warnings():
        # very short resampled clips trip the dilation warning on purpose
        warnings.simplefilter("ignore", DilationWarning)
        train(model, train_set, epochs, seed=seed, schedule=step_schedule(epochs, lr), batch_size=batch_size, eval_every=0)
        return evaluate(model, test_set, protocol)


def row_config(base: ArchConfig, levels, dilated: bool) -> ArchConfig:
    flags = tuple(lv in levels for lv in range(1, 5))
    return base.replace(variant="tan" if dilated else "tan_plainconv", ta_enabled=flags)


@dataclass
class AblationRow:
    label: str
    levels: tuple
    dilated: bool
    frame_maps: list = field(default_factory=list)
    video_maps: list = field(default_factory=list)

    @property
    def frame_map(self) -> float:
        return float(np.median(self.frame_maps))

    @property
    def video_map(self) -> float:
        return float(np.median(self.video_maps))


def run_ablation(
    seeds,
    epochs: int = 10,
    lr: float = DEFAULT_LR,
    base: ArchConfig | None = None,
    n_train: int = 200,
    n_test: int = 100,
    extra_variants=(),
    data=None,
    on_result=None,
) -> dict[str, AblationRow]:
    """Train every ladder row (plus ``extra_variants`` such as 'res2d') once per seed.

    ``data`` may map a seed to a ``(train, test)`` pair; otherwise sets are generated.
    Returned rows hold per-seed scores; their properties give medians.
    """
    base = base or ArchConfig()
    rows = {label: AblationRow(label, levels, dilated) for label, levels, dilated in ABLATION_ROWS}
    for v in extra_variants:
        rows[v] = AblationRow(v, (), False)
    for seed in seeds:
        if data is not None:
            tr, te = data(seed)
        else:
            tr, te = split_for_seed(seed, n_train, n_test, base.temporal_len, base.num_classes, base.input_spatial)
        for label, row in rows.items():
            cfg = base.replace(variant=label) if label in extra_variants else row_config(base, row.levels, row.dilated)
            rep = fit_and_score(cfg, tr, te, seed, epochs, lr)
            row.frame_maps.append(rep.frame_map)
            row.video_maps.append(rep.video_map)
            if on_result is not None:
                on_result(seed, label, rep)
    return rows


def sampling_robustness(factors=(1, 2, 8), seeds=(0,), epochs: int = 10, lr: float = DEFAULT_LR, n_train: int = 200, n_test: int = 100):
    """Median video mAP of ``tan`` trained and tested at each temporal resample factor."""
    out = {f: [] for f in factors}
    for seed in seeds:
        tr, te = split_for_seed(seed, n_train, n_test)
        for f in factors:
            tr_f, te_f = tr.resample(f), te.resample(f)
            cfg = ArchConfig(temporal_len=tr_f.num_frames, num_classes=tr.num_classes)
            out[f].append(fit_and_score(cfg, tr_f, te_f, seed, epochs, lr).video_map)
    return {f: float(np.median(v)) for f, v in out.items()}
