"""Synthetic dense multi-label videos, temporal resampling and frame-directory ingestion."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io

log = logging.getLogger(__name__)

PATTERNS = ("blink", "drift", "oscillate")
FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm")
MANIFEST_HEADER = ("video_id", "start_frame", "end_frame", "class_id")

# first half: short blinks, second half: long-event cues
PALETTE = np.array(
    [
        (1.0, 0.1, 0.1),
        (0.1, 1.0, 0.1),
        (0.1, 0.1, 1.0),
        (1.0, 1.0, 0.1),
        (1.0, 0.1, 1.0),
        (0.1, 1.0, 1.0),
        (1.0, 1.0, 1.0),
        (1.0, 0.55, 0.1),
    ],
    dtype=np.float32,
)
BODY_COLOR = np.array((0.65, 0.65, 0.65), dtype=np.float32)
BACKGROUND = 0.1
# P(1..4 events per video)
EVENT_COUNT_PROBS = (0.1, 0.2, 0.3, 0.4)


class DataConfigError(ValueError):
    """Generator or ingestion parameters are inconsistent."""


class ManifestError(ValueError):
    """A manifest line is malformed or refers to something that does not exist."""


class MissingFramesError(FileNotFoundError):
    """A video directory has no frames, or fewer than the manifest needs."""


@dataclass(frozen=True)
class EventClass:
    id: int
    duration_range: tuple[int, int]
    spatial_extent: str
    pattern: str
    color: tuple[float, float, float]

    @property
    def is_short(self) -> bool:
        return self.duration_range[1] <= 3

    @property
    def radius(self) -> int:
        return 4 if self.spatial_extent == "small" else 6


def default_classes(K: int) -> list[EventClass]:
    """Even ids are short small blinks in a palette colour; odd ids are long large blobs.

    Long classes share one grey body and differ by motion (drift vs oscillate) and by
    a palette-coloured cue shown on their first two frames. Telling two same-motion
    long classes apart far from onset therefore needs wide temporal context.
    """
    classes = []
    for k in range(K):
        # short blinks take the first half of the palette, long cues the second half
        half = len(PALETTE) // 2
        slot = (k // 2) % half + (half if k % 2 else 0)
        color = tuple(float(c) for c in PALETTE[slot])
        if k % 2 == 0:
            classes.append(EventClass(k, (2, 3), "small", "blink", color))
        else:
            pattern = "drift" if (k // 2) % 2 == 0 else "oscillate"
            classes.append(EventClass(k, (10, 16), "large", pattern, color))
    return classes


@dataclass(frozen=True)
class Event:
    class_id: int
    start: int
    end: int  # inclusive
    cy: float
    cx: float
    vy: float
    vx: float
    phase: float


@dataclass
class VideoDataset:
    """``clips`` [N,T,3,H,W] float32 in [0,1]; ``labels`` [N,T,K] uint8."""

    clips: np.ndarray
    labels: np.ndarray
    video_ids: list[str]
    intervals: list[tuple[str, int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.clips.shape[:2] != self.labels.shape[:2] or len(self.video_ids) != len(self.clips):
            raise DataConfigError(
                f"inconsistent dataset: clips {self.clips.shape}, labels {self.labels.shape}, {len(self.video_ids)} ids"
            )

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def num_classes(self) -> int:
        return self.labels.shape[-1]

    @property
    def num_frames(self) -> int:
        return self.clips.shape[1]

    def subset(self, idx) -> "VideoDataset":
        idx = list(idx)
        keep = {self.video_ids[i] for i in idx}
        return VideoDataset(
            self.clips[idx], self.labels[idx], [self.video_ids[i] for i in idx], [r for r in self.intervals if r[0] in keep]
        )

    def mean_labels_per_frame(self) -> float:
        return float(self.labels.sum(axis=-1).mean())

    def resample(self, factor: int) -> "VideoDataset":
        clips, labels = zip(*(resample_rate(c, l, factor) for c, l in zip(self.clips, self.labels)))
        return VideoDataset(np.stack(clips), np.stack(labels), list(self.video_ids), list(self.intervals))


def _rng(seed: int, video_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, video_index])))


def _sample_events(rng, classes, T, H, p_empty, long_weight) -> list[Event]:
    # draw order: event count, then per event class/duration/onset/position/motion
    if rng.random() < p_empty:
        return []
    n = int(rng.choice(4, p=EVENT_COUNT_PROBS)) + 1
    weights = np.array([long_weight if not c.is_short else 1.0 for c in classes])
    weights /= weights.sum()
    events = []
    for _ in range(n):
        k = int(rng.choice(len(classes), p=weights))
        c = classes[k]
        lo, hi = c.duration_range
        dur = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, max(1, T - lo + 1)))
        end = min(T - 1, start + dur - 1)
        r = c.radius
        cy, cx = rng.uniform(r, H - r, size=2)
        angle = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(0.8, 1.5)
        phase = rng.uniform(0, 2 * np.pi)
        events.append(Event(k, start, end, float(cy), float(cx), float(speed * np.sin(angle)), float(speed * np.cos(angle)), float(phase)))
    return events


def _reflect(v: float, lo: float, span: float) -> float:
    u = (v - lo) % (2 * span)
    return lo + (u if u <= span else 2 * span - u)


def _blob_center(ev: Event, c: EventClass, t: int, H: int):
    dt = t - ev.start
    if c.pattern == "drift":
        y, x = ev.cy + ev.vy * dt, ev.cx + ev.vx * dt
        # reflect at the borders so the blob stays in frame
        lo, span = c.radius, H - 2 * c.radius
        return _reflect(y, lo, span), _reflect(x, lo, span)
    if c.pattern == "oscillate":
        amp = 5.0
        s = np.sin(2 * np.pi * dt / 6.0 + ev.phase)
        norm = np.hypot(ev.vy, ev.vx) or 1.0
        return ev.cy + amp * s * ev.vy / norm, ev.cx + amp * s * ev.vx / norm
    return ev.cy, ev.cx


def _render(events, classes, rng, T, H, noise_std) -> np.ndarray:
    clip = np.full((T, 3, H, H), BACKGROUND, dtype=np.float32)
    yy, xx = np.mgrid[0:H, 0:H].astype(np.float32)
    # long bodies first so short blinks are never hidden
    for ev in sorted(events, key=lambda e: classes[e.class_id].is_short):
        c = classes[ev.class_id]
        for t in range(ev.start, ev.end + 1):
            cy, cx = _blob_center(ev, c, t, H)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= c.radius**2
            if c.is_short or t - ev.start < 2:
                color = np.asarray(c.color, dtype=np.float32)
            else:
                color = BODY_COLOR
            clip[t][:, mask] = color[:, None]
    clip += rng.normal(0.0, noise_std, size=clip.shape).astype(np.float32)
    return np.clip(clip, 0.0, 1.0)


def generate(
    seed: int,
    n_videos: int,
    T: int = 16,
    K: int = 8,
    size: int = 32,
    noise_std: float = 0.04,
    p_empty: float = 0.0,
    long_weight: float = 3.0,
    classes: list[EventClass] | None = None,
) -> VideoDataset:
    """Deterministic synthetic dataset; video ``i`` draws from its own (seed, i) stream."""
    if K < 4:
        raise DataConfigError(f"K must be >= 4 (at least one short and one long class), got {K}")
    if n_videos < 0:
        raise DataConfigError(f"n_videos must be >= 0, got {n_videos}")
    if size < 16:
        raise DataConfigError(f"size must be >= 16, got {size}")
    classes = classes or default_classes(K)
    if len(classes) != K:
        raise DataConfigError(f"{len(classes)} classes given for K={K}")
    if not any(c.is_short for c in classes) or all(c.is_short for c in classes):
        raise DataConfigError("need at least one short and one long class")
    longest_min = max(c.duration_range[0] for c in classes)
    if T < longest_min:
        raise DataConfigError(f"T={T} is shorter than the longest class's minimum duration {longest_min}")

    clips = np.empty((n_videos, T, 3, size, size), dtype=np.float32)
    labels = np.zeros((n_videos, T, K), dtype=np.uint8)
    ids, intervals = [], []
    for i in range(n_videos):
        rng = _rng(seed, i)
        events = _sample_events(rng, classes, T, size, p_empty, long_weight)
        clips[i] = _render(events, classes, rng, T, size, noise_std)
        vid = f"video_{i:05d}"
        ids.append(vid)
        for ev in events:
            labels[i, ev.start:ev.end + 1, ev.class_id] = 1
            intervals.append((vid, ev.start, ev.end, ev.class_id))
    return VideoDataset(clips, labels, ids, intervals)


def resample_rate(clip: np.ndarray, labels: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep every ``factor``-th frame; each kept label row is the OR over its window."""
    T = clip.shape[0]
    if factor < 1 or T % factor:
        raise DataConfigError(f"resample factor {factor} does not divide T={T}")
    if labels.shape[0] != T:
        raise DataConfigError(f"labels have {labels.shape[0]} frames, clip has {T}")
    new_labels = labels.reshape(T // factor, factor, *labels.shape[1:]).max(axis=1)
    return clip[::factor].copy(), new_labels


# --------------------------------------------------------------------------
# on-disk formats


def save_dataset(ds: VideoDataset, root) -> None:
    """One container file per video (entries ``clip`` and ``labels``) plus ``manifest.csv``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for vid, clip, lab in zip(ds.video_ids, ds.clips, ds.labels):
        io.write_tensors(root / f"{vid}.tan", {"clip": clip, "labels": lab.astype(np.float32)})
    write_manifest(root / "manifest.csv", ds.intervals)


def load_dataset(root) -> VideoDataset:
    root = Path(root)
    files = sorted(root.glob("*.tan"))
    if not files:
        raise MissingFramesError(f"{root}: no .tan video files")
    clips, labels, ids = [], [], []
    for f in files:
        entries = io.read_tensors(f)
        if "clip" not in entries or "labels" not in entries:
            raise io.FormatError(f"{f}: expected entries 'clip' and 'labels', found {sorted(entries)}")
        clips.append(entries["clip"])
        labels.append(entries["labels"].astype(np.uint8))
        ids.append(f.stem)
    intervals = []
    mpath = root / "manifest.csv"
    if mpath.exists():
        intervals = read_manifest(mpath)
    return VideoDataset(np.stack(clips), np.stack(labels), ids, intervals)


def write_manifest(path, intervals) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for row in intervals:
            w.writerow(row)


def read_manifest(path, num_classes: int | None = None) -> list[tuple[str, int, int, int]]:
    """Parse ``video_id,start_frame,end_frame,class_id`` lines (header required, ``#`` comments)."""
    rows = []
    header_seen = False
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            fields = [p.strip() for p in s.split(",")]
            if not header_seen:
                if tuple(fields) != MANIFEST_HEADER:
                    raise ManifestError(f"{path}:{lineno}: expected header {','.join(MANIFEST_HEADER)!r}, got {s!r}")
                header_seen = True
                continue
            if len(fields) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}: {s!r}")
            try:
                start, end, cls = int(fields[1]), int(fields[2]), int(fields[3])
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: non-integer frame/class field in {s!r}") from None
            if start < 0 or end < start:
                raise ManifestError(f"{path}:{lineno}: invalid interval [{start}, {end}]")
            if cls < 0 or (num_classes is not None and cls >= num_classes):
                raise ManifestError(f"{path}:{lineno}: class id {cls} outside [0, {num_classes})")
            rows.append((fields[0], start, end, cls))
    if not header_seen:
        raise ManifestError(f"{path}: missing header line")
    return rows


def _load_frame(path: Path, size: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def ingest(root, manifest, num_classes: int, size: int = 32) -> VideoDataset:
    """Load ``root/<video_id>/`` frame directories and densify manifest intervals."""
    root = Path(root)
    rows = read_manifest(manifest, num_classes)
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise MissingFramesError(f"{root}: no video directories")
    known = {d.name for d in dirs}
    for vid, *_ in rows:
        if vid not in known:
            raise ManifestError(f"{manifest}: interval refers to unknown video {vid!r} (no directory under {root})")
    clips, labels, ids = [], [], []
    T_common = None
    for d in dirs:
        frames = sorted(p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
        if not frames:
            raise MissingFramesError(f"{d}: no frame images")
        if T_common is None:
            T_common = len(frames)
        elif len(frames) != T_common:
            raise MissingFramesError(f"{d}: {len(frames)} frames, other videos have {T_common}")
        clip = np.stack([_load_frame(p, size) for p in frames])
        lab = np.zeros((len(frames), num_classes), dtype=np.uint8)
        mine = [r for r in rows if r[0] == d.name]
        if not mine:
            warnings.warn(f"{d.name}: no manifest intervals; labels are all zero", stacklevel=2)
        for vid, s, e, k in mine:
            if e >= len(frames):
                raise MissingFramesError(f"{manifest}: interval {vid},{s},{e},{k} ends past the {len(frames)} frames in {d}")
            lab[s:e + 1, k] = 1
        clips.append(clip)
        labels.append(lab)
        ids.append(d.name)
    return VideoDataset(np.stack(clips), np.stack(labels), ids, rows)


def dataset_digest(ds: VideoDataset) -> str:
    """SHA-256 over clip and label bytes, for cross-run comparisons."""
    import hashlib

    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.clips, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype=np.uint8).tobytes())
    return h.hexdigest()

