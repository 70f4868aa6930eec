"""Dataset ingestion and preprocessing for the UCI HAR and PAMAP2 corpora.

Samples are windows of 128 readings at 50 Hz, stacked vertically into
``(N, 1, channels, 128)`` tensors. Channels are z-normalized with the
training split's per-channel mean and population standard deviation.
"""
from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, IngestionError, PreprocessingError

log = logging.getLogger(__name__)

WINDOW = 128
HOP = 64

UCL_CLASSES = ["WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING", "STANDING", "LAYING"]
UCL_VALIDATION_SUBJECTS = (27, 29, 30)

# PAMAP2 protocol activity ids, mapped in this order onto labels 0..11
PAMAP2_ACTIVITIES = {
    1: "lying", 2: "sitting", 3: "standing", 4: "walking", 5: "running", 6: "cycling",
    7: "nordic_walking", 12: "ascending_stairs", 13: "descending_stairs",
    16: "vacuum_cleaning", 17: "ironing", 24: "rope_jumping",
}
PAMAP2_COLUMNS = 54
PAMAP2_RATE = 100
PAMAP2_TEST_SUBJECT = 1
PAMAP2_VALIDATION_SUBJECT = 5
MAX_GAP_SECONDS = 0.2
# column of each IMU block start (temperature); +1..+3 is acc +-16g, +7..+9 gyro
PAMAP2_IMUS = {"hand": 3, "chest": 20, "ankle": 37}


def _pamap2_channels():
    cols, names = [], []
    for imu, base in PAMAP2_IMUS.items():
        for kind, off in (("acc", 1), ("gyro", 7)):
            for k, axis in enumerate("xyz"):
                cols.append(base + off + k)
                names.append(f"{imu}_{kind}_{axis}")
    return cols, names


PAMAP2_CHANNEL_COLUMNS, PAMAP2_CHANNEL_NAMES = _pamap2_channels()


@dataclass
class RawRecording:
    subject_id: int
    activity_label: int
    channels: np.ndarray  # (num_channels, T)
    rate: int = 50

    def __post_init__(self):
        if self.rate not in (50, 100):
            raise PreprocessingError(f"unsupported sampling rate {self.rate} Hz")
        if self.channels.ndim != 2:
            raise PreprocessingError("channels must be a (num_channels, T) array")


@dataclass
class WindowedDataset:
    x: np.ndarray  # (N, 1, H, 128)
    y: np.ndarray  # (N,) int labels
    subjects: np.ndarray  # (N,) int subject ids
    class_names: list[str]
    channel_names: list[str] = field(default_factory=list)
    channel_stats: np.ndarray | None = None  # (H, 2): mean, std

    def __len__(self):
        return len(self.y)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "WindowedDataset":
        return replace(self, x=self.x[idx], y=self.y[idx], subjects=self.subjects[idx])


# -- preprocessing primitives ------------------------------------------------

def segment(stream: np.ndarray, window: int = WINDOW, overlap: float = 0.5) -> np.ndarray:
    """Cut a ``(channels, T)`` stream into ``(num_windows, channels, window)``.

    Windows start every ``window * (1 - overlap)`` samples; a stream shorter
    than one window yields no windows.
    """
    stream = np.asarray(stream)
    if stream.ndim == 1:
        stream = stream[None]
    hop = int(round(window * (1 - overlap)))
    c, t = stream.shape
    if t < window:
        return np.empty((0, c, window), dtype=stream.dtype)
    count = (t - window) // hop + 1
    starts = np.arange(count) * hop
    return np.stack([stream[:, s:s + window] for s in starts])


def downsample(stream: np.ndarray) -> np.ndarray:
    """100 Hz -> 50 Hz by keeping every second sample, starting with the first."""
    return np.asarray(stream)[..., ::2]


def channel_stats(x: np.ndarray, channel_names=None) -> np.ndarray:
    """Per-row mean and population std of an ``(N, 1, H, W)`` tensor."""
    x64 = np.asarray(x, dtype=np.float64)
    mu = x64.mean(axis=(0, 1, 3))
    sigma = x64.std(axis=(0, 1, 3))
    for h, s in enumerate(sigma):
        if not s > 0:
            name = channel_names[h] if channel_names else f"channel {h}"
            raise PreprocessingError(f"{name} has zero variance; cannot normalize")
    return np.stack([mu, sigma], axis=1)


def normalize(ds: WindowedDataset, stats: np.ndarray | None = None) -> WindowedDataset:
    """Apply ``(x - mean) / std`` per channel; ``stats`` default to the dataset's own."""
    if stats is None:
        stats = channel_stats(ds.x, ds.channel_names)
    stats = np.asarray(stats, dtype=np.float64)
    mu = stats[:, 0][None, None, :, None]
    sigma = stats[:, 1][None, None, :, None]
    z = ((ds.x.astype(np.float64) - mu) / sigma).astype(ds.x.dtype)
    return replace(ds, x=z, channel_stats=stats)


def normalize_splits(train: WindowedDataset, *others: WindowedDataset):
    """Normalize every split with statistics computed on ``train`` only."""
    stats = channel_stats(train.x, train.channel_names)
    return tuple(normalize(ds, stats) for ds in (train, *others))


def _check_train_labels(train: WindowedDataset):
    missing = sorted(set(range(train.num_classes)) - set(np.unique(train.y).tolist()))
    if missing:
        names = [train.class_names[i] for i in missing]
        raise PreprocessingError(f"classes without training samples: {names}")


# -- UCI HAR -------------------------------------------------------------------

def _read_rows(path: Path, width: int | None, dtype=float) -> np.ndarray:
    if not path.is_file():
        raise IngestionError("missing file", path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if width is not None and len(parts) != width:
                raise IngestionError(f"expected {width} values, found {len(parts)}", path, lineno)
            try:
                rows.append([dtype(p) for p in parts])
            except ValueError as e:
                raise IngestionError(f"unparseable value ({e})", path, lineno) from None
    if not rows:
        raise IngestionError("file is empty", path)
    return np.asarray(rows)


def _ucl_root(root: Path) -> Path:
    if (root / "train").is_dir():
        return root
    nested = root / "UCI HAR Dataset"
    if (nested / "train").is_dir():
        return nested
    raise IngestionError("no train/ directory found under the UCI HAR root", root)


def ucl_channel_names(acc: str = "total") -> list[str]:
    return [f"{acc}_acc_{a}" for a in "xyz"] + [f"body_gyro_{a}" for a in "xyz"]


def _load_ucl_split(root: Path, split: str, acc: str) -> WindowedDataset:
    base = root / split
    signals = base / "Inertial Signals"
    chans = []
    for name in ucl_channel_names(acc):
        chans.append(_read_rows(signals / f"{name}_{split}.txt", WINDOW))
    n = chans[0].shape[0]
    for name, c in zip(ucl_channel_names(acc), chans):
        if c.shape[0] != n:
            raise IngestionError(f"{c.shape[0]} rows, expected {n}", signals / f"{name}_{split}.txt")
    y = _read_rows(base / f"y_{split}.txt", 1, int).ravel() - 1
    subjects = _read_rows(base / f"subject_{split}.txt", 1, int).ravel()
    if len(y) != n or len(subjects) != n:
        raise IngestionError(f"{split}: {n} windows but {len(y)} labels / {len(subjects)} subjects",
                             base)
    if y.min() < 0 or y.max() >= len(UCL_CLASSES):
        raise IngestionError(f"labels outside 1..{len(UCL_CLASSES)}", base / f"y_{split}.txt")
    x = np.stack(chans, axis=1)[:, None].astype(np.float32)  # (N, 1, 6, 128)
    return WindowedDataset(x, y.astype(np.int64), subjects.astype(np.int64),
                           list(UCL_CLASSES), ucl_channel_names(acc))


def load_ucl(root, acc: str = "total"):
    """Load UCI HAR and return normalized ``(train, validation, test)``.

    Validation is subjects 27, 29 and 30 taken out of the official training
    split. ``acc`` picks ``"total"`` or ``"body"`` acceleration.
    """
    if acc not in ("total", "body"):
        raise ValueError(f"acc must be 'total' or 'body', got {acc!r}")
    root = Path(root)
    if not root.exists():
        raise IngestionError("dataset root does not exist", root)
    root = _ucl_root(root)
    full_train = _load_ucl_split(root, "train", acc)
    test = _load_ucl_split(root, "test", acc)
    is_val = np.isin(full_train.subjects, UCL_VALIDATION_SUBJECTS)
    train, val = full_train.subset(~is_val), full_train.subset(is_val)
    _check_train_labels(train)
    return normalize_splits(train, val, test)


# -- PAMAP2 --------------------------------------------------------------------

def _read_pamap2_file(path: Path) -> np.ndarray:
    try:
        rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        # numpy reports conversion failures 0-based but column-count changes 1-based
        msg = str(e)
        m = re.search(r"at row (\d+)", msg)
        line = None
        if m:
            line = int(m.group(1)) + (0 if "columns changed" in msg else 1)
        raise IngestionError(f"malformed row: {e}", path, line) from None
    if rows.shape[1] != PAMAP2_COLUMNS:
        raise IngestionError(f"expected {PAMAP2_COLUMNS} columns, found {rows.shape[1]}", path)
    return rows


def fill_short_gaps(stream: np.ndarray, max_gap: int) -> tuple[np.ndarray, np.ndarray]:
    """Linearly interpolate NaN runs of at most ``max_gap`` samples per channel.

    Returns the filled stream and a boolean mask of samples still invalid
    (longer gaps, or gaps touching either end of the stream).
    """
    out = stream.astype(np.float64, copy=True)
    invalid = np.zeros(stream.shape[1], dtype=bool)
    t = np.arange(stream.shape[1])
    for row in out:
        nan = np.isnan(row)
        if not nan.any():
            continue
        edges = np.diff(np.concatenate([[0], nan.astype(np.int8), [0]]))
        starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
        good = ~nan
        for a, b in zip(starts, stops):
            if b - a <= max_gap and a > 0 and b < len(row):
                row[a:b] = np.interp(t[a:b], t[good], row[good])
            else:
                invalid[a:b] = True
    return out, invalid


def pamap2_windows(rows: np.ndarray, subject: int):
    """Windows, labels and subjects from one subject's raw 100 Hz rows.

    Windows are cut per contiguous activity run so none spans a label change.
    """
    labels_of = {aid: i for i, aid in enumerate(PAMAP2_ACTIVITIES)}
    activity = rows[:, 1].astype(np.int64)
    change = np.flatnonzero(np.diff(activity)) + 1
    bounds = np.concatenate([[0], change, [len(activity)]])
    max_gap = int(round(MAX_GAP_SECONDS * PAMAP2_RATE / 2))
    xs, ys = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        aid = int(activity[a])
        if aid not in labels_of:
            continue  # transient (0) and optional activities
        stream = downsample(rows[a:b, PAMAP2_CHANNEL_COLUMNS].T)
        stream, invalid = fill_short_gaps(stream, max_gap)
        wins = segment(stream)
        if not len(wins):
            continue
        bad = segment(invalid[None])[:, 0].any(axis=1)
        wins = wins[~bad]
        xs.append(wins)
        ys.append(np.full(len(wins), labels_of[aid], dtype=np.int64))
    if not xs:
        return (np.empty((0, len(PAMAP2_CHANNEL_COLUMNS), WINDOW)),
                np.empty(0, np.int64), np.empty(0, np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    return x, y, np.full(len(y), subject, dtype=np.int64)


def _pamap2_files(root: Path) -> list[tuple[int, Path]]:
    for cand in (root, root / "Protocol", root / "PAMAP2_Dataset" / "Protocol"):
        files = sorted(cand.glob("subject1*.dat"))
        if files:
            return [(int(f.stem[-3:]) - 100, f) for f in files]
    raise IngestionError("no subject1NN.dat files found", root)


def load_pamap2(root):
    """Load the PAMAP2 protocol recordings; returns normalized ``(train, validation, test)``.

    Subject 1 is the test set, subject 5 validation, the rest training.
    """
    root = Path(root)
    if not root.exists():
        raise IngestionError("dataset root does not exist", root)
    parts = {"train": [], "validation": [], "test": []}
    for subject, path in _pamap2_files(root):
        log.info("reading %s", path)
        x, y, s = pamap2_windows(_read_pamap2_file(path), subject)
        if subject == PAMAP2_TEST_SUBJECT:
            parts["test"].append((x, y, s))
        elif subject == PAMAP2_VALIDATION_SUBJECT:
            parts["validation"].append((x, y, s))
        else:
            parts["train"].append((x, y, s))

    names = list(PAMAP2_ACTIVITIES.values())
    splits = []
    for key in ("train", "validation", "test"):
        chunks = parts[key]
        if not chunks or not sum(len(c[1]) for c in chunks):
            raise IngestionError(f"{key} split is empty", root)
        x = np.concatenate([c[0] for c in chunks])[:, None].astype(np.float32)
        y = np.concatenate([c[1] for c in chunks])
        s = np.concatenate([c[2] for c in chunks])
        splits.append(WindowedDataset(x, y, s, names, list(PAMAP2_CHANNEL_NAMES)))
    _check_train_labels(splits[0])
    return normalize_splits(*splits)


# -- on-disk cache -----------------------------------------------------------------

CACHE_MAGIC = b"FNKD1"


def save_cache(path, ds: WindowedDataset, precision: int = 32) -> None:
    """Write ``ds`` as: magic, precision byte, header length (u32 LE), JSON
    header, then little-endian floats, int32 labels and int32 subjects."""
    dtype = {32: "<f4", 64: "<f8"}[precision]
    header = {
        "dims": list(ds.x.shape),
        "num_classes": ds.num_classes,
        "class_names": list(ds.class_names),
        "channel_names": list(ds.channel_names),
        "channel_stats": None if ds.channel_stats is None else
        [[repr(float(m)), repr(float(s))] for m, s in ds.channel_stats],
    }
    blob = json.dumps(header, indent=1).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(bytes([precision]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(ds.x, dtype=dtype).tobytes())
        fh.write(np.asarray(ds.y, dtype="<i4").tobytes())
        fh.write(np.asarray(ds.subjects, dtype="<i4").tobytes())


def load_cache(path) -> WindowedDataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read dataset cache {path}: {e}") from None
    if raw[:5] != CACHE_MAGIC:
        raise CheckpointError(f"{path}: not a dataset cache (bad magic)")
    if len(raw) < 10:
        raise CheckpointError(f"{path}: truncated header")
    precision = raw[5]
    if precision not in (32, 64):
        raise CheckpointError(f"{path}: unknown precision flag {precision}")
    (hlen,) = struct.unpack("<I", raw[6:10])
    try:
        header = json.loads(raw[10:10 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    dims = tuple(header["dims"])
    n = dims[0]
    fsize = precision // 8
    body = raw[10 + hlen:]
    need = int(np.prod(dims)) * fsize + 8 * n
    if len(body) != need:
        raise CheckpointError(f"{path}: payload is {len(body)} bytes, expected {need}")
    nx = int(np.prod(dims)) * fsize
    x = np.frombuffer(body[:nx], dtype="<f4" if precision == 32 else "<f8").reshape(dims)
    y = np.frombuffer(body[nx:nx + 4 * n], dtype="<i4").astype(np.int64)
    s = np.frombuffer(body[nx + 4 * n:], dtype="<i4").astype(np.int64)
    stats = header["channel_stats"]
    if stats is not None:
        stats = np.array([[float(m), float(sd)] for m, sd in stats], dtype=np.float64)
    return WindowedDataset(x.astype(x.dtype.newbyteorder("=")), y, s, header["class_names"],
                           header["channel_names"], stats)


SPLITS = ("train", "validation", "test")


def cache_path(directory, split: str) -> Path:
    return Path(directory) / f"{split}.fnkd"
