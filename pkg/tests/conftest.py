from pathlib import Path

import numpy as np
import pytest

from fusenet.data import PAMAP2_ACTIVITIES, WindowedDataset, normalize_splits

_acceptance = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        number, title = marker.args
        if call.excinfo is None:
            status = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            status = "SKIP (" + str(call.excinfo.value.msg) + ")"
        else:
            status = "FAIL"
        _acceptance.append((number, title, status))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status in sorted(_acceptance):
        terminalreporter.write_line(f"[{number:>2}] {title}: {status}")


def synthetic_har(n, height=6, num_classes=6, seed=0, subjects=(1, 2, 3), sep=1.5):
    """Class-dependent sinusoids plus noise, shaped like prepared windows."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % num_classes
    rng.shuffle(y)
    t = np.arange(128) / 50.0
    x = rng.normal(0, 1, size=(n, 1, height, 128))
    for k in range(num_classes):
        freq = 0.5 + k
        rows = np.sin(2 * np.pi * freq * t + np.arange(height)[:, None])
        x[y == k, 0] += sep * rows
    s = np.asarray(subjects)[np.arange(n) % len(subjects)]
    return WindowedDataset(x.astype(np.float32), y.astype(np.int64), s.astype(np.int64),
                           [f"act{k}" for k in range(num_classes)],
                           [f"ch{h}" for h in range(height)])


@pytest.fixture
def har_splits():
    train = synthetic_har(192, seed=1, subjects=(1, 2, 3))
    val = synthetic_har(60, seed=2, subjects=(4,))
    test = synthetic_har(90, seed=3, subjects=(5, 6))
    return normalize_splits(train, val, test)


def write_ucl_tree(root: Path, sizes=None, seed=0):
    """A miniature UCI HAR layout with the real file names."""
    rng = np.random.default_rng(seed)
    sizes = sizes or {"train": {1: 7, 3: 6, 27: 4, 28: 5, 29: 3, 30: 4}, "test": {2: 6, 4: 5}}
    base = root / "UCI HAR Dataset"
    for split, per_subject in sizes.items():
        sig = base / split / "Inertial Signals"
        sig.mkdir(parents=True)
        subjects = [s for s, k in per_subject.items() for _ in range(k)]
        n = len(subjects)
        labels = (np.arange(n) % 6) + 1
        names = [f"{kind}_{a}" for kind in ("body_acc", "body_gyro", "total_acc") for a in "xyz"]
        for i, name in enumerate(names):
            vals = rng.normal(i, 1 + i, size=(n, 128))
            np.savetxt(sig / f"{name}_{split}.txt", vals, fmt="%.8e")
        np.savetxt(base / split / f"y_{split}.txt", labels, fmt="%d")
        np.savetxt(base / split / f"subject_{split}.txt", subjects, fmt="%d")
    return base


def pamap2_rows(subject, seconds_per_activity=8, seed=0, gaps=()):
    """Raw 100 Hz rows for one subject covering all 12 protocol activities."""
    rng = np.random.default_rng(seed + subject)
    blocks = []
    ts = 0.0
    for aid in [0, *PAMAP2_ACTIVITIES]:
        n = 300 if aid == 0 else seconds_per_activity * 100
        rows = rng.normal(0, 1, size=(n, 54))
        rows[:, 0] = ts + np.arange(n) / 100.0
        ts = rows[-1, 0] + 0.01
        rows[:, 1] = aid
        rows[:, 2] = np.where(np.arange(n) % 9 == 0, 90.0, np.nan)  # heart rate is sparse
        rows[:, 3:] += aid  # activity-dependent offset
        blocks.append(rows)
    data = np.concatenate(blocks)
    for start, length, col in gaps:
        data[start:start + length, col] = np.nan
    return data


def write_pamap2_tree(root: Path, subjects=range(1, 10), **kw):
    proto = root / "Protocol"
    proto.mkdir(parents=True)
    for s in subjects:
        rows = pamap2_rows(s, **kw)
        path = proto / f"subject1{s:02d}.dat"
        np.savetxt(path, rows, fmt="%.6f")
        path.write_text(path.read_text().replace("nan", "NaN"))
    return proto
