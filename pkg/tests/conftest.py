import sys
from pathlib import Path

import numpy as np
import pytest

from freebies.core import BBox, ObjectLabel, Sample
from freebies.io import DatasetEntry, DatasetIndex, write_dataset

sys.path.insert(0, str(Path(__file__).parent))


def random_sample(rng, h=None, w=None, max_labels=4, num_classes=5):
    h = h or int(rng.integers(4, 40))
    w = w or int(rng.integers(4, 40))
    img = rng.random((h, w, 3))
    labels = []
    for _ in range(int(rng.integers(0, max_labels + 1))):
        x0, x1 = sorted(rng.choice(w + 1, size=2, replace=False))
        y0, y1 = sorted(rng.choice(h + 1, size=2, replace=False))
        labels.append(ObjectLabel(BBox(x0, y0, x1, y1), int(rng.integers(0, num_classes)),
                                  float(rng.random())))
    return Sample(img, labels)


def make_dataset(out_dir, n=10, seed=0, fmt="voc", classes=("cat", "dog", "car")):
    """Write ``n`` small random images with labels as a VOC or COCO dataset."""
    rng = np.random.default_rng(seed)
    entries, images = [], []
    for i in range(n):
        s = random_sample(rng, int(rng.integers(24, 64)), int(rng.integers(24, 64)),
                          num_classes=len(classes))
        labels = [lab.replace(weight=1.0) for lab in s.labels]
        entries.append(DatasetEntry(f"img{i:03d}", f"img{i:03d}.png", s.width, s.height, labels))
        images.append(s.image)
    write_dataset(DatasetIndex(classes, entries, fmt), images, out_dir, fmt)
    return out_dir


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def checker():
    """2x2 two-tone checkerboard as an (H, W, 3) image."""
    board = (np.indices((2, 2)).sum(axis=0) % 2).astype(float)
    return np.repeat(board[..., None], 3, axis=2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
