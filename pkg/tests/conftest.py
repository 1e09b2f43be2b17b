import math

import numpy as np
import pytest

from playclass import rle
from playclass.dataset_io import TrackedMask


def make_disc(r, pad=3):
    n = 2 * r + 2 * pad + 1
    yy, xx = np.mgrid[0:n, 0:n]
    return (yy - r - pad) ** 2 + (xx - r - pad) ** 2 <= r * r


def make_square(side, pad=3):
    n = side + 2 * pad
    m = np.zeros((n, n), bool)
    m[pad:pad + side, pad:pad + side] = True
    return m


def random_blob(rng, size=24, n_seeds=3, steps=60):
    """A connected random blob grown by dilation-style random walks."""
    m = np.zeros((size, size), bool)
    y, x = rng.integers(4, size - 4, 2)
    m[y, x] = True
    for _ in range(steps):
        ys, xs = np.nonzero(m)
        i = rng.integers(len(ys))
        dy, dx = rng.integers(-1, 2, 2)
        ny, nx = int(ys[i] + dy), int(xs[i] + dx)
        if 1 <= ny < size - 1 and 1 <= nx < size - 1:
            m[ny, nx] = True
    return m


def mask_record(mask, video_id="v", frame=0, track_id=1, conf=0.9, origin=(0, 0)):
    """TrackedMask for a boolean raster placed at ``origin`` in a larger frame."""
    oy, ox = origin
    h, w = mask.shape
    full = np.zeros((h + oy, w + ox), bool) if (oy or ox) else mask
    if oy or ox:
        full[oy:, ox:] = mask
    counts = rle.encode_mask(full)
    bbox = rle.tight_bbox(counts, full.shape)
    return TrackedMask(video_id, frame, track_id, bbox, full.shape, counts, conf)


def point_record(x, y, shape=(400, 400), video_id="v", frame=0, track_id=1, conf=0.9):
    """Single-pixel mask at (x, y) so the centroid is exact."""
    m = np.zeros(shape, bool)
    m[y, x] = True
    counts = rle.encode_mask(m)
    return TrackedMask(video_id, frame, track_id, (x, y, 1, 1), shape, counts, conf)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
