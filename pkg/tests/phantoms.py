"""Solid test volumes for skeleton checks: tubes, Y-junctions, blobs and bars."""

import numpy as np
from scipy import ndimage


def _ball(r):
    g = np.mgrid[-r:r + 1, -r:r + 1, -r:r + 1]
    return (g**2).sum(axis=0) <= r * r + 0.5


def _polyline(shape, points):
    out = np.zeros(shape, bool)
    for a, b in zip(points[:-1], points[1:]):
        n = int(np.abs(np.subtract(b, a)).max()) + 1
        for t in np.linspace(0, 1, n):
            out[tuple(np.rint(np.add(a, t * np.subtract(b, a))).astype(int))] = True
    return out


def tube(rng, shape=(24, 24, 24), radius=None):
    r = radius if radius is not None else int(rng.integers(1, 3))
    pts = [rng.integers(r + 1, np.array(shape) - r - 1) for _ in range(int(rng.integers(2, 4)))]
    return ndimage.binary_dilation(_polyline(shape, pts), _ball(r))


def y_junction(rng, shape=(24, 24, 24)):
    c = np.array(shape) // 2 + rng.integers(-2, 3, 3)
    arms = np.zeros(shape, bool)
    for _ in range(3):
        end = rng.integers(2, np.array(shape) - 2)
        arms |= _polyline(shape, [c, end])
    return ndimage.binary_dilation(arms, _ball(int(rng.integers(1, 3))))


def blob(rng, shape=(20, 20, 20)):
    out = np.zeros(shape, bool)
    for _ in range(int(rng.integers(2, 5))):
        r = int(rng.integers(2, 5))
        c = rng.integers(r, np.array(shape) - r)
        sl = tuple(slice(ci - r, ci + r + 1) for ci in c)
        out[sl] |= _ball(r)
    return out


def surface_bar(rng, shape=(16, 16, 24)):
    """Odd-thickness bar touching one or more grid faces."""
    out = np.zeros(shape, bool)
    t = int(rng.choice([1, 3, 5]))
    y0 = int(rng.choice([0, shape[1] - t]))
    z0 = int(rng.integers(0, shape[0] - t + 1))
    out[z0:z0 + t, y0:y0 + t, :] = True
    return out


KINDS = {"tube": tube, "y_junction": y_junction, "blob": blob, "surface_bar": surface_bar}


def parity_phantoms(per_kind=6, seed=7):
    rng = np.random.default_rng(seed)
    return [(kind, f(rng)) for kind, f in KINDS.items() for _ in range(per_kind)]


def random_blob_union(rng, shape=(12, 12, 12)):
    """Union of random boxes and balls, possibly several components."""
    out = np.zeros(shape, bool)
    for _ in range(int(rng.integers(1, 5))):
        if rng.random() < 0.5:
            lo = rng.integers(0, np.array(shape) - 1)
            hi = lo + rng.integers(1, 6, 3)
            out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
        else:
            r = int(rng.integers(1, 4))
            c = rng.integers(0, shape)
            b = _ball(r)
            for off in np.argwhere(b) - r + c:
                if ((off >= 0) & (off < shape)).all():
                    out[tuple(off)] = True
    return out
