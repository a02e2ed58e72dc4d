"""Synthetic phantoms: metric edge cases and random filament volumes.

Every curve is one voxel wide (each voxel has at most two 26-neighbours on
its own curve), so the skeleton of an instance is the instance itself and
expected metric values follow directly from voxel counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import InstanceSet, LabeledImage, Labeling, VoxelMask, connected_components_26

EDGE_CASES = tuple("abcdefghi")

# two parallel gt lines of LINE_LEN voxels, far apart in (z, y)
GRID = (16, 16, 128)
LINE_LEN = 100
LINE_YZ = ((4, 4), (11, 11))
LINE_X0 = 14

# case (e): tiles of 21 voxels on 400-voxel lines give clRecall 0.0525, above
# the false-split threshold 0.05 while clDice 2f/(1+f) stays below 0.1
E_GRID = (16, 16, 416)
E_LINE_LEN = 400
E_TILE = 21

EXACT = 1e-9
ROUNDED = 0.01


@dataclass(frozen=True)
class Phantom:
    image: LabeledImage
    expected: dict = field(default_factory=dict)
    f1_row: tuple | None = None


def _line(shape, z, y, x0, length) -> VoxelMask:
    coords = np.stack([np.full(length, z), np.full(length, y), np.arange(x0, x0 + length)], axis=1)
    return VoxelMask.from_coords(shape, coords)


def _gt_lines(shape=GRID, length=LINE_LEN, x0=LINE_X0):
    return [_line(shape, z, y, x0, length) for z, y in LINE_YZ]


def _expect(**kw):
    return {k: (v if isinstance(v, tuple) else (v, EXACT)) for k, v in kw.items()}


def edge_case(name: str) -> Phantom:
    """One of the nine edge-case configurations ``"a"`` .. ``"i"``."""
    if name not in EDGE_CASES:
        raise ValueError(f"unknown edge case {name!r}; expected one of {', '.join(EDGE_CASES)}")
    shape = E_GRID if name == "e" else GRID
    g1, g2 = _gt_lines(shape, E_LINE_LEN, 8) if name == "e" else _gt_lines()
    gt = InstanceSet(shape, {1: g1, 2: g2})
    f1_row = None
    r = ROUNDED

    if name == "a":
        preds = {1: g1, 2: g2}
        exp = _expect(S=1.0, avF1=1.0, C=1.0, clDice_TP=1.0, TP=2, FP=0, FN=0, FS=0, FM=0)
    elif name == "b":
        preds = {}
        exp = _expect(S=0.0, avF1=0.0, C=0.0, clDice_TP=0.0, TP=0, FP=0, FN=2, FS=0, FM=0)
    elif name == "c":
        preds = {1: VoxelMask.from_dense(np.ones(shape, dtype=bool))}
        exp = _expect(S=(0.0, r), avF1=(0.0, r), C=(0.0, r), clDice_TP=0.0, TP=0, FP=1, FN=2, FS=0, FM=1)
    elif name == "d":
        preds = {1: g1 | g2}
        exp = _expect(
            S=(0.47, r), avF1=4 / 9, C=0.5, clDice_TP=2 / 3, TP=1, FP=0, FN=1, FS=0, FM=1
        )
        f1_row = (0.67,) * 6 + (0.0,) * 3
    elif name == "e":
        preds = {}
        for k, line in enumerate((g1, g2)):
            xs = line.coords()
            for t in range(0, len(xs), E_TILE):
                preds[len(preds) + 1] = VoxelMask.from_coords(shape, xs[t:t + E_TILE])
        n_tiles = E_LINE_LEN // E_TILE
        exp = _expect(
            S=(0.5, r), avF1=(0.0, r), C=(1.0, r), clDice_TP=0.0, TP=0, FP=len(preds), FN=2,
            FS=2 * (n_tiles - 1), FM=0,
        )
    elif name == "f":
        half = LINE_LEN // 2 + 1
        preds = {
            1: VoxelMask.from_coords(GRID, g1.coords()[:half]),
            2: VoxelMask.from_coords(GRID, g2.coords()[:half]),
        }
        exp = _expect(S=(0.58, r), avF1=(0.67, r), C=(0.51, r), clDice_TP=(0.68, r), TP=2, FP=0, FN=0, FS=0, FM=0)
        f1_row = (1.0,) * 6 + (0.0,) * 3
    elif name == "g":
        preds = {1: g1}
        exp = _expect(S=(0.58, r), avF1=2 / 3, C=0.5, clDice_TP=1.0, TP=1, FP=0, FN=1, FS=0, FM=0)
        f1_row = (0.67,) * 9
    elif name == "h":
        preds = {1: g1, 2: VoxelMask.from_coords(GRID, g2.coords()[:4])}
        exp = _expect(S=0.51, avF1=0.5, C=0.52, clDice_TP=1.0, TP=1, FP=1, FN=1, FS=0, FM=0)
        f1_row = (0.5,) * 9
    else:  # "i"
        preds = {1: g1, 2: g2}
        for k in range(7):
            preds[3 + k] = VoxelMask.from_coords(GRID, [(8, 8, 20 + 12 * k)])
        exp = _expect(S=(0.68, r), avF1=4 / 11, C=1.0, clDice_TP=1.0, TP=2, FP=7, FN=0, FS=0, FM=0)
        f1_row = (0.36,) * 9

    img = LabeledImage(f"edge_{name}", gt, InstanceSet(shape, preds))
    return Phantom(img, exp, f1_row)


# -- random filaments ---------------------------------------------------------

_STEPS = np.array([d for d in np.ndindex(3, 3, 3) if d != (1, 1, 1)], dtype=np.int64) - 1


class PlacementError(RuntimeError):
    """A random phantom could not be placed within the retry budget."""


def _walk(rng, shape, length, blocked, start=None, max_tries=200):
    """Seeded random walk whose voxels each touch at most two walk neighbours."""
    shape_arr = np.asarray(shape)
    for _ in range(max_tries):
        pts = [tuple(rng.integers(0, shape_arr)) if start is None else tuple(start)]
        if pts[0] in blocked and start is None:
            continue
        direction = _STEPS[rng.integers(len(_STEPS))]
        stuck = False
        while len(pts) < length:
            options = []
            for step in _STEPS:
                q = np.asarray(pts[-1]) + step
                if (q < 0).any() or (q >= shape_arr).any():
                    continue
                q = tuple(int(v) for v in q)
                if q in blocked or q in pts:
                    continue
                # width 1: the new voxel may only touch the current tip
                if any(max(abs(a - b) for a, b in zip(q, p)) <= 1 for p in pts[:-1]):
                    continue
                options.append((q, float(np.dot(step, direction))))
            if not options:
                stuck = True
                break
            weights = np.exp(np.array([w for _, w in options]))
            q = options[rng.choice(len(options), p=weights / weights.sum())][0]
            direction = np.asarray(q) - np.asarray(pts[-1])
            pts.append(q)
        if not stuck:
            return pts
    raise PlacementError(f"could not place a walk of length {length} in grid {tuple(shape)}")


def perturb_prediction(rng, gt: InstanceSet, max_preds: int) -> InstanceSet:
    """Prediction with typical errors: truncations, splits, merges, misses, noise.

    Each gt instance independently gets one action; at most ``max_preds``
    predictions are kept. Ids are ``1..n`` in creation order.
    """
    shape = gt.shape
    preds = []
    ids = gt.sorted_ids
    for g in ids:
        pts = gt[g].coords()
        action = rng.choice(["copy", "truncate", "split", "drop", "merge"], p=[0.3, 0.25, 0.2, 0.1, 0.15])
        if action == "copy":
            preds.append(gt[g])
        elif action == "truncate":
            k = int(rng.integers(1, len(pts) + 1))
            preds.append(VoxelMask.from_coords(shape, pts[:k]))
        elif action == "split" and len(pts) > 1:
            k = int(rng.integers(1, len(pts)))
            preds.append(VoxelMask.from_coords(shape, pts[:k]))
            preds.append(VoxelMask.from_coords(shape, pts[k:]))
        elif action == "merge" and preds:
            j = int(rng.integers(len(preds)))
            preds[j] = preds[j] | gt[g]
        elif action != "drop":
            preds.append(gt[g])
    if rng.random() < 0.5:
        noise = _walk(rng, shape, int(rng.integers(1, 5)), set())
        preds.append(VoxelMask.from_coords(shape, noise))
    preds = preds[:max_preds]
    return InstanceSet(shape, {i + 1: m for i, m in enumerate(preds)})


def random_filament_phantom(
    seed: int,
    n_instances: int = 3,
    length_range: tuple[int, int] = (6, 20),
    overlap_prob: float = 0.0,
    shape=(16, 16, 16),
    pred: str = "perturbed",
    max_preds: int = 4,
) -> Phantom:
    """Random width-1 filaments as gt plus a prediction.

    With probability ``overlap_prob`` an instance starts on a voxel of an
    earlier one and shares a short run with it; otherwise instances never
    share voxels. ``pred`` is ``"perfect"`` (prediction equals gt) or
    ``"perturbed"``.
    """
    if n_instances < 1 or length_range[0] < 1 or length_range[1] < length_range[0]:
        raise ValueError("n_instances and lengths must be positive")
    if not 0 <= overlap_prob <= 1:
        raise ValueError("overlap_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    occupied: set = set()
    curves = []
    for k in range(n_instances):
        length = int(rng.integers(length_range[0], length_range[1] + 1))
        pts = None
        if curves and rng.random() < overlap_prob:
            pts = _overlapping_walk(rng, shape, length, curves, occupied)
        if pts is None:
            pts = _walk(rng, shape, length, occupied)
        curves.append(pts)
        occupied.update(pts)
    gt = InstanceSet(shape, {k + 1: VoxelMask.from_coords(shape, c) for k, c in enumerate(curves)})
    if pred == "perfect":
        prediction = gt
    elif pred == "perturbed":
        prediction = perturb_prediction(rng, gt, max_preds)
    else:
        raise ValueError(f"unknown prediction mode {pred!r}")
    return Phantom(LabeledImage(f"random_{seed}", gt, prediction))


def _overlapping_walk(rng, shape, length, curves, occupied, tries=20):
    """Curve sharing a short run with an earlier curve, or None if none fits.

    The curve always extends beyond the shared run, so no instance is nested
    inside another one.
    """
    length = max(length, 4)
    for _ in range(tries):
        host = curves[int(rng.integers(len(curves)))]
        i = int(rng.integers(len(host)))
        shared = host[i:i + 3]
        try:
            rest = _walk(rng, shape, length - len(shared) + 1, occupied - {shared[-1]}, start=shared[-1], max_tries=5)
        except PlacementError:
            continue
        pts = list(shared) + rest[1:]
        if _is_thin(pts):
            return pts
    return None


def _is_thin(pts) -> bool:
    arr = np.asarray(pts)
    for p in arr:
        if (np.abs(arr - p).max(axis=1) == 1).sum() > 2:
            return False
    return True


def toy_cc_predictor(img: LabeledImage) -> InstanceSet:
    """One predicted instance per 26-connected component of the gt foreground."""
    comps = connected_components_26(img.gt.union())
    return InstanceSet(img.gt.shape, {i + 1: c for i, c in enumerate(comps)})


def edge_case_image(name: str, labeling: Labeling = Labeling.COMPLETELY) -> LabeledImage:
    img = edge_case(name).image
    return LabeledImage(img.name, img.gt, img.pred, labeling)
