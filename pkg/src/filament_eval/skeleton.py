"""Medial-axis thinning of 3D binary masks (Lee, Kashyap & Chu 1994).

Border voxels are peeled in six directional sub-iterations until nothing
changes. A voxel is removed only when it is not an endpoint, its removal
keeps the Euler characteristic of its 3x3x3 neighbourhood, and the remaining
neighbours stay 26-connected. Candidates of one sub-iteration are collected
first and then re-checked one by one in raster order, which makes the result
independent of any traversal ambiguity.
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .volume import EmptyMaskError, InstanceSet, VoxelMask

# sub-iteration order, as (dz, dy, dx) of the background neighbour that makes
# a voxel a border voxel of that direction
_DIRECTIONS = np.array(
    [(0, -1, 0), (0, 1, 0), (0, 0, 1), (0, 0, -1), (1, 0, 0), (-1, 0, 0)], dtype=np.int64
)


def _euler_octant_table() -> np.ndarray:
    """8x the local Euler characteristic contribution of each 2x2x2 window.

    Bit ``a*4 + b*2 + c`` of the index is voxel ``(a, b, c)`` of the window.
    The contribution is that of the lattice vertex shared by all eight voxels
    when each voxel is a closed unit cube (26-connected foreground).
    """
    table = np.zeros(256, dtype=np.int64)
    cells = list(itertools.product((0, 1), repeat=3))
    for idx in range(256):
        on = {cell for k, cell in enumerate(cells) if idx >> k & 1}
        if not on:
            continue
        edges = 0
        for axis in range(3):
            for side in (0, 1):
                edges += any(cell[axis] == side for cell in on)
        faces = 0
        for axis in range(3):
            u, v = (a for a in range(3) if a != axis)
            for su in (0, 1):
                for sv in (0, 1):
                    faces += any(cell[u] == su and cell[v] == sv for cell in on)
        table[idx] = 8 - 4 * edges + 2 * faces - len(on)
    return table


def _octant_layout() -> np.ndarray:
    """For each octant: the 8 neighbourhood indices in window bit order, then the centre bit."""
    out = np.zeros((8, 9), dtype=np.int64)
    for o, (z0, y0, x0) in enumerate(itertools.product((0, 1), repeat=3)):
        for a, b, c in itertools.product((0, 1), repeat=3):
            out[o, a * 4 + b * 2 + c] = (z0 + a) * 9 + (y0 + b) * 3 + (x0 + c)
        out[o, 8] = (1 - z0) * 4 + (1 - y0) * 2 + (1 - x0)
    return out


def _adjacency() -> tuple[np.ndarray, np.ndarray]:
    """CSR adjacency among the 26 neighbourhood positions (centre excluded)."""
    pos = [p for p in itertools.product(range(3), repeat=3) if p != (1, 1, 1)]
    start, nbrs = [0], []
    for p in pos:
        for q in pos:
            if q != p and max(abs(p[i] - q[i]) for i in range(3)) == 1:
                nbrs.append(q[0] * 9 + q[1] * 3 + q[2])
        start.append(len(nbrs))
    return np.array(start, dtype=np.int64), np.array(nbrs, dtype=np.int64)


_EULER = _euler_octant_table()
_OCTANTS = _octant_layout()
_ADJ_START, _ADJ = _adjacency()


@numba.njit(cache=True, nogil=True)
def _load(img, z, y, x, nb):
    k = 0
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                nb[k] = img[z + dz, y + dy, x + dx]
                k += 1


@numba.njit(cache=True, nogil=True)
def _euler_invariant(nb, euler, octants):
    delta = 0
    for o in range(8):
        idx = 0
        for b in range(8):
            if nb[octants[o, b]]:
                idx |= 1 << b
        delta += euler[idx] - euler[idx & ~(1 << octants[o, 8])]
    return delta == 0


@numba.njit(cache=True, nogil=True)
def _single_component(nb, adj_start, adj, seen, stack):
    # 26-connected components of the neighbourhood minus its centre
    for i in range(27):
        seen[i] = 0
    comps = 0
    for s in range(27):
        if s == 13 or not nb[s] or seen[s]:
            continue
        comps += 1
        if comps > 1:
            return False
        seen[s] = 1
        top = 0
        stack[0] = s
        while top >= 0:
            v = stack[top]
            top -= 1
            row = v if v < 13 else v - 1
            for j in range(adj_start[row], adj_start[row + 1]):
                w = adj[j]
                if nb[w] and not seen[w]:
                    seen[w] = 1
                    top += 1
                    stack[top] = w
    return True


@numba.njit(cache=True, nogil=True)
def _thin(img, pts, n_dirs, keep_isolated, directions, euler, octants, adj_start, adj):
    nb = np.zeros(27, dtype=np.uint8)
    seen = np.zeros(27, dtype=np.uint8)
    stack = np.zeros(27, dtype=np.int64)
    n = pts.shape[0]
    cand = np.empty(n, dtype=np.int64)
    unchanged = 0
    while unchanged < n_dirs:
        unchanged = 0
        for d in range(n_dirs):
            dz, dy, dx = directions[d, 0], directions[d, 1], directions[d, 2]
            ncand = 0
            for i in range(n):
                z, y, x = pts[i, 0], pts[i, 1], pts[i, 2]
                if img[z + dz, y + dy, x + dx] != 0:
                    continue
                _load(img, z, y, x, nb)
                total = 0
                for k in range(27):
                    total += nb[k]
                if total == 2:
                    continue
                if not _euler_invariant(nb, euler, octants):
                    continue
                if not _single_component(nb, adj_start, adj, seen, stack):
                    continue
                cand[ncand] = i
                ncand += 1
            removed = 0
            for j in range(ncand):
                i = cand[j]
                z, y, x = pts[i, 0], pts[i, 1], pts[i, 2]
                _load(img, z, y, x, nb)
                if keep_isolated:
                    total = 0
                    for k in range(27):
                        total += nb[k]
                    if total == 1:
                        continue
                if _single_component(nb, adj_start, adj, seen, stack):
                    img[z, y, x] = 0
                    removed += 1
            if removed == 0:
                unchanged += 1
            else:
                m = 0
                for i in range(n):
                    if img[pts[i, 0], pts[i, 1], pts[i, 2]]:
                        pts[m, 0] = pts[i, 0]
                        pts[m, 1] = pts[i, 1]
                        pts[m, 2] = pts[i, 2]
                        m += 1
                n = m
    return n


def thin_array(bits: np.ndarray, planar: bool | None = None, keep_isolated: bool = True) -> np.ndarray:
    """Thin a dense 3D boolean array; voxels on the array faces are handled via zero padding.

    A ``planar`` volume (a single z slice, the default when ``bits`` has
    z-extent 1) is thinned with the four in-plane sub-iterations only.

    The sequential re-check can delete the last voxel of a component once all
    its neighbours are gone (slabs of even thickness vanish this way).
    ``keep_isolated`` retains that voxel, so every component survives; with
    ``keep_isolated=False`` the result is the plain Lee thinning.
    """
    bits = np.asarray(bits, dtype=bool)
    if planar is None:
        planar = bits.shape[0] == 1
    img = np.pad(bits, 1).astype(np.uint8)
    pts = np.argwhere(img).astype(np.int64)
    if len(pts):
        _thin(img, pts, 4 if planar else 6, keep_isolated, _DIRECTIONS, _EULER, _OCTANTS, _ADJ_START, _ADJ)
    return img[1:-1, 1:-1, 1:-1].astype(bool)


@dataclass(frozen=True)
class Skeleton:
    mask: VoxelMask
    source_count: int

    @property
    def count(self) -> int:
        return self.mask.count


def skeletonize(m: VoxelMask) -> Skeleton:
    """Centerline of a non-empty mask; thinning only ever deletes voxels."""
    if not m.count:
        raise EmptyMaskError("cannot skeletonize an empty mask")
    thinned = thin_array(m.bits, planar=m.shape[0] == 1)
    return Skeleton(VoxelMask.from_box(m.shape, m.offset, thinned), m.count)


def skeleton_cache(s: InstanceSet, workers: int | None = 1) -> Mapping:
    """Skeleton of every instance, each mask thinned exactly once."""
    ids = list(s)
    if workers == 1 or len(ids) < 2:
        return {k: skeletonize(s[k]) for k in ids}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        skels = list(pool.map(lambda k: skeletonize(s[k]), ids))
    return dict(zip(ids, skels))
