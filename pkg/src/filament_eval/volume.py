"""Sparse 3D voxel masks and overlap-capable instance sets.

A :class:`VoxelMask` stores a boolean bitmap cropped to the tight bounding
box of its foreground plus the box offset inside the full grid. Instances in
light-microscopy volumes are thin and sparse, so set algebra only ever touches
the overlap of two boxes.
"""

from __future__ import annotations

import enum
import hashlib
from collections.abc import Hashable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class ShapeMismatchError(ValueError):
    """Raised when two masks living on different grids are combined."""


class EmptyMaskError(ValueError):
    """Raised when an empty mask is used where an instance is required."""


class GridShape(tuple):
    """Extents ``(z, y, x)`` of a voxel grid; every extent is at least 1."""

    def __new__(cls, dims: Iterable[int]) -> GridShape:
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3:
            raise ValueError(f"grid shape needs three extents, got {dims}")
        if any(d < 1 for d in dims):
            raise ValueError(f"grid extents must be >= 1, got {dims}")
        return super().__new__(cls, dims)

    @property
    def volume(self) -> int:
        return self[0] * self[1] * self[2]

    def __repr__(self) -> str:
        return f"GridShape{tuple(self)}"


def _tight_box(bits: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
    if not bits.any():
        return None
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(bits.any(axis=other))
        lo.append(int(idx[0]))
        hi.append(int(idx[-1]) + 1)
    return tuple(lo), tuple(hi)


class VoxelMask:
    """Immutable binary occupancy over a 3D grid.

    Use :meth:`from_dense`, :meth:`from_coords` or :meth:`from_box` to build
    one. ``offset`` and ``bits`` describe the tight bounding box; an empty
    mask has a ``(0, 0, 0)`` bitmap.
    """

    __slots__ = ("shape", "offset", "bits", "count", "_gkey")

    def __init__(self, shape, offset=(0, 0, 0), bits=None):
        shape = GridShape(shape)
        if bits is None:
            bits = np.zeros((0, 0, 0), dtype=bool)
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 3:
            raise ValueError("mask bitmap must be 3D")
        offset = tuple(int(o) for o in offset)
        for o, n, s in zip(offset, bits.shape, shape):
            if n and (o < 0 or o + n > s):
                raise ValueError(f"bitmap at {offset} with extent {bits.shape} exceeds grid {tuple(shape)}")
        box = _tight_box(bits)
        if box is None:
            offset, bits = (0, 0, 0), np.zeros((0, 0, 0), dtype=bool)
        else:
            lo, hi = box
            bits = bits[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]].copy()
            offset = tuple(o + l for o, l in zip(offset, lo))
        bits.setflags(write=False)
        self.shape = shape
        self.offset = offset
        self.bits = bits
        self.count = int(np.count_nonzero(bits))
        self._gkey = None

    # construction -----------------------------------------------------

    @classmethod
    def empty(cls, shape) -> VoxelMask:
        return cls(shape)

    @classmethod
    def from_dense(cls, array) -> VoxelMask:
        array = np.asarray(array)
        return cls(array.shape, (0, 0, 0), array != 0)

    @classmethod
    def from_box(cls, shape, offset, bits) -> VoxelMask:
        return cls(shape, offset, bits)

    @classmethod
    def from_coords(cls, shape, coords) -> VoxelMask:
        """Build a mask from an ``(N, 3)`` array of ``(z, y, x)`` coordinates."""
        shape = GridShape(shape)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if len(coords) == 0:
            return cls(shape)
        if (coords < 0).any() or (coords >= np.asarray(shape)).any():
            raise ValueError(f"coordinates outside grid {tuple(shape)}")
        lo = coords.min(axis=0)
        hi = coords.max(axis=0) + 1
        bits = np.zeros(tuple(hi - lo), dtype=bool)
        rel = coords - lo
        bits[rel[:, 0], rel[:, 1], rel[:, 2]] = True
        return cls(shape, tuple(lo), bits)

    # geometry ----------------------------------------------------------

    @property
    def bbox(self) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
        """Half-open bounding box ``(lo, hi)``."""
        hi = tuple(o + n for o, n in zip(self.offset, self.bits.shape))
        return self.offset, hi

    def coords(self) -> np.ndarray:
        """Foreground coordinates in raster ``(z, y, x)`` order."""
        return np.argwhere(self.bits) + np.asarray(self.offset, dtype=np.int64)

    def geometry_key(self) -> tuple:
        """Order key that depends only on which voxels are set.

        Compares the first raster voxel, then the voxel count, then a digest
        of the voxel set. Equal keys mean equal masks (up to digest collision).
        """
        if self._gkey is None:
            lin = np.ravel_multi_index(self.coords().T, self.shape).astype(">i8")
            digest = hashlib.blake2b(lin.tobytes(), digest_size=16).digest()
            self._gkey = (int(lin[0]) if self.count else -1, self.count, digest)
        return self._gkey

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        if self.count:
            (z0, y0, x0), (z1, y1, x1) = self.bbox
            out[z0:z1, y0:y1, x0:x1] = self.bits
        return out

    def crop(self, lo, hi) -> np.ndarray:
        """Dense boolean view of the half-open region ``[lo, hi)``."""
        out = np.zeros(tuple(h - l for l, h in zip(lo, hi)), dtype=bool)
        if not self.count:
            return out
        mlo, mhi = self.bbox
        a = [max(l, m) for l, m in zip(lo, mlo)]
        b = [min(h, m) for h, m in zip(hi, mhi)]
        if any(x >= y for x, y in zip(a, b)):
            return out
        out[a[0] - lo[0]:b[0] - lo[0], a[1] - lo[1]:b[1] - lo[1], a[2] - lo[2]:b[2] - lo[2]] = self.bits[
            a[0] - mlo[0]:b[0] - mlo[0], a[1] - mlo[1]:b[1] - mlo[1], a[2] - mlo[2]:b[2] - mlo[2]
        ]
        return out

    # set algebra -------------------------------------------------------

    def _check(self, other: VoxelMask) -> None:
        if self.shape != other.shape:
            raise ShapeMismatchError(f"grid {tuple(self.shape)} != {tuple(other.shape)}")

    def _overlap_box(self, other: VoxelMask):
        if not self.count or not other.count:
            return None
        (alo, ahi), (blo, bhi) = self.bbox, other.bbox
        lo = tuple(max(a, b) for a, b in zip(alo, blo))
        hi = tuple(min(a, b) for a, b in zip(ahi, bhi))
        if any(l >= h for l, h in zip(lo, hi)):
            return None
        return lo, hi

    def intersect_count(self, other: VoxelMask) -> int:
        self._check(other)
        box = self._overlap_box(other)
        if box is None:
            return 0
        return int(np.count_nonzero(self.crop(*box) & other.crop(*box)))

    def __and__(self, other: VoxelMask) -> VoxelMask:
        self._check(other)
        box = self._overlap_box(other)
        if box is None:
            return VoxelMask(self.shape)
        return VoxelMask(self.shape, box[0], self.crop(*box) & other.crop(*box))

    def __or__(self, other: VoxelMask) -> VoxelMask:
        self._check(other)
        if not other.count:
            return self
        if not self.count:
            return other
        (alo, ahi), (blo, bhi) = self.bbox, other.bbox
        lo = tuple(min(a, b) for a, b in zip(alo, blo))
        hi = tuple(max(a, b) for a, b in zip(ahi, bhi))
        return VoxelMask(self.shape, lo, self.crop(lo, hi) | other.crop(lo, hi))

    def __sub__(self, other: VoxelMask) -> VoxelMask:
        self._check(other)
        if self._overlap_box(other) is None:
            return self
        lo, hi = self.bbox
        return VoxelMask(self.shape, lo, self.bits & ~other.crop(lo, hi))

    def complement(self) -> VoxelMask:
        return VoxelMask(self.shape, (0, 0, 0), ~self.to_dense())

    def __len__(self) -> int:
        return self.count

    def __bool__(self) -> bool:
        return self.count > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelMask):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.count == other.count
            and self.offset == other.offset
            and self.bits.shape == other.bits.shape
            and bool(np.array_equal(self.bits, other.bits))
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"VoxelMask(shape={tuple(self.shape)}, count={self.count}, bbox={self.bbox})"


def union_all(shape, masks: Iterable[VoxelMask]) -> VoxelMask:
    """Union of many masks, built in one pass over their joint bounding box."""
    masks = [m for m in masks if m.count]
    if not masks:
        return VoxelMask(shape)
    lo = tuple(min(m.offset[a] for m in masks) for a in range(3))
    hi = tuple(max(m.bbox[1][a] for m in masks) for a in range(3))
    acc = np.zeros(tuple(h - l for l, h in zip(lo, hi)), dtype=bool)
    for m in masks:
        (z0, y0, x0), (z1, y1, x1) = m.bbox
        acc[z0 - lo[0]:z1 - lo[0], y0 - lo[1]:y1 - lo[1], x0 - lo[2]:x1 - lo[2]] |= m.bits
    return VoxelMask(shape, lo, acc)


class InstanceSet(Mapping):
    """Mapping of instance id to non-empty :class:`VoxelMask` on one grid.

    Masks may overlap. Iteration follows insertion order; ``sorted_ids`` is
    the ascending id order used for reporting and ``canonical_ids`` the
    id-independent order used for tie-breaking.
    """

    def __init__(self, shape, masks: Mapping[Hashable, VoxelMask] | None = None):
        self.shape = GridShape(shape)
        self._masks: dict = {}
        for key, mask in (masks or {}).items():
            if not isinstance(key, (int, str)) or isinstance(key, bool):
                raise TypeError(f"instance ids must be int or str, got {key!r}")
            if mask.shape != self.shape:
                raise ShapeMismatchError(f"instance {key!r}: grid {tuple(mask.shape)} != {tuple(self.shape)}")
            if not mask.count:
                raise EmptyMaskError(f"instance {key!r} has no foreground voxels")
            self._masks[key] = mask

    @classmethod
    def from_labels(cls, labels) -> InstanceSet:
        """One instance per nonzero label of a (non-overlapping) label volume."""
        labels = np.asarray(labels)
        masks = {}
        for value in np.unique(labels):
            if value == 0:
                continue
            masks[int(value)] = VoxelMask.from_dense(labels == value)
        return cls(labels.shape, masks)

    @classmethod
    def from_channels(cls, channels) -> InstanceSet:
        """One instance per channel of a CZYX array; ids are channel indices."""
        channels = np.asarray(channels)
        if channels.ndim != 4:
            raise ValueError("expected a CZYX array")
        return cls(channels.shape[1:], {c: VoxelMask.from_dense(channels[c]) for c in range(channels.shape[0])})

    def __getitem__(self, key) -> VoxelMask:
        return self._masks[key]

    def __iter__(self) -> Iterator:
        return iter(self._masks)

    def __len__(self) -> int:
        return len(self._masks)

    @property
    def sorted_ids(self) -> list:
        return sorted(self._masks, key=id_sort_key)

    @property
    def canonical_ids(self) -> list:
        """Ids ordered by mask geometry; ids only separate identical masks."""
        return sorted(self._masks, key=lambda k: (self._masks[k].geometry_key(), id_sort_key(k)))

    def union(self) -> VoxelMask:
        return union_all(self.shape, self._masks.values())

    def relabel(self, mapping: Mapping) -> InstanceSet:
        return InstanceSet(self.shape, {mapping[k]: m for k, m in self._masks.items()})

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstanceSet):
            return NotImplemented
        return self.shape == other.shape and list(self._masks) == list(other._masks) and all(
            self._masks[k] == other._masks[k] for k in self._masks
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"InstanceSet(shape={tuple(self.shape)}, ids={list(self._masks)})"


def id_sort_key(key):
    """Total order over mixed int/str ids: all ints first, then strings."""
    return (isinstance(key, str), key)


class Labeling(str, enum.Enum):
    COMPLETELY = "completely"
    PARTLY = "partly"


@dataclass(frozen=True)
class LabeledImage:
    name: str
    gt: InstanceSet
    pred: InstanceSet | None = None
    labeling: Labeling = Labeling.COMPLETELY
    dim_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "labeling", Labeling(self.labeling))
        object.__setattr__(self, "dim_ids", frozenset(self.dim_ids))
        if self.pred is not None and self.pred.shape != self.gt.shape:
            raise ShapeMismatchError(
                f"{self.name}: prediction grid {tuple(self.pred.shape)} != gt grid {tuple(self.gt.shape)}"
            )
        unknown = self.dim_ids - set(self.gt)
        if unknown:
            raise ValueError(f"{self.name}: dim ids {sorted(unknown, key=id_sort_key)} not in ground truth")

    def with_pred(self, pred: InstanceSet) -> LabeledImage:
        return LabeledImage(self.name, self.gt, pred, self.labeling, self.dim_ids)


def intersect_count(a: VoxelMask, b: VoxelMask) -> int:
    return a.intersect_count(b)


def background_mask(s: InstanceSet) -> VoxelMask:
    """Complement of the union of all instances, within the grid."""
    return s.union().complement()


_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


def connected_components_26(m: VoxelMask) -> list[VoxelMask]:
    """26-connected components, ordered by their smallest ``(z, y, x)`` voxel."""
    if not m.count:
        return []
    labels, n = ndimage.label(m.bits, structure=_STRUCT_26)
    # ndimage numbers components in raster order of their first voxel
    return [VoxelMask(m.shape, m.offset, labels == k) for k in range(1, n + 1)]


def overlapping_gt_ids(s: InstanceSet) -> set:
    """Ids whose mask shares at least one voxel with another member mask."""
    ids = list(s)
    out = set()
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if s[a].intersect_count(s[b]):
                out.add(a)
                out.add(b)
    return out
