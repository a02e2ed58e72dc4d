"""Reading volumes, manifests and subset lists; writing evaluation reports.

FIV layout (all integers little-endian)::

    u64      byte length N of the JSON header
    N bytes  header {"format": "fiv/1", "shape": [z, y, x],
                     "instances": [{"id": ..., "voxel_count": ...}, ...]}
    b"\\n"
    payload  per instance, in header order, runs of four u32
             (z, y, x_start, length) sorted by (z, y, x_start)

Instances in the payload are delimited by their header ``voxel_count``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .report import SPLITS, EvalReport, _flatten
from .volume import InstanceSet, Labeling, VoxelMask

FIV_FORMAT = "fiv/1"
_RUN = np.dtype("<u4")


class FormatError(ValueError):
    """Malformed input file."""


class LengthMismatchError(FormatError):
    pass


class OverlappingRunsError(FormatError):
    pass


class OutOfBoundsRunError(FormatError):
    pass


class UnsortedRunsError(FormatError):
    pass


class StructureError(FormatError):
    """A dataset container lacks a required group or array."""


class UnsupportedCodecError(FormatError):
    pass


# -- FIV ------------------------------------------------------------------------


def _runs(mask: VoxelMask) -> np.ndarray:
    """(z, y, x_start, length) runs of a mask in raster order."""
    if not mask:
        return np.zeros((0, 4), dtype=np.int64)
    bits = mask.bits
    padded = np.zeros(bits.shape[:2] + (bits.shape[2] + 2,), dtype=np.int8)
    padded[:, :, 1:-1] = bits
    d = np.diff(padded, axis=2)
    starts = np.argwhere(d == 1)
    ends = np.argwhere(d == -1)
    # both argwhere results are in raster order, so starts and ends pair up
    oz, oy, ox = mask.offset
    out = np.empty((len(starts), 4), dtype=np.int64)
    out[:, 0] = starts[:, 0] + oz
    out[:, 1] = starts[:, 1] + oy
    out[:, 2] = starts[:, 2] + ox
    out[:, 3] = ends[:, 2] - starts[:, 2]
    return out


def encode_fiv(instances: InstanceSet, raw_channels: int | None = None, order=None) -> bytes:
    ids = list(order) if order is not None else list(instances)
    header = {
        "format": FIV_FORMAT,
        "shape": list(instances.shape),
        "instances": [{"id": i, "voxel_count": len(instances[i])} for i in ids],
    }
    if raw_channels is not None:
        header["raw_channels"] = raw_channels
    head = json.dumps(header, separators=(",", ":")).encode()
    payload = b"".join(_runs(instances[i]).astype(_RUN).tobytes() for i in ids)
    return struct.pack("<Q", len(head)) + head + b"\n" + payload


def write_fiv(path, instances: InstanceSet, raw_channels: int | None = None) -> None:
    Path(path).write_bytes(encode_fiv(instances, raw_channels))


def decode_fiv(data: bytes, source: str = "<bytes>") -> tuple[tuple, InstanceSet, dict]:
    """Decode FIV bytes into ``(shape, instances, header)``."""
    if len(data) < 8:
        raise LengthMismatchError(f"{source}: file too short for the header length prefix")
    (n,) = struct.unpack_from("<Q", data, 0)
    if 8 + n + 1 > len(data):
        raise LengthMismatchError(f"{source}: header length {n} exceeds file size {len(data)}")
    try:
        header = json.loads(data[8:8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: header is not valid JSON ({exc})") from None
    if data[8 + n:9 + n] != b"\n":
        raise FormatError(f"{source}: missing newline after header")
    if not isinstance(header, dict) or header.get("format") != FIV_FORMAT:
        raise FormatError(f"{source}: not a {FIV_FORMAT} file")
    try:
        shape = tuple(int(v) for v in header["shape"])
        entries = [(e["id"], int(e["voxel_count"])) for e in header["instances"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{source}: malformed header ({exc})") from None
    if len(shape) != 3 or min(shape) < 1:
        raise FormatError(f"{source}: invalid shape {shape}")

    payload = data[9 + n:]
    if len(payload) % 16:
        raise LengthMismatchError(f"{source}: payload of {len(payload)} bytes is not a whole number of runs")
    runs = np.frombuffer(payload, dtype=_RUN).reshape(-1, 4).astype(np.int64)
    masks = {}
    pos = 0
    for inst_id, count in entries:
        start, total = pos, 0
        while total < count and pos < len(runs):
            total += runs[pos, 3]
            pos += 1
        if total != count:
            raise LengthMismatchError(
                f"{source}: instance {inst_id!r} declares {count} voxels but the payload holds {total}"
            )
        masks[inst_id] = _decode_runs(runs[start:pos], shape, inst_id, source)
    if pos != len(runs):
        raise LengthMismatchError(f"{source}: {len(runs) - pos} trailing runs after the last instance")
    return shape, InstanceSet(shape, masks), header


def _decode_runs(runs: np.ndarray, shape, inst_id, source) -> VoxelMask:
    if len(runs) == 0:
        raise LengthMismatchError(f"{source}: instance {inst_id!r} has no voxels")
    z, y, x0, length = runs.T
    if (length == 0).any():
        raise UnsortedRunsError(f"{source}: instance {inst_id!r} has a zero-length run")
    if (z >= shape[0]).any() or (y >= shape[1]).any() or (x0 + length > shape[2]).any():
        raise OutOfBoundsRunError(f"{source}: instance {inst_id!r} has a run outside shape {shape}")
    key = (z * shape[1] + y) * shape[2] + x0
    if (np.diff(key) < 0).any():
        raise UnsortedRunsError(f"{source}: runs of instance {inst_id!r} are not sorted by (z, y, x_start)")
    if (key[1:] < key[:-1] + length[:-1]).any():
        raise OverlappingRunsError(f"{source}: instance {inst_id!r} has overlapping runs")
    idx = np.repeat(key - np.cumsum(np.r_[0, length[:-1]]), length) + np.arange(length.sum())
    return VoxelMask.from_coords(shape, np.stack(np.unravel_index(idx, shape), axis=1))


def read_fiv(path) -> tuple[tuple, InstanceSet]:
    """Read a FIV file; instance iteration order follows the header."""
    shape, instances, _ = decode_fiv(Path(path).read_bytes(), str(path))
    return shape, instances


# -- dataset container (zarr v2 directory) -------------------------------------------

GT_PATH = "volumes/gt_instances"
RAW_PATH = "volumes/raw"


@dataclass(frozen=True)
class ContainerImage:
    shape: tuple
    gt: InstanceSet
    raw_channels: int | None = None

    @property
    def has_raw(self) -> bool:
        return self.raw_channels is not None


def _read_zarray(root: Path, rel: str) -> tuple[dict, Path]:
    node = root / rel
    meta = node / ".zarray"
    if not meta.is_file():
        raise StructureError(f"{root}: missing array {rel!r}")
    try:
        zmeta = json.loads(meta.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta}: invalid metadata ({exc})") from None
    if zmeta.get("zarr_format") != 2:
        raise FormatError(f"{meta}: only zarr format 2 is supported")
    return zmeta, node


def _read_array(root: Path, rel: str) -> np.ndarray:
    zmeta, node = _read_zarray(root, rel)
    comp = zmeta.get("compressor")
    if zmeta.get("filters") or (comp is not None and comp.get("id") != "zlib"):
        name = comp.get("id") if comp else "filters"
        raise UnsupportedCodecError(f"{node}: codec {name!r} unsupported, convert to FIV")
    dtype = np.dtype(zmeta["dtype"])
    if dtype.kind not in "iub":
        raise FormatError(f"{node}: expected an integer dtype, got {dtype}")
    shape, chunks = tuple(zmeta["shape"]), tuple(zmeta["chunks"])
    order = zmeta.get("order", "C")
    sep = zmeta.get("dimension_separator", ".")
    fill = zmeta.get("fill_value") or 0
    out = np.full(shape, fill, dtype=dtype)
    grid = [math.ceil(s / c) for s, c in zip(shape, chunks)]
    for idx in np.ndindex(*grid):
        f = node / sep.join(str(i) for i in idx)
        if not f.is_file():
            continue
        raw = f.read_bytes()
        if comp is not None:
            try:
                raw = zlib.decompress(raw)
            except zlib.error as exc:
                raise FormatError(f"{f}: corrupt zlib chunk ({exc})") from None
        if len(raw) != math.prod(chunks) * dtype.itemsize:
            raise FormatError(f"{f}: chunk holds {len(raw)} bytes, expected {math.prod(chunks) * dtype.itemsize}")
        block = np.frombuffer(raw, dtype=dtype).reshape(chunks, order=order)
        sl = tuple(slice(i * c, min((i + 1) * c, s)) for i, c, s in zip(idx, chunks, shape))
        out[sl] = block[tuple(slice(0, x.stop - x.start) for x in sl)]
    return out


def read_dataset_container(path) -> ContainerImage:
    """Read the CZYX instance channels of a chunked-array container.

    Only uncompressed and zlib chunks are supported. Channel indices become
    instance ids; nonzero values mark member voxels.
    """
    root = Path(path)
    if not root.is_dir():
        raise StructureError(f"{root}: not a container directory")
    arr = _read_array(root, GT_PATH)
    if arr.ndim != 4:
        raise StructureError(f"{root}: {GT_PATH} must be CZYX, got {arr.ndim} dims")
    for c in range(arr.shape[0]):
        if not arr[c].any():
            raise FormatError(f"{root}: channel {c} of {GT_PATH} is empty")
    raw_channels = None
    if (root / RAW_PATH / ".zarray").is_file():
        raw_meta, _ = _read_zarray(root, RAW_PATH)
        raw_channels = int(raw_meta["shape"][0]) if len(raw_meta["shape"]) == 4 else 1
    gt = InstanceSet.from_channels(arr != 0)
    return ContainerImage(tuple(arr.shape[1:]), gt, raw_channels)


# -- manifests and subset lists --------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    name: str
    split: str
    labeling: Labeling


def _csv_rows(path, columns):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != list(columns):
            raise FormatError(f"{path}: expected header {','.join(columns)}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, [(row.get(c) or "").strip() for c in reader.fieldnames]


def read_manifest(path) -> list[ManifestRow]:
    rows, seen = [], set()
    for lineno, (name, split, labeling) in _csv_rows(path, ("name", "split", "labeling")):
        if split not in ("train", "val", "test"):
            raise FormatError(f"{path}:{lineno}: unknown split {split!r}")
        try:
            lab = Labeling(labeling)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: unknown labeling {labeling!r}") from None
        if name in seen:
            raise FormatError(f"{path}:{lineno}: duplicate sample name {name!r}")
        seen.add(name)
        rows.append(ManifestRow(name, split, lab))
    return rows


def parse_instance_id(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def read_dim_list(path) -> dict[str, set]:
    """Map sample name to the set of dim gt instance ids."""
    out: dict[str, set] = {}
    for _, (name, inst) in _csv_rows(path, ("name", "instance_id")):
        out.setdefault(name, set()).add(parse_instance_id(inst))
    return out


# -- reports -------------------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


def _table(report: EvalReport) -> tuple[list[str], list[list[str]]]:
    """Split-level rows with metric columns (mean and std per metric for multi-run reports)."""
    if report.summary is not None:
        keys = next((list(e) for e in report.summary.values() if e), [])
        header = ["split"] + [f"{k}_{stat}" for k in keys for stat in ("mean", "std")]
        rows = []
        for split in SPLITS:
            entry = report.summary.get(split)
            if entry is None:
                continue
            row = [split]
            for k in keys:
                cell = entry[k]
                row += ["", ""] if cell is None else [_fmt(float(cell["mean"])), _fmt(float(cell["std"]))]
            rows.append(row)
        return header, rows
    flat = {s: _flatten(v) for s, v in report.per_split.items() if v is not None}
    keys = next((list(v) for v in flat.values()), [])
    header = ["split"] + keys
    rows = [[s] + [_fmt(flat[s][k]) for k in keys] for s in SPLITS if s in flat]
    return header, rows


def render_report(report: EvalReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n"
    header, rows = _table(report)
    if fmt == "csv":
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "md":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; expected json, csv or md")


def write_report(report: EvalReport, path, fmt: str = "json") -> None:
    """Serialize a report deterministically; filesystem errors propagate unchanged."""
    text = render_report(report, fmt)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def fiv_files(directory) -> dict[str, Path]:
    """Image name to path for every ``*.fiv`` file of a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: no such directory")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix == ".fiv" and p.is_file()}


__all__ = [
    "ContainerImage",
    "FormatError",
    "LengthMismatchError",
    "ManifestRow",
    "OutOfBoundsRunError",
    "OverlappingRunsError",
    "StructureError",
    "UnsortedRunsError",
    "UnsupportedCodecError",
    "decode_fiv",
    "encode_fiv",
    "fiv_files",
    "read_dataset_container",
    "read_dim_list",
    "read_fiv",
    "read_manifest",
    "render_report",
    "write_fiv",
    "write_report",
]
