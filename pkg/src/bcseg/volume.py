"""Dense 3D volumes: containers, one-hot encoding, cropping and resampling.

Arrays are indexed ``[x, y, z]`` so a volume of shape ``(W, H, Z)`` is stored
as a numpy array of that shape. Multi-channel grids put the channel axis first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np


@dataclass(frozen=True)
class VolumeShape:
    width: int
    height: int
    depth: int

    def __post_init__(self):
        for name, n in zip(("width", "height", "depth"), self.as_tuple()):
            if int(n) != n or n < 1:
                raise ValueError(f"{name} must be a positive integer, got {n!r}")

    @classmethod
    def of(cls, shape: Sequence[int] | "VolumeShape") -> "VolumeShape":
        if isinstance(shape, VolumeShape):
            return shape
        if len(shape) != 3:
            raise ValueError(f"expected 3 dimensions, got {tuple(shape)}")
        return cls(*(int(s) for s in shape))

    @classmethod
    def cube(cls, n: int) -> "VolumeShape":
        return cls(n, n, n)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.width, self.height, self.depth)

    @property
    def n_voxels(self) -> int:
        return self.width * self.height * self.depth


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Real-valued intensity grid (a CT scan or any derived image)."""

    values: np.ndarray
    spacing: tuple[float, float, float] | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ValueError(f"scalar volume must be 3D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar volume contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> VolumeShape:
        return VolumeShape.of(self.values.shape)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer organ-label grid. ``class_table[0]`` is the background."""

    labels: np.ndarray
    class_table: tuple[str, ...] = field(default=("background",))
    spacing: tuple[float, float, float] | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"label volume must be 3D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
            labels = labels.astype(np.int64)
        table = tuple(self.class_table)
        if labels.size and (labels.min() < 0 or labels.max() >= len(table)):
            raise ValueError(
                f"labels must lie in [0, {len(table) - 1}], "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_table", table)

    @classmethod
    def from_array(cls, labels: np.ndarray, n_classes: int | None = None, **kw) -> "LabelVolume":
        """Wrap a bare array, naming classes ``background, class1, ...``."""
        labels = np.asarray(labels)
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if labels.size else 1
        table = ("background",) + tuple(f"class{c}" for c in range(1, n_classes))
        return cls(labels, table, **kw)

    @property
    def shape(self) -> VolumeShape:
        return VolumeShape.of(self.labels.shape)

    @property
    def n_classes(self) -> int:
        return len(self.class_table)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Network output: per-class region probabilities, optional boundary channel.

    ``region`` has shape ``(C, W, H, Z)``; ``boundary`` has shape ``(W, H, Z)``.
    """

    region: np.ndarray
    boundary: np.ndarray | None = None

    def __post_init__(self):
        region = np.asarray(self.region)
        if region.ndim != 4:
            raise ValueError(f"region map must be (C, W, H, Z), got {region.shape}")
        object.__setattr__(self, "region", region)
        if self.boundary is not None:
            boundary = np.asarray(self.boundary)
            if boundary.shape != region.shape[1:]:
                raise ValueError(
                    f"boundary map shape {boundary.shape} does not match region {region.shape[1:]}"
                )
            object.__setattr__(self, "boundary", boundary)

    @property
    def n_classes(self) -> int:
        return self.region.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive voxel-index box, ``lo[k] <= hi[k]`` on each axis."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo, hi = tuple(int(v) for v in self.lo), tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("bounding box corners need 3 coordinates")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"bounding box min {lo} exceeds max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def full(cls, shape: VolumeShape | Sequence[int]) -> "BoundingBox":
        shape = VolumeShape.of(shape)
        return cls((0, 0, 0), tuple(n - 1 for n in shape.as_tuple()))

    @property
    def extents(self) -> VolumeShape:
        return VolumeShape(*(b - a + 1 for a, b in zip(self.lo, self.hi)))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b + 1) for a, b in zip(self.lo, self.hi))

    def within(self, shape: VolumeShape | Sequence[int]) -> bool:
        dims = VolumeShape.of(shape).as_tuple()
        return all(0 <= a and b < n for a, b, n in zip(self.lo, self.hi, dims))

    def to_list(self) -> list[list[int]]:
        return [list(self.lo), list(self.hi)]

    @classmethod
    def from_list(cls, corners: Sequence[Sequence[int]]) -> "BoundingBox":
        return cls(tuple(corners[0]), tuple(corners[1]))


Vol = TypeVar("Vol", ScalarVolume, LabelVolume)


def one_hot(labels: LabelVolume | np.ndarray, n_classes: int | None = None) -> np.ndarray:
    """Encode labels as a ``(C, W, H, Z)`` uint8 array, one channel per class."""
    if isinstance(labels, LabelVolume):
        n_classes = labels.n_classes if n_classes is None else n_classes
        labels = labels.labels
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if labels.size and labels.max() >= n_classes:
        raise ValueError(f"label {labels.max()} out of range for {n_classes} classes")
    return (labels[None] == np.arange(n_classes).reshape(-1, 1, 1, 1)).astype(np.uint8)


def crop(vol: Vol, box: BoundingBox) -> Vol:
    """Copy the sub-volume inside ``box``; raises IndexError if the box leaves the grid."""
    if not box.within(vol.shape):
        raise IndexError(f"bounding box {box.to_list()} exceeds volume shape {vol.shape.as_tuple()}")
    if isinstance(vol, LabelVolume):
        return replace(vol, labels=vol.labels[box.slices()].copy())
    return replace(vol, values=vol.values[box.slices()].copy())


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    # voxel-center alignment, clamped to the edge voxels
    scale = n_in / n_out
    coords = (np.arange(n_out) + 0.5) * scale - 0.5
    return np.clip(coords, 0.0, n_in - 1)


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    scale = n_in / n_out
    return np.minimum(np.floor((np.arange(n_out) + 0.5) * scale).astype(np.int64), n_in - 1)


def _linear_along(values: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = values.shape[axis]
    if n_in == n_out:
        return values
    coords = _source_coords(n_out, n_in)
    i0 = np.floor(coords).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = coords - i0
    shape = [1] * values.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    a = np.take(values, i0, axis=axis)
    b = np.take(values, i1, axis=axis)
    return a * (1.0 - w) + b * w


def resample(vol: Vol, target: VolumeShape | Sequence[int]) -> Vol:
    """Resample to ``target``: trilinear for intensities, nearest-neighbour for labels."""
    target = VolumeShape.of(target)
    out_dims = target.as_tuple()
    in_dims = vol.shape.as_tuple()
    spacing = vol.spacing
    if spacing is not None:
        spacing = tuple(float(s) * n_in / n_out for s, n_in, n_out in zip(spacing, in_dims, out_dims))
    if isinstance(vol, LabelVolume):
        idx = [_nearest_index(o, i) for o, i in zip(out_dims, in_dims)]
        labels = vol.labels[np.ix_(*idx)]
        return replace(vol, labels=labels, spacing=spacing)
    values = vol.values.astype(np.float64)
    for axis, n_out in enumerate(out_dims):
        values = _linear_along(values, axis, n_out)
    return replace(vol, values=values, spacing=spacing)


def argmax_labels(prob: ProbabilityMap | np.ndarray, class_table: Sequence[str] | None = None) -> LabelVolume:
    """Per-voxel most probable class; ``np.argmax`` already resolves ties to the lowest index."""
    region = prob.region if isinstance(prob, ProbabilityMap) else np.asarray(prob)
    labels = np.argmax(region, axis=0)
    if class_table is None:
        return LabelVolume.from_array(labels, n_classes=region.shape[0])
    if len(class_table) != region.shape[0]:
        raise ValueError(f"class table has {len(class_table)} names for {region.shape[0]} channels")
    return LabelVolume(labels, tuple(class_table))


# -- portable volume format ---------------------------------------------------
#
# <stem>.json holds {shape, dtype, spacing?, class_table?}; <stem>.raw holds
# little-endian samples with x varying fastest.

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".raw")


def save_volume(path: str | Path, vol: ScalarVolume | LabelVolume | np.ndarray, dtype: str | None = None) -> Path:
    """Write ``vol`` as a JSON sidecar plus raw binary; returns the sidecar path."""
    meta: dict = {}
    if isinstance(vol, LabelVolume):
        data, dtype = vol.labels, dtype or "u8"
        meta["class_table"] = list(vol.class_table)
        spacing = vol.spacing
    elif isinstance(vol, ScalarVolume):
        data, dtype = vol.values, dtype or "f32"
        spacing = vol.spacing
    else:
        data, spacing = np.asarray(vol), None
        dtype = dtype or ("u8" if data.dtype in (np.bool_, np.uint8) else "f32")
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}; expected one of {sorted(_DTYPES)}")
    if dtype == "u8" and data.size and (data.min() < 0 or data.max() > 255):
        raise ValueError("values do not fit in u8")
    meta = {"shape": list(data.shape), "dtype": dtype, **meta}
    if spacing is not None:
        meta["spacing"] = [float(s) for s in spacing]
    sidecar, raw = _paths(path)
    sidecar.parent.mkdir(parents=True, exist_ok=True)
    raw.write_bytes(np.asarray(data).astype(_DTYPES[dtype]).tobytes(order="F"))
    sidecar.write_text(json.dumps(meta, indent=1) + "\n")
    return sidecar


def load_volume(path: str | Path) -> ScalarVolume | LabelVolume:
    """Read a portable volume; a ``class_table`` entry makes it a LabelVolume."""
    sidecar, raw = _paths(path)
    meta = json.loads(sidecar.read_text())
    shape = tuple(int(s) for s in meta["shape"])
    dtype = _DTYPES[meta["dtype"]]
    data = np.frombuffer(raw.read_bytes(), dtype=dtype)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{raw}: expected {np.prod(shape)} samples, found {data.size}")
    data = data.reshape(shape, order="F")
    spacing = tuple(meta["spacing"]) if meta.get("spacing") else None
    if "class_table" in meta:
        return LabelVolume(data.astype(np.int64), tuple(meta["class_table"]), spacing)
    return ScalarVolume(data.astype(np.float64), spacing)
