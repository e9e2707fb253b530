"""Binary 3D morphology: erosion, organ boundaries, distance maps and trimap bands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import LabelVolume


@dataclass(frozen=True)
class StructuringElement:
    """Erosion kernel. 26-connectivity gives a cube, 6-connectivity an L1 ball."""

    connectivity: int = 26
    radius: int = 1

    def __post_init__(self):
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")

    def footprint(self) -> np.ndarray:
        base = ndimage.generate_binary_structure(3, 1 if self.connectivity == 6 else 3)
        return ndimage.iterate_structure(base, self.radius)


DEFAULT_SE = StructuringElement()


def erode(mask: np.ndarray, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    """Binary erosion; voxels beyond the grid count as background."""
    mask = np.asarray(mask, dtype=bool)
    return ndimage.binary_erosion(mask, structure=se.footprint(), border_value=0)


def _label_array(labels: LabelVolume | np.ndarray) -> np.ndarray:
    return labels.labels if isinstance(labels, LabelVolume) else np.asarray(labels)


def boundary_from_labels(labels: LabelVolume | np.ndarray, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    """Union over foreground classes of ``mask_c & ~erode(mask_c)``.

    Returns a boolean grid with the shape of ``labels``.
    """
    arr = _label_array(labels)
    out = np.zeros(arr.shape, dtype=bool)
    for c in np.unique(arr):
        if c == 0:
            continue
        mask = arr == c
        out |= mask & ~erode(mask, se)
    return out


def distance_transform(mask: np.ndarray, spacing=None) -> np.ndarray:
    """Euclidean distance from every voxel to the nearest set voxel of ``mask``.

    An empty mask has no nearest voxel; the result is then ``inf`` everywhere.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(~mask, sampling=spacing)


def trimap_band(labels: LabelVolume | np.ndarray, width: float, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    """Voxels within ``width / 2`` of the organ boundaries of ``labels``."""
    if width < 1:
        raise ValueError(f"trimap width must be >= 1 voxel, got {width}")
    boundary = boundary_from_labels(labels, se)
    if not boundary.any():
        return boundary
    return distance_transform(boundary) <= width / 2.0
