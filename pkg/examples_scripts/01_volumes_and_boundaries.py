"""
Volumes, boundaries and trimap bands
====================================

Build a synthetic CT-like phantom, crop and resample it, derive the
one-voxel organ contour used as the boundary target, and grow trimap
bands of increasing width around it.
"""

import tempfile
from pathlib import Path

import numpy as np

from bcseg.data import PhantomConfig, generate_phantom, prepare
from bcseg.morphology import StructuringElement, boundary_from_labels, distance_transform, trimap_band
from bcseg.volume import BoundingBox, load_volume, one_hot, save_volume

# a 48^3 phantom with four ellipsoid organs and softened edges
sample = generate_phantom(PhantomConfig(organ_count=4, blur_sigma=1.0, seed=3))
print("classes:", sample.labels.class_table)
print("voxels per class:", np.bincount(sample.labels.labels.ravel()))

# crop the central block and resample to 32^3; labels use nearest neighbour
box = BoundingBox((8, 8, 8), (39, 39, 39))
small = prepare(sample.image, sample.labels, box, (32, 32, 32), sample_id="crop")
print("prepared shape:", small.shape, "spacing:", small.image.spacing)

# the boundary is label minus its erosion, per organ
edge = boundary_from_labels(small.labels)
print("boundary voxels (26-neighbour SE):", int(edge.sum()))
print("boundary voxels (6-neighbour SE): ", int(boundary_from_labels(small.labels, StructuringElement(6)).sum()))

# every boundary voxel is foreground, and the one-hot channels sum to one
assert not edge[small.labels.labels == 0].any()
assert (one_hot(small.labels).sum(0) == 1).all()

# trimap bands: voxels within width/2 of the contour
dist = distance_transform(edge)
for width in (1, 3, 5, 9):
    band = trimap_band(small.labels, width)
    print(f"width {width}: {band.mean():.1%} of the volume, max distance inside {dist[band].max():.2f}")

# volumes round-trip through a JSON sidecar plus raw little-endian bytes
with tempfile.TemporaryDirectory() as tmp:
    path = save_volume(Path(tmp) / "labels", small.labels)
    again = load_volume(path)
    print("round trip exact:", np.array_equal(again.labels, small.labels.labels))
