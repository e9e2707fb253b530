"""Datasets: synthetic multi-organ phantoms, preprocessing and train/val/test splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .morphology import DEFAULT_SE, StructuringElement, boundary_from_labels
from .volume import BoundingBox, LabelVolume, ScalarVolume, VolumeShape, crop, load_volume, resample, save_volume


class PhantomError(RuntimeError):
    pass


@dataclass
class Sample:
    id: str
    image: ScalarVolume
    labels: LabelVolume
    boundary: np.ndarray

    def __post_init__(self):
        shapes = {self.image.values.shape, self.labels.labels.shape, self.boundary.shape}
        if len(shapes) != 1:
            raise ValueError(f"sample {self.id}: image, labels and boundary shapes differ: {shapes}")

    @property
    def shape(self) -> VolumeShape:
        return self.labels.shape


@dataclass(frozen=True)
class PhantomConfig:
    """Ellipsoid "organs" on a noisy background.

    ``blur_sigma`` smooths the clean intensity image before noise is added,
    which blurs organ edges the way low-contrast CT does.
    """

    shape: tuple[int, int, int] = (48, 48, 48)
    organ_count: int = 8
    radius_range: tuple[float, float] = (3.0, 8.0)
    intensity_range: tuple[float, float] = (0.4, 1.6)
    texture_sigma: float = 0.05
    noise_sigma: float = 0.1
    blur_sigma: float = 0.0
    background: float = 0.0
    seed: int = 0
    max_tries: int = 200

    @property
    def class_table(self) -> tuple[str, ...]:
        return ("background",) + tuple(f"organ{k}" for k in range(1, self.organ_count + 1))

    def organ_means(self) -> np.ndarray:
        lo, hi = self.intensity_range
        if self.organ_count == 1:
            return np.array([hi])
        return np.linspace(lo, hi, self.organ_count)


def _ellipsoid(shape, center, radii) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return r2 <= 1.0


def generate_phantom(cfg: PhantomConfig = PhantomConfig(), sample_id: str | None = None) -> Sample:
    """Rasterize non-overlapping ellipsoids; deterministic in ``cfg.seed``."""
    shape = tuple(int(n) for n in cfg.shape)
    rlo, rhi = cfg.radius_range
    if rlo < 1 or rlo > rhi or any(2 * rhi + 1 > n for n in shape):
        raise PhantomError(f"radius range {cfg.radius_range} does not fit in shape {shape}")
    rng = np.random.default_rng(cfg.seed)
    labels = np.zeros(shape, dtype=np.int64)
    for organ in range(1, cfg.organ_count + 1):
        for _ in range(cfg.max_tries):
            radii = rng.uniform(rlo, rhi, size=3)
            center = [rng.uniform(r, n - 1 - r) for r, n in zip(radii, shape)]
            mask = _ellipsoid(shape, center, radii)
            # one voxel of clearance keeps organs from touching
            if mask.any() and not (ndimage.binary_dilation(mask) & (labels > 0)).any():
                labels[mask] = organ
                break
        else:
            raise PhantomError(f"could not place organ {organ} after {cfg.max_tries} tries")

    means = np.concatenate([[cfg.background], cfg.organ_means()])
    clean = means[labels]
    if cfg.texture_sigma > 0:
        clean = clean + np.where(labels > 0, rng.normal(0.0, cfg.texture_sigma, shape), 0.0)
    if cfg.blur_sigma > 0:
        clean = ndimage.gaussian_filter(clean, cfg.blur_sigma)
    image = clean + (rng.normal(0.0, cfg.noise_sigma, shape) if cfg.noise_sigma > 0 else 0.0)
    lab = LabelVolume(labels, cfg.class_table)
    return Sample(
        id=sample_id or f"phantom{cfg.seed:04d}",
        image=ScalarVolume(image),
        labels=lab,
        boundary=boundary_from_labels(lab),
    )


def generate_dataset(n: int, cfg: PhantomConfig = PhantomConfig()) -> list[Sample]:
    """``n`` phantoms with seeds ``cfg.seed, cfg.seed + 1, ...``."""
    from dataclasses import replace

    return [generate_phantom(replace(cfg, seed=cfg.seed + k)) for k in range(n)]


def occupancy(sample: Sample) -> dict[str, float]:
    """Fraction of voxels per class."""
    counts = np.bincount(sample.labels.labels.ravel(), minlength=sample.labels.n_classes)
    return {name: counts[k] / counts.sum() for k, name in enumerate(sample.labels.class_table)}


def prepare(
    image: ScalarVolume,
    labels: LabelVolume,
    box: BoundingBox | None,
    target: VolumeShape | Sequence[int],
    sample_id: str = "sample",
    se: StructuringElement = DEFAULT_SE,
) -> Sample:
    """Crop to ``box``, resample to ``target``, then derive the boundary target.

    The boundary is computed after resampling; a one-voxel contour would not
    survive interpolation.
    """
    if image.shape != labels.shape:
        raise ValueError(f"image shape {image.shape} differs from label shape {labels.shape}")
    if box is not None:
        image, labels = crop(image, box), crop(labels, box)
    image, labels = resample(image, target), resample(labels, target)
    return Sample(sample_id, image, labels, boundary_from_labels(labels, se))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int = 0

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplit":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d.get("seed", 0)))


def make_splits(ids: Sequence[str], counts: tuple[int, int, int], seed: int = 0) -> DatasetSplit:
    """Random disjoint train/val/test partition, reproducible per ``seed``."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("manifest ids must be unique")
    if any(c < 0 for c in counts) or sum(counts) > len(ids):
        raise ValueError(f"split counts {tuple(counts)} exceed the {len(ids)} available ids")
    order = np.random.default_rng(seed).permutation(len(ids))
    picked = [ids[i] for i in order]
    a, b, c = counts
    return DatasetSplit(tuple(picked[:a]), tuple(picked[a : a + b]), tuple(picked[a + b : a + b + c]), seed)


# -- on-disk datasets -----------------------------------------------------------
#
# manifest.json: [{"id", "image_path", "labels_path", "bbox"?}], paths relative
# to the manifest's directory.


@dataclass
class ManifestEntry:
    id: str
    image_path: str
    labels_path: str
    bbox: list[list[int]] | None = None
    extra: dict = field(default_factory=dict)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = json.loads(Path(path).read_text())
    out = []
    for e in entries:
        known = {k: e[k] for k in ("id", "image_path", "labels_path") if k in e}
        missing = {"id", "image_path", "labels_path"} - set(known)
        if missing:
            raise ValueError(f"manifest entry {e!r} lacks {sorted(missing)}")
        rest = {k: v for k, v in e.items() if k not in ("id", "image_path", "labels_path", "bbox")}
        out.append(ManifestEntry(**known, bbox=e.get("bbox"), extra=rest))
    return out


def write_manifest(path: str | Path, entries: Sequence[ManifestEntry]) -> None:
    rows = []
    for e in entries:
        row = {"id": e.id, "image_path": e.image_path, "labels_path": e.labels_path}
        if e.bbox is not None:
            row["bbox"] = e.bbox
        row.update(e.extra)
        rows.append(row)
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def save_dataset(root: str | Path, samples: Sequence[Sample], write_boundary: bool = True) -> Path:
    """Write samples as portable volumes plus ``manifest.json``; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        save_volume(root / f"{s.id}_image", s.image)
        save_volume(root / f"{s.id}_labels", s.labels)
        extra = {}
        if write_boundary:
            save_volume(root / f"{s.id}_boundary", s.boundary.astype(np.uint8), dtype="u8")
            extra["boundary_path"] = f"{s.id}_boundary"
        entries.append(ManifestEntry(s.id, f"{s.id}_image", f"{s.id}_labels", None, extra))
    manifest = root / "manifest.json"
    write_manifest(manifest, entries)
    return manifest


def load_dataset(
    manifest: str | Path,
    target: VolumeShape | Sequence[int] | None = None,
    se: StructuringElement = DEFAULT_SE,
) -> list[Sample]:
    """Load every manifest entry through :func:`prepare` (crop to ``bbox``, resample to ``target``)."""
    manifest = Path(manifest)
    root = manifest.parent
    samples = []
    for e in read_manifest(manifest):
        image = load_volume(root / e.image_path)
        labels = load_volume(root / e.labels_path)
        if not isinstance(labels, LabelVolume):
            labels = LabelVolume.from_array(labels.values.astype(np.int64))
        if isinstance(image, LabelVolume):
            image = ScalarVolume(image.labels.astype(np.float64))
        box = BoundingBox.from_list(e.bbox) if e.bbox else None
        tgt = target if target is not None else (box.extents if box else image.shape)
        samples.append(prepare(image, labels, box, tgt, e.id, se))
    return samples
