"""Segmentation metrics and report aggregation.

All metrics work on integer label arrays of equal shape. Distances are in
voxels unless a per-axis ``spacing`` is given.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .morphology import boundary_from_labels, distance_transform, trimap_band
from .volume import LabelVolume

METRICS = ("dice", "avg_hd", "recall", "precision")
MISSING = float("nan")


def _arrays(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = pred.labels if isinstance(pred, LabelVolume) else np.asarray(pred)
    g = gt.labels if isinstance(gt, LabelVolume) else np.asarray(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    return p, g


def _mask_dice(p: np.ndarray, g: np.ndarray) -> float:
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def dice_score(pred, gt, c: int) -> float:
    """Hard dice of class ``c``; 1.0 when the class is absent from both."""
    p, g = _arrays(pred, gt)
    return _mask_dice(p == c, g == c)


def recall_precision(pred, gt, c: int) -> tuple[float, float]:
    p, g = _arrays(pred, gt)
    p, g = p == c, g == c
    tp = int(np.logical_and(p, g).sum())
    fn = int(np.logical_and(~p, g).sum())
    fp = int(np.logical_and(p, ~g).sum())
    recall = tp / (tp + fn) if tp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    return recall, precision


def avg_hausdorff(pred, gt, c: int, spacing: Sequence[float] | None = None) -> float:
    """Average Hausdorff distance between the class-``c`` surfaces.

    Mean of the two directed mean surface distances. Returns NaN when either
    surface is empty.
    """
    p, g = _arrays(pred, gt)
    sp = boundary_from_labels((p == c).astype(np.int64))
    sg = boundary_from_labels((g == c).astype(np.int64))
    if not sp.any() or not sg.any():
        return MISSING
    d_to_g = distance_transform(sg, spacing)
    d_to_p = distance_transform(sp, spacing)
    return 0.5 * (float(d_to_g[sp].mean()) + float(d_to_p[sg].mean()))


def mean_dice(pred, gt, mask: np.ndarray | None = None) -> float:
    """Mean dice over foreground classes present in either volume (inside ``mask``).

    NaN when no foreground class is present.
    """
    p, g = _arrays(pred, gt)
    if mask is not None:
        p, g = p[mask], g[mask]
    classes = np.union1d(np.unique(p), np.unique(g))
    classes = classes[classes > 0]
    if classes.size == 0:
        return MISSING
    return float(np.mean([_mask_dice(p == c, g == c) for c in classes]))


def trimap_dice(pred, gt, width: float, band_overlap: bool = False) -> float:
    """Dice near the ground-truth organ boundaries.

    By default, label agreement is scored only inside the ground-truth trimap
    band of ``width`` voxels. With ``band_overlap`` the trimap bands of the
    prediction and the ground truth are compared as masks instead.
    NaN when the relevant band is empty.
    """
    p, g = _arrays(pred, gt)
    band = trimap_band(g, width)
    if band_overlap:
        pband = trimap_band(p, width)
        if not band.any() and not pband.any():
            return MISSING
        return _mask_dice(pband, band)
    if not band.any():
        return MISSING
    return mean_dice(p, g, band)


def subject_metrics(
    pred, gt, n_classes: int, spacing: Sequence[float] | None = None
) -> dict[int, dict[str, float]]:
    """All four metrics for every foreground class ``1..n_classes-1``."""
    out = {}
    for c in range(1, n_classes):
        r, pr = recall_precision(pred, gt, c)
        out[c] = {
            "dice": dice_score(pred, gt, c),
            "avg_hd": avg_hausdorff(pred, gt, c, spacing),
            "recall": r,
            "precision": pr,
        }
    return out


def _nanmean(xs: Iterable[float]) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else MISSING


def _nanstd(xs: Iterable[float]) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.std(xs)) if xs else MISSING


@dataclass
class MetricsReport:
    """Per-subject metrics for one or more runs, with organ-wise summaries.

    ``runs[r][subject][organ][metric]`` holds the raw values. Organ means are
    taken over subjects within each run, then averaged over runs; ``organ_std``
    is the spread of the per-run means (or over subjects when there is a
    single run). Missing distances (NaN) are skipped and counted in
    ``missing``.
    """

    class_table: tuple[str, ...]
    runs: list[dict[str, dict[str, dict[str, float]]]]
    organ_mean: dict[str, dict[str, float]] = field(default_factory=dict)
    organ_std: dict[str, dict[str, float]] = field(default_factory=dict)
    grand_mean: dict[str, float] = field(default_factory=dict)
    missing: dict[str, int] = field(default_factory=dict)
    trimap: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def organs(self) -> tuple[str, ...]:
        return self.class_table[1:]

    def to_dict(self) -> dict:
        return {
            "class_table": list(self.class_table),
            "runs": self.runs,
            "organ_mean": self.organ_mean,
            "organ_std": self.organ_std,
            "grand_mean": self.grand_mean,
            "missing": self.missing,
            "trimap": self.trimap,
        }

    def to_json(self, **kw) -> str:
        # NaN is not valid JSON; missing values become null
        return json.dumps(_nan_to_none(self.to_dict()), **kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["organ"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")])
        for organ in list(self.organs) + ["mean"]:
            if organ == "mean":
                row = [v for m in METRICS for v in (self.grand_mean[m], "")]
            else:
                row = [v for m in METRICS for v in (self.organ_mean[organ][m], self.organ_std[organ][m])]
            w.writerow([organ] + [_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v) -> str:
    if v == "" or v is None:
        return ""
    return "" if math.isnan(v) else f"{v:.6g}"


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def _none_to_nan(obj):
    if obj is None:
        return MISSING
    if isinstance(obj, dict):
        return {k: _none_to_nan(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_none_to_nan(v) for v in obj]
    return obj


def report_from_json(text: str) -> MetricsReport:
    d = _none_to_nan(json.loads(text))
    rep = MetricsReport(tuple(d["class_table"]), d["runs"], d["organ_mean"], d["organ_std"], d["grand_mean"])
    rep.missing = {k: int(v) for k, v in d["missing"].items()}
    rep.trimap = d.get("trimap", {})
    return rep


def aggregate(
    runs: Sequence[Mapping[str, Mapping]],
    class_table: Sequence[str],
    trimap: Sequence[Mapping[str, Mapping[float, float]]] | None = None,
) -> MetricsReport:
    """Fold per-subject metrics into a :class:`MetricsReport`.

    ``runs`` is a list (one entry per run) of ``{subject_id: subject_metrics}``
    where organs may be keyed by class index or by name. ``trimap`` optionally
    gives, per run, ``{subject_id: {width: dice}}``.
    """
    if not runs or any(not r for r in runs):
        raise ValueError("aggregate needs at least one run with one subject")
    table = tuple(class_table)
    organs = table[1:]

    def organ_key(k):
        return table[k] if isinstance(k, (int, np.integer)) else str(k)

    norm_runs = [
        {str(sid): {organ_key(k): {m: float(v[m]) for m in METRICS} for k, v in subj.items()} for sid, subj in run.items()}
        for run in runs
    ]
    rep = MetricsReport(table, norm_runs)
    for organ in organs:
        per_run = {m: [_nanmean(s[organ][m] for s in run.values()) for run in norm_runs] for m in METRICS}
        rep.organ_mean[organ] = {m: _nanmean(per_run[m]) for m in METRICS}
        if len(norm_runs) == 1:
            spread = {m: _nanstd(s[organ][m] for s in norm_runs[0].values()) for m in METRICS}
        else:
            spread = {m: _nanstd(per_run[m]) for m in METRICS}
        rep.organ_std[organ] = spread
        rep.missing[organ] = sum(math.isnan(s[organ]["avg_hd"]) for run in norm_runs for s in run.values())
    rep.grand_mean = {m: _nanmean(rep.organ_mean[o][m] for o in organs) for m in METRICS}
    if trimap:
        widths = sorted({float(w) for run in trimap for subj in run.values() for w in subj})
        for w in widths:
            per_run = [_nanmean(subj[w] for subj in run.values() if w in subj) for run in trimap]
            rep.trimap[_width_key(w)] = {"mean": _nanmean(per_run), "std": _nanstd(per_run)}
    return rep


def _width_key(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else str(w)


def evaluate_subjects(
    pairs: Mapping[str, tuple[LabelVolume | np.ndarray, LabelVolume | np.ndarray]],
    class_table: Sequence[str],
    trimap_widths: Sequence[float] = (),
    spacing: Sequence[float] | None = None,
    band_overlap: bool = False,
) -> tuple[dict[str, dict], dict[str, dict[float, float]]]:
    """Metrics and trimap dice for ``{subject_id: (pred, gt)}``: one run's worth of input to :func:`aggregate`."""
    metrics, tri = {}, {}
    for sid, (pred, gt) in pairs.items():
        metrics[sid] = subject_metrics(pred, gt, len(class_table), spacing)
        tri[sid] = {float(w): trimap_dice(pred, gt, w, band_overlap) for w in trimap_widths}
    return metrics, tri


def plot_trimap_curves(curves: Mapping[str, Mapping[str, Mapping[str, float]]], path) -> None:
    """Mean trimap dice against band width, one line per model (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3))
    for label, curve in curves.items():
        widths = sorted(curve, key=float)
        ax.plot([float(w) for w in widths], [curve[w]["mean"] for w in widths], marker="o", label=label)
    ax.set_xlabel("trimap width (voxels)")
    ax.set_ylabel("mean dice")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
