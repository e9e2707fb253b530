"""Training loop, lambda grid search and repeated runs."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import DatasetSplit, Sample
from .evaluation import MetricsReport, aggregate, dice_score, evaluate_subjects
from .losses import BCE_EPS, DICE_SMOOTH
from .models.graph import ArchitectureConfig, LayerGraph, Topology, build_graph, infer_shapes
from .models.torch_net import GraphNet
from .volume import LabelVolume

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.0, 0.5, 1.0, 1.5, 2.0)

# batch sizes used at full scale, keyed by (arch, topology); UNet++ always used 1
PAPER_BATCH_SIZES = {
    ("unet", "baseline"): 4,
    ("att_unet", "baseline"): 4,
    ("unetpp", "baseline"): 1,
    ("unet", "tsol"): 2,
    ("unet", "tsd"): 2,
    ("att_unet", "tsol"): 2,
    ("att_unet", "tsd"): 2,
    ("unetpp", "tsol"): 1,
    ("unetpp", "tsd"): 1,
}


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "unet"
    topology: str = "baseline"
    lam: float = 1.0
    lr: float = 1e-3
    lr_decay: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 2
    epochs: int = 60
    samples_per_epoch: int | None = None
    seed: int = 0
    base_features: int = 16
    depth: int = 5
    max_features: int = 256
    n_classes: int = 9
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.samples_per_epoch is not None and self.samples_per_epoch < 1:
            raise ValueError(f"samples_per_epoch must be >= 1, got {self.samples_per_epoch}")

    def arch_config(self) -> ArchitectureConfig:
        return ArchitectureConfig(
            base_features=self.base_features,
            depth=self.depth,
            max_features=self.max_features,
            region_classes=self.n_classes,
        )

    def graph(self) -> LayerGraph:
        return build_graph(self.arch, self.topology, self.arch_config())

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay**epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainData:
    train: list[Sample]
    val: list[Sample]

    @classmethod
    def from_split(cls, samples: Sequence[Sample], split: DatasetSplit) -> "TrainData":
        by_id = {s.id: s for s in samples}
        return cls([by_id[i] for i in split.train], [by_id[i] for i in split.val])


@dataclass
class RunRecord:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_dice: float = -math.inf
    checkpoint: str | None = None
    diverged: bool = False

    @property
    def val_dice(self) -> list[float]:
        return [e["val_dice"] for e in self.epochs]

    @property
    def learning_rates(self) -> list[float]:
        return [e["lr"] for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)


# -- torch losses (same formulas as bcseg.losses) -----------------------------


def dice_loss_t(prob: torch.Tensor, target: torch.Tensor, smooth: float = DICE_SMOOTH) -> torch.Tensor:
    """``1 - mean_c dice_c`` per item, averaged over the batch; inputs ``(B, C, W, H, Z)``."""
    dims = (2, 3, 4)
    inter = (prob * target).sum(dims)
    denom = (prob * prob).sum(dims) + (target * target).sum(dims)
    dice = (2 * inter + smooth) / (denom + smooth)
    return (1 - dice.mean(1)).mean()


def bce_loss_t(prob: torch.Tensor, target: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    p = prob.clamp(eps, 1 - eps)
    return -(target * torch.log(p) + (1 - target) * torch.log1p(-p)).mean()


# -- batching -------------------------------------------------------------------


def standardize(image: np.ndarray) -> np.ndarray:
    std = image.std()
    return (image - image.mean()) / (std if std > 0 else 1.0)


def _stack(samples: Sequence[Sample], n_classes: int):
    x = np.stack([standardize(s.image.values) for s in samples])[:, None]
    labels = np.stack([s.labels.labels for s in samples])
    y = np.moveaxis(np.eye(n_classes, dtype=np.float32)[labels], -1, 1)
    e = np.stack([s.boundary for s in samples])[:, None]
    return (
        torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)),
        torch.from_numpy(np.ascontiguousarray(y)),
        torch.from_numpy(e.astype(np.float32)),
    )


def epoch_order(n: int, seed: int, epoch: int, length: int | None = None) -> np.ndarray:
    """Shuffled sample order for one epoch; a pure function of ``(seed, epoch)``.

    With ``length`` the epoch is made of back-to-back shuffled passes, cut to
    ``length`` indices.
    """
    rng = np.random.default_rng([seed, epoch])
    length = n if length is None else length
    passes = [rng.permutation(n) for _ in range(-(-length // n))]
    return np.concatenate(passes)[:length]


def predict(net: GraphNet, samples: Sequence[Sample], batch_size: int = 2) -> list[LabelVolume]:
    """Region argmax for each sample in inference mode."""
    was_training = net.training
    net.eval()
    out = []
    try:
        with torch.no_grad():
            for i in range(0, len(samples), batch_size):
                chunk = samples[i : i + batch_size]
                x = torch.from_numpy(
                    np.stack([standardize(s.image.values) for s in chunk])[:, None].astype(np.float32)
                )
                region = net(x)["region"]
                # argmax of logits equals argmax of softmax
                labels = region.argmax(1).numpy()
                out += [LabelVolume(lab, s.labels.class_table) for lab, s in zip(labels, chunk)]
    finally:
        net.train(was_training)
    return out


def mean_foreground_dice(pred: LabelVolume, gt: LabelVolume) -> float:
    return float(np.mean([dice_score(pred, gt, c) for c in range(1, gt.n_classes)]))


def validation_dice(net: GraphNet, samples: Sequence[Sample], batch_size: int = 2) -> float:
    preds = predict(net, samples, batch_size)
    return float(np.mean([mean_foreground_dice(p, s.labels) for p, s in zip(preds, samples)]))


# -- checkpoints ----------------------------------------------------------------
#
# <dir>/graph.json, <dir>/params.bin (little-endian tensors back to back),
# <dir>/params.json ([{name, dtype, shape, offset, nbytes}]).


def save_checkpoint(directory: str | Path, graph: LayerGraph, state: dict[str, torch.Tensor]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "graph.json").write_text(graph.to_json(indent=1) + "\n")
    index, offset = [], 0
    with open(directory / "params.bin", "wb") as fh:
        for name, t in state.items():
            arr = t.detach().cpu().numpy()
            arr = arr.astype(arr.dtype.newbyteorder("<"))
            raw = arr.tobytes(order="C")
            fh.write(raw)
            index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    (directory / "params.json").write_text(json.dumps(index, indent=1) + "\n")
    return directory


def load_checkpoint(directory: str | Path) -> tuple[LayerGraph, GraphNet]:
    directory = Path(directory)
    graph = LayerGraph.from_json((directory / "graph.json").read_text())
    blob = (directory / "params.bin").read_bytes()
    state = {}
    for e in json.loads((directory / "params.json").read_text()):
        arr = np.frombuffer(blob, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        state[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    net = GraphNet(graph)
    net.load_state_dict(state)
    return graph, net


# -- training -------------------------------------------------------------------


def train(
    cfg: TrainConfig,
    data: TrainData,
    log_path: str | Path | None = None,
) -> tuple[RunRecord, GraphNet]:
    """Train one model; returns the run record and the best-validation network.

    BASELINE graphs minimise the dice loss alone; TSOL/TSD graphs minimise
    ``L_RS + lam * L_BD``. Model selection uses region predictions only.
    """
    if not data.train:
        raise ValueError("no training samples")
    graph = cfg.graph()
    infer_shapes(graph, data.train[0].shape)
    multitask = graph.topology is not Topology.BASELINE
    torch.manual_seed(cfg.seed)
    net = GraphNet(graph, seed=cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=tuple(cfg.betas), eps=cfg.adam_eps)
    record = RunRecord(config=cfg.to_dict())
    best_state = copy.deepcopy(net.state_dict())
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            net.train()
            sums = np.zeros(3)
            n_batches = 0
            order = epoch_order(len(data.train), cfg.seed, epoch, cfg.samples_per_epoch)
            for i in range(0, len(order), cfg.batch_size):
                x, y, e = _stack([data.train[j] for j in order[i : i + cfg.batch_size]], cfg.n_classes)
                logits = net(x)
                l_rs = dice_loss_t(torch.softmax(logits["region"], 1), y)
                if multitask:
                    l_bd = bce_loss_t(torch.sigmoid(logits["boundary"]), e)
                    loss = l_rs + cfg.lam * l_bd
                else:
                    l_bd = torch.zeros(())
                    loss = l_rs
                if not torch.isfinite(loss):
                    record.diverged = True
                    break
                opt.zero_grad()
                loss.backward()
                opt.step()
                sums += [l_rs.item(), l_bd.item(), loss.item()]
                n_batches += 1
            if record.diverged:
                log.warning("non-finite loss at epoch %d; stopping", epoch)
                break
            l_rs, l_bd, total = (float(v) for v in sums / max(n_batches, 1))
            val = validation_dice(net, data.val, cfg.batch_size) if data.val else float("nan")
            row = {
                "epoch": epoch,
                "lr": lr,
                "L_RS": l_rs,
                "L_BD": l_bd if multitask else None,
                "lambda": cfg.lam if multitask else 0.0,
                "L": total,
                "val_dice": val,
            }
            record.epochs.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
            log.info("epoch %d lr %.3g L %.4f val %.4f", epoch, lr, total, val)
            if val > record.best_val_dice or (record.best_epoch < 0 and math.isnan(val)):
                record.best_val_dice, record.best_epoch = val, epoch
                best_state = copy.deepcopy(net.state_dict())
    finally:
        if log_fh:
            log_fh.close()
    net.load_state_dict(best_state)
    net.eval()
    if cfg.checkpoint_dir:
        record.checkpoint = str(save_checkpoint(cfg.checkpoint_dir, graph, best_state))
    return record, net


@dataclass
class LambdaSearchResult:
    best_lambda: float
    table: dict[float, float]
    std: float
    records: dict[float, RunRecord] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "best_lambda": self.best_lambda,
            "grid": list(self.table),
            "val_dice": {str(k): v for k, v in self.table.items()},
            "std": self.std,
        }


def lambda_search(
    base: TrainConfig,
    data: TrainData,
    grid: Sequence[float] = LAMBDA_GRID,
) -> LambdaSearchResult:
    """Train once per lambda and keep the one with the best validation dice (ties go to the smaller)."""
    if not len(grid):
        raise ValueError("lambda grid is empty")
    table, records = {}, {}
    for lam in grid:
        cfg = replace(base, lam=float(lam), checkpoint_dir=None)
        rec, _ = train(cfg, data)
        table[float(lam)] = rec.best_val_dice
        records[float(lam)] = rec
    best = pick_lambda(table)
    return LambdaSearchResult(best, table, float(np.std(list(table.values()))), records)


def pick_lambda(table: dict[float, float]) -> float:
    best_lam, best_val = None, -math.inf
    for lam in sorted(table):
        if table[lam] > best_val:
            best_lam, best_val = lam, table[lam]
    return best_lam if best_lam is not None else min(table)


@dataclass
class MultiRunResult:
    report: MetricsReport
    records: list[RunRecord]
    seeds: list[int]

    @property
    def val_dice(self) -> list[float]:
        return [r.best_val_dice for r in self.records]

    def summary(self) -> dict:
        vd = self.val_dice
        return {
            "runs": len(self.records),
            "seeds": self.seeds,
            "val_dice_mean": float(np.mean(vd)),
            "val_dice_std": float(np.std(vd)),
            "dice_mean": self.report.grand_mean["dice"],
            "dice_std": float(np.std([np.nanmean([r["dice"] for o in run.values() for r in o.values()]) for run in self.report.runs])),
            "trimap": self.report.trimap,
        }


def run_seeds(base_seed: int, runs: int) -> list[int]:
    return [base_seed + k for k in range(runs)]


def multi_run(
    cfg: TrainConfig,
    data: TrainData,
    runs: int = 5,
    eval_samples: Sequence[Sample] | None = None,
    trimap_widths: Sequence[float] = (),
) -> MultiRunResult:
    """Repeat training with seeds ``seed, seed+1, ...`` and aggregate test metrics.

    Metrics are computed on ``eval_samples`` (the validation set by default).
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    eval_samples = list(eval_samples) if eval_samples is not None else data.val
    seeds = run_seeds(cfg.seed, runs)
    records, per_run, per_run_tri = [], [], []
    for k, seed in enumerate(seeds):
        ck = str(Path(cfg.checkpoint_dir) / f"run{k}") if cfg.checkpoint_dir else None
        rec, net = train(replace(cfg, seed=seed, checkpoint_dir=ck), data)
        preds = predict(net, eval_samples, cfg.batch_size)
        metrics, tri = evaluate_subjects(
            {s.id: (p, s.labels) for p, s in zip(preds, eval_samples)},
            eval_samples[0].labels.class_table,
            trimap_widths,
        )
        records.append(rec)
        per_run.append(metrics)
        per_run_tri.append(tri)
    report = aggregate(per_run, eval_samples[0].labels.class_table, per_run_tri if trimap_widths else None)
    return MultiRunResult(report, records, seeds)
