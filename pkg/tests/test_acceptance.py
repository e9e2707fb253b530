"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s``; criterion 7 is
marked ``slow`` (deselect with ``-m 'not slow'``).
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from bcseg.cli import main as cli_main
from bcseg.config import ConfigError, validate_config
from bcseg.data import PhantomConfig, generate_dataset, make_splits
from bcseg.evaluation import avg_hausdorff, dice_score, recall_precision
from bcseg.losses import (
    LossWeights,
    boundary_loss_from_logits,
    combined_loss_from_logits,
    grad_check,
    region_loss_from_logits,
)
from bcseg.models import ShapeError, build_graph, count_params, infer_shapes
from bcseg.morphology import boundary_from_labels, distance_transform, erode, trimap_band
from bcseg.training import (
    LAMBDA_GRID,
    TrainConfig,
    TrainData,
    lambda_search,
    mean_foreground_dice,
    multi_run,
    predict,
    train,
)

import oracles

ARCHS = ("unet", "unetpp", "att_unet")
TOPOLOGIES = ("baseline", "tsol", "tsd")


@pytest.fixture
def verdict(capsys):
    def report(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail

    return report


def test_1_tsol_delta_is_17(verdict):
    t = time.perf_counter()
    deltas = {a: count_params(build_graph(a, "tsol")) - count_params(build_graph(a, "baseline")) for a in ARCHS}
    dt = time.perf_counter() - t
    verdict(1, all(d == 17 for d in deltas.values()) and dt < 1.0, f"TSOL deltas {deltas} in {dt:.3f}s")


def test_2_tsd_delta_and_absolute_counts(verdict):
    unet, unetpp, att = (count_params(build_graph(a, "baseline")) for a in ARCHS)
    tsd = count_params(build_graph("unet", "tsd"))
    delta = round((tsd - unet) / 1e6, 2)
    ok = delta == 2.35 and abs(unet / 5.89e6 - 1) <= 0.03 and abs(unetpp / 6.87e6 - 1) <= 0.03
    verdict(2, ok, f"TSD delta {tsd - unet} (~{delta}M); UNet {unet}, UNet++ {unetpp}, Att-UNet {att} (not gated)")


def test_3_shape_contract(verdict):
    bottlenecks = {}
    for a in ARCHS:
        for t in TOPOLOGIES:
            g = build_graph(a, t)
            bottlenecks[a, t] = infer_shapes(g, (144, 144, 144))[g.bottleneck]
    rejected = []
    for shape in [(30, 30, 30), (144, 144, 140)]:
        try:
            infer_shapes(build_graph("unet", "baseline"), shape)
        except ShapeError:
            rejected.append(shape)
    try:
        validate_config({"data": {"shape": [30, 30, 30]}})
    except ConfigError:
        rejected.append("config")
    ok = set(bottlenecks.values()) == {(256, 9, 9, 9)} and len(rejected) == 3
    verdict(3, ok, f"bottlenecks {set(bottlenecks.values())} over {len(bottlenecks)} variants; rejected {rejected}")


def test_4_gradient_suite(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    n = 20
    for _ in range(n):
        C = int(rng.integers(2, 5))
        z = rng.normal(size=(C, 4, 4, 4))
        t_lab = np.moveaxis(np.eye(C)[rng.integers(0, C, (4, 4, 4))], -1, 0)
        zb = rng.normal(size=(4, 4, 4))
        e = (rng.random((4, 4, 4)) < 0.3).astype(float)
        worst = max(worst, grad_check(lambda th: region_loss_from_logits(th, t_lab), z, n_coords=None))
        worst = max(worst, grad_check(lambda th: boundary_loss_from_logits(th, e), zb, n_coords=None))
        for lam in (0.5, 1.0, 2.0):

            def joint(th, lam=lam):
                br, gr, gb = combined_loss_from_logits(
                    th[: z.size].reshape(z.shape), t_lab, th[z.size :].reshape(zb.shape), e, LossWeights(lam)
                )
                return br.total, np.concatenate([gr.ravel(), gb.ravel()])

            worst = max(worst, grad_check(joint, np.concatenate([z.ravel(), zb.ravel()]), n_coords=None))
    dt = time.perf_counter() - t
    verdict(4, worst < 1e-4 and dt < 30, f"max relative error {worst:.2e} over {n} fixtures in {dt:.1f}s")


def test_5_oracle_equivalence(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    n = 100
    fails = {k: 0 for k in ("erode", "boundary", "band", "edt", "dice", "recall_precision", "ahd")}
    for _ in range(n):
        gt = oracles.random_labels(rng)
        pred = gt.copy()
        flip = rng.random(gt.shape) < rng.uniform(0, 0.4)
        pred[flip] = rng.integers(0, 4, size=flip.sum())
        mask = gt == 1
        fails["erode"] += not np.array_equal(erode(mask), oracles.erode(mask))
        fails["boundary"] += not np.array_equal(boundary_from_labels(gt), oracles.boundary(gt))
        fails["band"] += not np.array_equal(trimap_band(gt, 3), oracles.band(gt, 3))
        fails["edt"] += not np.array_equal(distance_transform(mask), oracles.distance_map(mask))
        for c in range(1, 4):
            fails["dice"] += bool(dice_score(pred, gt, c) != oracles.dice(pred, gt, c))
            fails["recall_precision"] += recall_precision(pred, gt, c) != oracles.recall_precision(pred, gt, c)
            a, b = avg_hausdorff(pred, gt, c), oracles.avg_hausdorff(pred, gt, c)
            fails["ahd"] += not (a == b or (math.isnan(a) and math.isnan(b)) or abs(a - b) <= 1e-12 * max(1.0, abs(b)))
    dt = time.perf_counter() - t
    ok = not any(fails.values()) and dt < 120
    verdict(5, ok, f"{n} random volumes, mismatches {fails}, {dt:.1f}s")


# -- training-level criteria ------------------------------------------------------

OVERFIT_PHANTOMS = PhantomConfig(shape=(32, 32, 32), organ_count=3, radius_range=(5, 9), seed=0)
OVERFIT = TrainConfig(depth=3, base_features=8, n_classes=4, batch_size=1, epochs=60, samples_per_epoch=24)


def test_6_overfit_and_lambda_zero(verdict):
    samples = generate_dataset(2, OVERFIT_PHANTOMS)
    data = TrainData(samples, samples)
    t = time.perf_counter()
    rec, net = train(OVERFIT, data)
    train_dice = float(np.mean([mean_foreground_dice(p, s.labels) for p, s in zip(predict(net, samples), samples)]))
    dt = time.perf_counter() - t
    short = replace(OVERFIT, epochs=5)
    base, _ = train(short, data)
    tsol, _ = train(replace(short, topology="tsol", lam=0.0), data)
    gap = max(abs(a - b) for a, b in zip(base.val_dice, tsol.val_dice))
    ok = train_dice > 0.95 and dt < 600 and gap <= 1e-6
    verdict(6, ok, f"training dice {train_dice:.4f} after {len(rec.epochs)} epochs in {dt:.0f}s; lambda=0 TSOL vs baseline max gap {gap:.1e}")


def test_8_protocol_fidelity(verdict, tmp_path):
    cfg = TrainConfig()
    lr_err = max(abs(cfg.lr_at(e) - 0.001 * 0.9**e) for e in range(60))
    samples = generate_dataset(3, PhantomConfig(shape=(12, 12, 12), organ_count=2, radius_range=(2, 3), seed=8))
    data = TrainData(samples[:2], samples[2:])
    tiny = TrainConfig(depth=2, base_features=2, n_classes=3, epochs=2, batch_size=1, topology="tsol")
    search = lambda_search(tiny, data)
    rec, _ = train(tiny, data)
    logged_err = max(abs(r["lr"] - 0.001 * 0.9 ** r["epoch"]) for r in rec.epochs)
    summary = multi_run(replace(tiny, epochs=1), data, runs=5).summary()
    fields_ok = summary["runs"] == 5 and all(k in summary for k in ("val_dice_mean", "val_dice_std", "dice_mean", "dice_std"))
    grid = list(search.to_dict()["grid"])
    ok = grid == [0.0, 0.5, 1.0, 1.5, 2.0] and tuple(grid) == LAMBDA_GRID and lr_err <= 1e-12 and logged_err <= 1e-12 and fields_ok
    verdict(8, ok, f"grid {grid}; lr error {max(lr_err, logged_err):.1e}; multi_run fields ok={fields_ok}")


def test_9_reproducibility(verdict, tmp_path):
    synth = ["synth", "--n", "4", "--shape", "16", "16", "16", "--organs", "2", "--radius", "2", "4", "--counts", "2,1,1", "--seed", "3"]
    sets = ["--set", "model.depth=2", "--set", "model.base_features=4", "--set", "train.epochs=2", "--set", "train.batch_size=1", "--set", "model.topology=tsol"]
    blobs = []
    for k in range(2):
        d = tmp_path / f"data{k}"
        assert cli_main([*synth, "--out", str(d)]) == 0
        out = tmp_path / f"run{k}"
        assert cli_main(["multi-run", "--data", str(d), "--out", str(out), "--runs", "2", "--trimap", "3,5", *sets]) == 0
        blobs.append((out / "metrics.json").read_bytes())
    same = blobs[0] == blobs[1]
    n_entries = len(json.loads(blobs[0])["runs"])
    verdict(9, same, f"metrics.json from two identical runs byte-identical={same} ({len(blobs[0])} bytes, {n_entries} runs)")


DIRECTIONAL_PHANTOMS = PhantomConfig(shape=(48, 48, 48), organ_count=4, radius_range=(4, 10), blur_sigma=1.5, seed=100)
DIRECTIONAL = TrainConfig(depth=3, base_features=8, n_classes=5, batch_size=1, epochs=10, samples_per_epoch=40)


@pytest.mark.slow
def test_7_directional_effect(verdict):
    samples = generate_dataset(20, DIRECTIONAL_PHANTOMS)
    split = make_splits([s.id for s in samples], (12, 4, 4), seed=0)
    data = TrainData.from_split(samples, split)
    test = [s for s in samples if s.id in set(split.test)]
    t = time.perf_counter()
    base = multi_run(DIRECTIONAL, data, runs=5, eval_samples=test, trimap_widths=(5,))
    search = lambda_search(replace(DIRECTIONAL, topology="tsol"), data)
    tsol = multi_run(replace(DIRECTIONAL, topology="tsol", lam=search.best_lambda), data, runs=5, eval_samples=test, trimap_widths=(5,))
    dt = time.perf_counter() - t
    bv, tv = float(np.mean(base.val_dice)), float(np.mean(tsol.val_dice))
    bt, tt = base.report.trimap["5"]["mean"], tsol.report.trimap["5"]["mean"]
    ok = tv >= bv and tt > bt and dt < 7200
    verdict(
        7,
        ok,
        f"lambda={search.best_lambda} (search table {search.table}); val dice TSOL {tv:.4f} vs baseline {bv:.4f}; "
        f"trimap-5 dice TSOL {tt:.4f} vs baseline {bt:.4f}; {dt:.0f}s",
    )
