"""Slow, obviously-correct reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def offsets(connectivity, radius):
    out = []
    rng = range(-radius, radius + 1)
    for d in itertools.product(rng, rng, rng):
        if connectivity == 26 or sum(abs(v) for v in d) <= radius:
            out.append(d)
    return out


def erode(mask, connectivity=26, radius=1):
    mask = np.asarray(mask, bool)
    out = np.zeros_like(mask)
    offs = offsets(connectivity, radius)
    for idx in np.ndindex(*mask.shape):
        ok = True
        for d in offs:
            q = tuple(i + o for i, o in zip(idx, d))
            if any(v < 0 or v >= n for v, n in zip(q, mask.shape)) or not mask[q]:
                ok = False
                break
        out[idx] = ok
    return out


def boundary(labels, connectivity=26, radius=1):
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, bool)
    for c in set(labels.ravel().tolist()) - {0}:
        m = labels == c
        out |= m & ~erode(m, connectivity, radius)
    return out


def distance_map(mask):
    """All-pairs minimum Euclidean distance to the set voxels of ``mask``."""
    pts = np.argwhere(mask)
    out = np.empty(mask.shape)
    for idx in np.ndindex(*mask.shape):
        if len(pts) == 0:
            out[idx] = math.inf
        else:
            out[idx] = min(math.dist(idx, p) for p in pts.tolist())
    return out


def band(labels, width):
    b = boundary(labels)
    d = distance_map(b)
    return d <= width / 2


def confusion(pred, gt, c, mask=None):
    tp = fp = fn = 0
    for idx in np.ndindex(*pred.shape):
        if mask is not None and not mask[idx]:
            continue
        p, g = pred[idx] == c, gt[idx] == c
        tp += p and g
        fp += p and not g
        fn += g and not p
    return tp, fp, fn


def dice(pred, gt, c, mask=None):
    tp, fp, fn = confusion(pred, gt, c, mask)
    return 1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def recall_precision(pred, gt, c):
    tp, fp, fn = confusion(pred, gt, c)
    return (tp / (tp + fn) if tp + fn else 1.0, tp / (tp + fp) if tp + fp else 1.0)


def avg_hausdorff(pred, gt, c):
    sp = np.argwhere(boundary((pred == c).astype(int))).tolist()
    sg = np.argwhere(boundary((gt == c).astype(int))).tolist()
    if not sp or not sg:
        return math.nan
    a = sum(min(math.dist(p, g) for g in sg) for p in sp) / len(sp)
    b = sum(min(math.dist(g, p) for p in sp) for g in sg) / len(sg)
    return 0.5 * (a + b)


def mean_dice_in(pred, gt, mask):
    classes = sorted({int(pred[i]) for i in zip(*np.nonzero(mask))} | {int(gt[i]) for i in zip(*np.nonzero(mask))})
    classes = [c for c in classes if c > 0]
    if not classes:
        return math.nan
    return sum(dice(pred, gt, c, mask) for c in classes) / len(classes)


def dice_loss(prob, target, smooth):
    """Per-class soft dice written as scalar loops; returns 1 - mean over classes."""
    C = prob.shape[0]
    total = 0.0
    for c in range(C):
        num = den_p = den_t = 0.0
        for idx in np.ndindex(*prob.shape[1:]):
            p, t = float(prob[(c, *idx)]), float(target[(c, *idx)])
            num += p * t
            den_p += p * p
            den_t += t * t
        total += (2 * num + smooth) / (den_p + den_t + smooth)
    return 1.0 - total / C


def bce(prob, target, eps):
    acc = 0.0
    flat_p, flat_t = np.ravel(prob), np.ravel(target)
    for p, t in zip(flat_p.tolist(), flat_t.tolist()):
        p = min(max(p, eps), 1 - eps)
        acc -= t * math.log(p) + (1 - t) * math.log(1 - p)
    return acc / len(flat_p)


def random_labels(rng, max_side=8, n_classes=4):
    shape = tuple(int(v) for v in rng.integers(3, max_side + 1, size=3))
    # blocky volumes have real interiors; pure noise erodes to nothing
    coarse = rng.integers(0, n_classes, size=tuple((s + 1) // 2 for s in shape))
    labels = np.kron(coarse, np.ones((2, 2, 2), int))[: shape[0], : shape[1], : shape[2]]
    flip = rng.random(shape) < 0.1
    labels[flip] = rng.integers(0, n_classes, size=flip.sum())
    return labels
