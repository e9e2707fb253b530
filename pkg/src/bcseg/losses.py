"""Region (multi-class dice) and boundary (binary cross-entropy) losses.

NumPy reference implementations with closed-form gradients, used for testing
and gradient checking. The trainer uses the matching torch versions in
:mod:`bcseg.training`.

Region arrays are ``(C, W, H, Z)`` or batched ``(B, C, W, H, Z)``; boundary
arrays drop the channel axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DICE_SMOOTH = 1e-5
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class LossBreakdown:
    region: float
    boundary: float
    lam: float
    total: float

    def to_dict(self) -> dict:
        return {"L_RS": self.region, "L_BD": self.boundary, "lambda": self.lam, "L": self.total}


def _batched(a: np.ndarray, ndim: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == ndim else a


def _check_same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def dice_per_class(prob: np.ndarray, target: np.ndarray, smooth: float = DICE_SMOOTH) -> np.ndarray:
    """Soft dice per class, ``(2 sum(p t) + s) / (sum(p^2) + sum(t^2) + s)``.

    Returns shape ``(C,)`` for one volume or ``(B, C)`` for a batch.
    """
    p, t = np.asarray(prob, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_same(p, t, "dice")
    axes = tuple(range(p.ndim - 3, p.ndim))
    inter = (p * t).sum(axis=axes)
    denom = (p * p).sum(axis=axes) + (t * t).sum(axis=axes)
    return (2.0 * inter + smooth) / (denom + smooth)


def dice_region_loss(prob: np.ndarray, target: np.ndarray, smooth: float = DICE_SMOOTH) -> float:
    """``1 - mean_c dice_c``, averaged over the batch."""
    d = dice_per_class(_batched(prob, 4), _batched(target, 4), smooth)
    return float(np.mean(1.0 - d.mean(axis=1)))


def dice_region_grad(prob: np.ndarray, target: np.ndarray, smooth: float = DICE_SMOOTH) -> np.ndarray:
    """Gradient of :func:`dice_region_loss` with respect to ``prob``."""
    squeeze = np.asarray(prob).ndim == 4
    p, t = _batched(prob, 4), _batched(target, 4)
    _check_same(p, t, "dice")
    B, C = p.shape[:2]
    axes = (2, 3, 4)
    inter = (p * t).sum(axis=axes, keepdims=True)
    denom = (p * p).sum(axis=axes, keepdims=True) + (t * t).sum(axis=axes, keepdims=True) + smooth
    d_dice = (2.0 * t * denom - (2.0 * inter + smooth) * 2.0 * p) / denom**2
    g = -d_dice / (C * B)
    return g[0] if squeeze else g


def boundary_bce_loss(edge_prob: np.ndarray, edge_target: np.ndarray, eps: float = BCE_EPS) -> float:
    """Mean voxel-wise binary cross-entropy, probabilities clamped to ``[eps, 1-eps]``."""
    p, e = np.asarray(edge_prob, dtype=np.float64), np.asarray(edge_target, dtype=np.float64)
    _check_same(p, e, "bce")
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(e * np.log(p) + (1.0 - e) * np.log1p(-p)))


def boundary_bce_grad(edge_prob: np.ndarray, edge_target: np.ndarray, eps: float = BCE_EPS) -> np.ndarray:
    p, e = np.asarray(edge_prob, dtype=np.float64), np.asarray(edge_target, dtype=np.float64)
    _check_same(p, e, "bce")
    inside = (p > eps) & (p < 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    return np.where(inside, -(e / pc - (1.0 - e) / (1.0 - pc)) / p.size, 0.0)


def combined_loss(
    prob: np.ndarray,
    target: np.ndarray,
    edge_prob: np.ndarray,
    edge_target: np.ndarray,
    weights: LossWeights = LossWeights(),
    smooth: float = DICE_SMOOTH,
) -> LossBreakdown:
    region = dice_region_loss(prob, target, smooth)
    boundary = boundary_bce_loss(edge_prob, edge_target)
    return combine(region, boundary, weights)


def combine(region: float, boundary: float, weights: LossWeights) -> LossBreakdown:
    return LossBreakdown(region, boundary, weights.lam, region + weights.lam * boundary)


# -- logit-space losses (what the network actually differentiates) -----------


def softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def region_loss_from_logits(logits: np.ndarray, target: np.ndarray, smooth: float = DICE_SMOOTH):
    """Dice loss of ``softmax(logits)`` over the class axis and its gradient w.r.t. the logits."""
    axis = 0 if np.ndim(logits) == 4 else 1
    p = softmax(np.asarray(logits, dtype=np.float64), axis)
    g = dice_region_grad(p, target, smooth)
    grad = p * (g - (p * g).sum(axis=axis, keepdims=True))
    return dice_region_loss(p, target, smooth), grad


def boundary_loss_from_logits(logits: np.ndarray, edge_target: np.ndarray):
    p = sigmoid(np.asarray(logits, dtype=np.float64))
    return boundary_bce_loss(p, edge_target), boundary_bce_grad(p, edge_target) * p * (1.0 - p)


def combined_loss_from_logits(region_logits, target, boundary_logits, edge_target, weights: LossWeights):
    """Returns ``(LossBreakdown, region_grad, boundary_grad)``."""
    lr, gr = region_loss_from_logits(region_logits, target)
    lb, gb = boundary_loss_from_logits(boundary_logits, edge_target)
    return combine(lr, lb, weights), gr, weights.lam * gb


class NumericalError(ArithmeticError):
    pass


def grad_check(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta: np.ndarray,
    step: float = 1e-5,
    n_coords: int | None = 64,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between ``fn``'s analytic gradient and central differences.

    ``fn(theta)`` must return ``(value, gradient)``. Checks ``n_coords`` random
    coordinates (all of them when ``None``). Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    theta = np.array(theta, dtype=np.float64)
    value, analytic = fn(theta)
    if not np.isfinite(value):
        raise NumericalError(f"loss is not finite at theta: {value}")
    analytic = np.asarray(analytic, dtype=np.float64)
    flat = theta.reshape(-1)
    coords = np.arange(flat.size)
    if n_coords is not None and n_coords < flat.size:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        up = fn(theta)[0]
        flat[i] = orig - step
        down = fn(theta)[0]
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError(f"loss is not finite near coordinate {i}")
        numeric = (up - down) / (2.0 * step)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
