"""
Region and boundary losses
==========================

The region term is a multi-class soft dice loss on softmax outputs; the
boundary term is binary cross-entropy on a sigmoid map. Both come with
closed-form gradients that are checked against central differences.
"""

import numpy as np

from bcseg.losses import (
    LossWeights,
    boundary_bce_loss,
    combined_loss,
    combined_loss_from_logits,
    dice_region_loss,
    grad_check,
    region_loss_from_logits,
    softmax,
)

rng = np.random.default_rng(0)
labels = rng.integers(0, 3, (8, 8, 8))
target = np.moveaxis(np.eye(3)[labels], -1, 0)

# a perfect prediction has zero dice loss; a uniform one does not
print("perfect:", dice_region_loss(target, target))
print("uniform:", dice_region_loss(np.full_like(target, 1 / 3), target))

# BCE on a boundary map
edge = (rng.random((8, 8, 8)) < 0.2).astype(float)
print("bce at p=0.5:", boundary_bce_loss(np.full_like(edge, 0.5), edge), "=", np.log(2))

# the combined objective L = L_RS + lambda * L_BD
logits = rng.normal(size=target.shape)
edge_logits = rng.normal(size=edge.shape)
for lam in (0.0, 0.5, 1.0, 2.0):
    parts = combined_loss(softmax(logits, 0), target, 1 / (1 + np.exp(-edge_logits)), edge, LossWeights(lam))
    print(parts.to_dict())

# gradient check through softmax and sigmoid
err = grad_check(lambda z: region_loss_from_logits(z, target), logits, n_coords=None)
print(f"region grad max rel err: {err:.1e}")


def joint(theta, lam=1.0):
    z, zb = theta[: logits.size].reshape(logits.shape), theta[logits.size :].reshape(edge.shape)
    parts, gz, gzb = combined_loss_from_logits(z, target, zb, edge, LossWeights(lam))
    return parts.total, np.concatenate([gz.ravel(), gzb.ravel()])


err = grad_check(joint, np.concatenate([logits.ravel(), edge_logits.ravel()]), n_coords=200)
print(f"combined grad max rel err: {err:.1e}")
