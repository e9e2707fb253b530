"""
Training a baseline and a boundary-constrained model
=====================================================

A tiny UNet learns to segment phantoms. The boundary-constrained variant
shares every layer with the baseline and adds a one-channel head trained
with BCE against the organ contours. With lambda = 0 the extra head gets
no gradient and both runs follow the same trajectory.
"""

from dataclasses import replace

from bcseg.data import PhantomConfig, generate_dataset
from bcseg.training import TrainConfig, TrainData, lambda_search, multi_run, train

samples = generate_dataset(6, PhantomConfig(shape=(24, 24, 24), organ_count=2, radius_range=(3, 6), blur_sigma=1.0))
data = TrainData(samples[:4], samples[4:])

cfg = TrainConfig(depth=3, base_features=4, n_classes=3, batch_size=1, epochs=4, samples_per_epoch=8)

base, _ = train(cfg, data)
for row in base.epochs:
    print({k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()})

# lambda = 0 reproduces the baseline validation curve exactly
tsol0, _ = train(replace(cfg, topology="tsol", lam=0.0), data)
print("baseline  :", [round(v, 4) for v in base.val_dice])
print("tsol, l=0 :", [round(v, 4) for v in tsol0.val_dice])

# pick lambda on the validation set; ties go to the smaller value
search = lambda_search(replace(cfg, topology="tsol"), data, grid=(0.0, 1.0, 2.0))
print("lambda search:", search.to_dict())

# repeat with consecutive seeds and report mean and spread
runs = multi_run(replace(cfg, topology="tsol", lam=search.best_lambda), data, runs=2, trimap_widths=(3, 5))
print(runs.summary())
