"""
End to end from the command line
================================

The same pipeline through the ``bcseg`` command: synthesise a dataset,
train a boundary-constrained model, evaluate it and compare trimap
curves. Each call writes a run manifest next to its artifacts.
"""

import json
import tempfile
from pathlib import Path

from bcseg.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    small = ["--set", "model.depth=2", "--set", "model.base_features=4", "--set", "train.epochs=3", "--set", "train.batch_size=1"]

    main(["param-count", "--arch", "unetpp", "--topo", "tsd"])
    main(["synth", "--n", "6", "--shape", "16", "16", "16", "--organs", "2", "--radius", "2", "5", "--counts", "4,1,1", "--out", str(tmp / "data")])
    main(["train", "--data", str(tmp / "data"), "--out", str(tmp / "tsol"), *small, "--set", "model.topology=tsol", "--set", "loss.lambda=1"])
    main(["train", "--data", str(tmp / "data"), "--out", str(tmp / "base"), *small])
    main(["evaluate", "--pred", str(tmp / "tsol" / "pred"), "--gt", str(tmp / "data"), "--trimap", "1,3,5", "--out", str(tmp / "eval")])
    main(["trimap-report", "--pred", f"base={tmp / 'base' / 'pred'}", "--pred", f"tsol={tmp / 'tsol' / 'pred'}",
          "--gt", str(tmp / "data"), "--widths", "1,3,5", "--out", str(tmp / "tri")])

    manifest = json.loads((tmp / "tsol" / "run_manifest.json").read_text())
    print("manifest keys:", sorted(manifest))
    print("artifacts:", [Path(a).name for a in manifest["artifacts"]])
