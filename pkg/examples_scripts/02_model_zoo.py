"""
The model zoo without tensors
=============================

Every network is a small layer graph. Shapes and parameter counts come
straight from the graph, so the full-size models can be inspected
without allocating a single weight.
"""

from bcseg.models import ArchitectureConfig, build_graph, count_params, infer_shapes, param_report

# parameter counts for the three backbones and their boundary variants
print(f"{'arch':10s} {'baseline':>10s} {'tsol':>10s} {'tsd':>10s}  deltas")
for arch in ("unet", "unetpp", "att_unet"):
    r = param_report(arch)
    print(f"{arch:10s} {r['baseline']:>10,d} {r['tsol']:>10,d} {r['tsd']:>10,d}  +{r['tsol_delta']} / +{r['tsd_delta']:,d}")

# the one-channel sigmoid head adds 16 weights and a bias to any backbone
g = build_graph("unet", "tsol")
print("boundary head:", next(n for n in g.nodes if n.name == "boundary_head"))

# shape inference on a 144^3 crop: five levels end at 9^3 with 256 channels
shapes = infer_shapes(g, (144, 144, 144))
for name in ("input", "enc0", "enc2", g.bottleneck, "region_head", "boundary_head"):
    print(f"{name:14s} {shapes[name]}")

# a crop that does not halve cleanly is rejected with the offending axis
try:
    infer_shapes(g, (144, 144, 140))
except ValueError as exc:
    print("rejected:", exc)

# the dual-decoder variant only reads encoder features
tsd = build_graph("unet", "tsd")
bnd_inputs = {i for n in tsd.nodes if n.name.startswith("bnd_") for i in n.inputs}
print("TSD boundary decoder reads:", sorted(i for i in bnd_inputs if not i.startswith("bnd_")))

# smaller configurations are used for desk-scale training
tiny = ArchitectureConfig(base_features=8, depth=3, region_classes=4)
print("depth-3, base-8 UNet:", count_params(build_graph("unet", "baseline", tiny)), "parameters")
