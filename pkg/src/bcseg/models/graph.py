"""Backend-free layer graphs for 3D UNet, UNet++ and Attention-UNet.

A :class:`LayerGraph` is a list of typed nodes in topological order. It is
enough to infer every feature-map shape and to count parameters exactly,
without instantiating any tensors. :mod:`bcseg.models.torch_net` turns a graph
into a runnable network.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable

from ..volume import VolumeShape


class Arch(str, Enum):
    UNET = "unet"
    UNETPP = "unetpp"
    ATT_UNET = "att_unet"


class Topology(str, Enum):
    BASELINE = "baseline"
    TSOL = "tsol"
    TSD = "tsd"


class GraphError(ValueError):
    pass


class ShapeError(ValueError):
    pass


NODE_KINDS = ("input", "conv_block", "maxpool", "upsample", "concat", "attention_gate", "head")


@dataclass
class Node:
    name: str
    kind: str
    inputs: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ArchitectureConfig:
    base_features: int = 16
    depth: int = 5
    max_features: int = 256
    region_classes: int = 9
    boundary_channels: int = 1
    in_channels: int = 1

    def __post_init__(self):
        if self.depth < 2:
            raise GraphError(f"depth must be >= 2, got {self.depth}")
        if self.base_features < 1 or self.region_classes < 2 or self.in_channels < 1:
            raise GraphError("base_features, in_channels must be >= 1 and region_classes >= 2")

    def features(self, stage: int) -> int:
        """Channels at encoder stage ``stage`` (0-based)."""
        return min(self.base_features * 2**stage, self.max_features)


@dataclass
class LayerGraph:
    arch: Arch
    topology: Topology
    config: ArchitectureConfig
    nodes: list[Node]
    outputs: dict[str, str]
    bottleneck: str

    def __post_init__(self):
        self._index = {n.name: n for n in self.nodes}
        self.validate()

    def __getitem__(self, name: str) -> Node:
        return self._index[name]

    @property
    def input_ports(self) -> list[str]:
        return [n.name for n in self.nodes if n.kind == "input"]

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(src, n.name) for n in self.nodes for src in n.inputs]

    def of_kind(self, kind: str) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def channels(self) -> dict[str, int]:
        """Output channel count of every node, propagated from the input port."""
        ch: dict[str, int] = {}
        for n in self.nodes:
            ins = [ch[i] for i in n.inputs]
            if n.kind == "input":
                ch[n.name] = n.attrs["channels"]
            elif n.kind in ("maxpool", "upsample"):
                ch[n.name] = ins[0]
            elif n.kind == "concat":
                ch[n.name] = sum(ins)
            elif n.kind == "attention_gate":
                gate, skip = ins
                if (gate, skip) != (n.attrs["gate_channels"], n.attrs["skip_channels"]):
                    raise GraphError(f"{n.name}: declared channels do not match inputs {ins}")
                ch[n.name] = skip
            else:  # conv_block, head
                if ins[0] != n.attrs["in_channels"]:
                    raise GraphError(
                        f"{n.name}: declares {n.attrs['in_channels']} input channels, receives {ins[0]}"
                    )
                ch[n.name] = n.attrs["out_channels"]
        return ch

    def validate(self) -> None:
        seen: set[str] = set()
        for n in self.nodes:
            if n.kind not in NODE_KINDS:
                raise GraphError(f"{n.name}: unknown node kind {n.kind!r}")
            if n.name in seen:
                raise GraphError(f"duplicate node name {n.name!r}")
            for src in n.inputs:
                # topological order doubles as the acyclicity check
                if src not in seen:
                    raise GraphError(f"{n.name}: input {src!r} is not defined earlier")
            seen.add(n.name)
        if len(self.input_ports) != 1:
            raise GraphError(f"expected exactly one input port, found {self.input_ports}")
        expected = {"region"} if self.topology is Topology.BASELINE else {"region", "boundary"}
        if set(self.outputs) != expected:
            raise GraphError(f"{self.topology.value} graph must expose ports {sorted(expected)}")
        for port, name in self.outputs.items():
            if name not in self._index or self._index[name].kind != "head":
                raise GraphError(f"port {port!r} must point at a head node")
        self.channels()

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "topology": self.topology.value,
            "config": asdict(self.config),
            "nodes": [asdict(n) for n in self.nodes],
            "edges": [list(e) for e in self.edges],
            "outputs": dict(self.outputs),
            "bottleneck": self.bottleneck,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "LayerGraph":
        nodes = [Node(n["name"], n["kind"], list(n["inputs"]), dict(n["attrs"])) for n in d["nodes"]]
        return cls(
            Arch(d["arch"]),
            Topology(d["topology"]),
            ArchitectureConfig(**d["config"]),
            nodes,
            dict(d["outputs"]),
            d["bottleneck"],
        )

    @classmethod
    def from_json(cls, text: str) -> "LayerGraph":
        return cls.from_dict(json.loads(text))


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []

    def add(self, name: str, kind: str, inputs: Iterable[str] = (), **attrs) -> str:
        self.nodes.append(Node(name, kind, list(inputs), attrs))
        return name

    def block(self, name: str, src: str, cin: int, cout: int) -> str:
        return self.add(name, "conv_block", [src], in_channels=cin, out_channels=cout, kernel=3)


def _encoder(b: _Builder, cfg: ArchitectureConfig) -> list[str]:
    x = b.add("input", "input", channels=cfg.in_channels)
    stages = []
    cin = cfg.in_channels
    for k in range(cfg.depth):
        if k:
            x = b.add(f"pool{k - 1}", "maxpool", [x], kernel=2, stride=2)
        x = b.block(f"enc{k}", x, cin, cfg.features(k))
        cin = cfg.features(k)
        stages.append(x)
    return stages


def _unet_decoder(b: _Builder, cfg: ArchitectureConfig, stages: list[str], prefix: str, attention: bool) -> str:
    cur = stages[-1]
    for k in range(cfg.depth - 2, -1, -1):
        coarse, fine = cfg.features(k + 1), cfg.features(k)
        up = b.add(f"{prefix}dec{k}_up", "upsample", [cur], scale=2, mode="trilinear")
        skip = stages[k]
        if attention:
            skip = b.add(
                f"{prefix}dec{k}_gate",
                "attention_gate",
                [up, skip],
                gate_channels=coarse,
                skip_channels=fine,
                inter_channels=max(fine // 2, 1),
            )
        cat = b.add(f"{prefix}dec{k}_cat", "concat", [up, skip])
        cur = b.block(f"{prefix}dec{k}", cat, coarse + fine, fine)
    return cur


def _nested_decoder(b: _Builder, cfg: ArchitectureConfig, stages: list[str]) -> str:
    grid = {(i, 0): s for i, s in enumerate(stages)}
    for j in range(1, cfg.depth):
        for i in range(cfg.depth - j):
            up = b.add(f"up{i + 1}_{j - 1}", "upsample", [grid[i + 1, j - 1]], scale=2, mode="trilinear")
            srcs = [grid[i, m] for m in range(j)] + [up]
            cat = b.add(f"nest{i}_{j}_cat", "concat", srcs)
            cin = cfg.features(i) * j + cfg.features(i + 1)
            grid[i, j] = b.block(f"nest{i}_{j}", cat, cin, cfg.features(i))
    return grid[0, cfg.depth - 1]


def build_graph(
    arch: Arch | str,
    topology: Topology | str = Topology.BASELINE,
    cfg: ArchitectureConfig | None = None,
) -> LayerGraph:
    """Build a baseline or boundary-constrained variant of ``arch``.

    TSOL adds a sigmoid boundary head on the final decoder features. TSD adds a
    second, plain UNet decoder fed only by encoder skips; it never uses
    attention gates or nested skips.
    """
    try:
        arch, topology = Arch(arch), Topology(topology)
    except ValueError as exc:
        raise GraphError(str(exc)) from None
    cfg = cfg or ArchitectureConfig()
    b = _Builder()
    stages = _encoder(b, cfg)
    if arch is Arch.UNETPP:
        feats = _nested_decoder(b, cfg, stages)
    else:
        feats = _unet_decoder(b, cfg, stages, "", attention=arch is Arch.ATT_UNET)
    f0 = cfg.features(0)
    outputs = {
        "region": b.add(
            "region_head", "head", [feats], in_channels=f0, out_channels=cfg.region_classes, activation="softmax"
        )
    }
    if topology is not Topology.BASELINE:
        if topology is Topology.TSD:
            feats = _unet_decoder(b, cfg, stages, "bnd_", attention=False)
        outputs["boundary"] = b.add(
            "boundary_head", "head", [feats], in_channels=f0, out_channels=cfg.boundary_channels, activation="sigmoid"
        )
    return LayerGraph(arch, topology, cfg, b.nodes, outputs, bottleneck=stages[-1])


def infer_shapes(graph: LayerGraph, shape: VolumeShape | tuple[int, int, int]) -> dict[str, tuple[int, int, int, int]]:
    """Per-node output shape ``(channels, W, H, Z)`` for a single input volume."""
    shape = VolumeShape.of(shape)
    factor = 2 ** (graph.config.depth - 1)
    for axis, n in zip(("W", "H", "Z"), shape.as_tuple()):
        if n % factor:
            raise ShapeError(
                f"input axis {axis}={n} is not divisible by {factor} (2^(depth-1), depth={graph.config.depth})"
            )
    channels = graph.channels()
    spatial: dict[str, tuple[int, int, int]] = {}
    for n in graph.nodes:
        if n.kind == "input":
            s = shape.as_tuple()
        elif n.kind == "maxpool":
            s = tuple(d // 2 for d in spatial[n.inputs[0]])
        elif n.kind == "upsample":
            s = tuple(d * 2 for d in spatial[n.inputs[0]])
        else:
            s = spatial[n.inputs[0]]
            for other in n.inputs[1:]:
                if spatial[other] != s:
                    raise ShapeError(f"{n.name}: inputs disagree on spatial size {s} vs {spatial[other]}")
        spatial[n.name] = s
    return {name: (channels[name], *s) for name, s in spatial.items()}


def node_params(node: Node) -> int:
    a = node.attrs
    if node.kind == "conv_block":
        cin, cout, k3 = a["in_channels"], a["out_channels"], a["kernel"] ** 3
        conv1 = cin * cout * k3 + cout
        conv2 = cout * cout * k3 + cout
        return conv1 + conv2 + 2 * (2 * cout)  # two batch norms, scale + shift
    if node.kind == "head":
        return a["in_channels"] * a["out_channels"] + a["out_channels"]
    if node.kind == "attention_gate":
        g, x, i = a["gate_channels"], a["skip_channels"], a["inter_channels"]
        return (g * i + i) + (x * i + i) + (i + 1)
    return 0


def count_params(graph: LayerGraph) -> int:
    return sum(node_params(n) for n in graph.nodes)


def param_report(arch: Arch | str, cfg: ArchitectureConfig | None = None) -> dict[str, int]:
    """Parameter counts of the three topologies of ``arch`` plus deltas to the baseline."""
    counts = {t.value: count_params(build_graph(arch, t, cfg)) for t in Topology}
    base = counts["baseline"]
    return {
        **counts,
        "tsol_delta": counts["tsol"] - base,
        "tsd_delta": counts["tsd"] - base,
    }
