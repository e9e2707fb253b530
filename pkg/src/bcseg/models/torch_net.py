"""Run a :class:`LayerGraph` with PyTorch."""

from __future__ import annotations

import math
import zlib

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..volume import ProbabilityMap, VolumeShape
from .graph import LayerGraph, infer_shapes


class ExecutionError(ValueError):
    pass


class ConvBlock(nn.Sequential):
    """Two padded 3x3x3 convolutions, each followed by batch norm and ELU."""

    def __init__(self, cin: int, cout: int, kernel: int = 3):
        pad = kernel // 2
        super().__init__(
            nn.Conv3d(cin, cout, kernel, padding=pad),
            nn.BatchNorm3d(cout),
            nn.ELU(inplace=True),
            nn.Conv3d(cout, cout, kernel, padding=pad),
            nn.BatchNorm3d(cout),
            nn.ELU(inplace=True),
        )


class AttentionGate(nn.Module):
    """Additive attention: ``skip * sigmoid(psi(relu(W_g g + W_x skip)))``."""

    def __init__(self, gate_channels: int, skip_channels: int, inter_channels: int):
        super().__init__()
        self.w_g = nn.Conv3d(gate_channels, inter_channels, 1)
        self.w_x = nn.Conv3d(skip_channels, inter_channels, 1)
        self.psi = nn.Conv3d(inter_channels, 1, 1)

    def forward(self, gate, skip):
        alpha = torch.sigmoid(self.psi(F.relu(self.w_g(gate) + self.w_x(skip))))
        return skip * alpha


def _node_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def _init_module(module: nn.Module, gen: torch.Generator) -> None:
    # same scheme as torch's Conv3d defaults, drawn from a per-node generator
    for m in module.modules():
        if isinstance(m, nn.Conv3d):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5), generator=gen)
            fan_in = m.weight[0].numel()
            bound = 1 / math.sqrt(fan_in)
            nn.init.uniform_(m.bias, -bound, bound, generator=gen)
        elif isinstance(m, nn.BatchNorm3d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class GraphNet(nn.Module):
    """Executable network for a layer graph.

    Weights of every node are initialised from ``(seed, node name)``, so nodes
    shared by a baseline and its TSOL/TSD variant start from identical values.
    ``forward`` returns raw logits per output port.
    """

    def __init__(self, graph: LayerGraph, seed: int = 0):
        super().__init__()
        self.graph = graph
        self.layers = nn.ModuleDict()
        for n in graph.nodes:
            a = n.attrs
            if n.kind == "conv_block":
                layer = ConvBlock(a["in_channels"], a["out_channels"], a["kernel"])
            elif n.kind == "head":
                layer = nn.Conv3d(a["in_channels"], a["out_channels"], 1)
            elif n.kind == "attention_gate":
                layer = AttentionGate(a["gate_channels"], a["skip_channels"], a["inter_channels"])
            else:
                continue
            gen = torch.Generator().manual_seed(_node_seed(seed, n.name))
            _init_module(layer, gen)
            self.layers[n.name] = layer

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        vals: dict[str, torch.Tensor] = {}
        for n in self.graph.nodes:
            ins = [vals[i] for i in n.inputs]
            if n.kind == "input":
                out = x
            elif n.kind == "maxpool":
                out = F.max_pool3d(ins[0], kernel_size=2, stride=2)
            elif n.kind == "upsample":
                out = F.interpolate(ins[0], scale_factor=2, mode="trilinear", align_corners=False)
            elif n.kind == "concat":
                out = torch.cat(ins, dim=1)
            elif n.kind == "attention_gate":
                out = self.layers[n.name](*ins)
            else:
                out = self.layers[n.name](ins[0])
            vals[n.name] = out
        return {port: vals[name] for port, name in self.graph.outputs.items()}

    def probabilities(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        """Softmax over classes for the region port, sigmoid for the boundary port."""
        logits = self(x)
        probs = {"region": torch.softmax(logits["region"], dim=1)}
        if "boundary" in logits:
            probs["boundary"] = torch.sigmoid(logits["boundary"])
        return probs


def check_input(graph: LayerGraph, batch_shape: tuple[int, ...]) -> None:
    if len(batch_shape) != 5:
        raise ExecutionError(f"expected a (B, C, W, H, Z) batch, got shape {tuple(batch_shape)}")
    if batch_shape[1] != graph.config.in_channels:
        raise ExecutionError(f"expected {graph.config.in_channels} input channels, got {batch_shape[1]}")
    try:
        infer_shapes(graph, VolumeShape.of(batch_shape[2:]))
    except ValueError as exc:
        raise ExecutionError(str(exc)) from exc


def execute(
    graph: LayerGraph,
    volumes: np.ndarray | torch.Tensor,
    params: GraphNet | dict | None = None,
    seed: int = 0,
) -> list[ProbabilityMap]:
    """Inference on a batch ``(B, W, H, Z)`` or ``(B, C_in, W, H, Z)``.

    ``params`` is a trained :class:`GraphNet` or a state dict for one; without
    it a freshly initialised network (from ``seed``) is used.
    """
    x = torch.as_tensor(np.asarray(volumes) if not isinstance(volumes, torch.Tensor) else volumes)
    if x.ndim == 4:
        x = x[:, None]
    check_input(graph, tuple(x.shape))
    if isinstance(params, GraphNet):
        net = params
    else:
        net = GraphNet(graph, seed)
        if params is not None:
            net.load_state_dict(params)
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            probs = net.probabilities(x.float())
    finally:
        net.train(was_training)
    region = probs["region"].double().numpy()
    boundary = probs["boundary"][:, 0].double().numpy() if "boundary" in probs else None
    return [
        ProbabilityMap(region[i], None if boundary is None else boundary[i]) for i in range(region.shape[0])
    ]
