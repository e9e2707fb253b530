from .graph import (
    Arch,
    ArchitectureConfig,
    GraphError,
    LayerGraph,
    Node,
    ShapeError,
    Topology,
    build_graph,
    count_params,
    infer_shapes,
    param_report,
)
