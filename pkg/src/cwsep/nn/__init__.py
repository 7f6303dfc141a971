"""Minimal NumPy CNN engine: layers, graphs, builders, cost model, checkpoints."""

from .builders import build_mdensenet, build_network, build_unet, dense_block, unet_widths
from .graph import CostReport, NetworkGraph
from .cost import count_flops, count_params

__all__ = [
    "CostReport",
    "NetworkGraph",
    "build_mdensenet",
    "build_network",
    "build_unet",
    "count_flops",
    "count_params",
    "dense_block",
    "unet_widths",
]
