"""Parameter and FLOP accounting.

Convolutions cost ``2 * k^2 * C_in * C_out * H * W`` operations; batch norm,
activations, pooling, upsampling and dropout cost one operation per output
element; concatenation is free.
"""

from .graph import CostReport, NetworkGraph

__all__ = ["count_params", "count_flops"]


def count_params(net: NetworkGraph) -> CostReport:
    """Weights + biases + batch-norm affine terms (running statistics excluded)."""
    return net.cost(None)


def count_flops(net: NetworkGraph, input_shape) -> CostReport:
    """FLOPs of one forward pass on ``input_shape`` (after padding to the pooling grid)."""
    return net.cost(tuple(input_shape))
