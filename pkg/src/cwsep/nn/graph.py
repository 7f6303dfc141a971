"""Directed acyclic layer graphs with reverse-mode differentiation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import NumericError, ShapeError, StateError
from ..validation import check_tensor4
from .layers import Concat, Conv2d, Dropout

__all__ = ["Node", "NetworkGraph", "CostReport", "LayerCost"]

INPUT = -1


@dataclass
class Node:
    name: str
    layer: object
    inputs: tuple  # node indices; INPUT (-1) is the graph input


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    flops: int
    out_shape: tuple


@dataclass
class CostReport:
    param_count: int
    flops: int | None
    per_layer: list = field(default_factory=list)

    @property
    def gflops(self):
        return None if self.flops is None else self.flops / 1e9


class NetworkGraph:
    """Topologically ordered layers; the last node is the output.

    The graph pads H and W up to a multiple of ``2**scale`` with reflection
    before the first layer and crops the output back afterwards.
    """

    def __init__(self, in_channels, out_channels, scale, config=None, dtype=np.float64):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.scale = scale
        self.config = dict(config or {})
        self.dtype = np.dtype(dtype)
        self.nodes = []
        self._pad = None
        self._outputs = None

    def add(self, name, layer, *inputs):
        self.nodes.append(Node(name, layer, tuple(inputs)))
        return len(self.nodes) - 1

    # -- parameters -------------------------------------------------------
    def named_params(self):
        for node in self.nodes:
            for key, arr in node.layer.params.items():
                yield f"{node.name}.{key}", arr

    def named_buffers(self):
        for node in self.nodes:
            for key, arr in node.layer.buffers.items():
                yield f"{node.name}.{key}", arr

    def named_grads(self):
        for node in self.nodes:
            for key in node.layer.params:
                yield f"{node.name}.{key}", node.layer.grads.get(key)

    def params(self):
        return dict(self.named_params())

    def grads(self):
        return dict(self.named_grads())

    def set_dropout_rng(self, rng):
        for node in self.nodes:
            if isinstance(node.layer, Dropout):
                node.layer.rng = rng

    def init_weights(self, seed=0, zero=False):
        """Kaiming-uniform conv weights, zero biases, unit/zero batch-norm affine."""
        rng = np.random.default_rng(seed)
        for node in self.nodes:
            layer = node.layer
            if isinstance(layer, Conv2d):
                if zero:
                    for arr in layer.params.values():
                        arr[...] = 0
                else:
                    layer.init_kaiming(rng)
        return self

    # -- structure --------------------------------------------------------
    def layer_specs(self):
        specs = []
        for node in self.nodes:
            spec = dict(node.layer.spec())
            spec["name"] = node.name
            spec["inputs"] = list(node.inputs)
            specs.append(spec)
        return specs

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"in": self.in_channels, "out": self.out_channels, "scale": self.scale,
             "layers": self.layer_specs()},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    # -- execution --------------------------------------------------------
    def _padding(self, h, w):
        m = 2**self.scale
        return (-h) % m, (-w) % m

    def forward(self, x, training=False):
        """Run the graph on ``x`` of shape ``(N, in_channels, H, W)``."""
        x = check_tensor4(x, self.in_channels).astype(self.dtype, copy=False)
        n, _, h, w = x.shape
        ph, pw = self._padding(h, w)
        if ph or pw:
            mode = "reflect" if ph < h and pw < w else "symmetric"
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
        self._pad = (h, w, ph, pw)
        outputs = []
        for node in self.nodes:
            args = [x if i == INPUT else outputs[i] for i in node.inputs]
            outputs.append(node.layer.forward(*args, training=training))
        self._outputs = [o.shape for o in outputs]
        return outputs[-1][:, :, :h, :w]

    def backward(self, loss_grad):
        """Back-propagate ``d loss / d output`` and return the parameter gradients."""
        if self._pad is None or self._outputs is None:
            raise StateError("backward called before forward")
        h, w, ph, pw = self._pad
        g = np.asarray(loss_grad, dtype=self.dtype)
        expected = self._outputs[-1][:2] + (h, w)
        if g.shape != expected:
            raise ShapeError(f"loss gradient has shape {g.shape}, expected {expected}")
        if ph or pw:
            g = np.pad(g, ((0, 0), (0, 0), (0, ph), (0, pw)))
        pending = [None] * len(self.nodes)
        pending[-1] = g
        for idx in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[idx]
            dout = pending[idx]
            if dout is None:
                dout = np.zeros(self._outputs[idx], dtype=self.dtype)
            dins = node.layer.backward(dout)
            if not isinstance(node.layer, Concat):
                dins = [dins]
            for src, d in zip(node.inputs, dins):
                if src == INPUT:
                    continue
                pending[src] = d if pending[src] is None else pending[src] + d
            pending[idx] = None
        self._pad = None
        self._outputs = None
        for name, grad in self.named_grads():
            if grad is not None and not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient in {name}")
        return self.grads()

    def clear(self):
        for node in self.nodes:
            node.layer.clear_cache()
        self._pad = None
        self._outputs = None

    # -- cost model -------------------------------------------------------
    def padded_shape(self, input_shape):
        n, c, h, w = input_shape
        ph, pw = self._padding(h, w)
        return (n, c, h + ph, w + pw)

    def cost(self, input_shape=None) -> CostReport:
        rows = []
        shapes = []
        shape0 = None if input_shape is None else self.padded_shape(input_shape)
        if shape0 is not None and shape0[1] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {shape0[1]}")
        for node in self.nodes:
            nparams = int(sum(a.size for a in node.layer.params.values()))
            if shape0 is None:
                rows.append(LayerCost(node.name, node.layer.kind, nparams, 0, ()))
                continue
            ins = [shape0 if i == INPUT else shapes[i] for i in node.inputs]
            out = node.layer.out_shape(*ins)
            shapes.append(out)
            rows.append(LayerCost(node.name, node.layer.kind, nparams,
                                  int(node.layer.flops(*ins)), out))
        total_params = sum(r.params for r in rows)
        flops = None if shape0 is None else sum(r.flops for r in rows)
        return CostReport(total_params, flops, rows)
