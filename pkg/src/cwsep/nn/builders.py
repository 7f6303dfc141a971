"""UNet-N and MDenseNet mask-estimator graphs."""

from __future__ import annotations

import numpy as np

from ..config import DEFAULTS, arch_config
from .graph import INPUT, NetworkGraph
from .layers import BatchNorm2d, Concat, Conv2d, Dropout, MaxPool2, ReLU, Sigmoid, Upsample2

__all__ = ["build_network", "build_unet", "build_mdensenet", "dense_block", "unet_widths"]

_BN = DEFAULTS["batchnorm"]


def _bn(channels, dtype):
    return BatchNorm2d(channels, _BN.getfloat("momentum"), _BN.getfloat("eps"), dtype)


def unet_widths(scale, base_channels=64, width_cap=None, width_mult=1.0):
    """Per-scale channel counts: doubling from ``base_channels``, capped, capped levels scaled."""
    widths = []
    for i in range(scale + 1):
        w = base_channels * 2**i
        if width_cap is not None and w > width_cap:
            w = int(round(width_cap * width_mult))
        widths.append(w)
    return widths


def _conv_block(g, prefix, src, cin, cout, dropout, dtype):
    """conv3x3 -> BN -> ReLU, twice; optional dropout after the second ReLU."""
    x = src
    for i, (a, b) in enumerate(((cin, cout), (cout, cout)), start=1):
        x = g.add(f"{prefix}.conv{i}", Conv2d(a, b, 3, dtype=dtype), x)
        x = g.add(f"{prefix}.bn{i}", _bn(b, dtype), x)
        x = g.add(f"{prefix}.relu{i}", ReLU(), x)
    if dropout:
        x = g.add(f"{prefix}.dropout", Dropout(dropout), x)
    return x


def build_unet(scale=5, base_channels=64, in_channels=4, out_channels=4, *, width_cap=None,
               width_mult=1.0, widths=None, dropout=0.0, dtype=np.float64, seed=0):
    """UNet mask estimator with ``scale`` max-pool stages.

    In-conv block to ``base_channels``; each down stage max-pools then runs a
    two-conv block; the up path upsamples bilinearly, concatenates the
    same-scale encoder output and runs a two-conv block; a 1x1 conv and a
    sigmoid produce ``out_channels`` masks.
    """
    if scale < 1:
        raise ValueError("scale must be >= 1")
    if widths is None:
        widths = unet_widths(scale, base_channels, width_cap, width_mult)
    if len(widths) != scale + 1:
        raise ValueError(f"need {scale + 1} widths, got {len(widths)}")
    config = {"kind": "unet", "scale": scale, "widths": list(widths), "dropout": dropout}
    g = NetworkGraph(in_channels, out_channels, scale, config, dtype)
    skips = [_conv_block(g, "inc", INPUT, in_channels, widths[0], dropout, dtype)]
    for i in range(1, scale + 1):
        x = g.add(f"down{i}.pool", MaxPool2(), skips[-1])
        skips.append(_conv_block(g, f"down{i}", x, widths[i - 1], widths[i], dropout, dtype))
    x = skips[-1]
    for i in range(scale, 0, -1):
        x = g.add(f"up{i}.upsample", Upsample2(), x)
        x = g.add(f"up{i}.concat", Concat(), skips[i - 1], x)
        x = _conv_block(g, f"up{i}", x, widths[i] + widths[i - 1], widths[i - 1], dropout, dtype)
    x = g.add("head.conv", Conv2d(widths[0], out_channels, 1, dtype=dtype), x)
    g.add("head.sigmoid", Sigmoid(), x)
    return g.init_weights(seed)


def dense_block(g, prefix, src, in_channels, growth, layers, dropout, dtype):
    """Dense block; layer ``i`` sees ``in_channels + i * growth`` channels.

    Each layer is BN -> ReLU -> conv3x3(growth). The block outputs the
    concatenation of the ``layers`` new feature maps (``layers * growth``
    channels); the input is carried forward by the surrounding skip paths.
    """
    feats = [src]
    new = []
    for i in range(layers):
        x = feats[0] if i == 0 else g.add(f"{prefix}.l{i}.concat", Concat(), *feats)
        cin = in_channels + i * growth
        x = g.add(f"{prefix}.l{i}.bn", _bn(cin, dtype), x)
        x = g.add(f"{prefix}.l{i}.relu", ReLU(), x)
        x = g.add(f"{prefix}.l{i}.conv", Conv2d(cin, growth, 3, dtype=dtype), x)
        if dropout:
            x = g.add(f"{prefix}.l{i}.dropout", Dropout(dropout), x)
        feats.append(x)
        new.append(x)
    if layers == 1:
        return new[0], growth
    return g.add(f"{prefix}.out", Concat(), *new), layers * growth


def build_mdensenet(growth, layers, scale=5, in_channels=4, out_channels=4, *, stem_channels=8,
                    dropout=0.0, dtype=np.float64, seed=0):
    """Multi-scale dense encoder/decoder (MDenseNet-style) mask estimator.

    ``growth[i]`` and ``layers[i]`` configure the dense block at scale ``i``
    (``0..scale``); the decoder reuses the schedule of the matching encoder
    level and concatenates its output as a skip connection.
    """
    growth, layers = list(growth), list(layers)
    if len(growth) != scale + 1 or len(layers) != scale + 1:
        raise ValueError(f"growth/layers need {scale + 1} entries each")
    config = {"kind": "mdensenet", "scale": scale, "growth": growth, "layers": layers,
              "stem_channels": stem_channels, "dropout": dropout}
    g = NetworkGraph(in_channels, out_channels, scale, config, dtype)
    x = g.add("stem.conv", Conv2d(in_channels, stem_channels, 1, dtype=dtype), INPUT)
    c = stem_channels
    skips = []
    for i in range(scale + 1):
        if i:
            x = g.add(f"enc{i}.pool", MaxPool2(), x)
        x, c = dense_block(g, f"enc{i}", x, c, growth[i], layers[i], dropout, dtype)
        skips.append((x, c))
    for i in range(scale - 1, -1, -1):
        x = g.add(f"dec{i}.upsample", Upsample2(), x)
        skip, cs = skips[i]
        x = g.add(f"dec{i}.concat", Concat(), skip, x)
        x, c = dense_block(g, f"dec{i}", x, c + cs, growth[i], layers[i], dropout, dtype)
    x = g.add("head.conv", Conv2d(c, out_channels, 1, dtype=dtype), x)
    g.add("head.sigmoid", Sigmoid(), x)
    return g.init_weights(seed)


def build_network(config, in_channels, out_channels, *, dropout=0.0, dtype=np.float64, seed=0):
    """Build from an architecture dict or a named preset (``unet5``, ``unet6``, ``mdn``)."""
    if isinstance(config, str):
        config = arch_config(config)
    config = dict(config)
    kind = config.pop("kind")
    config.pop("dropout", None)
    if kind == "unet":
        return build_unet(in_channels=in_channels, out_channels=out_channels, dropout=dropout,
                          dtype=dtype, seed=seed, **config)
    if kind == "mdensenet":
        return build_mdensenet(in_channels=in_channels, out_channels=out_channels,
                               dropout=dropout, dtype=dtype, seed=seed, **config)
    raise ValueError(f"unknown architecture kind {kind!r}")
