"""Layer primitives for ``(N, C, H, W)`` feature maps.

Every layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` during ``backward``. Layers
also know their output shape and FLOP count for a given input shape, so the
cost model never has to run a forward pass.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError, StateError

__all__ = [
    "BatchNorm2d",
    "Concat",
    "Conv2d",
    "Dropout",
    "Layer",
    "MaxPool2",
    "ReLU",
    "Sigmoid",
    "Upsample2",
]


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def spec(self):
        return {"kind": self.kind}

    def out_shape(self, *shapes):
        return shapes[0]

    def flops(self, *shapes):
        """Default: one operation per output element."""
        return int(np.prod(self.out_shape(*shapes)))

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a cached forward pass")
        return self._cache

    def clear_cache(self):
        self._cache = None


class Conv2d(Layer):
    """Stride-1 cross-correlation with ``kernel // 2`` zero padding (shape preserving)."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel=3, bias=True, dtype=np.float64):
        super().__init__()
        if kernel not in (1, 3):
            raise ValueError("only 1x1 and 3x3 kernels are supported")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.params["weight"] = np.zeros((out_channels, in_channels, kernel, kernel), dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype)

    def spec(self):
        return {"kind": f"conv{self.kernel}x{self.kernel}", "in": self.in_channels,
                "out": self.out_channels, "bias": "bias" in self.params}

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        return (n, self.out_channels, h, w)

    def flops(self, shape):
        n, _, h, w = shape
        return 2 * self.kernel**2 * self.in_channels * self.out_channels * n * h * w

    def init_kaiming(self, rng):
        fan_in = self.in_channels * self.kernel**2
        bound = np.sqrt(6.0 / fan_in)
        w = self.params["weight"]
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        if "bias" in self.params:
            self.params["bias"][...] = 0

    def _columns(self, xc, h, w):
        """Stack the k*k shifted views into one ``(k*k*C, N*H*W)`` matrix."""
        k = self.kernel
        if k == 1:
            return xc.reshape(xc.shape[0], -1)
        c, n = xc.shape[:2]
        cols = np.empty((k, k, c, n, h, w), dtype=xc.dtype)
        for i in range(k):
            for j in range(k):
                cols[i, j] = xc[:, :, i : i + h, j : j + w]
        return cols.reshape(k * k * c, -1)

    def forward(self, x, training=False):
        n, _, h, w = self.out_shape(x.shape)
        weight = self.params["weight"]
        p = self.kernel // 2
        # channel-first so the whole convolution is one (O, k*k*C) @ (k*k*C, N*H*W) product
        xc = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
        if p:
            xc = np.pad(xc, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = self._columns(xc, h, w)
        wmat = weight.transpose(0, 2, 3, 1).reshape(self.out_channels, -1)
        out = (wmat @ cols).reshape(self.out_channels, n, h, w)
        if "bias" in self.params:
            out += self.params["bias"][:, None, None, None]
        self._cache = (cols, xc.shape)
        return out.transpose(1, 0, 2, 3)

    def backward(self, dout):
        cols, xshape = self._need_cache()
        n, o, h, w = dout.shape
        k, c = self.kernel, self.in_channels
        weight = self.params["weight"]
        dc = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(o, -1)
        dw = dc @ cols.T
        self.grads["weight"] = dw.reshape(o, k, k, c).transpose(0, 3, 1, 2).copy()
        if "bias" in self.params:
            self.grads["bias"] = dc.sum(axis=1)
        wmat = weight.transpose(0, 2, 3, 1).reshape(o, -1)
        dcols = (wmat.T @ dc).reshape(k, k, c, n, h, w)
        if k == 1:
            dxc = dcols[0, 0]
        else:
            dxc = np.zeros(xshape, dtype=dcols.dtype)
            for i in range(k):
                for j in range(k):
                    dxc[:, :, i : i + h, j : j + w] += dcols[i, j]
            p = k // 2
            dxc = dxc[:, :, p:-p, p:-p]
        return dxc.transpose(1, 0, 2, 3)


class BatchNorm2d(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype)
        self.params["beta"] = np.zeros(channels, dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype)
        self.buffers["running_var"] = np.ones(channels, dtype)

    def spec(self):
        return {"kind": self.kind, "in": self.channels, "out": self.channels}

    def out_shape(self, shape):
        if shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {shape[1]}")
        return shape

    def forward(self, x, training=False):
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.size // x.shape[1]
            unbiased = var * m / max(m - 1, 1)
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1 - self.momentum
            rm += self.momentum * mean
            rv *= 1 - self.momentum
            rv += self.momentum * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, training)
        return gamma * xhat + beta

    def backward(self, dout):
        xhat, inv_std, training = self._need_cache()
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dout.sum(axis=(0, 2, 3))
        g = (self.params["gamma"] * inv_std)[None, :, None, None]
        if not training:
            return dout * g
        dmean = dout.mean(axis=(0, 2, 3), keepdims=True)
        dxhat_mean = (dout * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return g * (dout - dmean - xhat * dxhat_mean)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0)

    def backward(self, dout):
        return np.where(self._need_cache(), dout, 0)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._need_cache()
        return dout * y * (1 - y)


class Dropout(Layer):
    """Inverted dropout; the mask drawn in ``forward`` is reused by ``backward``."""

    kind = "dropout"

    def __init__(self, rate, rng=None):
        super().__init__()
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, training=False):
        if not training or self.rate == 0:
            self._cache = None
            self._passthrough = True
            return x
        self._passthrough = False
        keep = self.rng.random(x.shape) >= self.rate
        scale = keep.astype(x.dtype) / (1.0 - self.rate)
        self._cache = scale
        return x * scale

    def backward(self, dout):
        if getattr(self, "_passthrough", False):
            return dout
        return dout * self._need_cache()


class MaxPool2(Layer):
    kind = "maxpool2"

    def out_shape(self, shape):
        n, c, h, w = shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 needs even H and W, got {h}x{w}")
        return (n, c, h // 2, w // 2)

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        self.out_shape(x.shape)
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, h // 2, w // 2, 4)
        idx = win.argmax(axis=-1)[..., None]
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(self, dout):
        idx, shape = self._need_cache()
        n, c, h, w = shape
        win = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(win, idx, dout[..., None], axis=-1)
        win = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return win.reshape(shape)


def _up_axis(x, axis):
    """Linear x2 upsampling along ``axis`` with half-pixel centres (align_corners=False)."""
    x = np.moveaxis(x, axis, -1)
    left = np.concatenate([x[..., :1], x[..., :-1]], axis=-1)
    right = np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    even = 0.75 * x + 0.25 * left
    odd = 0.75 * x + 0.25 * right
    out = np.stack([even, odd], axis=-1).reshape(*x.shape[:-1], 2 * x.shape[-1])
    return np.moveaxis(out, -1, axis)


def _up_axis_backward(d, axis):
    d = np.moveaxis(d, axis, -1)
    de, do = d[..., 0::2], d[..., 1::2]
    dx = 0.75 * (de + do)
    dx[..., :-1] += 0.25 * de[..., 1:]
    dx[..., 0] += 0.25 * de[..., 0]
    dx[..., 1:] += 0.25 * do[..., :-1]
    dx[..., -1] += 0.25 * do[..., -1]
    return np.moveaxis(dx, -1, axis)


class Upsample2(Layer):
    """Bilinear x2 upsampling, half-pixel aligned, edge-clamped."""

    kind = "upsample2_linear"

    def out_shape(self, shape):
        n, c, h, w = shape
        return (n, c, 2 * h, 2 * w)

    def forward(self, x, training=False):
        self._cache = True
        return _up_axis(_up_axis(x, 2), 3)

    def backward(self, dout):
        self._need_cache()
        return _up_axis_backward(_up_axis_backward(dout, 3), 2)


class Concat(Layer):
    """Channel concatenation of several inputs (data movement only, zero FLOPs)."""

    kind = "concat"

    def out_shape(self, *shapes):
        n, _, h, w = shapes[0]
        for s in shapes[1:]:
            if (s[0], s[2], s[3]) != (n, h, w):
                raise ShapeError(f"cannot concatenate shapes {shapes}")
        return (n, sum(s[1] for s in shapes), h, w)

    def flops(self, *shapes):
        return 0

    def forward(self, *xs, training=False):
        self._cache = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, dout):
        sizes = self._need_cache()
        return np.split(dout, np.cumsum(sizes)[:-1], axis=1)
