"""End-to-end separation of a mixture into vocals and accompaniment.

A mask function maps the network input ``(B, 2P, F, T)`` to masks of the
same shape, vocal planes first. The trained network is one such function;
the constant masks below are handy for checking the analysis/synthesis chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, read_wav, write_wav
from .config import DEFAULTS
from .exceptions import IncompatibleCheckpointError, ShapeError
from .spectral import CwsTransform, apply_mask, from_network_planes, to_network_input

__all__ = [
    "MaskPair",
    "SeparationJob",
    "constant_masks",
    "network_masks",
    "oracle_masks",
    "separate",
    "separate_signal",
    "separate_with_masks",
]

_P = DEFAULTS["pipeline"]
SEGMENT_S = _P.getfloat("segment_s")
CROSSFADE_S = _P.getfloat("crossfade_s")
MASK_EPS = _P.getfloat("mask_eps")


@dataclass
class MaskPair:
    """Vocal and accompaniment masks in CWS layout ``(P, T, F)``."""

    vocal: np.ndarray
    accompaniment: np.ndarray


def constant_masks(vocal=1.0, accompaniment=1.0):
    """Mask function returning the same value in every bin."""
    def fn(x):
        P = x.shape[1] // 2
        m = np.empty_like(x)
        m[:, :P] = vocal
        m[:, P:] = accompaniment
        return m
    return fn


def network_masks(net):
    """Mask function backed by a network in inference mode."""
    def fn(x):
        out = net.forward(x.astype(net.dtype, copy=False), training=False)
        net.clear()
        return out
    return fn


def _segment_bounds(n, seg, xf, min_len):
    """Segment ``[start, end)`` pairs; consecutive segments overlap by ``xf``."""
    if n <= seg:
        return [(0, n)]
    step = seg - xf
    bounds = []
    start = 0
    while True:
        end = min(start + seg, n)
        bounds.append((start, end))
        if end == n:
            break
        start += step
    last_start, last_end = bounds[-1]
    if len(bounds) > 1 and last_end - last_start < max(min_len, 2 * xf):
        bounds.pop()
        bounds[-1] = (bounds[-1][0], n)
    return bounds


def _ramp(n):
    t = (np.arange(n) + 0.5) / n
    return 0.5 - 0.5 * np.cos(np.pi * t)


def _separate_once(x, transform, mask_fn):
    cws = transform.transform(x)
    masks = np.asarray(mask_fn(to_network_input(cws)[None]))[0]
    P = cws.values.shape[0]
    if masks.shape[0] != 2 * P:
        raise ShapeError(f"mask function returned {masks.shape[0]} planes, expected {2 * P}")
    n = x.shape[1]
    vocal = transform.inverse_transform(apply_mask(from_network_planes(masks[:P]), cws), n)
    acc = transform.inverse_transform(apply_mask(from_network_planes(masks[P:]), cws), n)
    return vocal, acc


def separate_signal(samples, sample_rate, K, mask_fn, segment_s=SEGMENT_S,
                    crossfade_s=CROSSFADE_S):
    """Separate a ``(C, N)`` array; returns ``(vocal, accompaniment)`` of the same shape.

    Inputs longer than ``segment_s`` are cut into segments that overlap by
    ``crossfade_s`` and recombined with complementary raised-cosine ramps.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    transform = CwsTransform(K, sample_rate).fit()
    n = x.shape[1]
    if n < transform.min_samples():
        raise ShapeError(f"input of {n} samples is shorter than the minimum "
                         f"{transform.min_samples()} for K={K}")
    seg = int(round(segment_s * sample_rate))
    xf = int(round(crossfade_s * sample_rate))
    if not 0 < xf < seg:
        raise ValueError("need 0 < crossfade < segment length")
    bounds = _segment_bounds(n, seg, xf, transform.min_samples())
    vocal = np.zeros_like(x)
    acc = np.zeros_like(x)
    for i, (a, b) in enumerate(bounds):
        v, s = _separate_once(x[:, a:b], transform, mask_fn)
        w = np.ones(b - a)
        if i > 0:
            w[:xf] = _ramp(xf)
        if i < len(bounds) - 1:
            w[-xf:] = _ramp(xf)[::-1]
        vocal[:, a:b] += w * v
        acc[:, a:b] += w * s
    return vocal, acc


def oracle_masks(mixture, vocal, acc, K, sample_rate, eps=MASK_EPS) -> MaskPair:
    """Ideal ratio masks ``|X_j| / (|X_1| + |X_2| + eps)`` clipped to ``[0, 1]``."""
    arrays = [np.atleast_2d(np.asarray(getattr(a, "samples", a), dtype=np.float64))
              for a in (mixture, vocal, acc)]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeError("mixture and stems must have the same shape")
    transform = CwsTransform(K, sample_rate).fit()
    xv = np.abs(transform.transform(arrays[1]).values)
    xa = np.abs(transform.transform(arrays[2]).values)
    den = xv + xa + eps
    return MaskPair(np.clip(xv / den, 0, 1), np.clip(xa / den, 0, 1))


def separate_with_masks(mixture, masks: MaskPair, K, sample_rate):
    """Apply precomputed CWS-layout masks to ``mixture`` in a single pass."""
    x = np.atleast_2d(np.asarray(getattr(mixture, "samples", mixture), dtype=np.float64))
    transform = CwsTransform(K, sample_rate).fit()
    cws = transform.transform(x)
    n = x.shape[1]
    return (transform.inverse_transform(apply_mask(masks.vocal, cws), n),
            transform.inverse_transform(apply_mask(masks.accompaniment, cws), n))


@dataclass
class SeparationJob:
    input: Path
    checkpoint: Path | None = None
    K: int | None = None
    outputs: dict = field(default_factory=dict)  # {"vocals": path, "accompaniment": path}
    segment_s: float = SEGMENT_S
    crossfade_s: float = CROSSFADE_S
    mask_fn: object = None  # overrides the checkpoint when set


def _load_model(job, clip):
    from .nn.checkpoint import load_checkpoint

    net, extra = load_checkpoint(job.checkpoint, dtype=np.float32)
    K = extra.get("K")
    if K is None:
        raise IncompatibleCheckpointError("checkpoint does not record its band count K")
    if job.K is not None and job.K != K:
        raise IncompatibleCheckpointError(f"job asks for K={job.K}, checkpoint was trained with K={K}")
    expected = 2 * clip.channels * K
    if net.in_channels != expected:
        raise IncompatibleCheckpointError(
            f"checkpoint expects {net.in_channels} input planes, a {clip.channels}-channel "
            f"input at K={K} gives {expected}"
        )
    return K, network_masks(net)


def separate(job: SeparationJob):
    """Run ``job``; returns ``(vocal, accompaniment)`` clips and writes any requested outputs."""
    clip = read_wav(job.input)
    if job.mask_fn is not None:
        if job.K is None:
            raise ValueError("K is required when a mask function is injected")
        K, mask_fn = job.K, job.mask_fn
    else:
        if job.checkpoint is None:
            raise ValueError("a checkpoint or a mask function is required")
        K, mask_fn = _load_model(job, clip)
    v, a = separate_signal(clip.samples, clip.sample_rate, K, mask_fn, job.segment_s,
                           job.crossfade_s)
    out = (AudioClip(v.astype(np.float32), clip.sample_rate),
           AudioClip(a.astype(np.float32), clip.sample_rate))
    for name, result in zip(("vocals", "accompaniment"), out):
        if job.outputs.get(name):
            write_wav(job.outputs[name], result)
    return out

