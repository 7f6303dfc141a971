"""STFT/iSTFT framing, channel-wise subband packing and mask application.

Spectrogram planes are stored time-major, ``(T, F)``. The network side works
on ``(channels, F, T)`` real arrays: for a CWS tensor with ``P = C*K`` complex
planes, the real parts occupy channels ``0..P-1`` and the imaginary parts
channels ``P..2P-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import DEFAULTS
from .exceptions import NormalizationError, ShapeError
from .filterbank import SubbandSet, analyze, design_filterbank, synthesize
from .validation import check_band_count, check_signal

__all__ = [
    "ComplexSpectrogram",
    "CwsTensor",
    "CwsTransform",
    "FRAME_MS",
    "HOP_MS",
    "apply_mask",
    "dump_spectrogram",
    "framing",
    "from_network_planes",
    "hann",
    "istft",
    "pack_cws",
    "stft",
    "to_network_input",
    "unpack_cws",
]

FRAME_MS = DEFAULTS["stft"].getfloat("frame_ms")
HOP_MS = DEFAULTS["stft"].getfloat("hop_ms")


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def framing(sample_rate: float, frame_ms: float = FRAME_MS, hop_ms: float = HOP_MS):
    """Return ``(frame_len, hop)`` in samples; frame length rounds to the nearest even integer."""
    frame_len = 2 * _round_half_up(frame_ms * sample_rate / 1000.0 / 2.0)
    hop = _round_half_up(hop_ms * sample_rate / 1000.0)
    if frame_len < 2 or not 0 < hop <= frame_len:
        raise ValueError(f"degenerate framing at {sample_rate} Hz: frame {frame_len}, hop {hop}")
    return frame_len, hop


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class ComplexSpectrogram:
    values: np.ndarray  # (T, F) complex
    frame_len: int
    hop: int
    sample_rate: float

    @property
    def shape(self):
        return self.values.shape


def stft(signal, sample_rate: float, frame_ms: float = FRAME_MS, hop_ms: float = HOP_MS,
         *, frame_len: int | None = None, hop: int | None = None) -> ComplexSpectrogram:
    """One-sided STFT with a periodic Hann window and centred frames.

    The signal is reflection-padded by half a frame on both sides, giving
    ``1 + len(signal) // hop`` frames.
    """
    if frame_len is None or hop is None:
        frame_len, hop = framing(sample_rate, frame_ms, hop_ms)
    x = check_signal(signal, min_length=frame_len)
    pad = frame_len // 2
    xp = np.pad(x, pad, mode="reflect")
    frames = sliding_window_view(xp, frame_len)[::hop]
    values = np.fft.rfft(frames * hann(frame_len), axis=-1)
    return ComplexSpectrogram(values, frame_len, hop, sample_rate)


def _window_sum(n_frames, frame_len, hop):
    total = frame_len + hop * (n_frames - 1)
    wsq = hann(frame_len) ** 2
    acc = np.zeros(total)
    for t in range(n_frames):
        acc[t * hop : t * hop + frame_len] += wsq
    return acc


def istft(spec: ComplexSpectrogram, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, trimmed to ``length`` samples.

    Raises :class:`NormalizationError` when the summed squared window vanishes
    somewhere inside the requested output span.
    """
    values = np.asarray(spec.values)
    n_fft = spec.frame_len
    if values.ndim != 2 or values.shape[1] != n_fft // 2 + 1:
        raise ShapeError(f"expected (T, {n_fft // 2 + 1}) values, got {values.shape}")
    T = values.shape[0]
    frames = np.fft.irfft(values, n=n_fft, axis=-1) * hann(n_fft)
    total = n_fft + spec.hop * (T - 1)
    out = np.zeros(total)
    for t in range(T):
        out[t * spec.hop : t * spec.hop + n_fft] += frames[t]
    norm = _window_sum(T, n_fft, spec.hop)
    pad = n_fft // 2
    span = slice(pad, min(pad + length, total))
    if norm[span].size and norm[span].min() < 1e-8 * norm.max():
        raise NormalizationError(
            f"hop {spec.hop} leaves gaps in the squared-window sum for frame length {n_fft}"
        )
    safe = np.where(norm > 1e-8 * norm.max(), norm, 1.0)
    y = (out / safe)[span]
    if y.size < length:
        y = np.concatenate([y, np.zeros(length - y.size)])
    return y


def dump_spectrogram(path, spec) -> None:
    """Text dump: ``T F`` header, then one row per frame of ``re,im`` pairs."""
    values = spec.values if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    T, F = values.shape
    with open(path, "w") as fh:
        fh.write(f"{T} {F}\n")
        for row in values:
            fh.write(" ".join(f"{v.real:.9g},{v.imag:.9g}" for v in row) + "\n")


@dataclass(frozen=True)
class CwsTensor:
    """``C*K`` complex planes stacked as ``[Y^1_1..Y^1_K, Y^2_1..Y^C_K]``.

    ``values`` has shape ``(C*K, T, F_sub)``; plane ``c*K + k`` is audio
    channel ``c``, subband ``k``.
    """

    values: np.ndarray
    C: int
    K: int

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != self.C * self.K:
            raise ShapeError(
                f"expected {self.C * self.K} planes, got values of shape {self.values.shape}"
            )

    @property
    def shape(self):
        return self.values.shape


def _plane(p):
    return p.values if isinstance(p, ComplexSpectrogram) else np.asarray(p)


def pack_cws(subband_specs, C: int, K: int) -> CwsTensor:
    """Stack per-channel, per-band spectrograms channel-major.

    ``subband_specs[c][k]`` is the spectrogram of audio channel ``c``, band ``k``.
    """
    if len(subband_specs) != C or any(len(row) != K for row in subband_specs):
        raise ShapeError(f"expected a {C}x{K} grid of spectrograms")
    planes = [_plane(p) for row in subband_specs for p in row]
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise ShapeError(f"spectrogram shapes disagree: {sorted(shapes)}")
    return CwsTensor(np.stack(planes), C, K)


def unpack_cws(tensor: CwsTensor, C: int, K: int):
    """Inverse of :func:`pack_cws`: returns ``[[plane(c, k) for k] for c]``."""
    values = tensor.values if isinstance(tensor, CwsTensor) else np.asarray(tensor)
    if values.shape[0] != C * K:
        raise ShapeError(f"tensor has {values.shape[0]} planes, expected C*K = {C * K}")
    return [[values[c * K + k] for k in range(K)] for c in range(C)]


def apply_mask(mask, mixture: CwsTensor) -> CwsTensor:
    """Scale each complex bin of ``mixture`` by the real mask value (phase kept)."""
    m = np.asarray(mask)
    if m.shape != mixture.values.shape:
        raise ShapeError(f"mask shape {m.shape} != mixture shape {mixture.values.shape}")
    return CwsTensor(m * mixture.values, mixture.C, mixture.K)


def to_network_input(cws: CwsTensor) -> np.ndarray:
    """``(2*C*K, F, T)`` real array: real parts first, then imaginary parts."""
    v = np.swapaxes(cws.values, 1, 2)
    return np.concatenate([v.real, v.imag], axis=0)


def from_network_planes(planes) -> np.ndarray:
    """Turn ``(P, F, T)`` network-side planes back to ``(P, T, F)``."""
    return np.swapaxes(np.asarray(planes), -1, -2)


class CwsTransform(TransformerMixin, BaseEstimator):
    """Full analysis chain: filter bank -> per-band STFT -> channel-wise stacking.

    ``transform`` takes a ``(C, n_samples)`` array and returns a
    :class:`CwsTensor`; ``inverse_transform`` runs per-band iSTFT and
    synthesis back to ``(C, n_samples)``. With ``n_bands=1`` the filter bank
    is bypassed entirely.
    """

    def __init__(self, n_bands=4, sample_rate=44100, frame_ms=FRAME_MS, hop_ms=HOP_MS,
                 taps=None, attenuation=None):
        self.n_bands = n_bands
        self.sample_rate = sample_rate
        self.frame_ms = frame_ms
        self.hop_ms = hop_ms
        self.taps = taps
        self.attenuation = attenuation

    def fit(self, X=None, y=None):
        K = check_band_count(self.n_bands)
        self.bank_ = design_filterbank(K, self.taps, self.attenuation)
        self.band_rate_ = self.sample_rate / K
        self.frame_len_, self.hop_ = framing(self.band_rate_, self.frame_ms, self.hop_ms)
        return self

    def band_length(self, n_samples):
        if self.bank_.K == 1:
            return n_samples
        return -(-(n_samples + self.bank_.taps - 1) // self.bank_.K)

    def min_samples(self):
        check_is_fitted(self, "bank_")
        need = self.frame_len_ * self.bank_.K
        return max(need, self.bank_.taps)

    def transform(self, X):
        check_is_fitted(self, "bank_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        grid = []
        for ch in X:
            bands = analyze(ch, self.bank_, self.sample_rate).bands
            grid.append([
                stft(b, self.band_rate_, frame_len=self.frame_len_, hop=self.hop_)
                for b in bands
            ])
        return pack_cws(grid, X.shape[0], self.bank_.K)

    def inverse_transform(self, cws: CwsTensor, length: int):
        check_is_fitted(self, "bank_")
        n_band = self.band_length(length)
        out = []
        for row in unpack_cws(cws, cws.C, cws.K):
            bands = np.stack([
                istft(ComplexSpectrogram(p, self.frame_len_, self.hop_, self.band_rate_), n_band)
                for p in row
            ])
            out.append(synthesize(SubbandSet(bands, self.sample_rate, cws.K, length), self.bank_))
        return np.stack(out)
