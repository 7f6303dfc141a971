"""Cosine-modulated (pseudo-QMF) uniform FIR filter banks.

A single linear-phase lowpass prototype is designed with a Kaiser window and
its cutoff tuned so that the power sum of the modulated bands is as flat as
possible. The K analysis filters split a signal into critically decimated
subbands; the matching synthesis filters zero-stuff, filter and sum them back
to full rate with near-perfect reconstruction.

The analysis/synthesis pair is also exposed as a scikit-learn transformer,
:class:`FilterBank`, whose ``transform`` is the analysis stage and whose
``inverse_transform`` is the synthesis stage.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import kaiser_beta, upfirdn
from scipy.signal.windows import kaiser
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import DEFAULTS
from .exceptions import DesignError, ShapeError, UndefinedReferenceError
from .validation import check_band_count, check_signal

__all__ = [
    "FilterBank",
    "FilterBankPair",
    "PrototypeFilter",
    "SubbandSet",
    "SNR_CAP_DB",
    "analyze",
    "default_taps",
    "design_filterbank",
    "load_filterbank",
    "reconstruction_snr",
    "save_filterbank",
    "synthesize",
]

SNR_CAP_DB = DEFAULTS["eval"].getfloat("cap_db")
_GRID = 1 << 14


@dataclass(frozen=True)
class PrototypeFilter:
    taps: np.ndarray
    cutoff: float  # fraction of Nyquist
    stopband_attenuation: float  # dB, measured from pi/K upward


@dataclass(frozen=True)
class FilterBankPair:
    K: int
    analysis: np.ndarray  # (K, L)
    synthesis: np.ndarray  # (K, L)
    group_delay: int
    attenuation: float
    prototype: PrototypeFilter | None = None

    @property
    def taps(self) -> int:
        return self.analysis.shape[1]


@dataclass(frozen=True)
class SubbandSet:
    """Critically decimated subbands of one channel.

    ``bands`` has shape ``(K, M)`` with ``M = ceil((length + L - 1) / K)``: the
    filter tails are kept so synthesis can rebuild the last samples.
    """

    bands: np.ndarray
    source_rate: float
    K: int
    length: int

    @property
    def rate(self) -> float:
        return self.source_rate / self.K


def default_taps(K: int) -> int:
    fb = DEFAULTS["filterbank"]
    if K == 1:
        return 1
    return max(fb.getint("min_taps"), fb.getint("taps_per_band") * K)


def _kaiser_lowpass(L, cutoff, beta):
    n = np.arange(L) - (L - 1) / 2.0
    return cutoff * np.sinc(cutoff * n) * kaiser(L, beta)


def _modulate(p, K):
    L = len(p)
    n = np.arange(L) - (L - 1) / 2.0
    k = np.arange(K)[:, None]
    phase = np.pi / K * (k + 0.5) * n
    offset = (-1.0) ** k * np.pi / 4
    return 2 * p * np.cos(phase + offset), 2 * p * np.cos(phase - offset)


def _power_ripple(p, K):
    H, _ = _modulate(p, K)
    power = (np.abs(np.fft.rfft(H, _GRID, axis=1)) ** 2).sum(axis=0)
    return power.max() - power.min()


def _stopband_attenuation(p, K):
    mag = np.abs(np.fft.rfft(p, _GRID))
    w = np.linspace(0.0, 1.0, mag.size)
    return float(-20 * np.log10(mag[w >= 1.0 / K].max() / mag[0]))


@functools.lru_cache(maxsize=32)
def _design(K, L, attenuation):
    beta = kaiser_beta(attenuation)
    centre = 1.0 / (2 * K)
    res = minimize_scalar(
        lambda c: _power_ripple(_kaiser_lowpass(L, c, beta), K),
        bounds=(0.7 * centre, 1.3 * centre),
        method="bounded",
        options={"xatol": 1e-12},
    )
    cutoff = float(res.x)
    p = _kaiser_lowpass(L, cutoff, beta)
    achieved = _stopband_attenuation(p, K)
    if achieved < attenuation:
        raise DesignError(
            f"{L} taps reach only {achieved:.1f} dB stopband attenuation for K={K} "
            f"(requested {attenuation:.1f} dB)",
            achieved,
        )
    H, G = _modulate(p, K)
    gain = np.abs((np.fft.rfft(H, _GRID, axis=1) * np.fft.rfft(G, _GRID, axis=1)).sum(axis=0))
    scale = np.sqrt(K / gain.mean())
    p = p * scale
    H, G = H * scale, G * scale
    for arr in (p, H, G):
        arr.setflags(write=False)
    return p, cutoff, achieved, H, G


def design_filterbank(K: int, taps: int | None = None, attenuation: float | None = None) -> FilterBankPair:
    """Design a K-band pseudo-QMF analysis/synthesis pair.

    Parameters
    ----------
    K : {1, 2, 4, 8}
        Number of bands. ``K=1`` returns the identity bank (a unit impulse,
        zero delay).
    taps : int, optional
        Filter length L; must be even and a multiple of 2K. Defaults to
        ``max(64, 32 * K)``.
    attenuation : float, optional
        Required prototype stopband attenuation in dB (>= 40), measured from
        the band edge pi/K upward.

    Raises
    ------
    DesignError
        If the Kaiser prototype cannot reach ``attenuation`` with ``taps`` taps.
    """
    K = check_band_count(K)
    if attenuation is None:
        attenuation = DEFAULTS["filterbank"].getfloat("attenuation_db")
    if K == 1:
        unit = np.ones((1, 1))
        unit.setflags(write=False)
        return FilterBankPair(1, unit, unit, 0, float(attenuation))
    L = default_taps(K) if taps is None else int(taps)
    if L <= 0 or L % (2 * K):
        raise ValueError(f"taps must be a positive multiple of 2K={2 * K}, got {L}")
    if attenuation < 40:
        raise ValueError(f"attenuation must be at least 40 dB, got {attenuation}")
    p, cutoff, achieved, H, G = _design(K, L, float(attenuation))
    proto = PrototypeFilter(p, cutoff, achieved)
    return FilterBankPair(K, H, G, L - 1, float(attenuation), proto)


def analyze(signal, bank: FilterBankPair, sample_rate: float = 1.0) -> SubbandSet:
    """Filter ``signal`` with every analysis filter and keep every K-th sample."""
    x = check_signal(signal, min_length=1 if bank.K == 1 else bank.taps)
    if bank.K == 1:
        return SubbandSet(x[np.newaxis, :].copy(), sample_rate, 1, x.size)
    bands = np.stack([upfirdn(h, x, up=1, down=bank.K) for h in bank.analysis])
    return SubbandSet(bands, sample_rate, bank.K, x.size)


def synthesize(subbands: SubbandSet, bank: FilterBankPair, length: int | None = None) -> np.ndarray:
    """Zero-stuff, filter and sum the bands, then undo the cascade delay.

    The output is advanced by ``bank.group_delay`` samples so that it lines up
    with the signal given to :func:`analyze`, and cut to ``length`` (default:
    the original length recorded in ``subbands``).
    """
    bands = np.asarray(subbands.bands, dtype=np.float64)
    if bands.ndim != 2 or bands.shape[0] != bank.K or subbands.K != bank.K:
        raise ShapeError(f"expected {bank.K} bands, got array of shape {bands.shape}")
    n = subbands.length if length is None else int(length)
    if bank.K == 1:
        out = bands[0]
    else:
        out = sum(upfirdn(g, y, up=bank.K) for g, y in zip(bank.synthesis, bands))
        out = out[bank.group_delay :]
    if out.size < n:
        out = np.concatenate([out, np.zeros(n - out.size)])
    return out[:n].copy()


def reconstruction_snr(original, reconstructed) -> float:
    """``10 log10(sum(x^2) / sum((x - y)^2))`` in dB, capped at ``SNR_CAP_DB``."""
    x = np.asarray(original, dtype=np.float64)
    y = np.asarray(reconstructed, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {y.shape}")
    signal = np.sum(x**2)
    if signal == 0:
        raise UndefinedReferenceError("reference signal is all zeros")
    noise = np.sum((x - y) ** 2)
    if noise == 0:
        return SNR_CAP_DB
    return float(min(10 * np.log10(signal / noise), SNR_CAP_DB))


def save_filterbank(path, bank: FilterBankPair) -> None:
    """Write ``K L attenuation`` then one line of coefficients per filter."""
    lines = [f"{bank.K} {bank.taps} {bank.attenuation:.17g}"]
    for row in np.vstack([bank.analysis, bank.synthesis]):
        lines.append(" ".join(f"{c:.17g}" for c in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_filterbank(path) -> FilterBankPair:
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    if not rows or len(rows[0]) != 3:
        raise ValueError(f"{path}: missing 'K L attenuation' header")
    K, L, attenuation = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
    K = check_band_count(K)
    coeffs = rows[1:]
    if len(coeffs) != 2 * K or any(len(r) != L for r in coeffs):
        raise ValueError(f"{path}: expected {2 * K} rows of {L} coefficients")
    arr = np.array(coeffs, dtype=np.float64)
    arr.setflags(write=False)
    return FilterBankPair(K, arr[:K], arr[K:], 0 if K == 1 else L - 1, attenuation)


class FilterBank(TransformerMixin, BaseEstimator):
    """Uniform filter-bank analysis as a scikit-learn transformer.

    ``transform`` maps an array of shape ``(n_channels, n_samples)`` (or a
    1-D signal) to ``(n_channels, K, M)`` decimated subbands.
    ``inverse_transform`` rebuilds the full-rate signal at the length seen by
    the last call to ``transform``, unless ``length`` is passed.

    Parameters
    ----------
    n_bands : int, default=4
    taps : int or None
    attenuation : float or None
    """

    def __init__(self, n_bands=4, taps=None, attenuation=None):
        self.n_bands = n_bands
        self.taps = taps
        self.attenuation = attenuation

    def fit(self, X=None, y=None):
        self.bank_ = design_filterbank(self.n_bands, self.taps, self.attenuation)
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 1
        X = np.atleast_2d(X)
        out = np.stack([analyze(ch, self.bank_).bands for ch in X])
        self.length_ = X.shape[-1]
        return out[0] if squeeze else out

    def inverse_transform(self, Xt, length=None):
        check_is_fitted(self, "bank_")
        Xt = np.asarray(Xt, dtype=np.float64)
        squeeze = Xt.ndim == 2
        if squeeze:
            Xt = Xt[np.newaxis]
        n = length if length is not None else getattr(self, "length_", None)
        if n is None:
            raise ValueError("length unknown: pass length= or call transform first")
        out = np.stack([synthesize(SubbandSet(b, 1.0, self.bank_.K, n), self.bank_) for b in Xt])
        return out[0] if squeeze else out
