"""Synthetic toy stems: tonal "vocals" over noise "accompaniment"."""

from __future__ import annotations

import numpy as np

from .audio import AudioClip, write_song

__all__ = ["tonal_stem", "noise_stem", "make_toy_dataset"]


def tonal_stem(seconds, sample_rate, rng, channels=1, n_notes=None):
    """Harmonic notes with vibrato and a soft attack/release envelope."""
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    n_notes = n_notes or max(1, int(seconds * 2))
    edges = np.linspace(0, n, n_notes + 1).astype(int)
    out = np.zeros(n)
    for a, b in zip(edges[:-1], edges[1:]):
        f0 = rng.uniform(180.0, 520.0)
        vib = 1 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t[a:b])
        phase = 2 * np.pi * np.cumsum(f0 * vib) / sample_rate
        note = sum(np.sin(h * phase) / h for h in range(1, 5) if h * f0 < sample_rate / 2.2)
        env = np.minimum(1.0, np.minimum(np.arange(b - a), np.arange(b - a)[::-1]) / (0.02 * sample_rate))
        out[a:b] = note * env
    out *= 0.3 / (np.sqrt(np.mean(out**2)) + 1e-12)
    gains = rng.uniform(0.8, 1.0, size=channels)
    return AudioClip((gains[:, None] * out).astype(np.float32), sample_rate)


def noise_stem(seconds, sample_rate, rng, channels=1):
    """Lightly low-passed white noise, independent per channel."""
    n = int(round(seconds * sample_rate))
    x = rng.standard_normal((channels, n))
    x[:, 1:] += 0.5 * x[:, :-1]
    x *= 0.3 / np.sqrt(np.mean(x**2))
    return AudioClip(x.astype(np.float32), sample_rate)


def make_toy_dataset(root, n_songs=2, seconds=4.0, sample_rate=8000, channels=1, seed=0,
                     splits=("train", "valid")):
    """Write ``n_songs`` toy songs into each split under ``root``; returns ``root``."""
    rng = np.random.default_rng(seed)
    for split in splits:
        for i in range(n_songs):
            vocals = tonal_stem(seconds, sample_rate, rng, channels)
            acc = noise_stem(seconds, sample_rate, rng, channels)
            write_song(root, split, f"song{i:02d}", vocals, acc)
    return root
