"""Audio clips, RIFF/WAVE I/O and the on-disk separation dataset layout.

Samples are stored channel-major as ``(channels, n_samples)`` float32 arrays.
Only little-endian RIFF/WAVE files are handled, with 16-bit PCM, 24-bit PCM or
32-bit IEEE float payloads (``WAVE_FORMAT_EXTENSIBLE`` wrapping either is
accepted as well).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BoundsError,
    DatasetError,
    SampleRateError,
    ShapeError,
    UnsupportedFormatError,
    WavFormatError,
)

__all__ = [
    "AudioClip",
    "DatasetEntry",
    "DatasetIndex",
    "ENCODINGS",
    "index_dataset",
    "mix",
    "read_wav",
    "slice_clip",
    "write_wav",
]

_FORMAT_PCM = 0x0001
_FORMAT_IEEE_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE

# encoding name -> (format tag, bits per sample)
ENCODINGS = {
    "pcm16": (_FORMAT_PCM, 16),
    "pcm24": (_FORMAT_PCM, 24),
    "float32": (_FORMAT_IEEE_FLOAT, 32),
}

STEM_NAMES = ("mixture", "vocals", "accompaniment")


@dataclass(frozen=True)
class AudioClip:
    """Immutable multichannel signal.

    Parameters
    ----------
    samples : array_like, shape (channels, n_samples) or (n_samples,)
        Amplitudes, nominally within [-1, 1]. A 1-D array is treated as mono.
    sample_rate : int
        Sampling frequency in Hz.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        data = np.array(self.samples, dtype=np.float32, copy=True)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise ShapeError(f"samples must be 1-D or 2-D, got shape {data.shape}")
        if data.shape[0] < 1:
            raise ShapeError("a clip needs at least one channel")
        if not self.sample_rate or self.sample_rate <= 0:
            raise SampleRateError(f"sample_rate must be positive, got {self.sample_rate}")
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def __len__(self):
        return self.n_samples

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.samples.shape == other.samples.shape
            and bool(np.array_equal(self.samples, other.samples))
        )

    __hash__ = None


def _iter_chunks(buf: bytes):
    pos = 12
    while pos + 8 <= len(buf):
        chunk_id, size = struct.unpack_from("<4sI", buf, pos)
        body = buf[pos + 8 : pos + 8 + size]
        if len(body) < size and chunk_id != b"data":
            raise WavFormatError(f"truncated {chunk_id!r} chunk")
        yield chunk_id, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioClip:
    """Decode a RIFF/WAVE file into an :class:`AudioClip`.

    Integer PCM is divided by its full-scale value (32768 for 16-bit,
    8388608 for 24-bit), so the most negative code maps to exactly -1.0.
    """
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    for chunk_id, body in _iter_chunks(buf):
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            tag = fmt[0]
            if tag == _FORMAT_EXTENSIBLE:
                if len(body) < 40:
                    raise WavFormatError(f"{path}: extensible fmt chunk too short")
                tag = struct.unpack_from("<H", body, 24)[0]
                fmt = (tag,) + fmt[1:]
        elif chunk_id == b"data":
            data = body
    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise WavFormatError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate <= 0:
        raise WavFormatError(f"{path}: invalid header (channels={channels}, rate={rate})")
    if (tag, bits) not in ENCODINGS.values():
        raise UnsupportedFormatError(f"{path}: format tag {tag:#06x} with {bits} bits")
    width = bits // 8
    if block_align != width * channels:
        raise WavFormatError(f"{path}: block_align {block_align} != {width * channels}")

    n_frames = len(data) // block_align
    raw = np.frombuffer(data, dtype=np.uint8, count=n_frames * block_align)
    if tag == _FORMAT_IEEE_FLOAT:
        flat = raw.view("<f4")
    elif bits == 16:
        flat = raw.view("<i2").astype(np.float32) / 32768.0
    else:
        b = raw.reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        flat = ints.astype(np.float32) / 8388608.0
    samples = flat.reshape(n_frames, channels).T
    return AudioClip(samples, rate)


def _encode(samples: np.ndarray, encoding: str) -> bytes:
    interleaved = np.ascontiguousarray(samples.T)
    if encoding == "float32":
        return interleaved.astype("<f4").tobytes()
    if encoding == "pcm16":
        q = np.clip(np.round(interleaved.astype(np.float64) * 32768.0), -32768, 32767)
        return q.astype("<i2").tobytes()
    q = np.clip(np.round(interleaved.astype(np.float64) * 8388608.0), -8388608, 8388607)
    q = q.astype("<i4").reshape(-1, 1).view(np.uint8)
    return q[:, :3].tobytes()


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write ``clip`` to ``path``; PCM encodings saturate out-of-range values."""
    if encoding not in ENCODINGS:
        raise UnsupportedFormatError(f"unknown encoding {encoding!r}")
    tag, bits = ENCODINGS[encoding]
    width = bits // 8
    payload = _encode(clip.samples, encoding)
    fmt = struct.pack(
        "<HHIIHH",
        tag,
        clip.channels,
        clip.sample_rate,
        clip.sample_rate * clip.channels * width,
        clip.channels * width,
        bits,
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def _index(seconds: float, rate: int) -> int:
    return int(np.floor(seconds * rate + 0.5))


def slice_clip(clip: AudioClip, start: float, duration: float) -> AudioClip:
    """Copy ``round(duration * fs)`` samples starting at ``round(start * fs)``."""
    first = _index(start, clip.sample_rate)
    count = _index(duration, clip.sample_rate)
    if start < 0 or duration < 0 or first + count > clip.n_samples:
        raise BoundsError(
            f"window [{first}, {first + count}) outside clip of {clip.n_samples} samples"
        )
    return AudioClip(clip.samples[:, first : first + count], clip.sample_rate)


def mix(a: AudioClip, b: AudioClip, gain_a: float = 1.0, gain_b: float = 1.0) -> AudioClip:
    """Return ``gain_a * a + gain_b * b`` with no clipping or normalization."""
    if a.sample_rate != b.sample_rate:
        raise SampleRateError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")
    if a.samples.shape != b.samples.shape:
        raise ShapeError(f"clip shapes differ: {a.samples.shape} vs {b.samples.shape}")
    out = np.float32(gain_a) * a.samples + np.float32(gain_b) * b.samples
    return AudioClip(out, a.sample_rate)


@dataclass(frozen=True)
class DatasetEntry:
    song: str
    mixture: Path
    vocals: Path
    accompaniment: Path

    def load(self):
        """Load (mixture, vocals, accompaniment) and check they line up."""
        clips = tuple(read_wav(p) for p in (self.mixture, self.vocals, self.accompaniment))
        rates = {c.sample_rate for c in clips}
        shapes = {c.samples.shape for c in clips}
        if len(rates) != 1:
            raise SampleRateError(f"{self.song}: stems have sample rates {sorted(rates)}")
        if len(shapes) != 1:
            raise ShapeError(f"{self.song}: stems have shapes {sorted(shapes)}")
        return clips


@dataclass
class DatasetIndex:
    split: str
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def index_dataset(root, split: str) -> DatasetIndex:
    """Enumerate ``<root>/<split>/<song>/{mixture,vocals,accompaniment}.wav``.

    A song directory missing any of the three stems raises :class:`DatasetError`.
    """
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DatasetError(f"no such split directory: {split_dir}")
    entries = []
    for song_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        paths = [song_dir / f"{name}.wav" for name in STEM_NAMES]
        missing = [p.name for p in paths if not p.is_file()]
        if missing:
            raise DatasetError(f"{song_dir}: missing {', '.join(missing)}")
        entries.append(DatasetEntry(song_dir.name, *paths))
    return DatasetIndex(split, entries)


def write_song(root, split: str, song: str, vocals: AudioClip, accompaniment: AudioClip,
               encoding: str = "float32") -> Path:
    """Lay a song out on disk in the dataset format (mixture = vocals + accompaniment)."""
    song_dir = Path(root) / split / song
    os.makedirs(song_dir, exist_ok=True)
    write_wav(song_dir / "vocals.wav", vocals, encoding)
    write_wav(song_dir / "accompaniment.wav", accompaniment, encoding)
    write_wav(song_dir / "mixture.wav", mix(vocals, accompaniment), encoding)
    return song_dir
