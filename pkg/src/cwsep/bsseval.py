"""Source-separation metrics (SDR/SIR/SAR) from orthogonal projections.

Projections are time-invariant: the target component is the projection of
the estimate onto the target reference, the interference is whatever the
span of all references adds on top of that, and the remainder is artifact.
Metrics are computed per window and per channel, averaged over channels,
averaged over valid windows within a song, and the median is taken over songs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULTS
from .exceptions import ShapeError, UndefinedReferenceError

__all__ = [
    "Decomposition",
    "Metrics",
    "SongScore",
    "TestSetScore",
    "aggregate",
    "decompose",
    "eval_windowed",
    "format_report",
    "metrics",
    "window_count",
]

log = logging.getLogger(__name__)

_E = DEFAULTS["eval"]
CAP_DB = _E.getfloat("cap_db")
WINDOW_S = _E.getfloat("window_s")
HOP_S = _E.getfloat("hop_s")
METRICS = ("sdr", "sir", "sar")


@dataclass
class Decomposition:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_artif: np.ndarray


@dataclass
class Metrics:
    sdr: float
    sir: float
    sar: float
    capped: tuple = ()  # names of metrics that hit the cap


def _as_refs(refs, n):
    R = np.stack([np.asarray(r, dtype=np.float64) for r in refs], axis=1)
    if R.shape[0] != n:
        raise ShapeError(f"references have {R.shape[0]} samples, estimate has {n}")
    return R


def decompose(est, refs, target: int) -> Decomposition:
    """Split ``est`` into target, interference and artifact components.

    Raises :class:`UndefinedReferenceError` if any reference has zero energy.
    """
    est = np.asarray(est, dtype=np.float64)
    if est.ndim != 1:
        raise ShapeError("decompose works on 1-D signals")
    R = _as_refs(refs, est.size)
    energy = np.einsum("nj,nj->j", R, R)
    if np.any(energy == 0):
        raise UndefinedReferenceError("a reference has zero energy in this window")
    r = R[:, target]
    s_target = (r @ est / energy[target]) * r
    coef, *_ = np.linalg.lstsq(R, est, rcond=None)
    p_all = R @ coef
    return Decomposition(s_target, p_all - s_target, est - p_all)


def _ratio_db(num, den):
    if den <= 0:
        return CAP_DB, True
    if num <= 0:
        return -CAP_DB, True
    v = 10.0 * math.log10(num / den)
    if abs(v) > CAP_DB:
        return math.copysign(CAP_DB, v), True
    return v, False


def metrics(d: Decomposition) -> Metrics:
    """SDR, SIR and SAR in dB, clamped to ``[-CAP_DB, CAP_DB]``."""
    st, ei, ea = d.s_target, d.e_interf, d.e_artif
    out, capped = {}, []
    pairs = {
        "sdr": (st @ st, (ei + ea) @ (ei + ea)),
        "sir": (st @ st, ei @ ei),
        "sar": ((st + ei) @ (st + ei), ea @ ea),
    }
    for name, (num, den) in pairs.items():
        out[name], hit = _ratio_db(num, den)
        if hit:
            capped.append(name)
    return Metrics(capped=tuple(capped), **out)


def window_count(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


@dataclass
class SongScore:
    song: str
    target: int
    rows: list = field(default_factory=list)  # (window, channel, metric, value)
    windows: dict = field(default_factory=dict)  # window -> {metric: channel-mean}
    n_windows: int = 0
    skipped: list = field(default_factory=list)

    @property
    def valid(self):
        return bool(self.windows)

    def mean(self, metric):
        vals = [w[metric] for w in self.windows.values()]
        return float(np.mean(vals)) if vals else math.nan


@dataclass
class TestSetScore:
    songs: list
    medians: dict  # metric -> median over valid songs


def _channels(x):
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def eval_windowed(est, refs, target: int, sample_rate: float, window_s: float = WINDOW_S,
                  hop_s: float = HOP_S, song: str = "") -> SongScore:
    """Windowed metrics of ``est`` against ``refs[target]``.

    ``est`` and each reference are ``(C, N)`` arrays or clips. A window is
    skipped when no channel has a valid decomposition there.
    """
    e = _channels(est)
    R = [_channels(r) for r in refs]
    for r in R:
        if r.shape != e.shape:
            raise ShapeError(f"reference shape {r.shape} != estimate shape {e.shape}")
    win = int(math.floor(window_s * sample_rate + 0.5))
    hop = int(math.floor(hop_s * sample_rate + 0.5))
    n = window_count(e.shape[1], win, hop)
    score = SongScore(song, target, n_windows=n)
    for w in range(n):
        sl = slice(w * hop, w * hop + win)
        per_channel = []
        for c in range(e.shape[0]):
            try:
                d = decompose(e[c, sl], [r[c, sl] for r in R], target)
            except UndefinedReferenceError:
                continue
            m = metrics(d)
            per_channel.append(m)
            for name in METRICS:
                score.rows.append((w, c, name, getattr(m, name)))
        if not per_channel:
            score.skipped.append(w)
            continue
        score.windows[w] = {name: float(np.mean([getattr(m, name) for m in per_channel]))
                            for name in METRICS}
    if not score.valid:
        log.warning("song %r has no valid windows and is excluded", song)
    return score


def aggregate(songs) -> TestSetScore:
    """Per-song mean over windows, then the median over songs."""
    songs = list(songs)
    if not songs:
        raise ValueError("no songs to aggregate")
    valid = [s for s in songs if s.valid]
    medians = {name: float(np.median([s.mean(name) for s in valid])) if valid else math.nan
               for name in METRICS}
    return TestSetScore(songs, medians)


SUMMARY_COLUMNS = ("SAR(A)", "SAR(V)", "SDR(A)", "SDR(V)", "SIR(A)", "SIR(V)")


def summary_table(vocals: TestSetScore, accompaniment: TestSetScore) -> dict:
    """The six source/metric medians plus their average."""
    table = {}
    for col in SUMMARY_COLUMNS:
        metric, src = col[:3].lower(), col[4]
        table[col] = (accompaniment if src == "A" else vocals).medians[metric]
    table["Average"] = float(np.mean(list(table.values())))
    return table


def format_report(vocal_songs, acc_songs) -> str:
    """Line-oriented report: per-window rows, then a summary block.

    Rows are ``song window channel source metric value_db`` (tab separated).
    """
    lines = ["# projections: time-invariant least squares",
             "# song\twindow\tchannel\tsource\tmetric\tvalue_db"]
    for label, songs in (("V", vocal_songs), ("A", acc_songs)):
        for s in songs:
            for w, c, name, v in s.rows:
                lines.append(f"{s.song}\t{w}\t{c}\t{label}\t{name.upper()}\t{v:.6f}")
            for w in s.skipped:
                lines.append(f"# {s.song} source {label} window {w} skipped (silent reference)")
    table = summary_table(aggregate(vocal_songs), aggregate(acc_songs))
    lines.append("# summary (median over songs of per-song window means, dB)")
    lines.append("\t".join(table))
    lines.append("\t".join(f"{v:.4f}" for v in table.values()))
    return "\n".join(lines) + "\n"
