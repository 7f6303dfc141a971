"""Training objective, optimizer, augmentation sampler and the training loop.

The objective is ``L = L1 + Lc`` on complex CWS spectrograms:

* ``L1`` is the mean complex modulus of ``X_hat_j - X_j`` over both sources.
* ``Lc`` (``conservation="mixture"``) is the mean modulus of
  ``X_hat_1 + X_hat_2 - Y``; the ``"per_source"`` variant averages
  ``|X_hat_j - Y|`` over the sources instead.

Masks come out of the network as ``(B, 2P, F, T)`` with the vocal planes in
channels ``0..P-1`` and the accompaniment planes in ``P..2P-1``.
"""

from __future__ import annotations

import logging
import math
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, mix, slice_clip
from .config import DEFAULTS, TrainConfig
from .exceptions import BoundsError, NumericError, ShapeError
from .spectral import CwsTensor, CwsTransform, to_network_input

__all__ = [
    "AdamState",
    "Batch",
    "TrainRecord",
    "adam_step",
    "conservation_loss",
    "featurize",
    "fit",
    "l1_loss",
    "lr_at",
    "mask_loss",
    "sample_batch",
]

log = logging.getLogger(__name__)


def _values(x):
    return x.values if isinstance(x, CwsTensor) else np.asarray(x)


def l1_loss(est, ref) -> float:
    """Mean complex modulus of ``est[j] - ref[j]`` over all sources and bins."""
    if len(est) != len(ref):
        raise ShapeError(f"{len(est)} estimates for {len(ref)} references")
    diffs = []
    for e, r in zip(est, ref):
        e, r = _values(e), _values(r)
        if e.shape != r.shape:
            raise ShapeError(f"estimate shape {e.shape} != reference shape {r.shape}")
        diffs.append(np.abs(e - r))
    return float(np.mean(np.stack(diffs)))


def conservation_loss(est_vocal, est_acc, mixture, mode="mixture") -> float:
    """Penalty tying the two estimates to the mixture."""
    v, a, y = _values(est_vocal), _values(est_acc), _values(mixture)
    if not v.shape == a.shape == y.shape:
        raise ShapeError(f"shapes differ: {v.shape}, {a.shape}, {y.shape}")
    if mode == "mixture":
        return float(np.mean(np.abs(v + a - y)))
    if mode == "per_source":
        return float(np.mean(np.stack([np.abs(v - y), np.abs(a - y)])))
    raise ValueError(f"unknown conservation mode {mode!r}")


def _modulus_grad(diff, y):
    """d|diff|/dm for diff = m*y - const, with 0 at the kink."""
    mag = np.abs(diff)
    safe = np.where(mag > 0, mag, 1.0)
    return np.where(mag > 0, (np.conj(diff) * y).real / safe, 0.0)


def mask_loss(masks, mixture, vocal, acc, mode="mixture"):
    """Loss and gradient w.r.t. real masks for complex spectrogram batches.

    Parameters
    ----------
    masks : ndarray, shape (B, 2P, F, T)
    mixture, vocal, acc : complex ndarray, shape (B, P, F, T)

    Returns
    -------
    total, l1, lc : float
    grad : ndarray like ``masks``
    """
    P = mixture.shape[1]
    if masks.shape[1] != 2 * P or masks.shape[2:] != mixture.shape[2:]:
        raise ShapeError(f"mask shape {masks.shape} does not fit mixture {mixture.shape}")
    mv, ma = masks[:, :P], masks[:, P:]
    ev, ea = mv * mixture, ma * mixture
    n = mixture.size
    dv, da = ev - vocal, ea - acc
    l1 = (np.abs(dv).sum() + np.abs(da).sum()) / (2 * n)
    gv = _modulus_grad(dv, mixture) / (2 * n)
    ga = _modulus_grad(da, mixture) / (2 * n)
    if mode == "mixture":
        dc = ev + ea - mixture
        lc = np.abs(dc).sum() / n
        gc = _modulus_grad(dc, mixture) / n
        gv = gv + gc
        ga = ga + gc
    elif mode == "per_source":
        cv, ca = ev - mixture, ea - mixture
        lc = (np.abs(cv).sum() + np.abs(ca).sum()) / (2 * n)
        gv = gv + _modulus_grad(cv, mixture) / (2 * n)
        ga = ga + _modulus_grad(ca, mixture) / (2 * n)
    else:
        raise ValueError(f"unknown conservation mode {mode!r}")
    grad = np.concatenate([gv, ga], axis=1).astype(masks.dtype, copy=False)
    return float(l1 + lc), float(l1), float(lc), grad


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = DEFAULTS["train"].getfloat("adam_beta1")
    beta2: float = DEFAULTS["train"].getfloat("adam_beta2")
    eps: float = DEFAULTS["train"].getfloat("adam_eps")
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def lr_at(audio_seconds: float, cfg: TrainConfig) -> float:
    """Step decay: ``lr0 * decay_factor ** floor(consumed / decay_interval)``."""
    return cfg.lr0 * cfg.decay_factor ** math.floor(audio_seconds / cfg.decay_interval)


# -- data --------------------------------------------------------------------

class _StemCache:
    def __init__(self, index):
        self.index = index
        self._clips = {}

    def get(self, i):
        if i not in self._clips:
            self._clips[i] = self.index[i].load()
        return self._clips[i]


def _random_chunk(clip: AudioClip, seconds: float, rng) -> AudioClip:
    n = int(np.floor(seconds * clip.sample_rate + 0.5))
    if n > clip.n_samples:
        raise BoundsError(f"chunk of {n} samples longer than song of {clip.n_samples}")
    start = int(rng.integers(0, clip.n_samples - n + 1))
    return AudioClip(clip.samples[:, start : start + n], clip.sample_rate)


def sample_batch(index, rng, cfg: TrainConfig, cache=None, return_gains=False):
    """Draw one augmented training example.

    Vocals and accompaniment come from independently chosen songs and chunk
    offsets and are scaled by independent gains from
    ``U[cfg.gain_min, cfg.gain_max]``. Returns ``(mixture, vocal, acc)`` where
    ``vocal`` and ``acc`` are the *scaled* stems, so ``mixture = vocal + acc``.
    With ``return_gains`` the two gains are appended to the tuple.
    """
    if len(index) == 0:
        raise ValueError("dataset index is empty")
    cache = cache or _StemCache(index)
    iv = int(rng.integers(len(index)))
    ia = int(rng.integers(len(index)))
    vocal = _random_chunk(cache.get(iv)[1], cfg.chunk_seconds, rng)
    acc = _random_chunk(cache.get(ia)[2], cfg.chunk_seconds, rng)
    gv, ga = rng.uniform(cfg.gain_min, cfg.gain_max, size=2)
    vocal = AudioClip(np.float32(gv) * vocal.samples, vocal.sample_rate)
    acc = AudioClip(np.float32(ga) * acc.samples, acc.sample_rate)
    if return_gains:
        return mix(vocal, acc), vocal, acc, float(gv), float(ga)
    return mix(vocal, acc), vocal, acc


@dataclass
class Batch:
    inputs: np.ndarray  # (B, 2P, F, T) real
    mixture: np.ndarray  # (B, P, F, T) complex
    vocal: np.ndarray
    acc: np.ndarray
    seconds: float


def _planes(cws):
    return np.swapaxes(cws.values, 1, 2)


def featurize(triples, transform: CwsTransform, dtype=np.float64) -> Batch:
    """Turn ``(mixture, vocal, acc)`` clips into network inputs and complex targets."""
    xs, ys, vs, accs = [], [], [], []
    seconds = 0.0
    for mixture, vocal, acc in triples:
        y = transform.transform(mixture.samples)
        xs.append(to_network_input(y))
        ys.append(_planes(y))
        vs.append(_planes(transform.transform(vocal.samples)))
        accs.append(_planes(transform.transform(acc.samples)))
        seconds += mixture.duration
    return Batch(np.stack(xs).astype(dtype), np.stack(ys), np.stack(vs), np.stack(accs), seconds)


# -- training loop -------------------------------------------------------------

@dataclass
class TrainRecord:
    steps: int = 0
    audio_seconds: float = 0.0
    train: list = field(default_factory=list)  # (step, seconds, lr, loss)
    valid: list = field(default_factory=list)  # (step, seconds, loss)
    best_step: int | None = None
    best_valid: float = math.inf
    stop_reason: str = ""

    def to_log(self) -> str:
        """One line per step: ``step audio_seconds lr train_loss valid_loss``."""
        valid = {step: loss for step, _, loss in self.valid}
        lines = ["# step audio_seconds lr train_loss valid_loss"]
        for step, seconds, lr, loss in self.train:
            v = valid.get(step)
            lines.append(f"{step} {seconds!r} {lr!r} {loss!r} {'-' if v is None else repr(v)}")
        lines.append(f"# best_step {self.best_step} best_valid {self.best_valid!r}")
        lines.append(f"# stop_reason {self.stop_reason}")
        return "\n".join(lines) + "\n"


def _snapshot(net):
    return {k: v.copy() for k, v in list(net.named_params()) + list(net.named_buffers())}


def _restore(net, snap):
    for k, v in list(net.named_params()) + list(net.named_buffers()):
        v[...] = snap[k]


def _batches(index, cfg, transform, rng, dtype):
    cache = _StemCache(index)
    while True:
        triples = [sample_batch(index, rng, cfg, cache) for _ in range(cfg.batch_size)]
        yield featurize(triples, transform, dtype)


def _prefetched(gen, depth, stop):
    """Run ``gen`` in a producer thread with at most ``depth`` items in flight."""
    q = queue.Queue(maxsize=depth)

    def produce():
        try:
            for item in gen:
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        except BaseException as exc:  # surfaced to the consumer
            q.put(exc)

    thread = threading.Thread(target=produce, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if isinstance(item, BaseException):
            raise item
        yield item


def validation_loss(net, batches, mode):
    losses = []
    for b in batches:
        masks = net.forward(b.inputs, training=False)
        losses.append(mask_loss(masks, b.mixture, b.vocal, b.acc, mode)[0])
    net.clear()
    return float(np.mean(losses))


def fit(net, train_index, valid_index, cfg: TrainConfig, *, sample_rate=None, dtype=np.float64,
        on_improve=None, should_stop=None, validation_metric=None) -> TrainRecord:
    """Train ``net`` in place and leave the best-validation weights loaded.

    Each step samples ``cfg.batch_size`` augmented chunks, runs the CWS
    analysis (filter bank + STFT; synthesis is never used), the network, the
    ``L1 + Lc`` objective, backprop and Adam. Validation runs whenever another
    ``cfg.validate_interval`` seconds of audio have been consumed; training
    stops after ``cfg.patience`` validations without improvement, at
    ``cfg.max_steps``, or when ``should_stop()`` returns true.

    ``on_improve(net, record)`` is called after each new best validation.
    ``validation_metric(net)`` overrides the default validation loss.
    """
    if len(train_index) == 0 or len(valid_index) == 0:
        raise ValueError("training and validation indices must be nonempty")
    if sample_rate is None:
        sample_rate = train_index[0].load()[0].sample_rate
    transform = CwsTransform(cfg.K, sample_rate).fit()
    rng = np.random.default_rng(cfg.seed)
    net.set_dropout_rng(np.random.default_rng(cfg.seed + 1))

    vrng = np.random.default_rng(cfg.seed + 2)
    vcache = _StemCache(valid_index)
    valid_batches = [
        featurize([sample_batch(valid_index, vrng, cfg, vcache) for _ in range(cfg.batch_size)],
                  transform, dtype)
        for _ in range(cfg.validation_batches)
    ]
    if validation_metric is None:
        def validation_metric(model):
            return validation_loss(model, valid_batches, cfg.conservation)

    record = TrainRecord()
    state = AdamState()
    stop = threading.Event()
    source = _batches(train_index, cfg, transform, rng, dtype)
    if cfg.prefetch > 1:
        source = _prefetched(source, cfg.prefetch, stop)
    best = None
    stale = 0
    next_validation = cfg.validate_interval
    try:
        for batch in source:
            lr = lr_at(record.audio_seconds, cfg)
            masks = net.forward(batch.inputs, training=True)
            loss, l1, lc, grad = mask_loss(masks, batch.mixture, batch.vocal, batch.acc,
                                           cfg.conservation)
            if not math.isfinite(loss):
                finite = masks[np.isfinite(masks)]
                span = f"[{finite.min()}, {finite.max()}]" if finite.size else "none"
                raise NumericError(
                    f"non-finite loss at step {record.steps + 1}: L1={l1!r} Lc={lc!r}, "
                    f"{masks.size - finite.size} non-finite mask values, finite range {span}"
                )
            grads = net.backward(grad)
            adam_step(net.params(), grads, state, lr)
            record.steps += 1
            record.audio_seconds += batch.seconds
            record.train.append((record.steps, record.audio_seconds, lr, loss))

            if record.audio_seconds >= next_validation:
                while next_validation <= record.audio_seconds:
                    next_validation += cfg.validate_interval
                vloss = float(validation_metric(net))
                record.valid.append((record.steps, record.audio_seconds, vloss))
                log.info("step %d  train %.5f  valid %.5f  lr %.2e", record.steps, loss, vloss, lr)
                if vloss < record.best_valid:
                    record.best_valid = vloss
                    record.best_step = record.steps
                    best = _snapshot(net)
                    stale = 0
                    if on_improve is not None:
                        on_improve(net, record)
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        record.stop_reason = "early_stop"
                        break
            if record.steps >= cfg.max_steps:
                record.stop_reason = "max_steps"
                break
            if should_stop is not None and should_stop():
                record.stop_reason = "interrupted"
                break
    finally:
        stop.set()
        net.clear()
    if best is not None:
        _restore(net, best)
    return record
