"""Estimator-style wrapper tying training, checkpoints and separation together."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .nn.builders import build_network
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .pipeline import CROSSFADE_S, SEGMENT_S, network_masks, separate_signal
from .training import fit as train_network
from .validation import check_band_count

__all__ = ["CWSSeparator", "build_model"]


def build_model(cfg: TrainConfig, channels: int, dtype=np.float32):
    """Network sized for ``channels`` audio channels at ``cfg.K`` bands (2CK in, 2CK out)."""
    planes = 2 * channels * cfg.K
    return build_network(cfg.model_config(), planes, planes, dropout=cfg.dropout, dtype=dtype,
                         seed=cfg.seed)


class CWSSeparator(BaseEstimator):
    """Vocal/accompaniment separator working on channel-wise subband spectrograms.

    Parameters
    ----------
    train_config : TrainConfig, optional
        Hyperparameters; the defaults are used when omitted.
    dtype : str
        Floating type for the network weights during training and inference.
    segment_s, crossfade_s : float
        Segmentation of long inputs at prediction time.
    """

    def __init__(self, train_config=None, dtype="float32", segment_s=SEGMENT_S,
                 crossfade_s=CROSSFADE_S):
        self.train_config = train_config
        self.dtype = dtype
        self.segment_s = segment_s
        self.crossfade_s = crossfade_s

    def _config(self):
        return self.train_config if self.train_config is not None else TrainConfig()

    def fit(self, X, y=None, **fit_params):
        """Train on ``X``, a training :class:`DatasetIndex`; ``y`` is the validation index."""
        if y is None:
            raise ValueError("a validation index is required (pass it as y)")
        cfg = self._config()
        mixture = X[0].load()[0]
        self.sample_rate_ = mixture.sample_rate
        self.channels_ = mixture.channels
        self.n_bands_ = check_band_count(cfg.K)
        self.net_ = build_model(cfg, self.channels_, np.dtype(self.dtype))
        self.record_ = train_network(self.net_, X, y, cfg, sample_rate=self.sample_rate_,
                                     dtype=np.dtype(self.dtype), **fit_params)
        return self

    def predict(self, X):
        """Separate a ``(C, N)`` array or clip into ``(vocal, accompaniment)`` arrays."""
        check_is_fitted(self, "net_")
        samples = np.atleast_2d(np.asarray(getattr(X, "samples", X), dtype=np.float64))
        if samples.shape[0] != self.channels_:
            raise ValueError(f"model expects {self.channels_} channels, got {samples.shape[0]}")
        return separate_signal(samples, self.sample_rate_, self.n_bands_,
                               network_masks(self.net_), self.segment_s, self.crossfade_s)

    def checkpoint_extra(self, **more):
        return {"K": self.n_bands_, "sample_rate": self.sample_rate_,
                "channels": self.channels_, **more}

    def save(self, path, **extra):
        check_is_fitted(self, "net_")
        save_checkpoint(path, self.net_, self.checkpoint_extra(**extra))
        return path

    @classmethod
    def load(cls, path, **params):
        """Rebuild a fitted separator from a checkpoint."""
        est = cls(**params)
        est.net_, extra = load_checkpoint(path, dtype=np.dtype(est.dtype))
        est.n_bands_ = int(extra["K"])
        est.sample_rate_ = extra["sample_rate"]
        est.channels_ = int(extra["channels"])
        return est
