import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwsep.audio import AudioClip, read_wav, write_wav
from cwsep.exceptions import IncompatibleCheckpointError, ShapeError
from cwsep.nn import build_unet
from cwsep.nn.checkpoint import save_checkpoint
from cwsep.pipeline import (
    SeparationJob,
    constant_masks,
    oracle_masks,
    separate,
    separate_signal,
    separate_with_masks,
)
from cwsep.spectral import CwsTransform

SR = 8000


def snr_db(ref, est):
    return 10 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))


def two_tone(seconds=2.0, sr=SR, f=(440.0, 1230.0)):
    t = np.arange(int(seconds * sr)) / sr
    return 0.4 * np.sin(2 * np.pi * f[0] * t)[None], 0.3 * np.sin(2 * np.pi * f[1] * t)[None]


@pytest.mark.parametrize("K", [1, 2, 4, 8])
def test_identity_zero_and_half_masks(K, rng):
    x = 0.3 * rng.standard_normal((2, SR * 2))
    v, a = separate_signal(x, SR, K, constant_masks(1.0, 0.0))
    assert snr_db(x, v) >= 60
    assert np.all(a == 0)
    v, a = separate_signal(x, SR, K, constant_masks(0.5, 0.5))
    assert snr_db(x, v + a) >= 60


@settings(max_examples=12, deadline=None)
@given(K=st.sampled_from([1, 2, 4, 8]), n=st.integers(2000, 9000), channels=st.integers(1, 2))
def test_output_length_matches_input(K, n, channels):
    x = np.random.default_rng(n).standard_normal((channels, n))
    v, a = separate_signal(x, SR, K, constant_masks(0.3, 0.7), segment_s=0.6, crossfade_s=0.1)
    assert v.shape == a.shape == x.shape


def test_too_short_input_is_rejected():
    with pytest.raises(ShapeError):
        separate_signal(np.zeros((1, 10)), SR, 8, constant_masks())


@pytest.mark.parametrize("K", [1, 4])
def test_segmented_matches_single_pass(K, rng):
    x = 0.3 * rng.standard_normal((1, SR * 7))
    fn = constant_masks(0.7, 0.3)
    whole = separate_signal(x, SR, K, fn, segment_s=100.0)
    parts = separate_signal(x, SR, K, fn, segment_s=2.0, crossfade_s=0.25)
    for w, p in zip(whole, parts):
        assert np.max(np.abs(w - p)) <= 1e-4


def test_constant_input_survives_crossfades_exactly_at_k1():
    x = np.full((1, SR * 5), 0.5)
    v, _ = separate_signal(x, SR, 1, constant_masks(1.0, 0.0), segment_s=2.0, crossfade_s=0.5)
    assert np.max(np.abs(v - x)) <= 1e-4


@pytest.mark.parametrize("K", [1, 2, 4, 8])
def test_oracle_masks_on_two_tones(K):
    vocal, acc = two_tone()
    mixture = vocal + acc
    masks = oracle_masks(mixture, vocal, acc, K, SR)
    v, a = separate_with_masks(mixture, masks, K, SR)
    assert snr_db(vocal, v) >= 20 and snr_db(acc, a) >= 20
    assert 0 <= masks.vocal.min() and masks.vocal.max() <= 1


def test_oracle_mask_edge_cases(rng):
    x = rng.standard_normal((1, SR))
    silent = oracle_masks(x, np.zeros_like(x), x, 2, SR)
    assert np.all(silent.vocal == 0)
    same = oracle_masks(2 * x, x, x, 2, SR)
    mag = np.abs(CwsTransform(2, SR).fit().transform(x).values)
    big = mag > 1e-3  # away from bins where eps matters
    assert big.mean() > 0.99
    np.testing.assert_allclose(same.vocal[big], 0.5, atol=1e-6)
    np.testing.assert_array_equal(same.vocal, same.accompaniment)
    with pytest.raises(ShapeError):
        oracle_masks(x, x[:, :-1], x[:, :-1], 2, SR)


@pytest.fixture
def mixture_wav(tmp_path, rng):
    path = tmp_path / "mix.wav"
    write_wav(path, AudioClip((0.2 * rng.standard_normal((2, SR * 2))).astype(np.float32), SR))
    return path


def test_job_with_identity_mask_writes_outputs(tmp_path, mixture_wav):
    outs = {"vocals": tmp_path / "v.wav", "accompaniment": tmp_path / "a.wav"}
    job = SeparationJob(mixture_wav, K=2, outputs=outs, mask_fn=constant_masks(1.0, 0.0))
    v, a = separate(job)
    assert read_wav(outs["vocals"]) == v
    assert snr_db(read_wav(mixture_wav).samples, read_wav(outs["vocals"]).samples) >= 60


def test_job_with_checkpoint(tmp_path, mixture_wav):
    net = build_unet(1, 2, 8, 8, dtype=np.float32)
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, net, {"K": 2, "sample_rate": SR, "channels": 2})
    v, a = separate(SeparationJob(mixture_wav, checkpoint=ckpt))
    assert v.samples.shape == a.samples.shape == (2, SR * 2)
    assert np.all(np.isfinite(v.samples))
    with pytest.raises(IncompatibleCheckpointError):
        separate(SeparationJob(mixture_wav, checkpoint=ckpt, K=4))
    save_checkpoint(ckpt, net, {"K": 1})
    with pytest.raises(IncompatibleCheckpointError):
        separate(SeparationJob(mixture_wav, checkpoint=ckpt))
    save_checkpoint(ckpt, net, {})
    with pytest.raises(IncompatibleCheckpointError):
        separate(SeparationJob(mixture_wav, checkpoint=ckpt))
