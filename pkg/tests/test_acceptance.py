"""End-to-end acceptance checks; the terminal summary lists one line per criterion."""

import time

import numpy as np
import pytest

from cwsep.audio import index_dataset
from cwsep.bsseval import SongScore, aggregate, decompose, eval_windowed, metrics
from cwsep.config import TrainConfig
from cwsep.filterbank import analyze, design_filterbank, reconstruction_snr, synthesize
from cwsep.nn import build_mdensenet, build_network, build_unet, count_flops, count_params
from cwsep.pipeline import oracle_masks, separate_with_masks
from cwsep.separator import CWSSeparator
from cwsep.spectral import CwsTransform, istft, pack_cws, stft, unpack_cws
from cwsep.synthetic import make_toy_dataset, tonal_stem
from cwsep.training import conservation_loss, l1_loss, mask_loss
from gradcheck import check_gradients

SR = 44100


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def music_excerpt(seconds=5.0, sr=SR, seed=11):
    """Melody, bass line and decaying noise hits, loosely like a band."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sr)
    t = np.arange(n) / sr
    melody = tonal_stem(seconds, sr, rng, n_notes=10).samples[0].astype(np.float64)
    bass = 0.3 * np.sin(2 * np.pi * 55 * t) * (1 + 0.5 * np.sin(2 * np.pi * 0.5 * t))
    hits = np.zeros(n)
    for start in range(0, n, sr // 4):
        length = min(sr // 8, n - start)
        hits[start:start + length] += rng.standard_normal(length) * np.exp(-np.arange(length) / (0.02 * sr))
    return melody + bass + 0.2 * hits


def snr_db(ref, est):
    return 10 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))


@criterion(1, "filter-bank reconstruction: noise and music >= 60 dB, tone sweep >= 55 dB, < 10 s")
def test_filterbank_reconstruction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    signals = {"noise": rng.standard_normal(5 * SR), "music": music_excerpt()}
    for K in (2, 4, 8):
        bank = design_filterbank(K)
        for name, x in signals.items():
            snr = reconstruction_snr(x, synthesize(analyze(x, bank), bank))
            assert snr >= 60, f"K={K} {name}: {snr:.2f} dB"
        n = max(8 * bank.taps, 4096)
        for f in np.linspace(0.01, 0.49, 50):
            x = np.sin(2 * np.pi * f * np.arange(n) + 0.3)
            snr = reconstruction_snr(x, synthesize(analyze(x, bank), bank))
            assert snr >= 55, f"K={K} tone {f * SR:.0f} Hz: {snr:.2f} dB"
    assert time.perf_counter() - t0 < 10


@criterion(2, "STFT round trip: relative max error <= 1e-6 over 100 signals at 44.1 kHz, < 5 s")
def test_stft_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(int(rng.integers(SR // 4, SR)))
        y = istft(stft(x, SR), x.size)
        worst = max(worst, np.max(np.abs(y - x)) / np.max(np.abs(x)))
    assert worst <= 1e-6
    assert time.perf_counter() - t0 < 5


@criterion(3, "CWS pack/unpack: exact inverse for C in {1,2}, K in {1,2,4,8}; 2x2 ordering fixture")
def test_pack_unpack():
    rng = np.random.default_rng(2)
    for C in (1, 2):
        for K in (1, 2, 4, 8):
            grid = [[rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
                     for _ in range(K)] for _ in range(C)]
            t = pack_cws(grid, C, K)
            back = unpack_cws(t, C, K)
            assert all(np.array_equal(back[c][k], grid[c][k]) for c in range(C) for k in range(K))
            assert np.array_equal(pack_cws(back, C, K).values, t.values)
    grid = [[np.full((1, 1), 10 * c + k + 0j) for k in range(2)] for c in range(2)]
    np.testing.assert_array_equal(pack_cws(grid, 2, 2).values[:, 0, 0], [0, 1, 10, 11])


@criterion(4, "gradients: relative error <= 1e-4 on >= 200 parameters, 2-scale UNet and dense block, < 60 s")
def test_gradients():
    t0 = time.perf_counter()
    x = np.random.default_rng(3).standard_normal((2, 4, 8, 12))
    cases = [build_unet(2, 4, 4, 4, seed=1),
             build_mdensenet([4], [2], scale=0, in_channels=4, out_channels=4, seed=3)]
    for net in cases:
        rel, invariant = check_gradients(net, x, n_samples=200)
        assert rel.size >= 200
        assert rel.max() <= 1e-4
        assert invariant.size == 0 or invariant.max() <= 1e-8
    assert time.perf_counter() - t0 < 60


def unet5_gflops(K, seconds=3.0, channels=2):
    transform = CwsTransform(K, SR).fit()
    n = int(seconds * SR)
    frames = 1 + transform.band_length(n) // transform.hop_
    planes = 2 * channels * K
    net = build_network("unet5", planes, planes, dtype=np.float32)
    return count_flops(net, (1, planes, transform.frame_len_ // 2 + 1, frames)).gflops


@criterion(5, "cost model: GFLOP ratios within 10%, K-invariant params within 0.2%, MDN and UNET-5 sizes")
def test_cost_model():
    t0 = time.perf_counter()
    g = np.array([unet5_gflops(K) for K in (1, 2, 4, 8)])
    target = np.array([1.0, 0.503, 0.254, 0.130])
    assert np.all(np.abs(g / g[0] / target - 1) <= 0.10)
    for arch in ("unet5", "unet6", "mdn"):
        counts = [count_params(build_network(arch, 4 * K, 4 * K, dtype=np.float32)).param_count
                  for K in (1, 2, 4, 8)]
        assert (max(counts) - min(counts)) / min(counts) < 2e-3, arch
    mdn = count_params(build_network("mdn", 4, 4, dtype=np.float32)).param_count
    unet = count_params(build_network("unet5", 4, 4, dtype=np.float32)).param_count
    assert abs(mdn - 0.27e6) <= 0.03e6
    assert abs(unet / 13.3e6 - 1) <= 0.05
    assert time.perf_counter() - t0 < 5


@pytest.mark.slow
@criterion(6, "training smoke test: falling median loss, SDR >= 5 dB over the mixture baseline")
def test_training_smoke(tmp_path):
    t0 = time.perf_counter()
    root = make_toy_dataset(tmp_path, n_songs=2, seconds=4.0, sample_rate=8000)
    train, valid = index_dataset(root, "train"), index_dataset(root, "valid")
    cfg = TrainConfig(K=4, chunk_seconds=1.0, batch_size=8, validate_interval=200,
                      decay_interval=1e9, max_steps=200, patience=100, dropout=0.0,
                      arch="unet5", arch_overrides={"scale": 2, "base_channels": 16,
                                                    "width_cap": None})
    est = CWSSeparator(cfg).fit(train, valid)
    losses = [loss for *_, loss in est.record_.train]
    assert len(losses) <= 500
    medians = [np.median(losses[i:i + 10]) for i in range(0, len(losses), 10)]
    assert np.all(np.diff(medians) < 0), np.round(medians, 4)

    scores = {"est": ([], []), "mix": ([], [])}
    for entry in valid:
        mixture, vocal, acc = entry.load()
        refs = [vocal.samples, acc.samples]
        pv, pa = est.predict(mixture)
        for key, (ev, ea) in {"est": (pv, pa), "mix": (mixture.samples, mixture.samples)}.items():
            scores[key][0].append(eval_windowed(ev, refs, 0, 8000, song=entry.song))
            scores[key][1].append(eval_windowed(ea, refs, 1, 8000, song=entry.song))
    for source in (0, 1):
        gain = (aggregate(scores["est"][source]).medians["sdr"]
                - aggregate(scores["mix"][source]).medians["sdr"])
        assert gain >= 5, f"source {source}: gain {gain:.2f} dB"
    assert time.perf_counter() - t0 < 600


def orthonormal(rng, n, k):
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return q.T


def song(values):
    return SongScore("s", 0, windows={i: {"sdr": v, "sir": v, "sar": v} for i, v in enumerate(values)})


@criterion(7, "BSS eval: metric examples within 0.01 dB, aggregation fixtures exact")
def test_bss_eval_oracles():
    s, n, s2 = orthonormal(np.random.default_rng(4), 1000, 3)
    assert abs(metrics(decompose(s + 0.1 * n, [s, s2], 0)).sdr - 20.0) <= 0.01
    assert abs(metrics(decompose(s + 0.5 * s2, [s, s2], 0)).sir - 6.02) <= 0.01
    a, b, c = 0.9, 0.4, 0.2
    d = decompose(a * s + b * s2 + c * n, [s, s2], 0)
    for part, energy in ((d.s_target, a * a), (d.e_interf, b * b), (d.e_artif, c * c)):
        assert abs(10 * np.log10(part @ part / energy)) <= 0.01
    assert song([1.0, 2.0, 3.0]).mean("sdr") == 2.0
    assert aggregate([song([2.0]), song([4.0]), song([10.0])]).medians["sdr"] == 4.0
    assert aggregate([song([5.0, 7.0])]).medians["sir"] == 6.0


@criterion(8, "oracle ratio masks: per-source SDR >= 20 dB at K in {1,2,4,8}")
@pytest.mark.parametrize("K", [1, 2, 4, 8])
def test_oracle_mask_upper_bound(K):
    t = np.arange(2 * SR) / SR
    vocal = 0.4 * np.sin(2 * np.pi * 440 * t)[None]
    acc = 0.3 * np.sin(2 * np.pi * 1230 * t)[None]
    mixture = vocal + acc
    v, a = separate_with_masks(mixture, oracle_masks(mixture, vocal, acc, K, SR), K, SR)
    for est, ref, target in ((v, vocal, 0), (a, acc, 1)):
        sdr = metrics(decompose(est[0], [vocal[0], acc[0]], target)).sdr
        assert sdr >= 20, f"K={K} source {target}: {sdr:.2f} dB"


def cplx(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@criterion(9, "loss identities: zero fixtures, complementary masks, brute force to 1e-12")
def test_loss_identities():
    rng = np.random.default_rng(5)
    shape = (2, 3, 4, 5)
    y = cplx(rng, shape)
    m = rng.uniform(0, 1, shape)
    vocal, acc = m * y, (1 - m) * y
    assert l1_loss([vocal, acc], [vocal, acc]) == 0.0
    assert conservation_loss(vocal, acc, y) == pytest.approx(0.0, abs=1e-15)
    # complementary masks conserve the mixture whatever the references are
    masks = np.concatenate([m, 1 - m], axis=1)
    _, _, lc, _ = mask_loss(masks, y, cplx(rng, shape), cplx(rng, shape))
    assert lc == pytest.approx(0.0, abs=1e-15)
    masks = rng.uniform(0, 1, (2, 6, 4, 5))
    rv, ra = cplx(rng, shape), cplx(rng, shape)
    total, l1, lc, _ = mask_loss(masks, y, rv, ra)
    ev, ea = masks[:, :3] * y, masks[:, 3:] * y
    idx = list(np.ndindex(shape))
    brute_l1 = (sum(abs(ev[i] - rv[i]) for i in idx) + sum(abs(ea[i] - ra[i]) for i in idx)) / (2 * len(idx))
    brute_lc = sum(abs(ev[i] + ea[i] - y[i]) for i in idx) / len(idx)
    assert abs(l1 - brute_l1) <= 1e-12
    assert abs(lc - brute_lc) <= 1e-12
    assert abs(total - brute_l1 - brute_lc) <= 1e-12
