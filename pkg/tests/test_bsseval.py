import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwsep.bsseval import (
    CAP_DB,
    SongScore,
    aggregate,
    decompose,
    eval_windowed,
    format_report,
    metrics,
    summary_table,
    window_count,
)
from cwsep.exceptions import UndefinedReferenceError


def orthonormal(rng, n, k):
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return q.T


def test_decompose_trivial_cases(rng):
    r1, r2 = orthonormal(rng, 64, 2)
    d = decompose(r1, [r1, r2], 0)
    np.testing.assert_allclose(d.s_target, r1, atol=1e-12)
    assert np.abs(d.e_interf).max() < 1e-12 and np.abs(d.e_artif).max() < 1e-12
    d = decompose(r2, [r1, r2], 0)
    assert np.abs(d.s_target).max() < 1e-12 and np.abs(d.e_artif).max() < 1e-12


def test_projection_energy_decomposition(rng):
    r1, r2, n = orthonormal(rng, 200, 3)
    a, b, c = 0.9, 0.4, 0.2
    d = decompose(a * r1 + b * r2 + c * n, [r1, r2], 0)
    energies = [d.s_target @ d.s_target, d.e_interf @ d.e_interf, d.e_artif @ d.e_artif]
    np.testing.assert_allclose(energies, [a * a, b * b, c * c], atol=1e-12)


def test_metric_examples(rng):
    s, n, s2 = orthonormal(rng, 500, 3)
    perfect = metrics(decompose(s, [s, s2], 0))
    assert perfect.sdr == CAP_DB and "sdr" in perfect.capped
    assert metrics(decompose(s + 0.1 * n, [s, s2], 0)).sdr == pytest.approx(20.0, abs=0.01)
    assert metrics(decompose(s + 0.5 * s2, [s, s2], 0)).sir == pytest.approx(6.0206, abs=0.01)


def test_zero_reference_is_undefined(rng):
    with pytest.raises(UndefinedReferenceError):
        decompose(rng.standard_normal(10), [np.zeros(10), rng.standard_normal(10)], 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(8, 64))
def test_decomposition_identity_and_gram_oracle(seed, n):
    r = np.random.default_rng(seed)
    refs = r.standard_normal((2, n))
    est = r.standard_normal(n)
    d = decompose(est, list(refs), 1)
    total = d.s_target + d.e_interf + d.e_artif
    assert np.max(np.abs(total - est)) <= 1e-9 * np.max(np.abs(est))
    gram = refs @ refs.T
    coef = np.linalg.solve(gram, refs @ est)
    np.testing.assert_allclose(d.s_target + d.e_interf, coef @ refs, atol=1e-9)
    np.testing.assert_allclose(d.s_target, (refs[1] @ est) / (refs[1] @ refs[1]) * refs[1], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
def test_sir_sar_scale_invariance(seed, c):
    r = np.random.default_rng(seed)
    refs = list(r.standard_normal((2, 48)))
    est = r.standard_normal(48)
    m1 = metrics(decompose(est, refs, 0))
    m2 = metrics(decompose(c * est, refs, 0))
    assert m1.sir == pytest.approx(m2.sir, abs=1e-8)
    assert m1.sar == pytest.approx(m2.sar, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), extra=st.floats(0.05, 2.0))
def test_artifact_energy_monotonicity(seed, extra):
    r = np.random.default_rng(seed)
    s1, s2, n = orthonormal(r, 64, 3)
    est = s1 + 0.3 * s2 + 0.2 * n
    base = metrics(decompose(est, [s1, s2], 0))
    more = metrics(decompose(est + extra * n, [s1, s2], 0))
    assert more.sdr < base.sdr and more.sar < base.sar
    assert more.sir == pytest.approx(base.sir, abs=1e-9)


def test_window_count_examples():
    assert window_count(35, 10, 10) == 3
    assert window_count(9, 10, 10) == 0
    score = eval_windowed(np.ones((1, 35)) + np.arange(35), [np.ones((1, 35)) + np.arange(35),
                                                               np.cos(np.arange(35))[None]], 0, 10)
    assert score.n_windows == 3 and len(score.windows) == 3


def test_windowed_perfect_estimate_hits_cap(rng):
    v, a = rng.standard_normal((2, 2, 3000))
    score = eval_windowed(v, [v, a], 0, 1000, song="s")
    assert all(w["sdr"] == CAP_DB for w in score.windows.values())


def test_single_window_equals_whole_signal(rng):
    refs = list(rng.standard_normal((2, 1000)))
    est = refs[0] + 0.3 * refs[1] + 0.1 * rng.standard_normal(1000)
    score = eval_windowed(est[None], [r[None] for r in refs], 0, 1000)
    whole = metrics(decompose(est, refs, 0))
    assert score.windows[0]["sdr"] == pytest.approx(whole.sdr, abs=1e-12)
    assert score.windows[0]["sir"] == pytest.approx(whole.sir, abs=1e-12)


def test_per_window_values_and_channel_mean(rng):
    sr = 256
    s, s2, noise = orthonormal(rng, sr, 3)
    gains = [0.1, 0.01]  # per channel, same in every window
    est = np.stack([np.tile(s + g * noise, 3) for g in gains])
    ref_v = np.stack([np.tile(s, 3)] * 2)
    ref_a = np.stack([np.tile(s2, 3)] * 2)
    score = eval_windowed(est, [ref_v, ref_a], 0, sr)
    for w in score.windows.values():
        assert w["sdr"] == pytest.approx((20 + 40) / 2, abs=1e-6)
    assert score.mean("sdr") == pytest.approx(30, abs=1e-6)


def test_silent_windows_are_skipped(rng, caplog):
    sr = 100
    v = rng.standard_normal((1, 300))
    v[:, 100:200] = 0
    a = rng.standard_normal((1, 300))
    score = eval_windowed(v, [v, a], 0, sr, song="gap")
    assert score.skipped == [1] and sorted(score.windows) == [0, 2]
    with caplog.at_level(logging.WARNING):
        dead = eval_windowed(v, [np.zeros_like(v), a], 0, sr, song="dead")
    assert not dead.valid and "dead" in caplog.text


def song(values, name="s"):
    return SongScore(name, 0, windows={i: {"sdr": v, "sir": v, "sar": v} for i, v in enumerate(values)})


def test_aggregate_hand_fixtures():
    assert song([1.0, 2.0, 3.0]).mean("sdr") == 2.0
    assert aggregate([song([2.0]), song([4.0]), song([10.0])]).medians["sdr"] == 4.0
    assert aggregate([song([1.0, 2.0, 6.0])]).medians["sar"] == 3.0
    assert aggregate([song([1.0, 3.0]), song([]), song([5.0, 7.0, 9.0])]).medians["sir"] == 4.5


def test_report_and_summary(rng):
    refs = list(rng.standard_normal((2, 1, 2000)))
    v = eval_windowed(refs[0] + 0.1 * refs[1], refs, 0, 1000, song="x")
    a = eval_windowed(refs[1], refs, 1, 1000, song="x")
    text = format_report([v], [a])
    rows = [line.split("\t") for line in text.splitlines() if not line.startswith("#")]
    assert rows[0][:5] == ["x", "0", "0", "V", "SDR"]
    header, values = rows[-2], rows[-1]
    assert header == ["SAR(A)", "SAR(V)", "SDR(A)", "SDR(V)", "SIR(A)", "SIR(V)", "Average"]
    table = summary_table(aggregate([v]), aggregate([a]))
    assert float(values[-1]) == pytest.approx(table["Average"], abs=1e-4)
    assert table["SDR(A)"] == CAP_DB
    assert math.isclose(table["Average"], np.mean([table[k] for k in header[:-1]]))
