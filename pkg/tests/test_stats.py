import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanhar.data import CHANNELS, IMUWindow
from lanhar.errors import ArgumentError
from lanhar.stats import WindowStats, compute_stats, dominant_frequency, periodicity_score


def _dft_peak_oracle(x, rate):
    # direct O(n^2) DFT magnitude, DC and Nyquist excluded
    x = np.asarray(x, float) - np.mean(x)
    n = len(x)
    t = np.arange(n)
    best_k, best = None, -1.0
    for k in range(1, (n - 1) // 2 + 1):
        mag = abs(np.sum(x * np.exp(-2j * math.pi * k * t / n)))
        if mag > best + 1e-9 * max(best, 1.0):
            best_k, best = k, mag
    return best_k * rate / n


def _sine(freq, n=120, rate=20.0, amp=1.0, phase=0.0):
    t = np.arange(n) / rate
    return amp * np.sin(2 * math.pi * freq * t + phase)


class TestDominantFrequency:
    def test_two_hz(self):
        f = dominant_frequency(_sine(2.0), 20.0)
        assert abs(f - 2.0) <= 20.0 / 120
        assert f == pytest.approx(_dft_peak_oracle(_sine(2.0), 20.0))

    def test_mixture_low_wins(self):
        x = _sine(1.0, amp=2.0) + _sine(5.0, amp=1.0)
        assert abs(dominant_frequency(x, 20.0) - 1.0) <= 20.0 / 120

    def test_constant_is_lowest_bin(self):
        assert dominant_frequency(np.full(120, 9.81), 20.0) == pytest.approx(20.0 / 120)

    def test_too_short(self):
        with pytest.raises(ArgumentError):
            dominant_frequency([1.0, 2.0, 3.0], 20.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(8, 200), st.integers(0, 10_000))
    def test_matches_oracle_and_range(self, n, seed):
        x = np.random.default_rng(seed).normal(size=n)
        f = dominant_frequency(x, 20.0)
        assert f == pytest.approx(_dft_peak_oracle(x, 20.0))
        assert 20.0 / n <= f < 10.0


class TestPeriodicity:
    def test_sinusoid_high(self):
        assert periodicity_score(_sine(2.0), 20.0) >= 0.95

    def test_constant_zero(self):
        assert periodicity_score(np.ones(50), 20.0) == 0.0

    def test_noise_low(self):
        scores = [periodicity_score(np.random.default_rng(s).normal(size=1000), 20.0) for s in range(100)]
        assert sum(s < 0.3 for s in scores) >= 99

    def test_too_short(self):
        with pytest.raises(ArgumentError):
            periodicity_score(np.arange(7.0), 20.0)

    def test_in_unit_interval(self, rng):
        s = periodicity_score(rng.normal(size=64), 20.0)
        assert 0.0 <= s <= 1.0


def _window(data, wid="w", rate=20.0):
    return IMUWindow(np.asarray(data, float), wid, rate_hz=rate)


class TestComputeStats:
    def test_constant_channel(self, rng):
        data = rng.normal(size=(120, 6))
        data[:, 2] = 9.81
        s = compute_stats(_window(data))
        assert s.mean[2] == 9.81 and s.std[2] == 0.0 and s.amplitude[2] == 0.0
        assert s.degenerate[2] and s.dominant_freq_hz[2] == 0.0 and s.periodicity[2] == 0.0

    def test_sine_channel(self):
        data = np.zeros((120, 6))
        data[:, 0] = _sine(2.0)
        assert abs(compute_stats(_window(data)).dominant_freq_hz[0] - 2.0) <= 20.0 / 120

    def test_deterministic_and_metadata_free(self, rng):
        data = rng.normal(size=(120, 6))
        a = compute_stats(_window(data, "a"))
        b = compute_stats(IMUWindow(data.copy(), "b", subject_id="x", dataset_id="y", label="walking"))
        assert a == b

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-50, 50), st.floats(0.1, 20))
    def test_offset_and_scale(self, seed, offset, scale):
        data = np.random.default_rng(seed).normal(size=(60, 6))
        base = compute_stats(_window(data))
        shifted = compute_stats(_window(data + offset))
        scaled = compute_stats(_window(data * scale))
        np.testing.assert_allclose(shifted.mean, np.add(base.mean, offset), atol=1e-9)
        np.testing.assert_allclose(shifted.min, np.add(base.min, offset), atol=1e-9)
        np.testing.assert_allclose(shifted.std, base.std, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(shifted.amplitude, base.amplitude, rtol=1e-9, atol=1e-9)
        assert shifted.dominant_freq_hz == base.dominant_freq_hz
        np.testing.assert_allclose(scaled.std, np.multiply(base.std, scale), rtol=1e-9)
        np.testing.assert_allclose(scaled.amplitude, np.multiply(base.amplitude, scale), rtol=1e-9)
        assert scaled.dominant_freq_hz == base.dominant_freq_hz
        np.testing.assert_allclose(scaled.periodicity, base.periodicity, atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariants(self, seed):
        data = np.random.default_rng(seed).normal(scale=3, size=(40, 6))
        s = compute_stats(_window(data))
        for c in range(6):
            assert s.min[c] <= s.mean[c] <= s.max[c]
            assert s.std[c] >= 0
            assert 0 <= s.periodicity[c] <= 1
            assert s.dominant_freq_hz[c] < s.rate_hz / 2

    def test_flat_json_keys(self, rng):
        s = compute_stats(_window(rng.normal(size=(120, 6))))
        d = json.loads(s.to_json())
        for prefix in ("mean", "std", "max", "min", "amp", "domfreq", "period", "degen"):
            for ch in CHANNELS:
                assert f"{prefix}_{ch}" in d
        assert WindowStats.from_dict(d) == s
