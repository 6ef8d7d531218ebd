import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memdip import dsp
from memdip.dsp import ConfigError, RawEegSegment, Spectrogram, WelchConfig
from oracles import naive_dft, naive_one_sided_power, naive_welch

FS = 500.0


def seg(samples, names=None):
    samples = np.atleast_2d(samples)
    names = names or tuple(f"E{i}" for i in range(samples.shape[0]))
    return RawEegSegment(samples, FS, names)


class TestFftPower:
    def test_zeros(self):
        np.testing.assert_array_equal(dsp.fft_power(np.zeros(16)), np.zeros(9))

    def test_impulse_flat_magnitude(self):
        x = np.zeros(8)
        x[0] = 1.0
        p = dsp.fft_power(x)
        # |X_k| == 1 everywhere; interior bins are doubled
        np.testing.assert_allclose(p, [1, 2, 2, 2, 1])

    @pytest.mark.parametrize("n", [1, 2, 4, 64, 512])
    def test_radix2_matches_naive_dft(self, n, rng):
        x = rng.normal(size=(3, n))
        np.testing.assert_allclose(dsp.fft_radix2(x), naive_dft(x), rtol=0, atol=1e-9 * max(1, n))

    def test_sinusoid_peak(self):
        t = np.arange(512) / FS
        x = np.sin(2 * np.pi * 10 * t)
        p = dsp.fft_power(x)
        freqs = np.arange(257) * FS / 512
        assert np.argmax(p) == np.argmin(np.abs(freqs - 10))
        ref = naive_one_sided_power(x, 512)
        np.testing.assert_allclose(p, ref, rtol=1e-9, atol=1e-9 * ref.max())

    @pytest.mark.parametrize("n", [3, 6, 100, 500])
    def test_non_power_of_two(self, n):
        with pytest.raises(ConfigError):
            dsp.fft_power(np.zeros(n))

    def test_zero_padding(self, rng):
        x = rng.normal(size=125)
        np.testing.assert_allclose(dsp.fft_power(x, 512), naive_one_sided_power(x, 512), rtol=1e-9)


class TestWelchConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(overlap=125), dict(overlap=-1), dict(fft_len=64), dict(fft_len=500),
        dict(f_lo=20, f_hi=3), dict(f_hi=300), dict(window="kaiser"), dict(detrend="linear"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            WelchConfig(**kwargs).validate(FS)

    def test_segment_longer_than_window(self):
        with pytest.raises(ConfigError):
            WelchConfig(segment_len=300).validate(FS, n_samples=250)

    def test_default_grid(self):
        bins = dsp.retained_bins(WelchConfig(), FS)
        step = FS / 512
        expected = np.array([k * step for k in range(513 // 2 + 1) if 3.0 <= k * step <= 20.0])
        np.testing.assert_array_equal(bins, expected)
        assert len(bins) == 17
        assert np.all(np.diff(bins) > 0)

    def test_default_gives_three_segments(self):
        assert len(dsp.segment_starts(250, WelchConfig())) == 3

    @given(st.floats(0.5, 50), st.floats(1, 100))
    def test_bin_count_pure(self, lo, width):
        cfg = WelchConfig(f_lo=lo, f_hi=min(lo + width, FS / 2))
        assert len(dsp.retained_bins(cfg, FS)) == len(dsp.retained_bins(WelchConfig(**cfg.to_dict()), FS))

    def test_round_trip(self):
        cfg = WelchConfig(segment_len=100, overlap=50)
        assert WelchConfig.from_dict(cfg.to_dict()) == cfg


class TestWelch:
    def test_dc_channel_zero_in_band(self):
        out = dsp.welch_psd(seg(np.full((1, 250), 7.3)))
        # only rounding residue of the mean removal survives
        np.testing.assert_allclose(out.psd, 0.0, atol=1e-20)

    def test_sinusoid_peak_at_ten_hz(self):
        t = np.arange(250) / FS
        out = dsp.welch_psd(seg(np.sin(2 * np.pi * 10 * t)))
        peak = out.bin_freqs_hz[np.argmax(out.psd[0])]
        assert peak == out.bin_freqs_hz[np.argmin(np.abs(out.bin_freqs_hz - 10))]

    def test_matches_naive_oracle(self, rng):
        cfg = WelchConfig()
        x = rng.normal(size=(4, 250))
        full = dsp.welch_full(x, FS, cfg)
        ref = naive_welch(x, FS, 125, 63, 512)
        np.testing.assert_allclose(full, ref, rtol=1e-9)

    def test_matches_scipy(self, rng):
        signal = pytest.importorskip("scipy.signal")
        x = rng.normal(size=(2, 250))
        _, ref = signal.welch(x, fs=FS, window="hann", nperseg=125, noverlap=63, nfft=512)
        np.testing.assert_allclose(dsp.welch_full(x, FS, WelchConfig()), ref, rtol=1e-9)

    def test_parseval_white_noise(self):
        rng = np.random.default_rng(7)
        sigma = 2.0
        x = rng.normal(scale=sigma, size=(1000, 250))
        full = dsp.welch_full(x, FS, WelchConfig()).mean(axis=0)
        integral = full.sum() * FS / 512
        assert abs(integral - sigma**2) / sigma**2 < 0.05

    def test_single_segment_is_periodogram(self, rng):
        x = rng.normal(size=(2, 128))
        cfg = WelchConfig(segment_len=128, overlap=0, fft_len=128, f_lo=0.1, f_hi=250)
        full = dsp.welch_full(x, FS, cfg)
        win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(128) / 128)
        xc = x - x.mean(axis=1, keepdims=True)
        expected = naive_one_sided_power(xc * win, 128) / (FS * np.sum(win**2))
        np.testing.assert_allclose(full, expected, rtol=1e-9, atol=1e-15)

    def test_channel_permutation_equivariance(self, rng):
        x = rng.normal(size=(5, 250))
        names = ("A", "B", "C", "D", "E")
        perm = rng.permutation(5)
        a = dsp.welch_psd(seg(x, names))
        b = dsp.welch_psd(seg(x[perm], tuple(names[i] for i in perm)))
        np.testing.assert_array_equal(a.psd[perm], b.psd)
        assert b.channel_names == tuple(names[i] for i in perm)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100), st.integers(0, 2**31))
    def test_scaling(self, a, seed):
        x = np.random.default_rng(seed).normal(size=(2, 250))
        base = dsp.welch_psd(seg(x)).psd
        np.testing.assert_allclose(dsp.welch_psd(seg(a * x)).psd, a * a * base, rtol=1e-9, atol=1e-300)

    def test_nonnegative(self, rng):
        assert np.all(dsp.welch_psd(seg(rng.normal(size=(3, 250)))).psd >= 0)

    def test_too_short(self):
        with pytest.raises((ValueError, ConfigError)):
            dsp.welch_psd(seg(np.zeros((1, 100))))

    def test_batch_matches_single(self, rng):
        x = rng.normal(size=(3, 2, 250))
        batch = dsp.welch_psd_batch(x, FS)
        for i in range(3):
            np.testing.assert_array_equal(batch[i], dsp.welch_psd(seg(x[i])).psd)


class TestReference:
    def spec(self, psd):
        return Spectrogram(np.asarray(psd, float), np.arange(np.shape(psd)[1], dtype=float), ("A", "B"))

    def test_identity(self, rng):
        w = self.spec(rng.uniform(0.1, 5, (2, 4)))
        out = dsp.apply_reference(w, w)
        np.testing.assert_array_equal(out.psd, 0.0)
        assert out.reference_applied

    def test_one_decade(self, rng):
        ref = rng.uniform(0.1, 5, (2, 4))
        out = dsp.apply_reference(self.spec(10 * ref), self.spec(ref))
        np.testing.assert_allclose(out.psd, 1.0, rtol=0, atol=1e-12)

    def test_direct_formula(self, rng):
        import math

        w, ref = rng.uniform(0, 3, (2, 6)), rng.uniform(0, 3, (2, 6))
        out = dsp.apply_reference(self.spec(w), self.spec(ref)).psd
        expected = [[math.log10(a + 1e-12) - math.log10(b + 1e-12) for a, b in zip(ra, rb)] for ra, rb in zip(w, ref)]
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_zero_power_is_finite(self):
        out = dsp.apply_reference(self.spec(np.zeros((2, 3))), self.spec(np.ones((2, 3))))
        np.testing.assert_allclose(out.psd, -12.0)

    def test_grid_mismatch(self):
        a = self.spec(np.ones((2, 3)))
        b = Spectrogram(np.ones((2, 3)), np.array([0.0, 1.0, 2.5]), ("A", "B"))
        with pytest.raises(dsp.SpectrumShapeError):
            dsp.apply_reference(a, b)
        with pytest.raises(dsp.SpectrumShapeError):
            dsp.apply_reference(a, self.spec(np.ones((2, 4))))

    def test_mean_spectrogram_linear(self):
        out = dsp.mean_spectrogram([self.spec(np.ones((2, 3))), self.spec(3 * np.ones((2, 3)))])
        np.testing.assert_array_equal(out.psd, 2.0)


class TestRawSegment:
    def test_shape_checks(self):
        with pytest.raises(ValueError):
            RawEegSegment(np.zeros((2, 10)), FS, ("A",))
        with pytest.raises(ValueError):
            RawEegSegment(np.zeros(10), FS, ("A",))

    def test_default_duration(self):
        s = RawEegSegment(np.zeros((12, 250)))
        assert s.n_channels == 12 and s.duration_s == 0.5
