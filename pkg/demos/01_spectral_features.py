"""
From raw windows to referenced spectrograms
===========================================

A half-second EEG window becomes a channels x frequency-bins grid: Welch
averaging over Hann-tapered segments, the 3-20 Hz band, and a log ratio
against the subject's own resting spectrum.
"""

# %%
import numpy as np

from memdip import dsp

fs = 500.0
t = np.arange(250) / fs
rng = np.random.default_rng(0)

# two channels: one with a 10 Hz rhythm, one with plain noise
samples = np.stack([np.sin(2 * np.pi * 10 * t) + 0.2 * rng.normal(size=250), rng.normal(size=250)])
seg = dsp.RawEegSegment(samples, fs, ("C3", "C4"))

cfg = dsp.WelchConfig()
print("segments per window:", len(dsp.segment_starts(seg.n_samples, cfg)))
spec = dsp.welch_psd(seg, cfg)
print("retained bins (Hz):", np.round(spec.bin_freqs_hz, 2))

# %%
# The rhythmic channel peaks next to 10 Hz.
peak = spec.bin_freqs_hz[np.argmax(spec.psd[0])]
print(f"C3 peak at {peak:.2f} Hz")

# %%
# Referencing expresses power in decades relative to a baseline window.
baseline = dsp.welch_psd(dsp.RawEegSegment(rng.normal(size=(2, 250)), fs, ("C3", "C4")), cfg)
rel = dsp.apply_reference(spec, baseline)
print("C3 relative power around 10 Hz:", np.round(rel.psd[0, 5:9], 2))

# %%
# The FFT underneath is a radix-2 transform written for this package.
x = rng.normal(size=64)
print("max deviation from numpy.fft:", np.abs(dsp.fft_radix2(x) - np.fft.fft(x)).max())
