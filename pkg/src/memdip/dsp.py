"""Welch power spectral density features for short EEG windows."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

DEFAULT_CHANNELS = ("C3", "CZ", "C4", "CP3", "CPZ", "CP4", "P3", "PZ", "P4", "O1", "OZ", "O2")
REFERENCE_EPS = 1e-12


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending field."""


class SpectrumShapeError(ValueError):
    """Spectrograms live on different channel or bin grids."""


@dataclass(frozen=True)
class RawEegSegment:
    samples: np.ndarray  # (N, L), microvolts
    sampling_rate_hz: float = 500.0
    channel_names: tuple[str, ...] = DEFAULT_CHANNELS

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (channels x time), got shape {samples.shape}")
        if samples.shape[0] != len(self.channel_names):
            raise ValueError(
                f"{samples.shape[0]} sample rows but {len(self.channel_names)} channel names"
            )
        if not self.sampling_rate_hz > 0:
            raise ValueError("sampling_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz


@dataclass(frozen=True)
class Spectrogram:
    psd: np.ndarray  # (N, d)
    bin_freqs_hz: np.ndarray  # (d,)
    channel_names: tuple[str, ...] = DEFAULT_CHANNELS
    reference_applied: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.psd.shape


@dataclass(frozen=True)
class WelchConfig:
    """Segmenting, tapering and band selection for :func:`welch_psd`.

    ``overlap`` defaults to 63 samples so that a 250-sample window yields three
    segments of 125 (hop 62).
    """

    segment_len: int = 125
    overlap: int = 63
    fft_len: int = 512
    window: str = "hann"
    f_lo: float = 3.0
    f_hi: float = 20.0
    detrend: str = "constant"

    def validate(self, sampling_rate_hz: float | None = None, n_samples: int | None = None) -> "WelchConfig":
        if self.segment_len < 1:
            raise ConfigError("welch.segment_len must be >= 1")
        if not 0 <= self.overlap < self.segment_len:
            raise ConfigError("welch.overlap must satisfy 0 <= overlap < segment_len")
        if self.fft_len < self.segment_len:
            raise ConfigError("welch.fft_len must be >= segment_len")
        if not _is_power_of_two(self.fft_len):
            raise ConfigError(f"welch.fft_len must be a power of two, got {self.fft_len}")
        if self.window not in _WINDOWS:
            raise ConfigError(f"welch.window must be one of {sorted(_WINDOWS)}, got {self.window!r}")
        if self.detrend not in ("constant", "none"):
            raise ConfigError("welch.detrend must be 'constant' or 'none'")
        if not self.f_lo < self.f_hi:
            raise ConfigError("welch.f_lo must be < welch.f_hi")
        if sampling_rate_hz is not None and self.f_hi > sampling_rate_hz / 2:
            raise ConfigError("welch.f_hi must not exceed the Nyquist frequency")
        if n_samples is not None and self.segment_len > n_samples:
            raise ConfigError(f"welch.segment_len {self.segment_len} exceeds window length {n_samples}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WelchConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown welch fields: {sorted(unknown)}")
        return cls(**d)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for spectral estimation
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {"hann": _hann, "boxcar": lambda n: np.ones(n)}


def window_taper(kind: str, n: int) -> np.ndarray:
    return _WINDOWS[kind](n)


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis.

    The length of the last axis must be a power of two.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_power_of_two(n):
        raise ConfigError(f"FFT length must be a power of two, got {n}")
    levels = n.bit_length() - 1
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    out = x[..., rev].copy()
    lead = out.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*lead, n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        out = blocks.reshape(*lead, n)
        size *= 2
    return out


def fft_power(x: np.ndarray, fft_len: int | None = None) -> np.ndarray:
    """One-sided power spectrum ``|X_k|^2`` along the last axis.

    Bins strictly between DC and Nyquist are doubled. ``x`` is zero-padded to
    ``fft_len`` when given.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1] if fft_len is None else fft_len
    if not _is_power_of_two(n):
        raise ConfigError(f"FFT length must be a power of two, got {n}")
    if x.shape[-1] > n:
        raise ValueError(f"signal length {x.shape[-1]} exceeds fft_len {n}")
    if x.shape[-1] < n:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
        x = np.pad(x, pad)
    spec = fft_radix2(x)[..., : n // 2 + 1]
    power = spec.real**2 + spec.imag**2
    if n > 1:
        power[..., 1 : n // 2] *= 2.0
    return power


def frequency_grid(cfg: WelchConfig, sampling_rate_hz: float) -> np.ndarray:
    return np.arange(cfg.fft_len // 2 + 1) * (sampling_rate_hz / cfg.fft_len)


def band_mask(cfg: WelchConfig, sampling_rate_hz: float) -> np.ndarray:
    f = frequency_grid(cfg, sampling_rate_hz)
    return (f >= cfg.f_lo) & (f <= cfg.f_hi)


def retained_bins(cfg: WelchConfig, sampling_rate_hz: float = 500.0) -> np.ndarray:
    """Frequencies kept by the band selection (both edges inclusive)."""
    return frequency_grid(cfg, sampling_rate_hz)[band_mask(cfg, sampling_rate_hz)]


def segment_starts(n_samples: int, cfg: WelchConfig) -> np.ndarray:
    step = cfg.segment_len - cfg.overlap
    if n_samples < cfg.segment_len:
        raise ValueError(
            f"window of {n_samples} samples is shorter than one segment ({cfg.segment_len})"
        )
    return np.arange(0, n_samples - cfg.segment_len + 1, step)


def welch_full(samples: np.ndarray, sampling_rate_hz: float, cfg: WelchConfig) -> np.ndarray:
    """Density-scaled Welch PSD over the full one-sided grid, along the last axis."""
    samples = np.asarray(samples, dtype=np.float64)
    cfg.validate(sampling_rate_hz)
    starts = segment_starts(samples.shape[-1], cfg)
    win = window_taper(cfg.window, cfg.segment_len)
    offsets = starts[:, None] + np.arange(cfg.segment_len)
    segs = samples[..., offsets]  # (..., n_seg, seg_len)
    if cfg.detrend == "constant":
        segs = segs - segs.mean(axis=-1, keepdims=True)
    power = fft_power(segs * win, cfg.fft_len)
    return power.mean(axis=-2) / (sampling_rate_hz * np.sum(win**2))


def welch_psd(seg: RawEegSegment, cfg: WelchConfig | None = None) -> Spectrogram:
    cfg = cfg or WelchConfig()
    full = welch_full(seg.samples, seg.sampling_rate_hz, cfg)
    keep = band_mask(cfg, seg.sampling_rate_hz)
    return Spectrogram(
        psd=full[:, keep],
        bin_freqs_hz=frequency_grid(cfg, seg.sampling_rate_hz)[keep],
        channel_names=seg.channel_names,
    )


def welch_psd_batch(samples: np.ndarray, sampling_rate_hz: float, cfg: WelchConfig | None = None) -> np.ndarray:
    """Band-limited PSDs for a stack of windows shaped (M, N, L) -> (M, N, d)."""
    cfg = cfg or WelchConfig()
    return welch_full(samples, sampling_rate_hz, cfg)[..., band_mask(cfg, sampling_rate_hz)]


def log_ratio(spec: np.ndarray, ref: np.ndarray, eps: float = REFERENCE_EPS) -> np.ndarray:
    return np.log10(spec + eps) - np.log10(ref + eps)


def apply_reference(spec: Spectrogram, ref: Spectrogram) -> Spectrogram:
    """Express ``spec`` in decades relative to a subject's reference spectrum."""
    if spec.psd.shape != ref.psd.shape or not np.array_equal(spec.bin_freqs_hz, ref.bin_freqs_hz):
        raise SpectrumShapeError(
            f"spectrogram grids differ: {spec.psd.shape} vs {ref.psd.shape}"
        )
    return replace(spec, psd=log_ratio(spec.psd, ref.psd), reference_applied=True)


def mean_spectrogram(spectra: list[Spectrogram]) -> Spectrogram:
    """Arithmetic mean in linear power, used to build a per-subject reference."""
    if not spectra:
        raise ValueError("cannot average an empty list of spectrograms")
    first = spectra[0]
    for s in spectra[1:]:
        if s.psd.shape != first.psd.shape or not np.array_equal(s.bin_freqs_hz, first.bin_freqs_hz):
            raise SpectrumShapeError("reference spectrograms live on different grids")
    return replace(first, psd=np.mean([s.psd for s in spectra], axis=0))
