"""Class-conditional synthetic driving sessions.

Each subject gets a continuous pink-noise recording with lane-deviation
events. Turning intentions add a 10 Hz burst on the hemisphere opposite to
the steering direction: left turns on C4/CP4/P4, right turns on C3/CP3/P3.
Straight windows carry no burst. A per-subject gain scales the whole
recording, which the per-subject reference normalisation later removes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..dsp import DEFAULT_CHANNELS, ConfigError, WelchConfig
from .corpus import Corpus, build_corpus
from .events import OFFSET_S, WINDOW_S, DrivingTrialEvents, Intention, Recording

LEFT_TURN_CHANNELS = ("C4", "CP4", "P4")
RIGHT_TURN_CHANNELS = ("C3", "CP3", "P3")


@dataclass(frozen=True)
class SynthConfig:
    n_trials: int = 600  # total intention samples, split evenly over L/R/S
    n_subjects: int = 6
    channel_names: tuple[str, ...] = DEFAULT_CHANNELS
    sampling_rate_hz: float = 500.0
    noise_amplitude_uv: float = 10.0
    burst_amplitude_uv: float = 6.0
    burst_freq_hz: float = 10.0
    burst_freq_jitter_hz: float = 0.5
    subject_gain_sigma: float = 0.3
    base_rt_s: float = 0.6
    state_probs: tuple[float, float, float] = (0.55, 0.3, 0.15)
    left_channels: tuple[str, ...] = LEFT_TURN_CHANNELS
    right_channels: tuple[str, ...] = RIGHT_TURN_CHANNELS
    window_s: float = WINDOW_S
    offset_s: float = OFFSET_S

    def validate(self) -> "SynthConfig":
        known = set(self.channel_names)
        for fld in ("left_channels", "right_channels"):
            for ch in getattr(self, fld):
                if ch not in known:
                    raise ConfigError(f"synth.{fld}: unknown channel name {ch!r}")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ConfigError("synth.channel_names: duplicate channel name")
        if self.n_trials < 3 or self.n_trials % 3:
            raise ConfigError("synth.n_trials must be a positive multiple of 3")
        if self.n_subjects < 1:
            raise ConfigError("synth.n_subjects must be >= 1")
        if not self.sampling_rate_hz > 0:
            raise ConfigError("synth.sampling_rate_hz must be positive")
        if self.noise_amplitude_uv < 0 or self.burst_amplitude_uv < 0:
            raise ConfigError("synth amplitudes must be non-negative")
        if len(self.state_probs) != 3 or min(self.state_probs) < 0 or not np.isclose(sum(self.state_probs), 1.0):
            raise ConfigError("synth.state_probs must be three non-negative numbers summing to 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("channel_names", "left_channels", "right_channels", "state_probs"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def pink_noise(rng: np.random.Generator, n_channels: int, n_samples: int) -> np.ndarray:
    """Unit-variance 1/f noise per channel, shaped in the frequency domain."""
    white = rng.standard_normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=-1)
    f = np.arange(spec.shape[-1], dtype=np.float64)
    f[0] = 1.0
    spec = spec / np.sqrt(f)
    spec[:, 0] = 0.0
    out = np.fft.irfft(spec, n=n_samples, axis=-1)
    std = out.std(axis=-1, keepdims=True)
    return out / np.where(std > 0, std, 1.0)


def _schedule_events(cfg: SynthConfig, rng: np.random.Generator, n_events: int, subject: str,
                     directions: list[Intention]) -> tuple[list[DrivingTrialEvents], float]:
    multipliers = ((1.0, 1.35), (1.6, 2.4), (2.7, 4.0))
    t = 2.0
    events = []
    for i in range(n_events):
        dev = t + rng.uniform(1.5, 3.0)
        state = rng.choice(3, p=cfg.state_probs)
        lo, hi = multipliers[state]
        rt = cfg.base_rt_s * rng.uniform(lo, hi)
        onset = dev + rt
        offset = onset + rng.uniform(0.8, 1.5)
        events.append(DrivingTrialEvents(round(dev, 3), round(onset, 3), round(offset, 3), directions[i], subject))
        t = round(offset, 3) + cfg.offset_s + cfg.window_s
    return events, t + 2.0


def synthesize_sessions(cfg: SynthConfig, seed: int = 0) -> tuple[list[Recording], list[DrivingTrialEvents], set]:
    """Raw recordings, their events, and which trials contribute a straight sample."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    per_class = cfg.n_trials // 3
    n_events = 2 * per_class
    directions = [Intention.LEFT] * per_class + [Intention.RIGHT] * per_class
    directions = [directions[i] for i in rng.permutation(n_events)]
    straight_pick = set(rng.choice(n_events, size=per_class, replace=False).tolist())
    counts = np.full(cfg.n_subjects, n_events // cfg.n_subjects)
    counts[: n_events % cfg.n_subjects] += 1

    names = list(cfg.channel_names)
    fs = cfg.sampling_rate_hz
    left_rows = [names.index(c) for c in cfg.left_channels]
    right_rows = [names.index(c) for c in cfg.right_channels]
    recordings, all_events, keep = [], [], set()
    start = 0
    for s in range(cfg.n_subjects):
        subject = f"sub{s:02d}"
        ev_dirs = directions[start : start + counts[s]]
        events, duration = _schedule_events(cfg, rng, int(counts[s]), subject, ev_dirs)
        n_samples = int(np.ceil(duration * fs))
        gain = float(np.exp(rng.normal(0.0, cfg.subject_gain_sigma)))
        x = cfg.noise_amplitude_uv * pink_noise(rng, len(names), n_samples)
        t = np.arange(n_samples) / fs
        for j, ev in enumerate(events):
            rows = left_rows if ev.steering_direction is Intention.LEFT else right_rows
            a = int(round((ev.response_onset_s - cfg.window_s - 0.1) * fs))
            b = int(round((ev.response_onset_s + 0.05) * fs))
            env = np.hanning(b - a)
            env = np.minimum(1.0, 4.0 * env)  # flat top with smooth edges
            freq = cfg.burst_freq_hz + rng.uniform(-cfg.burst_freq_jitter_hz, cfg.burst_freq_jitter_hz)
            phase = rng.uniform(0.0, 2.0 * np.pi, size=(len(rows), 1))
            x[rows, a:b] += cfg.burst_amplitude_uv * env * np.sin(2.0 * np.pi * freq * t[a:b] + phase)
            if start + j in straight_pick:
                keep.add((subject, ev.deviation_onset_s))
        recordings.append(Recording((gain * x).astype(np.float32), fs, tuple(names), subject))
        all_events.extend(events)
        start += counts[s]
    return recordings, all_events, keep


def synthesize_corpus(cfg: SynthConfig | None = None, seed: int = 0, welch: WelchConfig | None = None,
                      split_seed: int | None = None) -> Corpus:
    """Generate sessions and run the full window/label/split pipeline on them."""
    cfg = cfg or SynthConfig()
    recordings, events, keep = synthesize_sessions(cfg, seed)
    corpus = build_corpus(recordings, events, welch, window_s=cfg.window_s, offset_s=cfg.offset_s,
                          split_seed=seed if split_seed is None else split_seed, keep_straight=keep)
    corpus.seeds["synth"] = seed
    corpus.extra["synth"] = cfg.to_dict()
    return corpus
