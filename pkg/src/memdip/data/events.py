"""Driving events, intention windows and vigilance labels."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..dsp import DEFAULT_CHANNELS, RawEegSegment

log = logging.getLogger(__name__)

WINDOW_S = 0.5
OFFSET_S = 0.1
ALERT_FACTOR = 1.5
DROWSY_FACTOR = 2.5
ALERT_PERCENTILE = 5.0
MIN_TRIALS_FOR_PERCENTILE = 20


class Intention(int, Enum):
    LEFT = 0
    RIGHT = 1
    STRAIGHT = 2

    @property
    def short(self) -> str:
        return "LRS"[self.value]

    @classmethod
    def parse(cls, value) -> "Intention":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().upper()
        table = {"L": cls.LEFT, "LEFT": cls.LEFT, "R": cls.RIGHT, "RIGHT": cls.RIGHT,
                 "S": cls.STRAIGHT, "STRAIGHT": cls.STRAIGHT}
        if key not in table:
            raise ValueError(f"unknown intention {value!r}")
        return table[key]


class Vigilance(str, Enum):
    ALERT = "alert"
    TRANSITION = "transition"
    DROWSY = "drowsy"

    @property
    def short(self) -> str:
        return {"alert": "AS", "transition": "TS", "drowsy": "DS"}[self.value]

    @classmethod
    def parse(cls, value) -> "Vigilance":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        short = {"as": "alert", "ts": "transition", "ds": "drowsy"}
        return cls(short.get(key, key))


class EventError(ValueError):
    pass


class LabelingError(ValueError):
    pass


@dataclass(frozen=True)
class DrivingTrialEvents:
    deviation_onset_s: float
    response_onset_s: float
    response_offset_s: float
    steering_direction: Intention
    subject_id: str = "s0"

    def __post_init__(self):
        d = Intention.parse(self.steering_direction)
        if d is Intention.STRAIGHT:
            raise EventError("steering direction must be left or right")
        object.__setattr__(self, "steering_direction", d)
        object.__setattr__(self, "subject_id", str(self.subject_id))
        if not self.deviation_onset_s < self.response_onset_s <= self.response_offset_s:
            raise EventError(
                "event times must satisfy deviation_onset < response_onset <= response_offset, got "
                f"{self.deviation_onset_s}, {self.response_onset_s}, {self.response_offset_s}"
            )

    @property
    def local_rt(self) -> float:
        return self.response_onset_s - self.deviation_onset_s

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "deviation_onset_s": self.deviation_onset_s,
            "response_onset_s": self.response_onset_s,
            "response_offset_s": self.response_offset_s,
            "steering_direction": self.steering_direction.name.lower(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DrivingTrialEvents":
        return cls(float(d["deviation_onset_s"]), float(d["response_onset_s"]),
                   float(d["response_offset_s"]), Intention.parse(d["steering_direction"]),
                   str(d.get("subject_id", "s0")))


EVENT_COLUMNS = ("subject_id", "deviation_onset_s", "response_onset_s", "response_offset_s", "steering_direction")


def read_events_csv(path) -> list[DrivingTrialEvents]:
    """Parse an events CSV; errors carry the offending line number."""
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVENT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise EventError(f"{path}: line 1: missing columns {sorted(missing)}")
        for row in reader:
            try:
                events.append(DrivingTrialEvents.from_dict(row))
            except (ValueError, TypeError, KeyError) as exc:
                raise EventError(f"{path}: line {reader.line_num}: {exc}") from exc
    return events


def write_events_csv(path, events: Iterable[DrivingTrialEvents]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVENT_COLUMNS)
        writer.writeheader()
        for ev in events:
            writer.writerow(ev.to_dict())


@dataclass
class Recording:
    """A continuous session: channel-major samples plus metadata."""

    samples: np.ndarray  # (N, total)
    sampling_rate_hz: float = 500.0
    channel_names: tuple[str, ...] = DEFAULT_CHANNELS
    subject_id: str = "s0"

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sampling_rate_hz

    def write(self, path) -> None:
        """Little-endian float32 channel-major stream plus ``<path>.json`` sidecar."""
        path = Path(path)
        np.ascontiguousarray(self.samples, dtype="<f4").tofile(path)
        sidecar = {"channel_names": list(self.channel_names), "sampling_rate_hz": self.sampling_rate_hz,
                   "subject_id": self.subject_id, "n_samples": int(self.samples.shape[1])}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def read(cls, path) -> "Recording":
        path = Path(path)
        side = json.loads(Path(str(path) + ".json").read_text())
        names = tuple(side["channel_names"])
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % len(names):
            raise EventError(f"{path}: sample count {raw.size} not divisible by {len(names)} channels")
        samples = raw.reshape(len(names), -1)
        if "n_samples" in side and samples.shape[1] != side["n_samples"]:
            raise EventError(f"{path}: expected {side['n_samples']} samples per channel")
        return cls(samples, float(side["sampling_rate_hz"]), names, str(side.get("subject_id", "s0")))


@dataclass(frozen=True)
class WindowSample:
    segment: RawEegSegment
    kind: str  # "turning" | "straight" | "reference"
    intention: Intention | None
    subject_id: str
    window_s: tuple[float, float]
    event_index: int
    event: DrivingTrialEvents = field(repr=False)


def intention_windows(ev: DrivingTrialEvents, window_s: float = WINDOW_S,
                      offset_s: float = OFFSET_S) -> dict[str, tuple[float, float]]:
    """[start, end) times of the turning, straight and reference windows."""
    return {
        "turning": (ev.response_onset_s - window_s, ev.response_onset_s),
        "straight": (ev.response_offset_s + offset_s, ev.response_offset_s + offset_s + window_s),
        "reference": (ev.deviation_onset_s - offset_s - window_s, ev.deviation_onset_s - offset_s),
    }


def extract_intention_windows(recording: Recording, events: Sequence[DrivingTrialEvents],
                              window_s: float = WINDOW_S, offset_s: float = OFFSET_S) -> list[WindowSample]:
    """Cut turning, straight and reference windows for every in-bounds trial.

    Events are processed in deviation-onset order; ``event_index`` refers to
    that sorted order. A trial with any window outside the recording is
    skipped with a warning.
    """
    fs = recording.sampling_rate_hz
    n_len = int(round(window_s * fs))
    total = recording.samples.shape[1]
    out: list[WindowSample] = []
    ordered = sorted(events, key=lambda e: (e.deviation_onset_s, e.response_onset_s))
    for i, ev in enumerate(ordered):
        spans = intention_windows(ev, window_s, offset_s)
        starts = {k: int(round(a * fs)) for k, (a, _) in spans.items()}
        if any(s < 0 or s + n_len > total for s in starts.values()):
            log.warning("subject %s trial at %.3f s: window outside recording, skipped",
                        ev.subject_id, ev.deviation_onset_s)
            continue
        for kind in ("turning", "straight", "reference"):
            s = starts[kind]
            seg = RawEegSegment(recording.samples[:, s : s + n_len], fs, recording.channel_names)
            intention = {"turning": ev.steering_direction, "straight": Intention.STRAIGHT,
                         "reference": None}[kind]
            out.append(WindowSample(seg, kind, intention, ev.subject_id, spans[kind], i, ev))
    return out


def percentile_linear(values: Sequence[float], q: float) -> float:
    return float(np.percentile(np.asarray(values, dtype=np.float64), q, method="linear"))


def vigilance_from_rt(local_rt: float, alert_rt: float) -> Vigilance:
    if local_rt < ALERT_FACTOR * alert_rt:
        return Vigilance.ALERT
    if local_rt > DROWSY_FACTOR * alert_rt:
        return Vigilance.DROWSY
    return Vigilance.TRANSITION


def label_vigilance(events: Sequence[DrivingTrialEvents]) -> list[Vigilance]:
    """Vigilance per trial, relative to each subject's 5th-percentile reaction time."""
    if not events:
        raise LabelingError("cannot label an empty trial list")
    by_subject: dict[str, list[float]] = {}
    for ev in events:
        by_subject.setdefault(ev.subject_id, []).append(ev.local_rt)
    alert_rt = {}
    for subject, rts in by_subject.items():
        if len(rts) < MIN_TRIALS_FOR_PERCENTILE:
            log.warning("subject %s has only %d trials; alert-RT percentile is unreliable", subject, len(rts))
        alert_rt[subject] = percentile_linear(rts, ALERT_PERCENTILE)
    return [vigilance_from_rt(ev.local_rt, alert_rt[ev.subject_id]) for ev in events]


def alert_rt_by_subject(events: Sequence[DrivingTrialEvents]) -> dict[str, float]:
    by_subject: dict[str, list[float]] = {}
    for ev in events:
        by_subject.setdefault(ev.subject_id, []).append(ev.local_rt)
    return {k: percentile_linear(v, ALERT_PERCENTILE) for k, v in by_subject.items()}


def window_overlaps(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] < b[1] and b[0] < a[1]

