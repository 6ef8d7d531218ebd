"""Labeled trial corpus: construction, splitting, features and on-disk format.

A corpus directory holds ``manifest.json`` (metadata, trial index with byte
ranges, split manifest, seeds, bin grid) and ``trials.bin`` (little-endian
float32 raw windows, channel-major, trials first, then reference windows).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..dsp import (
    DEFAULT_CHANNELS,
    RawEegSegment,
    Spectrogram,
    WelchConfig,
    log_ratio,
    retained_bins,
    welch_psd_batch,
)
from .events import (
    OFFSET_S,
    WINDOW_S,
    DrivingTrialEvents,
    Intention,
    Recording,
    Vigilance,
    extract_intention_windows,
    label_vigilance,
)

log = logging.getLogger(__name__)

CORPUS_MAGIC = "MEMCORPUS"
CORPUS_VERSION = 1
STATES = (Vigilance.ALERT, Vigilance.TRANSITION, Vigilance.DROWSY)


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrialMeta:
    id: int
    subject_id: str
    intention: Intention
    vigilance: Vigilance
    window_s: tuple[float, float]
    event: DrivingTrialEvents | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "subject": self.subject_id,
            "intention": self.intention.short,
            "vigilance": self.vigilance.value,
            "window": list(self.window_s),
            "event": None if self.event is None else self.event.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialMeta":
        ev = d.get("event")
        return cls(int(d["id"]), str(d["subject"]), Intention.parse(d["intention"]),
                   Vigilance.parse(d["vigilance"]), tuple(d["window"]),
                   None if ev is None else DrivingTrialEvents.from_dict(ev))


@dataclass(frozen=True)
class ReferenceMeta:
    id: int
    subject_id: str
    window_s: tuple[float, float]


@dataclass(frozen=True)
class TrialRecord:
    spectrogram: Spectrogram
    intention: Intention
    vigilance: Vigilance
    subject_id: str
    source_window: tuple[float, float]


@dataclass
class SplitManifest:
    train: dict[str, list[int]]
    val: dict[str, list[int]]
    test: dict[str, list[int]]
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    rng_seed: int = 0

    def ids(self, part: str, states: Iterable[Vigilance | str] | None = None) -> list[int]:
        table = getattr(self, part)
        keys = table.keys() if states is None else [Vigilance.parse(s).value for s in states]
        return sorted(i for k in keys for i in table.get(k, []))

    def to_dict(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test,
                "fractions": list(self.fractions), "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls({k: list(v) for k, v in d["train"].items()},
                   {k: list(v) for k, v in d["val"].items()},
                   {k: list(v) for k, v in d["test"].items()},
                   tuple(d["fractions"]), int(d["rng_seed"]))


def split_dataset(trial_ids: Sequence[int], vigilance: Sequence[Vigilance | str],
                  fractions: tuple[float, float, float] = (0.8, 0.1, 0.1), seed: int = 0) -> SplitManifest:
    """Stratified train/val/test split within each vigilance state.

    Validation and test sizes are floored; the remainder goes to train. A
    stratum with fewer than three trials goes entirely to train.
    """
    if len(fractions) != 3 or min(fractions) <= 0 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    if len(trial_ids) != len(vigilance):
        raise ValueError("trial_ids and vigilance differ in length")
    rng = np.random.default_rng(seed)
    parts = {"train": {}, "val": {}, "test": {}}
    for state in STATES:
        members = sorted(int(t) for t, v in zip(trial_ids, vigilance) if Vigilance.parse(v) is state)
        if not members:
            continue
        n = len(members)
        if n < 3:
            log.warning("vigilance state %s has only %d trials; all assigned to train", state.value, n)
            parts["train"][state.value], parts["val"][state.value], parts["test"][state.value] = members, [], []
            continue
        order = [members[i] for i in rng.permutation(n)]
        n_val = math.floor(fractions[1] * n + 1e-9)
        n_test = math.floor(fractions[2] * n + 1e-9)
        n_train = n - n_val - n_test
        parts["train"][state.value] = sorted(order[:n_train])
        parts["val"][state.value] = sorted(order[n_train:n_train + n_val])
        parts["test"][state.value] = sorted(order[n_train + n_val:])
    return SplitManifest(parts["train"], parts["val"], parts["test"], tuple(fractions), seed)


@dataclass
class FeatureSet:
    """Model-ready features: reference-normalised spectrograms and labels."""

    x: np.ndarray  # (M, N, d)
    y: np.ndarray  # (M,) intention codes
    vigilance: np.ndarray  # (M,) state strings
    subjects: np.ndarray
    ids: np.ndarray
    bin_freqs_hz: np.ndarray
    channel_names: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.y)

    def select(self, ids: Sequence[int]) -> "FeatureSet":
        pos = {int(t): i for i, t in enumerate(self.ids)}
        rows = np.array([pos[int(t)] for t in ids], dtype=np.intp)
        return FeatureSet(self.x[rows], self.y[rows], self.vigilance[rows], self.subjects[rows],
                          self.ids[rows], self.bin_freqs_hz, self.channel_names)


@dataclass
class Corpus:
    channel_names: tuple[str, ...]
    sampling_rate_hz: float
    welch: WelchConfig
    trials: list[TrialMeta]
    samples: np.ndarray  # (M, N, L) float32
    references: list[ReferenceMeta] = field(default_factory=list)
    ref_samples: np.ndarray | None = None  # (R, N, L) float32
    split: SplitManifest | None = None
    seeds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.channel_names)
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.size == 0:
            self.samples = self.samples.reshape(0, n, self.window_len)
        if self.ref_samples is None:
            self.ref_samples = np.zeros((0, n, self.window_len), dtype=np.float32)
        self.ref_samples = np.asarray(self.ref_samples, dtype=np.float32)

    @property
    def window_len(self) -> int:
        if self.samples is not None and self.samples.ndim == 3 and self.samples.shape[0]:
            return self.samples.shape[2]
        return int(round(self.extra.get("window_s", WINDOW_S) * self.sampling_rate_hz))

    @property
    def bin_freqs_hz(self) -> np.ndarray:
        return retained_bins(self.welch, self.sampling_rate_hz)

    def __len__(self) -> int:
        return len(self.trials)

    def summary(self) -> dict:
        counts: dict[str, dict[str, int]] = {}
        for t in self.trials:
            row = counts.setdefault(t.vigilance.value, {"L": 0, "R": 0, "S": 0})
            row[t.intention.short] += 1
        return {"n_trials": len(self.trials), "n_references": len(self.references),
                "subjects": sorted({t.subject_id for t in self.trials}), "counts": counts}

    def reference_psd(self) -> dict[str, np.ndarray]:
        """Per-subject mean reference PSD in linear power."""
        psd = welch_psd_batch(self.ref_samples.astype(np.float64), self.sampling_rate_hz, self.welch)
        out = {}
        for subject in sorted({r.subject_id for r in self.references}):
            rows = [i for i, r in enumerate(self.references) if r.subject_id == subject]
            out[subject] = psd[rows].mean(axis=0)
        return out

    def features(self) -> FeatureSet:
        refs = self.reference_psd()
        n, d = len(self.channel_names), len(self.bin_freqs_hz)
        x = np.zeros((len(self.trials), n, d))
        if self.trials:
            psd = welch_psd_batch(self.samples.astype(np.float64), self.sampling_rate_hz, self.welch)
            for i, t in enumerate(self.trials):
                if t.subject_id not in refs:
                    raise ValueError(f"subject {t.subject_id} has no reference windows")
                x[i] = log_ratio(psd[i], refs[t.subject_id])
        return FeatureSet(
            x=x,
            y=np.array([t.intention.value for t in self.trials], dtype=np.int64),
            vigilance=np.array([t.vigilance.value for t in self.trials], dtype=object),
            subjects=np.array([t.subject_id for t in self.trials], dtype=object),
            ids=np.array([t.id for t in self.trials], dtype=np.int64),
            bin_freqs_hz=self.bin_freqs_hz,
            channel_names=self.channel_names,
        )

    def records(self) -> list[TrialRecord]:
        feats = self.features()
        return [
            TrialRecord(Spectrogram(feats.x[i], feats.bin_freqs_hz, self.channel_names, True),
                        t.intention, t.vigilance, t.subject_id, t.window_s)
            for i, t in enumerate(self.trials)
        ]

    def segment(self, i: int) -> RawEegSegment:
        return RawEegSegment(self.samples[i], self.sampling_rate_hz, self.channel_names)


def build_corpus(recordings: Sequence[Recording], events: Sequence[DrivingTrialEvents],
                 welch: WelchConfig | None = None, *, window_s: float = WINDOW_S, offset_s: float = OFFSET_S,
                 fractions=(0.8, 0.1, 0.1), split_seed: int = 0,
                 keep_straight: set[tuple[str, float]] | None = None) -> Corpus:
    """Windows, vigilance labels and splits from raw sessions and their events.

    ``keep_straight`` optionally restricts which trials contribute a straight
    sample, keyed by (subject_id, deviation_onset_s).
    """
    welch = welch or WelchConfig()
    if not recordings:
        raise ValueError("no recordings given")
    first = recordings[0]
    for rec in recordings:
        if tuple(rec.channel_names) != tuple(first.channel_names) or rec.sampling_rate_hz != first.sampling_rate_hz:
            raise ValueError("all recordings must share channel names and sampling rate")
    welch.validate(first.sampling_rate_hz, int(round(window_s * first.sampling_rate_hz)))
    events = sorted(events, key=lambda e: (e.subject_id, e.deviation_onset_s))
    states = dict(zip(((e.subject_id, e.deviation_onset_s) for e in events), label_vigilance(events)))
    by_subject: dict[str, list[DrivingTrialEvents]] = {}
    for ev in events:
        by_subject.setdefault(ev.subject_id, []).append(ev)

    trials, samples, refs, ref_samples = [], [], [], []
    for rec in sorted(recordings, key=lambda r: r.subject_id):
        for w in extract_intention_windows(rec, by_subject.get(rec.subject_id, []), window_s, offset_s):
            key = (w.subject_id, w.event.deviation_onset_s)
            if w.kind == "reference":
                refs.append(ReferenceMeta(len(refs), w.subject_id, w.window_s))
                ref_samples.append(w.segment.samples)
                continue
            if w.kind == "straight" and keep_straight is not None and key not in keep_straight:
                continue
            trials.append(TrialMeta(len(trials), w.subject_id, w.intention, states[key], w.window_s, w.event))
            samples.append(w.segment.samples)
    shape = (0, len(first.channel_names), int(round(window_s * first.sampling_rate_hz)))
    corpus = Corpus(
        channel_names=tuple(first.channel_names),
        sampling_rate_hz=first.sampling_rate_hz,
        welch=welch,
        trials=trials,
        samples=np.array(samples, dtype=np.float32) if samples else np.zeros(shape, np.float32),
        references=refs,
        ref_samples=np.array(ref_samples, dtype=np.float32) if ref_samples else np.zeros(shape, np.float32),
        seeds={"split": split_seed},
        extra={"window_s": window_s, "offset_s": offset_s},
    )
    corpus.split = split_dataset([t.id for t in trials], [t.vigilance for t in trials], fractions, split_seed)
    return corpus


# persistence

def _manifest(corpus: Corpus) -> tuple[dict, bytes]:
    per_trial = corpus.samples.shape[1] * corpus.samples.shape[2] * 4 if corpus.samples.ndim == 3 else 0
    trial_index, offset = [], 0
    for t in corpus.trials:
        entry = t.to_dict()
        entry.update(offset=offset, length=per_trial)
        trial_index.append(entry)
        offset += per_trial
    ref_index = []
    for r in corpus.references:
        ref_index.append({"id": r.id, "subject": r.subject_id, "window": list(r.window_s),
                          "offset": offset, "length": per_trial})
        offset += per_trial
    manifest = {
        "magic": CORPUS_MAGIC,
        "version": CORPUS_VERSION,
        "channel_names": list(corpus.channel_names),
        "sampling_rate_hz": corpus.sampling_rate_hz,
        "window_len": corpus.window_len,
        "welch": corpus.welch.to_dict(),
        "bin_freqs_hz": corpus.bin_freqs_hz.tolist(),
        "trials": trial_index,
        "references": ref_index,
        "split": None if corpus.split is None else corpus.split.to_dict(),
        "seeds": corpus.seeds,
        "extra": corpus.extra,
        "payload_bytes": offset,
    }
    payload = (np.ascontiguousarray(corpus.samples, dtype="<f4").tobytes()
               + np.ascontiguousarray(corpus.ref_samples, dtype="<f4").tobytes())
    return manifest, payload


def write_corpus(corpus: Corpus, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest, payload = _manifest(corpus)
    (path / "trials.bin").write_bytes(payload)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_corpus(path) -> Corpus:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        payload = (path / "trials.bin").read_bytes()
    except FileNotFoundError as exc:
        raise CorpusFormatError(f"corpus file missing: {exc.filename}") from exc
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"corrupt manifest.json: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("magic") != CORPUS_MAGIC:
        raise CorpusFormatError("manifest.json is not a corpus manifest (magic mismatch)")
    if manifest.get("version") != CORPUS_VERSION:
        raise CorpusFormatError(f"unsupported corpus version {manifest.get('version')!r}")
    try:
        names = tuple(manifest["channel_names"])
        n, length = len(names), int(manifest["window_len"])
        if len(payload) != manifest["payload_bytes"]:
            raise CorpusFormatError(
                f"trials.bin holds {len(payload)} bytes, manifest expects {manifest['payload_bytes']}"
            )

        def load(entries):
            arr = np.zeros((len(entries), n, length), dtype=np.float32)
            for i, e in enumerate(entries):
                if e["length"] != n * length * 4 or e["offset"] + e["length"] > len(payload):
                    raise CorpusFormatError(f"byte range of entry {e['id']} is inconsistent")
                arr[i] = np.frombuffer(payload, dtype="<f4", count=n * length, offset=e["offset"]).reshape(n, length)
            return arr

        trials = [TrialMeta.from_dict(e) for e in manifest["trials"]]
        refs = [ReferenceMeta(int(e["id"]), str(e["subject"]), tuple(e["window"])) for e in manifest["references"]]
        corpus = Corpus(
            channel_names=names,
            sampling_rate_hz=float(manifest["sampling_rate_hz"]),
            welch=WelchConfig.from_dict(manifest["welch"]),
            trials=trials,
            samples=load(manifest["trials"]),
            references=refs,
            ref_samples=load(manifest["references"]),
            split=None if manifest["split"] is None else SplitManifest.from_dict(manifest["split"]),
            seeds=manifest["seeds"],
            extra=manifest["extra"],
        )
    except CorpusFormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorpusFormatError(f"malformed corpus manifest: {exc}") from exc
    if not np.array_equal(corpus.bin_freqs_hz, np.asarray(manifest["bin_freqs_hz"], dtype=np.float64)):
        raise CorpusFormatError("recorded bin grid disagrees with the Welch configuration")
    return corpus
