"""Trials, vigilance labels, splits and the corpus format."""

from .corpus import (
    Corpus,
    CorpusFormatError,
    FeatureSet,
    ReferenceMeta,
    SplitManifest,
    TrialMeta,
    TrialRecord,
    build_corpus,
    read_corpus,
    split_dataset,
    write_corpus,
)
from .events import (
    DrivingTrialEvents,
    EventError,
    Intention,
    LabelingError,
    Recording,
    Vigilance,
    WindowSample,
    extract_intention_windows,
    intention_windows,
    label_vigilance,
    percentile_linear,
    read_events_csv,
    vigilance_from_rt,
    window_overlaps,
    write_events_csv,
)
from .synth import SynthConfig, synthesize_corpus, synthesize_sessions
