"""Masked EEG modeling for driving-intention prediction."""

__version__ = "0.1.0"

from .dsp import RawEegSegment, Spectrogram, WelchConfig, apply_reference, fft_power, welch_psd
from .masking import MaskPlan, Strategy, sample_mask
from .model import MemConfig, MemModel, mem_loss
from .training import CurriculumSchedule, TrainConfig, fit, ratio_for_epoch
from .evaluation import compute_metrics, evaluate, robustness_sweep
