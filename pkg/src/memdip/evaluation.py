"""Metrics, masked-inference sweeps, strategy comparison and reconstruction export."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.corpus import FeatureSet, SplitManifest
from .data.events import Intention, Vigilance
from .masking import MaskPlan, mask_count, plan_to_batch, sample_mask_batch
from .model import MemConfig, MemModel, predict_logits

log = logging.getLogger(__name__)

CLASS_ORDER = (Intention.LEFT, Intention.RIGHT, Intention.STRAIGHT)


class EvaluationError(ValueError):
    pass


@dataclass
class MetricsReport:
    micro_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # rows true, cols predicted, L/R/S
    n_samples: int
    test_state: str | None = None
    plan: dict | None = None

    def to_dict(self) -> dict:
        return {
            "micro_accuracy": self.micro_accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "n_samples": self.n_samples,
            "test_state": self.test_state,
            "plan": self.plan,
        }


def confusion_matrix(predictions, labels, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.intp), np.asarray(predictions, dtype=np.intp)), 1)
    return cm


def compute_metrics(predictions, labels, test_state: str | None = None, n_classes: int = 3) -> MetricsReport:
    """Micro accuracy and macro precision/recall/F1; 0/0 counts as 0."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise EvaluationError("predictions and labels must be equal-length vectors")
    if labels.size == 0:
        raise EvaluationError("cannot score an empty prediction set")
    for arr, what in ((labels, "labels"), (predictions, "predictions")):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise EvaluationError(f"{what} must be class codes in [0, {n_classes})")
    cm = confusion_matrix(predictions, labels, n_classes)
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0).astype(np.float64)
    true_tot = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_tot, out=np.zeros(n_classes), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros(n_classes), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    return MetricsReport(
        micro_accuracy=float(tp.sum() / labels.size),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=cm,
        n_samples=int(labels.size),
        test_state=test_state,
    )


def _masks_for(model: MemModel, n: int, plan: MaskPlan | None, mask_ratio: float | None, seed: int):
    k = model.cfg.n_tokens
    if plan is not None and mask_ratio is not None:
        raise EvaluationError("give either a fixed plan or a mask ratio, not both")
    if plan is not None:
        if plan.strategy is not model.cfg.strategy:
            raise EvaluationError(f"plan strategy {plan.strategy.value} does not match model {model.cfg.strategy.value}")
        return plan_to_batch(plan, n, k) + (
            {"strategy": plan.strategy.value, "ratio": plan.ratio, "indices": list(plan.masked_indices)},
        )
    if mask_ratio is None:
        return None, None, None
    rng = np.random.default_rng(seed)
    visible, masked = sample_mask_batch(n, k, mask_ratio, rng)
    meta = {"strategy": model.cfg.strategy.value, "ratio": mask_ratio, "seed": seed,
            "masked_per_sample": int(masked.shape[1])}
    return visible, masked, meta


def predict(model: MemModel, data: FeatureSet, plan: MaskPlan | None = None, *,
            mask_ratio: float | None = None, seed: int = 0) -> np.ndarray:
    visible, masked, _ = _masks_for(model, len(data), plan, mask_ratio, seed)
    return predict_logits(model, data.x, visible, masked).argmax(axis=1)


def evaluate(model: MemModel, data: FeatureSet, plan: MaskPlan | None = None, *,
             mask_ratio: float | None = None, seed: int = 0, test_state: str | None = None) -> MetricsReport:
    """Score ``model`` on ``data``, optionally hiding tokens.

    A fixed ``plan`` hides the same tokens in every sample (e.g. known-dead
    channels); ``mask_ratio`` draws a fresh seeded mask per sample. Hidden
    tokens take the mask-token pathway, exactly as in training.
    """
    visible, masked, meta = _masks_for(model, len(data), plan, mask_ratio, seed)
    preds = predict_logits(model, data.x, visible, masked).argmax(axis=1)
    report = compute_metrics(preds, data.y, test_state)
    report.plan = meta
    return report


@dataclass
class RobustnessCurve:
    strategy: str
    seeds: tuple[int, ...]
    points: list[tuple[float, MetricsReport]] = field(default_factory=list)
    per_seed_accuracy: dict[float, list[float]] = field(default_factory=dict)

    @property
    def ratios(self) -> list[float]:
        return [r for r, _ in self.points]

    def mean_accuracy(self, ratio: float) -> float:
        return float(np.mean(self.per_seed_accuracy[ratio]))

    def to_csv(self, path, label: str = "") -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "strategy", "ratio", "masked_tokens", "accuracy", "accuracy_std",
                        "precision", "recall", "f1", "n_samples"])
            for r, rep in self.points:
                accs = self.per_seed_accuracy[r]
                masked = rep.plan.get("masked_per_sample") if rep.plan else 0
                w.writerow([label, self.strategy, repr(r), masked, repr(rep.micro_accuracy),
                            repr(float(np.std(accs))), repr(rep.macro_precision), repr(rep.macro_recall),
                            repr(rep.macro_f1), rep.n_samples])
        return path


def robustness_sweep(model: MemModel, data: FeatureSet, ratios: Sequence[float],
                     seeds: Sequence[int] = (0, 1, 2, 3, 4), csv_path=None, label: str = "") -> RobustnessCurve:
    """Accuracy under increasing masking; each point pools all seeds' predictions."""
    ratios = [float(r) for r in ratios]
    if len(set(ratios)) != len(ratios):
        raise EvaluationError("duplicate masking ratios in sweep")
    if any(not 0.0 <= r <= 1.0 for r in ratios):
        raise EvaluationError("masking ratios must lie in [0, 1]")
    if not seeds:
        raise EvaluationError("need at least one seed")
    curve = RobustnessCurve(model.cfg.strategy.value, tuple(int(s) for s in seeds))
    for r in sorted(ratios):
        preds, accs = [], []
        for s in seeds:
            p = predict(model, data, mask_ratio=r, seed=int(s))
            preds.append(p)
            accs.append(float((p == data.y).mean()))
        rep = compute_metrics(np.concatenate(preds), np.tile(data.y, len(seeds)))
        rep.plan = {"strategy": model.cfg.strategy.value, "ratio": r, "seeds": list(curve.seeds),
                    "masked_per_sample": mask_count(model.cfg.n_tokens, r)}
        curve.points.append((r, rep))
        curve.per_seed_accuracy[r] = accs
    if csv_path is not None:
        curve.to_csv(csv_path, label)
    return curve


# reconstruction export

def _write_grid(path: Path, grid: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(grid):
            w.writerow([repr(float(v)) for v in row])


def read_grid(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def _write_ppm(path: Path, truth: np.ndarray, recon: np.ndarray, row_flags: np.ndarray, scale: int = 8) -> None:
    """Side-by-side grayscale image; flagged rows get a red marker column."""
    lo = min(truth.min(), recon.min())
    hi = max(truth.max(), recon.max())
    span = hi - lo if hi > lo else 1.0
    n, d = truth.shape
    gap = 1
    width = 1 + gap + d + gap + d
    img = np.full((n, width, 3), 255, dtype=np.uint8)
    for i in range(n):
        if row_flags[i]:
            img[i, 0] = (220, 30, 30)
    for grid, x0 in ((truth, 1 + gap), (recon, 1 + 2 * gap + d)):
        g = np.clip((grid - lo) / span * 255.0, 0, 255).astype(np.uint8)
        img[:, x0 : x0 + d] = g[:, :, None]
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    header = f"P6 {img.shape[1]} {img.shape[0]} 255\n".encode("ascii")
    path.write_bytes(header + img.tobytes())


def export_reconstructions(model: MemModel, data: FeatureSet, ratios: Sequence[float], path,
                           sample_indices: Sequence[int] = (0,), seed: int = 0, ppm: bool = True) -> list[dict]:
    """Write ground-truth/reconstruction grids and per-token mask flags.

    For each (sample, ratio): ``*_truth.csv`` and ``*_recon.csv`` hold N x d
    grids, ``*_mask.csv`` one flag per token (rows for channel tokens,
    columns for frequency tokens). Returns one index entry per export.
    """
    if not model.cfg.reconstruction:
        raise EvaluationError("model has no decoder to reconstruct with")
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    k = model.cfg.n_tokens
    index = []
    for r in ratios:
        rng = np.random.default_rng(seed)
        for i in sample_indices:
            visible, masked = sample_mask_batch(1, k, float(r), rng)
            fo = model.forward(data.x[i : i + 1], visible, masked)
            truth = data.x[i]
            recon = fo.reconstruction.data[0]
            flags = np.zeros(k, dtype=bool)
            flags[masked[0]] = True
            stem = f"sample{int(data.ids[i]):05d}_ratio{float(r):.3f}"
            _write_grid(out_dir / f"{stem}_truth.csv", truth)
            _write_grid(out_dir / f"{stem}_recon.csv", recon)
            _write_grid(out_dir / f"{stem}_mask.csv", flags.astype(np.float64)[None, :])
            if ppm:
                row_flags = flags if model.cfg.strategy.value == "channel" else np.zeros(truth.shape[0], bool)
                _write_ppm(out_dir / f"{stem}.ppm", truth, recon, row_flags)
            index.append({"sample_id": int(data.ids[i]), "ratio": float(r), "stem": stem,
                          "masked_tokens": masked[0].tolist(), "strategy": model.cfg.strategy.value})
    (out_dir / "index.json").write_text(json.dumps(index, indent=1))
    return index


# masking-strategy comparison

TRAIN_REGIMES = ((Vigilance.ALERT,), (Vigilance.ALERT, Vigilance.TRANSITION, Vigilance.DROWSY))
TEST_STATES = (Vigilance.ALERT, Vigilance.TRANSITION, Vigilance.DROWSY)


def compare_strategies(features: FeatureSet, split: SplitManifest, model_cfg: MemConfig, train_cfg,
                       regimes=TRAIN_REGIMES, strategies=("channel", "frequency"), csv_path=None,
                       model_seed: int = 0) -> list[dict]:
    """Train one model per (training regime, strategy) and score it per test state.

    Rows follow the masking-strategy table layout: for each regime, each
    strategy, each test state. States absent from the corpus are skipped with
    a warning.
    """
    from .training import fit

    present = {Vigilance.parse(v) for v in features.vigilance}
    rows = []
    for regime in regimes:
        train_states = [s for s in regime if s in present]
        if not train_states:
            log.warning("no training data for regime %s; skipped", "+".join(s.short for s in regime))
            continue
        tag = "+".join(s.short for s in regime)
        train = features.select(split.ids("train", train_states))
        val = features.select(split.ids("val", train_states))
        for strategy in strategies:
            cfg = replace(model_cfg, strategy=strategy)
            model = MemModel(cfg, seed=model_seed)
            fit(model, train, val, train_cfg)
            for state in TEST_STATES:
                if state not in present:
                    log.warning("test state %s missing from corpus; row skipped", state.value)
                    continue
                test = features.select(split.ids("test", [state]))
                if len(test) == 0:
                    log.warning("test split for %s is empty; row skipped", state.value)
                    continue
                rep = evaluate(model, test, test_state=state.short)
                rows.append({"train_states": tag, "test_state": state.short, "strategy": strategy,
                             "accuracy": rep.micro_accuracy, "precision": rep.macro_precision,
                             "recall": rep.macro_recall, "f1": rep.macro_f1, "n_samples": rep.n_samples})
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["train_states", "test_state", "strategy", "accuracy",
                                               "precision", "recall", "f1", "n_samples"])
            w.writeheader()
            w.writerows(rows)
    return rows


def write_confusion_csv(report: MetricsReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + [c.short for c in CLASS_ORDER])
        for c, row in zip(CLASS_ORDER, report.confusion):
            w.writerow([c.short] + [int(v) for v in row])
    return path
