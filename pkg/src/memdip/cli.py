"""Command-line driver: ``memdip <command> --config PATH [options]``.

Exit codes: 0 ok, 2 configuration or input error, 3 numeric failure,
4 checkpoint/config mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointFormatError
from .config import ExperimentConfig, load_config
from .data import (
    CorpusFormatError,
    EventError,
    LabelingError,
    Recording,
    build_corpus,
    read_corpus,
    read_events_csv,
    synthesize_corpus,
    write_corpus,
)
from .dsp import ConfigError
from .evaluation import (
    compare_strategies,
    evaluate,
    export_reconstructions,
    robustness_sweep,
    write_confusion_csv,
)
from .masking import MaskPlanError
from .model import ConfigMismatchError, MemModel, load_model, save_model
from .training import NonFiniteLossError, fit

log = logging.getLogger("memdip")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _parse_ratios(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--ratios must be a comma-separated list of numbers, got {text!r}") from None


def _corpus_out(cfg: ExperimentConfig, args) -> Path:
    return Path(args.out).resolve() if args.out else cfg.corpus_path


def _run_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out).resolve() if args.out else cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(cfg: ExperimentConfig, part: str, states=None):
    corpus = read_corpus(cfg.corpus_path)
    feats = corpus.features()
    if corpus.split is None:
        raise ConfigError("corpus carries no split manifest")
    return corpus, feats, feats.select(corpus.split.ids(part, states))


def _load_checkpoint(cfg: ExperimentConfig, args, run: Path) -> MemModel:
    path = Path(args.checkpoint) if args.checkpoint else run / "best.ckpt"
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    model, _ = load_model(path, expected_hash=cfg.hash, allow_mismatch=args.allow_mismatch)
    if args.strategy and model.cfg.strategy.value != args.strategy:
        raise ConfigMismatchError(
            f"--strategy {args.strategy} but checkpoint was trained with {model.cfg.strategy.value}"
        )
    return model


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    corpus = synthesize_corpus(cfg.synth_config(), seed=cfg.seed, welch=cfg.welch)
    path = write_corpus(corpus, _corpus_out(cfg, args))
    summary = corpus.summary()
    _say(args, f"wrote {summary['n_trials']} trials ({summary['n_references']} reference windows) to {path}")
    for state, row in sorted(summary["counts"].items()):
        _say(args, f"  {state:<10} L={row['L']:<5} R={row['R']:<5} S={row['S']:<5}")
    return EXIT_OK


def cmd_prepare(cfg: ExperimentConfig, args) -> int:
    if not args.events or not args.recording:
        raise ConfigError("prepare needs --events and at least one --recording")
    events = read_events_csv(args.events)
    recordings = [Recording.read(p) for p in args.recording]
    for rec in recordings:
        if tuple(c.upper() for c in rec.channel_names) != tuple(c.upper() for c in cfg.channels):
            raise ConfigError(f"recording {rec.subject_id}: channel names differ from config channels")
    corpus = build_corpus(recordings, events, cfg.welch, split_seed=cfg.seed)
    path = write_corpus(corpus, _corpus_out(cfg, args))
    summary = corpus.summary()
    _say(args, f"wrote {summary['n_trials']} trials, {summary['n_references']} reference windows to {path}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    run = _run_dir(cfg, args)
    states = cfg.eval.get("train_states")
    corpus, feats, train = _load_split(cfg, "train", states)
    val = feats.select(corpus.split.ids("val", states))
    mcfg = cfg.model_config(args.strategy)
    tcfg = cfg.train_config()
    model = MemModel(mcfg, seed=cfg.seed)
    result = fit(model, train, val, tcfg, log_path=run / "train_log.jsonl", checkpoint_dir=run,
                 config_hash=cfg.hash, quiet=args.quiet)
    save_model(model, run / "best.ckpt", config_hash=cfg.hash, extra={"epoch": result.best_epoch})
    last = MemModel(mcfg)
    last.load_state_dict(result.last_state)
    save_model(last, run / "last.ckpt", config_hash=cfg.hash, extra={"epoch": len(result.log) - 1})
    _write_json(run / "train_summary.json", {
        "config_hash": cfg.hash, "best_epoch": result.best_epoch, "best_val_acc": result.best_val_acc,
        "epochs_run": len(result.log), "strategy": mcfg.strategy.value, "parameters": model.num_parameters(),
    })
    _say(args, f"best epoch {result.best_epoch}: val accuracy {result.best_val_acc:.4f}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    run = _run_dir(cfg, args)
    model = _load_checkpoint(cfg, args, run)
    part = cfg.eval.get("part", "test")
    states = cfg.eval.get("test_states")
    _, _, data = _load_split(cfg, part, states)
    ratio = args.mask_ratio
    report = evaluate(model, data, mask_ratio=ratio, seed=cfg.seed)
    out = report.to_dict()
    out.update(config_hash=cfg.hash, part=part)
    _write_json(run / "metrics.json", out)
    write_confusion_csv(report, run / "confusion.csv")
    _say(args, f"accuracy {report.micro_accuracy:.4f}  precision {report.macro_precision:.4f}  "
               f"recall {report.macro_recall:.4f}  f1 {report.macro_f1:.4f}  (n={report.n_samples})")
    return EXIT_OK


def cmd_robustness(cfg: ExperimentConfig, args) -> int:
    run = _run_dir(cfg, args)
    model = _load_checkpoint(cfg, args, run)
    ratios = _parse_ratios(args.ratios) if args.ratios else cfg.eval.get("ratios", [0.0, 0.25, 0.5, 0.75, 0.9])
    seeds = cfg.eval.get("seeds", [0, 1, 2, 3, 4])
    _, _, data = _load_split(cfg, cfg.eval.get("part", "test"), cfg.eval.get("test_states"))
    curve = robustness_sweep(model, data, ratios, seeds, csv_path=run / "robustness.csv", label=cfg.hash[:12])
    _write_json(run / "robustness.json", {
        "config_hash": cfg.hash, "strategy": curve.strategy, "seeds": list(curve.seeds),
        "points": [{"ratio": r, "report": rep.to_dict(), "per_seed_accuracy": curve.per_seed_accuracy[r]}
                   for r, rep in curve.points],
    })
    for r, rep in curve.points:
        _say(args, f"ratio {r:.2f}: accuracy {rep.micro_accuracy:.4f}")
    return EXIT_OK


def cmd_reconstruct(cfg: ExperimentConfig, args) -> int:
    run = _run_dir(cfg, args)
    model = _load_checkpoint(cfg, args, run)
    ratios = _parse_ratios(args.ratios) if args.ratios else cfg.eval.get("ratios", [0.3, 0.6, 0.9])
    _, _, data = _load_split(cfg, cfg.eval.get("part", "test"), cfg.eval.get("test_states"))
    samples = cfg.eval.get("reconstruct_samples", [0])
    out = run / "reconstructions"
    index = export_reconstructions(model, data, ratios, out, sample_indices=samples, seed=cfg.seed)
    _write_json(out / "run.json", {"config_hash": cfg.hash, "ratios": ratios, "exports": len(index)})
    _say(args, f"wrote {len(index)} reconstruction exports to {out}")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    run = _run_dir(cfg, args)
    corpus = read_corpus(cfg.corpus_path)
    feats = corpus.features()
    rows = compare_strategies(feats, corpus.split, cfg.model_config(), cfg.train_config(),
                              csv_path=run / "strategy_comparison.csv", model_seed=cfg.seed)
    _write_json(run / "strategy_comparison.json", {"config_hash": cfg.hash, "rows": rows})
    for r in rows:
        _say(args, f"{r['train_states']:<9} {r['test_state']} {r['strategy']:<9} acc {r['accuracy']:.4f}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "reconstruct": cmd_reconstruct,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memdip", description="Masked EEG modeling for driving intention prediction")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (corpus dir for synth/prepare)")
        p.add_argument("--strategy", choices=["channel", "frequency"])
        p.add_argument("--mask-ratio", type=float)
        p.add_argument("--ratios", help="comma-separated masking ratios")
        p.add_argument("--checkpoint")
        p.add_argument("--allow-mismatch", action="store_true", help="accept checkpoints from other configs")
        p.add_argument("--quiet", action="store_true")
        if name == "prepare":
            p.add_argument("--events", help="events CSV")
            p.add_argument("--recording", action="append", help="float32 recording (sidecar <path>.json)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.mask_ratio is not None and not 0.0 <= args.mask_ratio <= 1.0:
            raise ConfigError("--mask-ratio must lie in [0, 1]")
        return COMMANDS[args.command](cfg, args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigMismatchError, CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ConfigError, EventError, LabelingError, CorpusFormatError, MaskPlanError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
