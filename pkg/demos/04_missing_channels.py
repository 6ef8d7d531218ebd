"""
Accuracy with channels missing
==============================

A missing channel is treated exactly like a masked token. Training with the
rising masking ratio is compared against training at a fixed low ratio; both
curves land in CSV files for plotting elsewhere.
"""

# %%
from pathlib import Path

from memdip.data import SynthConfig, synthesize_corpus
from memdip.evaluation import robustness_sweep
from memdip.model import MemConfig, MemModel
from memdip.training import CurriculumSchedule, TrainConfig, fit

out = Path("demo_output")
out.mkdir(exist_ok=True)
corpus = synthesize_corpus(SynthConfig(n_trials=600), seed=0)
feats = corpus.features()
train, val, test = (feats.select(corpus.split.ids(p)) for p in ("train", "val", "test"))
mcfg = MemConfig(embed_size=32, attention_heads=4, feedforward_width=64, strategy="channel")

schedules = {
    "curriculum": CurriculumSchedule.compressed(5, cap_epochs=5),
    "fixed_0.05": CurriculumSchedule(((0.05, 50),)),
}
ratios = [0.0, 0.25, 0.5, 0.75, 0.9]

# %%
for name, schedule in schedules.items():
    model = MemModel(mcfg, seed=0)
    fit(model, train, val, TrainConfig(lr=1e-3, batch_size=32, schedule=schedule))
    curve = robustness_sweep(model, test, ratios, seeds=range(5), csv_path=out / f"robustness_{name}.csv", label=name)
    print(name, " ".join(f"{r:.2f}:{curve.mean_accuracy(r):.3f}" for r in ratios))
