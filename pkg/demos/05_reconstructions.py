"""
Looking at reconstructions
==========================

The decoder fills hidden rows from what it saw. Exports are CSV grids plus a
small PPM image per sample and ratio, with hidden rows marked in red.
"""

# %%
from pathlib import Path

import numpy as np

from memdip.data import SynthConfig, synthesize_corpus
from memdip.evaluation import export_reconstructions, read_grid
from memdip.model import MemConfig, MemModel
from memdip.training import CurriculumSchedule, TrainConfig, fit

corpus = synthesize_corpus(SynthConfig(n_trials=150, n_subjects=3), seed=4)
feats = corpus.features()
train, val = (feats.select(corpus.split.ids(p)) for p in ("train", "val"))
model = MemModel(MemConfig(embed_size=32, attention_heads=4, feedforward_width=64), seed=0)
fit(model, train, val, TrainConfig(lr=3e-3, batch_size=32, rec_weight=1.0, schedule=CurriculumSchedule.fixed(0.3),
                                   max_epochs=40))

# %%
out = Path("demo_output/reconstructions")
index = export_reconstructions(model, val, [0.3, 0.6, 0.9], out, sample_indices=[0])
for e in index:
    truth = read_grid(out / f"{e['stem']}_truth.csv")
    recon = read_grid(out / f"{e['stem']}_recon.csv")
    hidden = e["masked_tokens"]
    err = np.mean((truth[hidden] - recon[hidden]) ** 2) if hidden else 0.0
    print(f"ratio {e['ratio']:.1f}: {len(hidden):2d} rows hidden, mse on hidden rows {err:.4f}, var {truth.var():.4f}")
