"""
Tokens and masks
================

Channel tokens are spectrogram rows, frequency tokens are columns. A mask plan
hides a share of them; hidden tokens never reach the encoder.
"""

# %%
import numpy as np

from memdip.masking import MaskPlan, Strategy, mask_count, patchify, sample_mask
from memdip.model import MemConfig, MemModel

rng = np.random.default_rng(1)
w = rng.normal(size=(12, 17))
print("channel patches:", patchify(w, "channel").shape)
print("frequency patches:", patchify(w, "frequency").shape)

# %%
for ratio in (0.0, 0.05, 0.5, 0.9, 1.0):
    print(f"ratio {ratio:4.2f} -> {mask_count(12, ratio):2d} of 12 channel tokens hidden")

plan = sample_mask(12, 0.5, rng, Strategy.CHANNEL)
print(plan.to_json())
assert MaskPlan.from_json(plan.to_json()) == plan

# %%
# Whatever sits in a hidden row cannot change the prediction.
model = MemModel(MemConfig(embed_size=32, attention_heads=4, feedforward_width=64), seed=0)
vis = np.array([plan.visible_indices])
msk = np.array([plan.masked_indices])
a = model.forward(w[None], vis, msk).class_logits.data
w2 = w.copy()
w2[list(plan.masked_indices)] = 1e6
b = model.forward(w2[None], vis, msk).class_logits.data
print("logits identical:", np.array_equal(a, b))
