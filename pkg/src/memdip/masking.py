"""Token views of a spectrogram and the random masks applied to them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .dsp import Spectrogram


class Strategy(str, Enum):
    CHANNEL = "channel"
    FREQUENCY = "frequency"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown masking strategy {value!r}; use 'channel' or 'frequency'") from None


class MaskPlanError(ValueError):
    pass


def mask_count(total_tokens: int, ratio: float) -> int:
    """Number of tokens to hide: round half away from zero, keep one visible."""
    if not 0.0 <= ratio <= 1.0:
        raise MaskPlanError(f"masking ratio must lie in [0, 1], got {ratio}")
    if total_tokens < 1:
        raise MaskPlanError("need at least one token")
    n = math.floor(ratio * total_tokens + 0.5)
    return min(max(n, 0), total_tokens - 1)


@dataclass(frozen=True)
class MaskPlan:
    strategy: Strategy
    ratio: float
    masked_indices: tuple[int, ...]
    total_tokens: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.masked_indices))
        if len(set(idx)) != len(idx):
            raise MaskPlanError("masked indices must be unique")
        if idx and (idx[0] < 0 or idx[-1] >= self.total_tokens):
            raise MaskPlanError(f"masked index out of range for {self.total_tokens} tokens")
        if len(idx) >= self.total_tokens:
            raise MaskPlanError("at least one token must stay visible")
        object.__setattr__(self, "masked_indices", idx)
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))

    @property
    def visible_indices(self) -> tuple[int, ...]:
        hidden = set(self.masked_indices)
        return tuple(i for i in range(self.total_tokens) if i not in hidden)

    def flags(self) -> np.ndarray:
        out = np.zeros(self.total_tokens, dtype=bool)
        out[list(self.masked_indices)] = True
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy.value,
                "ratio": self.ratio,
                "indices": list(self.masked_indices),
                "total_tokens": self.total_tokens,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MaskPlan":
        d = json.loads(text)
        return cls(Strategy.parse(d["strategy"]), float(d["ratio"]), tuple(d["indices"]), int(d["total_tokens"]))

    @classmethod
    def from_indices(cls, strategy, indices, total_tokens: int) -> "MaskPlan":
        return cls(Strategy.parse(strategy), len(indices) / total_tokens, tuple(indices), total_tokens)


def sample_mask(total_tokens: int, ratio: float, rng: np.random.Generator,
                strategy: Strategy | str = Strategy.CHANNEL) -> MaskPlan:
    """Uniformly choose tokens to mask, without replacement."""
    n = mask_count(total_tokens, ratio)
    idx = rng.choice(total_tokens, size=n, replace=False) if n else ()
    return MaskPlan(Strategy.parse(strategy), ratio, tuple(idx), total_tokens)


def sample_mask_batch(batch: int, total_tokens: int, ratio: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample masks for a batch, as (visible, masked) index arrays.

    Both arrays are sorted within each row; every row masks the same count.
    """
    n = mask_count(total_tokens, ratio)
    visible = np.empty((batch, total_tokens - n), dtype=np.intp)
    masked = np.empty((batch, n), dtype=np.intp)
    for b in range(batch):
        plan = sample_mask(total_tokens, ratio, rng)
        masked[b] = plan.masked_indices
        visible[b] = plan.visible_indices
    return visible, masked


def plan_to_batch(plan: MaskPlan | None, batch: int, total_tokens: int) -> tuple[np.ndarray, np.ndarray]:
    if plan is None:
        return np.tile(np.arange(total_tokens), (batch, 1)), np.empty((batch, 0), dtype=np.intp)
    if plan.total_tokens != total_tokens:
        raise MaskPlanError(f"plan covers {plan.total_tokens} tokens, input has {total_tokens}")
    vis = np.asarray(plan.visible_indices, dtype=np.intp)
    msk = np.asarray(plan.masked_indices, dtype=np.intp)
    return np.tile(vis, (batch, 1)), np.tile(msk, (batch, 1)).reshape(batch, len(msk))


# patches

def patchify(spec, strategy) -> np.ndarray:
    """Split a spectrogram into token patches.

    Channel tokens are the rows of ``spec`` (length d); frequency tokens are the
    columns (length N). Works on a single (N, d) array, a batch (B, N, d), or a
    :class:`Spectrogram`.
    """
    strategy = Strategy.parse(strategy)
    if isinstance(spec, Spectrogram):
        if not spec.reference_applied:
            raise ValueError("patchify expects a reference-normalised spectrogram")
        spec = spec.psd
    spec = np.asarray(spec)
    if strategy is Strategy.CHANNEL:
        return spec.copy()
    return np.swapaxes(spec, -1, -2).copy()


def depatchify(patches: np.ndarray, strategy) -> np.ndarray:
    strategy = Strategy.parse(strategy)
    patches = np.asarray(patches)
    if strategy is Strategy.CHANNEL:
        return patches.copy()
    return np.swapaxes(patches, -1, -2).copy()


def depatchify_tensor(patches: ad.Tensor, strategy) -> ad.Tensor:
    if Strategy.parse(strategy) is Strategy.CHANNEL:
        return patches
    axes = list(range(patches.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return ad.transpose(patches, axes)


def embed_patches(patches, weight, bias) -> ad.Tensor:
    """Map every patch through one shared affine projection to an s-vector."""
    patches = ad.as_tensor(patches)
    weight = ad.as_tensor(weight)
    if patches.shape[-1] != weight.shape[0]:
        raise ad.ShapeError(
            f"patch length {patches.shape[-1]} does not match projection input {weight.shape[0]}"
        )
    return patches @ weight + bias


@dataclass
class SplitTokens:
    visible: ad.Tensor  # (B, V, s)
    visible_positions: np.ndarray  # (B, V)
    masked_positions: np.ndarray  # (B, K - V)


def split_by_mask(tokens: ad.Tensor, visible: np.ndarray, masked: np.ndarray) -> SplitTokens:
    """Keep the visible tokens of a (B, K, s) sequence, in original order."""
    k = tokens.shape[1]
    visible = np.asarray(visible, dtype=np.intp)
    masked = np.asarray(masked, dtype=np.intp)
    if visible.shape[1] + masked.shape[1] != k:
        raise MaskPlanError(f"visible + masked positions != {k} tokens")
    both = np.concatenate([visible, masked], axis=1)
    if both.size and (both.min() < 0 or both.max() >= k):
        raise MaskPlanError("token position out of range")
    if not (np.sort(both, axis=1) == np.arange(k)).all():
        raise MaskPlanError("visible and masked positions collide or leave gaps")
    idx = np.broadcast_to(visible[:, :, None], (visible.shape[0], visible.shape[1], tokens.shape[2]))
    return SplitTokens(ad.gather(tokens, idx, axis=1), visible, masked)


def reassemble(latent: ad.Tensor, mask_token: ad.Tensor, visible: np.ndarray,
               masked: np.ndarray) -> ad.Tensor:
    """Put latents back at their positions and the mask token everywhere else."""
    b, v, s = latent.shape
    k = v + masked.shape[1]
    order = np.concatenate([visible, masked], axis=1)
    if not (np.sort(order, axis=1) == np.arange(k)).all():
        raise MaskPlanError("visible and masked positions collide or leave gaps")
    parts = [latent]
    if masked.shape[1]:
        parts.append(ad.broadcast_to(ad.reshape(mask_token, (1, 1, s)), (b, masked.shape[1], s)))
    stacked = ad.concat(parts, axis=1) if len(parts) > 1 else latent
    inverse = np.argsort(order, axis=1, kind="stable")
    idx = np.broadcast_to(inverse[:, :, None], (b, k, s))
    return ad.gather(stacked, idx, axis=1)
