"""Masked EEG transformer: encoder over visible tokens, decoder, classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import ConfigError
from .masking import (
    Strategy,
    depatchify_tensor,
    embed_patches,
    patchify,
    reassemble,
    split_by_mask,
)

NUM_CLASSES = 3
CE_FLOOR = 1e-12


@dataclass(frozen=True)
class MemConfig:
    n_channels: int = 12
    n_bins: int = 17
    embed_size: int = 512
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    attention_heads: int = 4
    feedforward_width: int | None = None  # None -> 4 * embed_size
    strategy: Strategy = Strategy.CHANNEL
    num_classes: int = NUM_CLASSES
    dropout: float = 0.0
    positional: str = "learned"  # or "sinusoidal"
    reconstruction: bool = True  # False drops the decoder (plain ViT classifier)
    init_scale: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.feedforward_width is None:
            object.__setattr__(self, "feedforward_width", 4 * self.embed_size)
        self.validate()

    def validate(self) -> None:
        if self.embed_size < 1 or self.embed_size % self.attention_heads:
            raise ConfigError("model.embed_size must be a positive multiple of model.attention_heads")
        if self.encoder_blocks < 1:
            raise ConfigError("model.encoder_blocks must be >= 1")
        if self.reconstruction and self.decoder_blocks < 1:
            raise ConfigError("model.decoder_blocks must be >= 1")
        if self.positional not in ("learned", "sinusoidal"):
            raise ConfigError("model.positional must be 'learned' or 'sinusoidal'")
        if self.dropout != 0.0:
            # deterministic training contract; no stochastic layers
            raise ConfigError("model.dropout other than 0 is not supported")
        if self.n_channels < 1 or self.n_bins < 1:
            raise ConfigError("model.n_channels and model.n_bins must be >= 1")

    @property
    def n_tokens(self) -> int:
        return self.n_channels if self.strategy is Strategy.CHANNEL else self.n_bins

    @property
    def patch_len(self) -> int:
        return self.n_bins if self.strategy is Strategy.CHANNEL else self.n_channels

    @property
    def head_dim(self) -> int:
        return self.embed_size // self.attention_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MemConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model fields: {sorted(unknown)}")
        return cls(**d)


def parameter_count(cfg: MemConfig) -> int:
    """Closed-form number of learnable scalars for ``cfg``."""
    s, f, k, p, c = cfg.embed_size, cfg.feedforward_width, cfg.n_tokens, cfg.patch_len, cfg.num_classes
    block = 2 * 2 * s + 4 * (s * s + s) + (s * f + f) + (f * s + s)
    n = p * s + s + cfg.encoder_blocks * block + s * c + c
    if cfg.positional == "learned":
        n += k * s
    if cfg.reconstruction:
        n += s + cfg.decoder_blocks * block + 2 * s + s * p + p
        if cfg.positional == "learned":
            n += k * s
    return n


def sinusoidal_table(n: int, s: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(s)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / s)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class ForwardOutput:
    latent: ad.Tensor  # (B, V, s)
    reconstruction: ad.Tensor | None  # (B, N, d)
    class_logits: ad.Tensor  # (B, C)
    visible: np.ndarray
    masked: np.ndarray

    @property
    def class_probs(self) -> np.ndarray:
        return ad.softmax(self.class_logits.data, axis=-1).data

    @property
    def predictions(self) -> np.ndarray:
        return self.class_logits.data.argmax(axis=-1)


def _block_names(prefix: str) -> list[str]:
    return [
        f"{prefix}.ln1.gamma", f"{prefix}.ln1.beta",
        f"{prefix}.attn.wq", f"{prefix}.attn.bq",
        f"{prefix}.attn.wk", f"{prefix}.attn.bk",
        f"{prefix}.attn.wv", f"{prefix}.attn.bv",
        f"{prefix}.attn.wo", f"{prefix}.attn.bo",
        f"{prefix}.ln2.gamma", f"{prefix}.ln2.beta",
        f"{prefix}.ffn.w1", f"{prefix}.ffn.b1",
        f"{prefix}.ffn.w2", f"{prefix}.ffn.b2",
    ]


class MemModel:
    """All parameters of the network plus the forward computation.

    Parameters live in ``self.params`` (an insertion-ordered dict of leaf
    tensors), which is also the checkpoint order.
    """

    def __init__(self, cfg: MemConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, ad.Tensor] = {}
        rng = np.random.default_rng(seed)
        s, f, k, p, c = cfg.embed_size, cfg.feedforward_width, cfg.n_tokens, cfg.patch_len, cfg.num_classes
        sd = cfg.init_scale

        def normal(*shape):
            return rng.normal(0.0, sd, size=shape)

        self._add("patch.w", rng.normal(0.0, 1.0 / np.sqrt(p), size=(p, s)))
        self._add("patch.b", np.zeros(s))
        if cfg.positional == "learned":
            self._add("pos.enc", normal(k, s))
        for i in range(cfg.encoder_blocks):
            self._init_block(f"enc.{i}", rng)
        self._add("cls.w", normal(s, c))
        self._add("cls.b", np.zeros(c))
        if cfg.reconstruction:
            self._add("mask_token", normal(s))
            if cfg.positional == "learned":
                self._add("pos.dec", normal(k, s))
            for i in range(cfg.decoder_blocks):
                self._init_block(f"dec.{i}", rng)
            self._add("dec.norm.gamma", np.ones(s))
            self._add("dec.norm.beta", np.zeros(s))
            self._add("recon.w", normal(s, p))
            self._add("recon.b", np.zeros(p))
        if cfg.positional == "sinusoidal":
            self._fixed_pos = sinusoidal_table(k, s)

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = ad.parameter(value, name=name)

    def _init_block(self, prefix: str, rng: np.random.Generator) -> None:
        s, f = self.cfg.embed_size, self.cfg.feedforward_width
        xavier_s = np.sqrt(2.0 / (s + s))
        names = _block_names(prefix)
        shapes = {
            "ln1.gamma": None, "ln2.gamma": None,
            "attn.wq": (s, s), "attn.wk": (s, s), "attn.wv": (s, s), "attn.wo": (s, s),
            "ffn.w1": (s, f), "ffn.w2": (f, s),
        }
        for name in names:
            key = name[len(prefix) + 1:]
            if key.endswith("gamma"):
                self._add(name, np.ones(s))
            elif key in shapes:
                shp = shapes[key]
                scale = np.sqrt(2.0 / (shp[0] + shp[1])) if key.startswith("ffn") else xavier_s
                self._add(name, rng.normal(0.0, scale, size=shp))
            else:
                width = f if key == "ffn.b1" else s
                self._add(name, np.zeros(width))

    # parameter plumbing
    def parameters(self) -> Iterator[ad.Tensor]:
        return iter(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ad.ShapeError(f"{k}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.params[name]

    # building blocks
    def _positions(self, table: str, positions: np.ndarray) -> ad.Tensor:
        """Positional embeddings for an index array of shape (B, T)."""
        if self.cfg.positional == "sinusoidal":
            return ad.Tensor(self._fixed_pos[positions])
        pos = self.params[table]
        b, t = positions.shape
        s = self.cfg.embed_size
        idx = np.broadcast_to(positions[:, :, None], (b, t, s))
        full = ad.broadcast_to(ad.reshape(pos, (1,) + pos.shape), (b,) + pos.shape)
        return ad.gather(full, idx, axis=1)

    def _attention(self, x: ad.Tensor, prefix: str) -> ad.Tensor:
        P = self.params
        b, t, s = x.shape
        h, hd = self.cfg.attention_heads, self.cfg.head_dim

        def heads(w, bias):
            y = x @ P[f"{prefix}.{w}"] + P[f"{prefix}.{bias}"]
            return ad.transpose(ad.reshape(y, (b, t, h, hd)), (0, 2, 1, 3))

        q, k, v = heads("wq", "bq"), heads("wk", "bk"), heads("wv", "bv")
        scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
        attn = ad.softmax(scores, axis=-1)
        y = ad.transpose(attn @ v, (0, 2, 1, 3))
        y = ad.reshape(y, (b, t, s))
        return y @ P[f"{prefix}.wo"] + P[f"{prefix}.bo"]

    def _block(self, x: ad.Tensor, prefix: str) -> ad.Tensor:
        P = self.params
        hidden = ad.layer_norm(x, P[f"{prefix}.ln1.gamma"], P[f"{prefix}.ln1.beta"])
        x = x + self._attention(hidden, f"{prefix}.attn")
        hidden = ad.layer_norm(x, P[f"{prefix}.ln2.gamma"], P[f"{prefix}.ln2.beta"])
        hidden = ad.gelu(hidden @ P[f"{prefix}.ffn.w1"] + P[f"{prefix}.ffn.b1"])
        return x + (hidden @ P[f"{prefix}.ffn.w2"] + P[f"{prefix}.ffn.b2"])

    # public pieces
    def tokenize(self, spectra: np.ndarray) -> ad.Tensor:
        """(B, N, d) spectrograms -> (B, K, s) tokens, before positions."""
        patches = patchify(np.asarray(spectra, dtype=np.float64), self.cfg.strategy)
        return embed_patches(patches, self.params["patch.w"], self.params["patch.b"])

    def encode(self, visible_tokens: ad.Tensor, positions: np.ndarray) -> ad.Tensor:
        """Transformer encoder over visible tokens at the given positions."""
        positions = np.asarray(positions, dtype=np.intp)
        if visible_tokens.ndim != 3 or visible_tokens.shape[1] < 1:
            raise ad.ContractError("encoder needs at least one visible token")
        x = visible_tokens + self._positions("pos.enc", positions)
        for i in range(self.cfg.encoder_blocks):
            x = self._block(x, f"enc.{i}")
        return x

    def decode(self, latent: ad.Tensor, visible: np.ndarray, masked: np.ndarray) -> ad.Tensor:
        """Fill masked slots with the mask token and reconstruct (B, N, d)."""
        if not self.cfg.reconstruction:
            raise ad.ContractError("model was built without a decoder")
        P = self.params
        full = reassemble(latent, P["mask_token"], visible, masked)
        b, k = full.shape[0], full.shape[1]
        x = full + self._positions("pos.dec", np.tile(np.arange(k), (b, 1)))
        for i in range(self.cfg.decoder_blocks):
            x = self._block(x, f"dec.{i}")
        x = ad.layer_norm(x, P["dec.norm.gamma"], P["dec.norm.beta"])
        patches = x @ P["recon.w"] + P["recon.b"]
        return depatchify_tensor(patches, self.cfg.strategy)

    def classify(self, latent: ad.Tensor) -> ad.Tensor:
        pooled = ad.mean(latent, axis=1)
        return pooled @ self.params["cls.w"] + self.params["cls.b"]

    def forward(self, spectra: np.ndarray, visible: np.ndarray | None = None,
                masked: np.ndarray | None = None, reconstruct: bool | None = None) -> ForwardOutput:
        """Run the full network on a batch ``spectra`` of shape (B, N, d).

        ``visible``/``masked`` are per-sample sorted token index arrays; when
        omitted nothing is masked.
        """
        spectra = np.asarray(spectra, dtype=np.float64)
        if spectra.ndim == 2:
            spectra = spectra[None]
        if spectra.shape[1:] != (self.cfg.n_channels, self.cfg.n_bins):
            raise ad.ShapeError(
                f"expected spectrograms of shape (N={self.cfg.n_channels}, d={self.cfg.n_bins}), got {spectra.shape[1:]}"
            )
        b, k = spectra.shape[0], self.cfg.n_tokens
        if visible is None:
            visible = np.tile(np.arange(k), (b, 1))
            masked = np.empty((b, 0), dtype=np.intp)
        tokens = self.tokenize(spectra)
        split = split_by_mask(tokens, visible, masked)
        latent = self.encode(split.visible, split.visible_positions)
        logits = self.classify(latent)
        if reconstruct is None:
            reconstruct = self.cfg.reconstruction
        recon = self.decode(latent, split.visible_positions, split.masked_positions) if reconstruct else None
        return ForwardOutput(latent, recon, logits, split.visible_positions, split.masked_positions)


def vit_baseline(cfg: MemConfig) -> MemConfig:
    """Same encoder and classifier, no decoder."""
    d = cfg.to_dict()
    d["reconstruction"] = False
    return MemConfig.from_dict(d)


def cross_entropy(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean negative log-likelihood with a 1e-12 probability floor."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ad.ContractError("labels must be a vector with one entry per sample")
    c = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= c or not np.issubdtype(labels.dtype, np.integer)):
        raise ad.ContractError(f"labels must be integers in [0, {c})")
    probs = ad.softmax(logits, axis=-1)
    picked = ad.gather(probs, labels[:, None].astype(np.intp), axis=1)
    floored = picked + ad.Tensor(np.where(picked.data < CE_FLOOR, CE_FLOOR - picked.data, 0.0))
    return -ad.mean(ad.log(floored))


def reconstruction_mse(recon: ad.Tensor, target: np.ndarray, strategy: Strategy | None = None,
                       masked: np.ndarray | None = None) -> ad.Tensor:
    """Mean squared error over every element, or over masked tokens only.

    With ``masked`` given, only elements belonging to masked tokens count, and
    a batch without masked tokens contributes zero.
    """
    diff = recon - ad.Tensor(np.asarray(target, dtype=np.float64))
    sq = diff * diff
    if masked is None:
        return ad.mean(sq)
    if masked.shape[1] == 0:
        return ad.sum_(sq) * 0.0
    weights = np.zeros(sq.shape)
    rows = np.arange(sq.shape[0])[:, None]
    if Strategy.parse(strategy) is Strategy.CHANNEL:
        weights[rows, masked, :] = 1.0
    else:
        weights[rows, :, masked] = 1.0
    return ad.sum_(sq * weights) / float(weights.sum())


def mem_loss(out: ForwardOutput, labels: np.ndarray, target: np.ndarray, rec_weight: float = 0.1,
             cls_weight: float = 1.0, masked_only: bool = False,
             strategy: Strategy | None = None) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor | None]:
    """Joint objective ``cls_weight * CE + rec_weight * MSE``.

    Returns (total, cross-entropy, mse); mse is None when the output carries no
    reconstruction.
    """
    if rec_weight < 0:
        raise ad.ContractError("rec_weight must be non-negative")
    ce = cross_entropy(out.class_logits, labels)
    total = ce * cls_weight
    mse = None
    if out.reconstruction is not None:
        mse = reconstruction_mse(out.reconstruction, target, strategy,
                                 out.masked if masked_only else None)
        total = total + mse * rec_weight
    return total, ce, mse


def predict_logits(model: MemModel, spectra: np.ndarray, visible: np.ndarray | None = None,
                   masked: np.ndarray | None = None, batch_size: int = 256) -> np.ndarray:
    """Inference-only logits, batched; no decoder pass."""
    spectra = np.asarray(spectra, dtype=np.float64)
    out = np.zeros((spectra.shape[0], model.cfg.num_classes))
    for a in range(0, spectra.shape[0], batch_size):
        sl = slice(a, a + batch_size)
        fo = model.forward(spectra[sl], None if visible is None else visible[sl],
                           None if masked is None else masked[sl], reconstruct=False)
        out[sl] = fo.class_logits.data
    return out


class ConfigMismatchError(ValueError):
    """Checkpoint was produced under a different configuration."""


def save_model(model: MemModel, path, *, config_hash: str = "", dtype: str = "float64",
               extra: dict | None = None):
    return save_checkpoint(path, model.state_dict(), dtype=dtype, config_hash=config_hash,
                           model_config=model.cfg.to_dict(), extra=extra)


def load_model(path, *, expected_hash: str | None = None, expected_config: MemConfig | None = None,
               allow_mismatch: bool = False) -> tuple[MemModel, dict]:
    header, params = load_checkpoint(path)
    cfg = MemConfig.from_dict(header["model_config"])
    if not allow_mismatch:
        if expected_hash is not None and header.get("config_hash") != expected_hash:
            raise ConfigMismatchError(
                f"checkpoint config hash {header.get('config_hash')!r} != expected {expected_hash!r}"
            )
        if expected_config is not None and expected_config != cfg:
            raise ConfigMismatchError("checkpoint model configuration differs from the requested one")
    model = MemModel(cfg)
    model.load_state_dict(params)
    return model, header
