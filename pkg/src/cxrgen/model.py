"""The report-generation network.

Three parts feed a transformer decoder:

* a visual unit that normalizes an image feature vector and lifts it to the
  model width through a ReLU dense layer plus multi-head self-attention;
* a semantic unit, a single fully connected layer over the encoded
  demographic vector;
* a fusion block where the normalized image representation queries
  demographic-derived keys/values, yielding the hybrid representation the
  decoder attends to.

The decoder embeds the target ids, injects sinusoidal positions, applies
causally masked self-attention, attends over the hybrid representation, and
classifies each position over the vocabulary. Residual connections wrap
every attention and feed-forward sublayer; layer norm follows the attention
sublayers, matching the published layer ordering.

Multi-head attention is parameterized per head: each head h owns its own
query/key/value projections plus an output projection back to the model
width, and head outputs are summed (equivalent to concatenation followed by
a single block output matrix) before a shared output bias.

Baseline (image-only) models set ``demographic_dim`` to zero, which removes
the semantic and fusion parameters entirely; the hybrid representation is
then just the visual encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor
from .text import END_ID, PAD_ID, START_ID


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters; every parameter shape derives from these."""
    feature_dim: int = 1280
    d_model: int = 512
    d_embed: int = 512
    n_heads: int = 8
    vocab_size: int = 2212
    max_len: int = 50
    demographic_dim: int = 7
    n_decoder_blocks: int = 1
    dropout_rate: float = 0.1

    def __post_init__(self):
        positive = ("feature_dim", "d_model", "d_embed", "n_heads", "vocab_size",
                    "max_len", "n_decoder_blocks")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.demographic_dim < 0:
            raise ConfigError("demographic_dim may not be negative")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.d_embed != self.d_model:
            raise ConfigError(
                "the embedding width must equal the model width "
                f"(got d_embed={self.d_embed}, d_model={self.d_model})"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the four reserved ids")
        if self.max_len < 3:
            raise ConfigError("max_len must be at least 3")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def uses_demographics(self) -> bool:
        return self.demographic_dim > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


def _attention_shapes(shapes: dict, prefix: str, cfg: ModelConfig) -> None:
    dk = cfg.d_head
    for h in range(cfg.n_heads):
        shapes[f"{prefix}.h{h}.wq"] = (cfg.d_model, dk)
        shapes[f"{prefix}.h{h}.wk"] = (cfg.d_model, dk)
        shapes[f"{prefix}.h{h}.wv"] = (cfg.d_model, dk)
        shapes[f"{prefix}.h{h}.wo"] = (dk, cfg.d_model)
    shapes[f"{prefix}.bo"] = (cfg.d_model,)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The closed, ordered set of parameter names and their shapes."""
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["visual.feat_norm.gain"] = (cfg.feature_dim,)
    shapes["visual.feat_norm.bias"] = (cfg.feature_dim,)
    shapes["visual.ff.w"] = (cfg.feature_dim, cfg.d_model)
    shapes["visual.ff.b"] = (cfg.d_model,)
    _attention_shapes(shapes, "visual.attn", cfg)
    shapes["visual.norm.gain"] = (cfg.d_model,)
    shapes["visual.norm.bias"] = (cfg.d_model,)
    if cfg.uses_demographics:
        shapes["semantic.fc.w"] = (cfg.demographic_dim, cfg.d_model)
        shapes["semantic.fc.b"] = (cfg.d_model,)
        _attention_shapes(shapes, "fusion.attn", cfg)
        shapes["fusion.norm.gain"] = (cfg.d_model,)
        shapes["fusion.norm.bias"] = (cfg.d_model,)
    shapes["embed.table"] = (cfg.vocab_size, cfg.d_embed)
    for i in range(cfg.n_decoder_blocks):
        _attention_shapes(shapes, f"dec{i}.self_attn", cfg)
        shapes[f"dec{i}.norm1.gain"] = (cfg.d_model,)
        shapes[f"dec{i}.norm1.bias"] = (cfg.d_model,)
        _attention_shapes(shapes, f"dec{i}.cross_attn", cfg)
        shapes[f"dec{i}.norm2.gain"] = (cfg.d_model,)
        shapes[f"dec{i}.norm2.bias"] = (cfg.d_model,)
        shapes[f"dec{i}.ff.w"] = (cfg.d_model, cfg.d_model)
        shapes[f"dec{i}.ff.b"] = (cfg.d_model,)
    shapes["classifier.w"] = (cfg.d_model, cfg.vocab_size)
    shapes["classifier.b"] = (cfg.vocab_size,)
    return shapes


def init_parameters(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Seeded Glorot-uniform weights; unit norm gains; zero biases."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith((".bias", ".b", ".bo")):
            data = np.zeros(shape)
        else:
            fan_in, fan_out = shape[0], shape[1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def check_parameters(params: dict[str, Tensor], cfg: ModelConfig) -> None:
    """Verify the name set is exactly the closed set and shapes all match."""
    expected = parameter_shapes(cfg)
    missing = expected.keys() - params.keys()
    extra = params.keys() - expected.keys()
    if missing or extra:
        raise ContractError(
            f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ShapeError(
                f"parameter {name!r} has shape {tuple(params[name].shape)}, expected {shape}"
            )


def _linear(x: Tensor, params, prefix: str) -> Tensor:
    return T.add(T.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _multi_head_attention(params, prefix: str, cfg: ModelConfig, query: Tensor,
                          keyvalue: Tensor, mask=None) -> Tensor:
    out = None
    for h in range(cfg.n_heads):
        q = T.matmul(query, params[f"{prefix}.h{h}.wq"])
        k = T.matmul(keyvalue, params[f"{prefix}.h{h}.wk"])
        v = T.matmul(keyvalue, params[f"{prefix}.h{h}.wv"])
        attended = T.scaled_dot_attention(q, k, v, mask)
        projected = T.matmul(attended, params[f"{prefix}.h{h}.wo"])
        out = projected if out is None else T.add(out, projected)
    return T.add(out, params[f"{prefix}.bo"])


def _maybe_dropout(x: Tensor, cfg: ModelConfig, training: bool, rng) -> Tensor:
    if training and cfg.dropout_rate > 0.0:
        if rng is None:
            raise ContractError("training-mode forward needs an rng for dropout")
        return T.dropout(x, cfg.dropout_rate, rng)
    return x


def visual_encode(features, params, cfg: ModelConfig, training: bool = False,
                  rng=None) -> Tensor:
    """Image feature vector -> normalized [1 x d_model] visual representation."""
    feats = np.asarray(features, dtype=np.float64).reshape(-1)
    if feats.shape[0] != cfg.feature_dim:
        raise ShapeError(
            f"expected {cfg.feature_dim} image features, got {feats.shape[0]}"
        )
    x = Tensor(feats[None, :])
    x = T.layer_norm(x, params["visual.feat_norm.gain"], params["visual.feat_norm.bias"])
    h = T.relu(_linear(x, params, "visual.ff"))
    attended = _multi_head_attention(params, "visual.attn", cfg, h, h)
    attended = _maybe_dropout(attended, cfg, training, rng)
    return T.layer_norm(T.add(h, attended),
                        params["visual.norm.gain"], params["visual.norm.bias"])


def semantic_encode(demo, params, cfg: ModelConfig) -> Tensor:
    """Demographic vector -> [1 x d_model] semantic representation."""
    if not cfg.uses_demographics:
        raise ContractError("this configuration has no semantic unit (demographic_dim=0)")
    vec = np.asarray(demo, dtype=np.float64).reshape(-1)
    if vec.shape[0] != cfg.demographic_dim:
        raise ShapeError(
            f"expected a demographic vector of length {cfg.demographic_dim}, "
            f"got {vec.shape[0]}"
        )
    return _linear(Tensor(vec[None, :]), params, "semantic.fc")


def fuse_visual_semantic(visual: Tensor, semantic: Tensor, params, cfg: ModelConfig,
                         training: bool = False, rng=None) -> Tensor:
    """Attend from the visual representation over semantic keys/values."""
    if visual.shape != (1, cfg.d_model) or semantic.shape != (1, cfg.d_model):
        raise ShapeError(
            f"fusion expects [1 x {cfg.d_model}] inputs, got "
            f"{tuple(visual.shape)} and {tuple(semantic.shape)}"
        )
    attended = _multi_head_attention(params, "fusion.attn", cfg, visual, semantic)
    attended = _maybe_dropout(attended, cfg, training, rng)
    return T.layer_norm(T.add(visual, attended),
                        params["fusion.norm.gain"], params["fusion.norm.bias"])


def encode_inputs(features, demo, params, cfg: ModelConfig, training: bool = False,
                  rng=None) -> Tensor:
    """Run the full encoder: visual unit, then fusion when demographics are in use."""
    visual = visual_encode(features, params, cfg, training=training, rng=rng)
    if not cfg.uses_demographics:
        return visual
    if demo is None:
        raise ContractError("this configuration requires a demographic vector")
    semantic = semantic_encode(demo, params, cfg)
    return fuse_visual_semantic(visual, semantic, params, cfg, training=training, rng=rng)


def _causal_pad_mask(ids: np.ndarray, pad_id: int) -> np.ndarray:
    length = ids.shape[0]
    causal = np.tril(np.ones((length, length), dtype=bool))
    return causal & (ids != pad_id)[None, :]


def decoder_forward(target_ids, hybrid: Tensor, params, cfg: ModelConfig,
                    pad_id: int = PAD_ID, training: bool = False, rng=None) -> Tensor:
    """Per-position vocabulary logits for a (shifted) target id sequence.

    Position t sees only positions <= t; pad positions are excluded from the
    attention keys.
    """
    ids = np.asarray(target_ids, dtype=np.int64).reshape(-1)
    if ids.shape[0] == 0:
        raise ContractError("decoder needs at least one input id")
    if ids.shape[0] > cfg.max_len:
        raise ContractError(
            f"sequence length {ids.shape[0]} exceeds the maximum {cfg.max_len}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ContractError(
            f"token id out of range [0, {cfg.vocab_size}): {int(ids.min())}..{int(ids.max())}"
        )
    x = T.embedding(params["embed.table"], ids)
    positions = Tensor(T.sinusoidal_positions(ids.shape[0], cfg.d_embed,
                                              dtype=x.data.dtype))
    x = T.add(x, positions)
    x = _maybe_dropout(x, cfg, training, rng)
    mask = _causal_pad_mask(ids, pad_id)
    for i in range(cfg.n_decoder_blocks):
        attended = _multi_head_attention(params, f"dec{i}.self_attn", cfg, x, x, mask)
        attended = _maybe_dropout(attended, cfg, training, rng)
        x = T.layer_norm(T.add(x, attended),
                         params[f"dec{i}.norm1.gain"], params[f"dec{i}.norm1.bias"])
        cross = _multi_head_attention(params, f"dec{i}.cross_attn", cfg, x, hybrid)
        cross = _maybe_dropout(cross, cfg, training, rng)
        x = T.layer_norm(T.add(x, cross),
                         params[f"dec{i}.norm2.gain"], params[f"dec{i}.norm2.bias"])
        ff = T.relu(_linear(x, params, f"dec{i}.ff"))
        ff = _maybe_dropout(ff, cfg, training, rng)
        x = T.add(x, ff)
    return _linear(x, params, "classifier")


def generate(features, demo, params, cfg: ModelConfig, temperature: float = 0.5,
             seed: int = 0, start_id: int = START_ID, end_id: int = END_ID,
             pad_id: int = PAD_ID) -> list[int]:
    """Autoregressively decode a report for one image/demographics pair.

    Temperature 0 is exact argmax; otherwise the next id is drawn from
    softmax(logits / temperature) with a generator seeded by ``seed``, so
    repeated calls with identical arguments return identical sequences.
    Returns ids without the start marker, at most ``cfg.max_len`` of them,
    ending with ``end_id`` unless the length cap was hit first.
    """
    if temperature < 0:
        raise ContractError(f"temperature must be non-negative, got {temperature}")
    rng = np.random.default_rng(seed)
    out: list[int] = []
    with T.no_grad():
        hybrid = encode_inputs(features, demo, params, cfg)
        while len(out) < cfg.max_len:
            prefix = np.asarray([start_id] + out, dtype=np.int64)
            logits = decoder_forward(prefix, hybrid, params, cfg, pad_id=pad_id)
            last = logits.data[-1]
            if temperature == 0.0:
                next_id = int(np.argmax(last))
            else:
                scaled = last / temperature
                scaled = scaled - scaled.max()
                probs = np.exp(scaled)
                probs /= probs.sum()
                next_id = int(np.searchsorted(np.cumsum(probs), rng.random()))
                next_id = min(next_id, cfg.vocab_size - 1)
            out.append(next_id)
            if next_id == end_id:
                break
    return out
