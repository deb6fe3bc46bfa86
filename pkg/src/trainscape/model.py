"""Decoder-only character transformer built on the diffcore primitives.

Architecture, per block, pre-normalization style:
    x = x + attention(layer_norm(x))
    x = x + ffn(layer_norm(x))
followed by a final layer norm and an untied linear projection to vocab
logits. Positions are encoded with the fixed sine/cosine table (not
trained). Causality is enforced by adding -1e30 to masked scores, which
underflows to an exact zero attention weight after softmax, so a future
token cannot leak into the past even at the last bit.

Every parameter leaf carries a group tag, "attention" or "fc", so the
optimizer can apply two different learning rates. The attention group is
each layer's q/k/v/output projections with their biases plus the layer
norm in front of the attention sublayer; everything else (embedding, FFN,
the norm in front of the FFN, final norm, output head) is "fc". A config
switch can move the pre-FFN norm into the attention group instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    Tensor,
    add,
    cross_entropy_softmax,
    embed,
    layer_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)
from .errors import ConfigError, InputError

__all__ = [
    "ModelConfig",
    "TransformerParams",
    "LN_EPS",
    "MASK_VALUE",
    "ATTENTION_GROUP",
    "FC_GROUP",
    "init_params",
    "sinusoidal_pe",
    "forward",
    "batch_loss",
    "generate",
    "param_count",
]

LN_EPS = 1e-6
MASK_VALUE = -1e30

ATTENTION_GROUP = "attention"
FC_GROUP = "fc"


@dataclass(frozen=True)
class ModelConfig:
    """Shape and sampling settings for the character transformer."""

    vocab_size: int = 101
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    context_len: int = 64
    ffn_hidden: int = 256
    temperature: float = 0.3
    seed: int = 0
    # When true, the norm in front of the FFN sublayer is tagged as part
    # of the attention learning-rate group instead of the fc group.
    ffn_norm_in_attention_group: bool = False

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be at least 2, got {self.vocab_size}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be a positive multiple of n_heads ({self.n_heads})"
            )
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even for the sine/cosine table, got {self.d_model}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be positive, got {self.n_layers}")
        if self.context_len < 1:
            raise ConfigError(f"context_len must be positive, got {self.context_len}")
        if self.ffn_hidden < 1:
            raise ConfigError(f"ffn_hidden must be positive, got {self.ffn_hidden}")
        if not (self.temperature > 0.0):
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class TransformerParams:
    """Named parameter leaves plus the learning-rate group of each leaf.

    `leaves` preserves insertion order; everything downstream (gradient
    maps, optimizer state, update loops) iterates in this one order so
    runs are reproducible.
    """

    leaves: dict[str, Tensor]
    groups: dict[str, str]

    def with_values(self, values: dict[str, np.ndarray]) -> "TransformerParams":
        if values.keys() != self.leaves.keys():
            raise InputError("with_values requires exactly the existing leaf names")
        new_leaves = {name: Tensor(values[name], requires_grad=True) for name in self.leaves}
        return TransformerParams(new_leaves, dict(self.groups))


def init_params(config: ModelConfig) -> TransformerParams:
    """Draw initial parameters from a generator seeded by config.seed.

    Weight matrices are normal with std 1/sqrt(fan_in), the embedding is
    standard normal, biases start at zero, and norms start as identity
    (gain 1, bias 0). Draws happen in leaf insertion order, so the full
    initialization is a pure function of the seed.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    leaves: dict[str, Tensor] = {}
    groups: dict[str, str] = {}

    def put(name: str, array: np.ndarray, group: str) -> None:
        leaves[name] = Tensor(array, requires_grad=True)
        groups[name] = group

    def dense_init(fan_in: int, fan_out: int) -> np.ndarray:
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    d, f, v = config.d_model, config.ffn_hidden, config.vocab_size
    put("embedding", rng.standard_normal((v, d)), FC_GROUP)
    ffn_norm_group = ATTENTION_GROUP if config.ffn_norm_in_attention_group else FC_GROUP
    for i in range(config.n_layers):
        prefix = f"layers.{i}"
        put(f"{prefix}.attn_norm.gain", np.ones(d), ATTENTION_GROUP)
        put(f"{prefix}.attn_norm.bias", np.zeros(d), ATTENTION_GROUP)
        for proj in ("q", "k", "v", "out"):
            put(f"{prefix}.attn.{proj}_w", dense_init(d, d), ATTENTION_GROUP)
            put(f"{prefix}.attn.{proj}_b", np.zeros(d), ATTENTION_GROUP)
        put(f"{prefix}.ffn_norm.gain", np.ones(d), ffn_norm_group)
        put(f"{prefix}.ffn_norm.bias", np.zeros(d), ffn_norm_group)
        put(f"{prefix}.ffn.w1", dense_init(d, f), FC_GROUP)
        put(f"{prefix}.ffn.b1", np.zeros(f), FC_GROUP)
        put(f"{prefix}.ffn.w2", dense_init(f, d), FC_GROUP)
        put(f"{prefix}.ffn.b2", np.zeros(d), FC_GROUP)
    put("final_norm.gain", np.ones(d), FC_GROUP)
    put("final_norm.bias", np.zeros(d), FC_GROUP)
    put("output.w", dense_init(d, v), FC_GROUP)
    put("output.b", np.zeros(v), FC_GROUP)
    return TransformerParams(leaves, groups)


def sinusoidal_pe(context_len: int, d_model: int) -> Tensor:
    """Fixed positional table: pe[p, 2i] = sin(p / 10000^(2i/d)) and
    pe[p, 2i+1] = cos of the same angle. Not trainable."""
    if context_len < 1:
        raise ConfigError(f"context_len must be positive, got {context_len}")
    if d_model < 2 or d_model % 2 != 0:
        raise ConfigError(f"d_model must be a positive even number, got {d_model}")
    positions = np.arange(context_len, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / d_model)
    pe = np.empty((context_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return Tensor(pe)


def _causal_mask(seq_len: int) -> Tensor:
    cols = np.arange(seq_len)
    mask = np.where(cols[None, :] > cols[:, None], MASK_VALUE, 0.0)
    return Tensor(mask)


def forward(params: TransformerParams, tokens: np.ndarray, config: ModelConfig) -> Tensor:
    """Run the full decoder stack; returns logits [batch, seq, vocab]."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise InputError(f"tokens must be [batch, seq], got shape {tokens.shape}")
    batch, seq = tokens.shape
    if seq < 1 or seq > config.context_len:
        raise InputError(f"sequence length {seq} outside [1, {config.context_len}]")
    leaves = params.leaves
    n_heads, head_dim, d = config.n_heads, config.head_dim, config.d_model

    pe = sinusoidal_pe(config.context_len, d)
    x = add(embed(leaves["embedding"], tokens), Tensor(pe.data[:seq]))
    mask = _causal_mask(seq)
    for i in range(config.n_layers):
        prefix = f"layers.{i}"
        h = layer_norm(x, leaves[f"{prefix}.attn_norm.gain"], leaves[f"{prefix}.attn_norm.bias"], LN_EPS)

        def heads(name: str) -> Tensor:
            proj = add(matmul(h, leaves[f"{prefix}.attn.{name}_w"]), leaves[f"{prefix}.attn.{name}_b"])
            return transpose(reshape(proj, (batch, seq, n_heads, head_dim)), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
        weights = softmax(add(scores, mask), axis=-1)
        mixed = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (batch, seq, d))
        attn_out = add(matmul(mixed, leaves[f"{prefix}.attn.out_w"]), leaves[f"{prefix}.attn.out_b"])
        x = add(x, attn_out)

        h2 = layer_norm(x, leaves[f"{prefix}.ffn_norm.gain"], leaves[f"{prefix}.ffn_norm.bias"], LN_EPS)
        hidden = relu(add(matmul(h2, leaves[f"{prefix}.ffn.w1"]), leaves[f"{prefix}.ffn.b1"]))
        ffn_out = add(matmul(hidden, leaves[f"{prefix}.ffn.w2"]), leaves[f"{prefix}.ffn.b2"])
        x = add(x, ffn_out)

    x = layer_norm(x, leaves["final_norm.gain"], leaves["final_norm.bias"], LN_EPS)
    return add(matmul(x, leaves["output.w"]), leaves["output.b"])


def batch_loss(params: TransformerParams, inputs: np.ndarray, targets: np.ndarray, config: ModelConfig) -> Tensor:
    """Mean next-character cross-entropy over every (batch, position)."""
    return cross_entropy_softmax(forward(params, inputs, config), np.asarray(targets))


def generate(
    params: TransformerParams,
    vocab,
    prompt: str,
    length: int,
    config: ModelConfig,
    temperature: float | None = None,
    seed: int = 0,
) -> str:
    """Sample `length` characters after `prompt`.

    Logits for the last position are divided by the temperature before the
    softmax; draws come from a dedicated generator, so (params, prompt,
    length, temperature, seed) fully determine the output. The prompt must
    be non-empty and every prompt character must be in the vocabulary.
    """
    if length < 0:
        raise InputError(f"length must be non-negative, got {length}")
    if not prompt:
        raise InputError("prompt must contain at least one character")
    if temperature is None:
        temperature = config.temperature
    if not (temperature > 0.0):
        raise InputError(f"temperature must be positive, got {temperature}")
    ids = list(vocab.encode(prompt))
    rng = np.random.default_rng(seed)
    out: list[int] = []
    for _ in range(length):
        window = np.asarray(ids[-config.context_len:], dtype=np.int64)[None, :]
        logits = forward(params, window, config)
        last = Tensor(logits.data[0, -1])
        probs = softmax(scale(last, 1.0 / temperature), axis=-1).data
        nxt = int(rng.choice(probs.size, p=probs))
        ids.append(nxt)
        out.append(nxt)
    return vocab.decode(np.asarray(out, dtype=np.int64))


def param_count(config: ModelConfig) -> int:
    """Total trainable scalars for a config, from the layer inventory."""
    config.validate()
    d, f, v = config.d_model, config.ffn_hidden, config.vocab_size
    per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d)
    return v * d + config.n_layers * per_layer + 2 * d + (d * v + v)
