"""Transformer model: initialization, positional table, forward contract,
causality, sampling, and the miniature full-model gradient check."""

import numpy as np
import pytest

from helpers import fd_grad, miniature_gradcheck_model, rel_err, tiny_model
from trainscape.dataio import Vocab
from trainscape.diffcore import Record, backward
from trainscape.errors import ConfigError, InputError
from trainscape.model import (
    LN_EPS,
    ModelConfig,
    batch_loss,
    forward,
    generate,
    init_params,
    param_count,
    sinusoidal_pe,
)


class TestInit:
    def test_same_seed_same_parameters(self):
        cfg = tiny_model(11, seed=4)
        a = init_params(cfg)
        b = init_params(cfg)
        assert a.leaves.keys() == b.leaves.keys()
        for name in a.leaves:
            assert np.array_equal(a.leaves[name].data, b.leaves[name].data)

    def test_different_seed_different_parameters(self):
        a = init_params(tiny_model(11, seed=0))
        b = init_params(tiny_model(11, seed=1))
        assert not np.array_equal(a.leaves["embedding"].data, b.leaves["embedding"].data)

    def test_every_leaf_tagged_and_counted(self):
        cfg = ModelConfig()
        params = init_params(cfg)
        assert params.leaves.keys() == params.groups.keys()
        total = sum(t.data.size for t in params.leaves.values())
        assert total == param_count(cfg) == 113125

    def test_embedding_shape_default(self):
        params = init_params(ModelConfig())
        assert params.leaves["embedding"].data.shape == (101, 64)

    def test_group_split_counts(self):
        cfg = ModelConfig()
        params = init_params(cfg)
        attention = [n for n, g in params.groups.items() if g == "attention"]
        # per layer: norm gain+bias plus four projections with biases
        assert len(attention) == cfg.n_layers * (2 + 8)
        # fc: embedding, per-layer ffn norm + two ffn layers, final norm, head
        assert len(params.groups) - len(attention) == 1 + cfg.n_layers * (2 + 4) + 2 + 2

    def test_ffn_norm_group_switch(self):
        params = init_params(tiny_model(5, ffn_norm_in_attention_group=True))
        assert params.groups["layers.0.ffn_norm.gain"] == "attention"
        default = init_params(tiny_model(5))
        assert default.groups["layers.0.ffn_norm.gain"] == "fc"

    def test_param_count_grows_with_ffn(self):
        small = param_count(ModelConfig(ffn_hidden=128))
        big = param_count(ModelConfig(ffn_hidden=256))
        assert big > small

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=30, n_heads=4).validate()
        with pytest.raises(ConfigError):
            ModelConfig(temperature=0.0).validate()
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=1).validate()


class TestPositionalTable:
    def test_row_zero_alternates_zero_one(self):
        pe = sinusoidal_pe(4, 6).data
        assert np.array_equal(pe[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])

    def test_position_one_first_pair(self):
        pe = sinusoidal_pe(4, 6).data
        assert abs(pe[1, 0] - np.sin(1.0)) < 1e-15
        assert abs(pe[1, 1] - np.cos(1.0)) < 1e-15

    def test_frequency_scaling(self):
        pe = sinusoidal_pe(8, 8).data
        # column pair k uses wavelength 10000^(2k/d)
        assert abs(pe[3, 2] - np.sin(3.0 / 10000.0 ** (2.0 / 8.0))) < 1e-15

    def test_values_bounded(self):
        pe = sinusoidal_pe(64, 64).data
        assert np.all(np.abs(pe) <= 1.0)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            sinusoidal_pe(4, 7)


class TestForward:
    def test_logit_shape(self):
        cfg = tiny_model(11)
        params = init_params(cfg)
        tokens = np.zeros((3, cfg.context_len), dtype=np.int64)
        out = forward(params, tokens, cfg)
        assert out.data.shape == (3, cfg.context_len, 11)

    def test_rejects_long_sequence(self):
        cfg = tiny_model(11)
        params = init_params(cfg)
        with pytest.raises(InputError):
            forward(params, np.zeros((1, cfg.context_len + 1), dtype=np.int64), cfg)

    def test_identical_sequences_identical_rows(self):
        cfg = tiny_model(13)
        params = init_params(cfg)
        rng = np.random.default_rng(5)
        row = rng.integers(0, 13, size=8)
        tokens = np.stack([row, row])
        out = forward(params, tokens, cfg).data
        assert np.array_equal(out[0], out[1])

    def test_causality_bit_exact_over_perturbations(self):
        cfg = tiny_model(17)
        params = init_params(cfg)
        rng = np.random.default_rng(6)
        base = rng.integers(0, 17, size=(2, 8))
        base_logits = forward(params, base, cfg).data
        for trial in range(50):
            q = int(rng.integers(1, 8))
            perturbed = base.copy()
            perturbed[rng.integers(0, 2), q] = (perturbed[0, q] + 1 + trial) % 17
            out = forward(params, perturbed, cfg).data
            assert np.array_equal(out[:, :q, :], base_logits[:, :q, :]), f"leak at position {q}"

    def test_forward_matches_plain_numpy_oracle(self):
        cfg = miniature_gradcheck_model()
        params = init_params(cfg)
        rng = np.random.default_rng(7)
        tokens = rng.integers(0, cfg.vocab_size, size=(2, 5))
        got = forward(params, tokens, cfg).data
        expected = _numpy_forward_oracle(params, tokens, cfg)
        assert np.allclose(got, expected, rtol=1e-12, atol=1e-12)

    def test_initial_loss_near_log_vocab(self):
        cfg = ModelConfig()
        params = init_params(cfg)
        rng = np.random.default_rng(8)
        batch = rng.integers(0, cfg.vocab_size, size=(8, cfg.context_len + 1))
        loss = batch_loss(params, batch[:, :-1], batch[:, 1:], cfg)
        assert 4.0 <= loss.item() <= 5.5


def _numpy_forward_oracle(params, tokens, cfg):
    """Independent plain-numpy re-implementation of the forward pass."""
    leaves = {name: t.data for name, t in params.leaves.items()}
    batch, seq = tokens.shape
    d, heads, hd = cfg.d_model, cfg.n_heads, cfg.head_dim

    positions = np.arange(cfg.context_len, dtype=np.float64)[:, None]
    even = np.arange(0, d, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / d)
    pe = np.empty((cfg.context_len, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)

    def norm(x, gain, bias):
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias

    x = leaves["embedding"][tokens] + pe[:seq]
    mask = np.where(np.arange(seq)[None, :] > np.arange(seq)[:, None], -1e30, 0.0)
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        h = norm(x, leaves[f"{p}.attn_norm.gain"], leaves[f"{p}.attn_norm.bias"])
        qkv = {}
        for name in ("q", "k", "v"):
            proj = h @ leaves[f"{p}.attn.{name}_w"] + leaves[f"{p}.attn.{name}_b"]
            qkv[name] = proj.reshape(batch, seq, heads, hd).transpose(0, 2, 1, 3)
        scores = qkv["q"] @ qkv["k"].transpose(0, 1, 3, 2) / np.sqrt(hd) + mask
        e = np.exp(scores - scores.max(-1, keepdims=True))
        weights = e / e.sum(-1, keepdims=True)
        mixed = (weights @ qkv["v"]).transpose(0, 2, 1, 3).reshape(batch, seq, d)
        x = x + mixed @ leaves[f"{p}.attn.out_w"] + leaves[f"{p}.attn.out_b"]
        h2 = norm(x, leaves[f"{p}.ffn_norm.gain"], leaves[f"{p}.ffn_norm.bias"])
        hidden = np.maximum(h2 @ leaves[f"{p}.ffn.w1"] + leaves[f"{p}.ffn.b1"], 0.0)
        x = x + hidden @ leaves[f"{p}.ffn.w2"] + leaves[f"{p}.ffn.b2"]
    x = norm(x, leaves["final_norm.gain"], leaves["final_norm.bias"])
    return x @ leaves["output.w"] + leaves["output.b"]


class TestMiniatureGradcheck:
    def test_full_model_gradients_match_finite_differences(self):
        cfg = miniature_gradcheck_model()
        params = init_params(cfg)
        rng = np.random.default_rng(9)
        tokens = rng.integers(0, cfg.vocab_size, size=(2, 6))
        inputs, targets = tokens[:, :-1], tokens[:, 1:]

        with Record() as rec:
            loss = batch_loss(params, inputs, targets, cfg)
        grads = backward(rec, loss, params.leaves)

        names = list(params.leaves.keys())
        arrays = [params.leaves[n].data for n in names]

        def head(work):
            rebuilt = params.with_values({n: a for n, a in zip(names, work)})
            return batch_loss(rebuilt, inputs, targets, cfg).item()

        worst = 0.0
        for idx, name in enumerate(names):
            err = rel_err(grads[name], fd_grad(head, arrays, idx))
            worst = max(worst, err)
        assert worst < 1e-4, f"worst relative error {worst}"


class TestGenerate:
    def _setup(self):
        text = "abcabcabcabc"
        vocab = Vocab(sorted(set(text)))
        cfg = tiny_model(vocab.size)
        return init_params(cfg), vocab, cfg

    def test_zero_length_returns_empty(self):
        params, vocab, cfg = self._setup()
        assert generate(params, vocab, "a", 0, cfg) == ""

    def test_output_length(self):
        params, vocab, cfg = self._setup()
        assert len(generate(params, vocab, "ab", 12, cfg, seed=1)) == 12

    def test_deterministic_for_fixed_seed(self):
        params, vocab, cfg = self._setup()
        a = generate(params, vocab, "a", 16, cfg, seed=2)
        b = generate(params, vocab, "a", 16, cfg, seed=2)
        assert a == b

    def test_near_zero_temperature_is_greedy(self):
        params, vocab, cfg = self._setup()
        got = generate(params, vocab, "ab", 8, cfg, temperature=1e-9, seed=3)
        ids = list(vocab.encode("ab"))
        expected = []
        for _ in range(8):
            window = np.asarray(ids[-cfg.context_len:], dtype=np.int64)[None, :]
            logits = forward(params, window, cfg).data[0, -1]
            nxt = int(np.argmax(logits))
            ids.append(nxt)
            expected.append(nxt)
        assert got == vocab.decode(np.asarray(expected))

    def test_unknown_prompt_character_rejected(self):
        params, vocab, cfg = self._setup()
        with pytest.raises(InputError):
            generate(params, vocab, "z", 4, cfg)

    def test_empty_prompt_rejected(self):
        params, vocab, cfg = self._setup()
        with pytest.raises(InputError):
            generate(params, vocab, "", 4, cfg)
