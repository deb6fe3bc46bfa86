"""Shared test utilities: synthetic corpora, reduced configs, and the
central finite-difference oracle used to verify every gradient."""

from __future__ import annotations

import numpy as np

from trainscape.dataio import build_vocab, extract_sequences
from trainscape.model import ModelConfig
from trainscape.training import TrainRunConfig

EASY_WORDS = [
    "the", "cat", "sat", "on", "a", "mat", "and", "dog", "ran", "far",
    "sun", "rose", "over", "hill", "to", "sea", "in", "my", "old", "den",
]


def easy_text(n_chars: int, seed: int = 11) -> str:
    """Low-entropy pseudo-text: twenty short words, uniform draws."""
    rng = np.random.default_rng(seed)
    parts, total = [], 0
    while total < n_chars:
        w = EASY_WORDS[rng.integers(len(EASY_WORDS))]
        parts.append(w)
        total += len(w) + 1
    return " ".join(parts)[:n_chars]


def hard_text(n_chars: int, seed: int = 5, n_words: int = 120) -> str:
    """Higher-entropy pseudo-text: 120 random words, Zipf-weighted draws.
    Hard enough that the smallest learning rates cannot reach the
    convergence cutoff within a couple thousand steps."""
    rng = np.random.default_rng(seed)
    letters = "abcdefghijklmnopqrstuvwxyz"
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < n_words:
        length = int(rng.integers(2, 8))
        w = "".join(letters[rng.integers(26)] for _ in range(length))
        if w not in seen:
            seen.add(w)
            words.append(w)
    ranks = np.arange(1, n_words + 1, dtype=np.float64)
    p = 1.0 / ranks
    p /= p.sum()
    parts, total = [], 0
    while total < n_chars:
        w = words[rng.choice(n_words, p=p)]
        parts.append(w)
        total += len(w) + 1
    return " ".join(parts)[:n_chars]


def corpus_101(n_chars: int, seed: int = 3) -> str:
    """Synthetic text over exactly 101 distinct characters."""
    alphabet = (
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
        " .,;:!?'\"()[]-_\n"
        + "".join(chr(0x00E0 + k) for k in range(23))
    )
    assert len(alphabet) == len(set(alphabet)) == 101
    rng = np.random.default_rng(seed)
    # Markov-ish structure: short runs from a rotating window keep the text
    # learnable while touching every character.
    out: list[str] = list(alphabet)
    while len(out) < n_chars:
        start = int(rng.integers(101))
        run = int(rng.integers(2, 6))
        for k in range(run):
            out.append(alphabet[(start + k) % 101])
    return "".join(out[:n_chars])


def small_model(vocab_size: int, **overrides) -> ModelConfig:
    """Reduced transformer for fast test runs."""
    settings = dict(
        vocab_size=vocab_size, d_model=32, n_heads=2, n_layers=2,
        context_len=32, ffn_hidden=64, seed=0,
    )
    settings.update(overrides)
    return ModelConfig(**settings)


def tiny_model(vocab_size: int, **overrides) -> ModelConfig:
    """Smallest useful transformer for unit-level checks."""
    settings = dict(
        vocab_size=vocab_size, d_model=16, n_heads=2, n_layers=1,
        context_len=8, ffn_hidden=16, seed=0,
    )
    settings.update(overrides)
    return ModelConfig(**settings)


def miniature_gradcheck_model() -> ModelConfig:
    return ModelConfig(
        vocab_size=7, d_model=8, n_heads=1, n_layers=1,
        context_len=8, ffn_hidden=16, seed=0,
    )


def make_sequences(text: str, context_len: int, stride: int = 3):
    vocab = build_vocab(text)
    tokens = vocab.encode(text)
    return vocab, extract_sequences(tokens, context_len + 1, stride, vocab_size=vocab.size)


def quick_run(**overrides) -> TrainRunConfig:
    settings = dict(eta_att=3e-3, eta_fc=3e-3, n_steps=30, batch_size=8, seed=0)
    settings.update(overrides)
    return TrainRunConfig(**settings)


def fd_grad(f, arrays: list[np.ndarray], wrt: int, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar f(arrays) against one array."""
    work = [a.astype(np.float64).copy() for a in arrays]
    target = work[wrt].ravel()
    grad = np.zeros_like(work[wrt])
    flat = grad.ravel()
    for i in range(target.size):
        original = target[i]
        target[i] = original + h
        f_plus = f(work)
        target[i] = original - h
        f_minus = f(work)
        target[i] = original
        flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_err(got: np.ndarray, expected: np.ndarray) -> float:
    """Infinity-norm error relative to the expected gradient's scale.

    The scale is floored at 1e-6, well above the finite-difference noise
    floor (~1e-10 at h=1e-5), so a gradient that is mathematically zero
    (e.g. the key-projection bias, which shifts every attention score in a
    row equally) compares as zero-vs-noise instead of noise-vs-noise.
    """
    got = np.asarray(got, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = max(float(np.max(np.abs(expected))) if expected.size else 0.0, 1e-6)
    return float(np.max(np.abs(got - expected))) / scale
