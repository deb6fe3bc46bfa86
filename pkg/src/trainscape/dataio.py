"""Corpus ingestion: vocabulary, token streams, training windows, batches.

The corpus is plain text. Characters are mapped to ids through a vocabulary
sorted by code point, the stream is cut into fixed-width windows at a
configurable stride, and batches are sampled without replacement within
reshuffled epochs. A tokenized corpus can be cached on disk so later runs
skip the text pass entirely.

Cache layout, in file order:
    8-byte magic  b"CCTOK001"
    vocabulary    UTF-8 JSON array of the characters, one string each
    newline       single 0x0A byte closing the JSON line
    ids           raw 32-bit little-endian token ids to end of file
JSON escapes control characters inside strings, so the closing newline is
unambiguous.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, InputError

__all__ = [
    "Vocab",
    "SequenceSet",
    "CACHE_MAGIC",
    "build_vocab",
    "strip_gutenberg_boilerplate",
    "extract_sequences",
    "batch_indices",
    "make_batches",
    "save_token_cache",
    "load_token_cache",
    "token_digest",
]

CACHE_MAGIC = b"CCTOK001"

_START_MARKER = "*** START OF"
_END_MARKER = "*** END OF"


class Vocab:
    """Bidirectional character/id mapping, ids assigned in code-point order."""

    def __init__(self, chars):
        chars = tuple(chars)
        if not chars:
            raise InputError("vocabulary must contain at least one character")
        if len(set(chars)) != len(chars):
            raise InputError("vocabulary characters must be unique")
        if any(len(c) != 1 for c in chars):
            raise InputError("vocabulary entries must be single characters")
        self.chars = chars
        self._ids = {c: i for i, c in enumerate(chars)}

    @property
    def size(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.fromiter((self._ids[c] for c in text), dtype=np.int32, count=len(text))
        except KeyError as exc:
            raise InputError(f"character {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.size):
            raise InputError(f"token ids must lie in [0, {self.size})")
        return "".join(self.chars[int(i)] for i in ids.ravel())

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.chars == other.chars

    def __repr__(self) -> str:
        return f"Vocab(size={self.size})"


def build_vocab(text: str) -> Vocab:
    """Vocabulary of exactly the distinct characters in `text`, sorted."""
    if not text:
        raise InputError("cannot build a vocabulary from empty text")
    return Vocab(sorted(set(text)))


def strip_gutenberg_boilerplate(text: str) -> str:
    """Drop license header/footer around the body of a Project Gutenberg
    file. Text without the markers is returned unchanged; casing and
    punctuation inside the body are preserved."""
    start = text.find(_START_MARKER)
    if start >= 0:
        line_end = text.find("\n", start)
        if line_end >= 0:
            text = text[line_end + 1:]
    end = text.find(_END_MARKER)
    if end >= 0:
        line_start = text.rfind("\n", 0, end)
        text = text[: line_start + 1] if line_start >= 0 else ""
    return text


@dataclass
class SequenceSet:
    """Every training window of a token stream, stored as (stream, starts)
    rather than materialized rows."""

    tokens: np.ndarray
    starts: np.ndarray
    window: int
    vocab_size: int

    def __len__(self) -> int:
        return int(self.starts.size)

    def sequence(self, i: int) -> np.ndarray:
        s = int(self.starts[i])
        return self.tokens[s : s + self.window]

    def gather(self, indices: np.ndarray) -> np.ndarray:
        offsets = self.starts[np.asarray(indices)][:, None] + np.arange(self.window)[None, :]
        return self.tokens[offsets]


def extract_sequences(tokens: np.ndarray, window: int, stride: int = 1, *, vocab_size: int) -> SequenceSet:
    """Cut `tokens` into overlapping windows: starts 0, stride, 2*stride, ...
    up to the last full window. Window count is (len - window)//stride + 1."""
    tokens = np.ascontiguousarray(np.asarray(tokens, dtype=np.int32))
    if window < 2:
        raise InputError(f"window must be at least 2 (one input and one target), got {window}")
    if stride < 1:
        raise InputError(f"stride must be positive, got {stride}")
    if tokens.ndim != 1:
        raise InputError(f"token stream must be 1-d, got shape {tokens.shape}")
    if tokens.size < window:
        raise InputError(f"stream of {tokens.size} tokens is shorter than one window of {window}")
    n = (tokens.size - window) // stride + 1
    starts = np.arange(n, dtype=np.int64) * stride
    return SequenceSet(tokens=tokens, starts=starts, window=window, vocab_size=int(vocab_size))


def batch_indices(n_sequences: int, batch_size: int, seed: int, n_steps: int) -> np.ndarray:
    """Deterministic batch schedule, shape [n_steps, batch_size].

    Indices are drawn without replacement inside an epoch; when fewer than
    batch_size remain, a fresh permutation starts (partial remainders are
    dropped, matching the epoch boundary to whole batches).
    """
    if batch_size < 1:
        raise InputError(f"batch_size must be positive, got {batch_size}")
    if batch_size > n_sequences:
        raise InputError(f"batch_size {batch_size} exceeds the {n_sequences} available sequences")
    if n_steps < 1:
        raise InputError(f"n_steps must be positive, got {n_steps}")
    rng = np.random.default_rng(seed)
    out = np.empty((n_steps, batch_size), dtype=np.int64)
    perm = rng.permutation(n_sequences)
    pos = 0
    for step in range(n_steps):
        if pos + batch_size > n_sequences:
            perm = rng.permutation(n_sequences)
            pos = 0
        out[step] = perm[pos : pos + batch_size]
        pos += batch_size
    return out


def make_batches(sequences: SequenceSet, batch_size: int = 256, seed: int = 0, n_steps: int = 1):
    """Yield n_steps arrays of shape [batch_size, window]."""
    for idx in batch_indices(len(sequences), batch_size, seed, n_steps):
        yield sequences.gather(idx)


def save_token_cache(path, vocab: Vocab, tokens: np.ndarray) -> None:
    tokens = np.asarray(tokens, dtype=np.int32)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab.size):
        raise InputError(f"token ids must lie in [0, {vocab.size})")
    payload = json.dumps(list(vocab.chars), ensure_ascii=False).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(payload)
            fh.write(b"\n")
            fh.write(tokens.astype("<i4").tobytes())
    except OSError as exc:
        raise DataError(f"cannot write token cache {path}: {exc}") from exc


def load_token_cache(path) -> tuple[Vocab, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read token cache {path}: {exc}") from exc
    if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise FormatError(f"{path} is not a token cache (bad magic {blob[:8]!r})")
    cut = blob.find(b"\n", len(CACHE_MAGIC))
    if cut < 0:
        raise FormatError(f"{path} is truncated: vocabulary line never ends")
    try:
        chars = json.loads(blob[len(CACHE_MAGIC) : cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path} has an unreadable vocabulary block: {exc}") from exc
    if not isinstance(chars, list):
        raise FormatError(f"{path} vocabulary block must be a JSON array")
    try:
        vocab = Vocab(chars)
    except InputError as exc:
        raise FormatError(f"{path} vocabulary is invalid: {exc}") from exc
    body = blob[cut + 1 :]
    if len(body) % 4 != 0:
        raise FormatError(f"{path} id section has {len(body)} bytes, not a multiple of 4")
    tokens = np.frombuffer(body, dtype="<i4").astype(np.int32)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab.size):
        raise FormatError(f"{path} contains ids outside [0, {vocab.size})")
    return vocab, tokens


def token_digest(tokens: np.ndarray) -> str:
    """Stable fingerprint of a token stream (hex sha256 of the id bytes)."""
    return hashlib.sha256(np.asarray(tokens, dtype=np.int32).astype("<i4").tobytes()).hexdigest()
