"""Synthetic utterances, vocabulary, feature frontend and corpus files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

BLANK, SOS, EOS = 0, 1, 2
RESERVED = ("<blank>", "<s>", "</s>")

CORPUS_MAGIC = b"DLBC"
CORPUS_VERSION = 1


class FormatError(ValueError):
    """Malformed, truncated or inconsistent data file."""


class Vocab:
    """Ordered symbol table.  Ids 0, 1, 2 are blank, sos and eos."""

    blank = BLANK
    sos = SOS
    eos = EOS

    def __init__(self, symbols: Sequence[str]):
        symbols = list(symbols)
        if tuple(symbols[:3]) != RESERVED:
            symbols = list(RESERVED) + [s for s in symbols if s not in RESERVED]
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in vocabulary")
        self.symbols = symbols
        self._ids = {s: i for i, s in enumerate(symbols)}

    @classmethod
    def default(cls, n_symbols: int = 16) -> "Vocab":
        if n_symbols <= 26:
            names = [chr(ord("a") + i) for i in range(n_symbols)]
        else:
            names = [f"w{i}" for i in range(n_symbols)]
        return cls(names)

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def token_ids(self) -> list[int]:
        """Ids usable in transcripts (everything except the specials)."""
        return list(range(len(RESERVED), len(self.symbols)))

    def is_reserved(self, token: int) -> bool:
        return token < len(RESERVED)

    def encode(self, text: str) -> list[int]:
        return [self._ids[s] for s in text.split()]

    def decode(self, tokens: Sequence[int]) -> str:
        return " ".join(self.symbols[t] for t in tokens)

    def save(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.symbols), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:3]) != RESERVED:
            raise FormatError(f"{path}: first three symbols must be {RESERVED}")
        return cls(lines)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.symbols == other.symbols


@dataclass
class FrameSequence:
    data: np.ndarray  # (T, F)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("frames contain non-finite values")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def F(self) -> int:
        return self.data.shape[1]


@dataclass
class Utterance:
    frames: FrameSequence
    reference: list[int] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Utterance)
                and self.reference == other.reference
                and np.array_equal(self.frames.data, other.frames.data))


@dataclass
class DataConfig:
    n_symbols: int = 16
    feat_dim: int = 8
    min_len: int = 2
    max_len: int = 10
    frames_per_token: int = 6
    noise_sigma: float = 0.5
    # successors > 0: each next token is prev + k (mod n) with k uniform in
    # 1..successors; marginals stay uniform but neighbours become predictive
    successors: int = 0
    signature_seed: int = 0
    stack_prev: int = 3
    stride: int = 3
    l_pad: int = 24


def signatures(n_symbols: int, feat_dim: int, seed: int) -> np.ndarray:
    """Fixed random unit vector per transcript token, row k for token id k+3."""
    rng = np.random.default_rng([seed, 0x5167])
    sig = rng.normal(size=(n_symbols, feat_dim))
    return sig / np.linalg.norm(sig, axis=1, keepdims=True)


def _draw_tokens(rng: np.random.Generator, n: int, length: int, successors: int) -> np.ndarray:
    if successors <= 0:
        return rng.integers(0, n, size=length)
    first = rng.integers(0, n)
    steps = rng.integers(1, successors + 1, size=length - 1)
    return (first + np.concatenate([[0], np.cumsum(steps)])) % n


def generate_utterance(seed: int, vocab: Vocab, config: DataConfig) -> Utterance:
    """Draw one utterance; deterministic in ``seed``.

    Frame values are rounded to float32 precision so corpus files round-trip
    bit-exactly.
    """
    if not config.max_len >= config.min_len >= 1:
        raise ValueError("need max_len >= min_len >= 1")
    if config.frames_per_token < 1:
        raise ValueError("frames_per_token must be >= 1")
    n = len(vocab.token_ids)
    if n == 0:
        raise ValueError("vocabulary has no transcript symbols")
    rng = np.random.default_rng(seed)
    length = int(rng.integers(config.min_len, config.max_len + 1))
    idx = _draw_tokens(rng, n, length, config.successors)
    sig = signatures(n, config.feat_dim, config.signature_seed)
    frames = np.repeat(sig[idx], config.frames_per_token, axis=0)
    if config.noise_sigma > 0:
        frames = frames + rng.normal(scale=config.noise_sigma, size=frames.shape)
    frames = frames.astype(np.float32).astype(np.float64)
    tokens = [vocab.token_ids[0] + int(i) for i in idx]
    return Utterance(FrameSequence(frames), tokens)


def generate_corpus(count: int, seed: int, vocab: Vocab, config: DataConfig) -> list[Utterance]:
    """Utterance ``i`` uses seed ``seed + i``."""
    return [generate_utterance(seed + i, vocab, config) for i in range(count)]


def stack_downsample(frames: FrameSequence, stack_prev: int, stride: int) -> FrameSequence:
    """Stack each frame with its ``stack_prev`` predecessors, keep every
    ``stride``-th result.  Missing history repeats frame 0."""
    if stack_prev < 0 or stride < 1:
        raise ValueError("need stack_prev >= 0 and stride >= 1")
    x = frames.data
    T = x.shape[0]
    if T == 0:
        raise ValueError("cannot stack an empty frame sequence")
    src = np.arange(T)[:, None] + np.arange(-stack_prev, 1)[None, :]
    stacked = x[np.clip(src, 0, None)].reshape(T, -1)
    return FrameSequence(stacked[::stride])


def pad_hypothesis(tokens: Sequence[int], l_pad: int, eos: int = EOS) -> list[int]:
    """Pad with eos to exactly ``l_pad``; over-long input keeps its prefix and
    ends in eos."""
    if l_pad < 1:
        raise ValueError("l_pad must be >= 1")
    tokens = list(tokens)
    if len(tokens) > l_pad:
        return tokens[:l_pad - 1] + [eos]
    return tokens + [eos] * (l_pad - len(tokens))


# ------------------------------------------------------------------ corpus IO

def write_corpus(path, utterances: Sequence[Utterance]) -> None:
    """Little-endian binary corpus: magic, version, count, then per utterance
    T, F, float32 frames, token count and uint32 tokens."""
    parts = [CORPUS_MAGIC, struct.pack("<II", CORPUS_VERSION, len(utterances))]
    for utt in utterances:
        T, F = utt.frames.data.shape
        parts.append(struct.pack("<II", T, F))
        parts.append(utt.frames.data.astype("<f4").tobytes())
        parts.append(struct.pack("<I", len(utt.reference)))
        parts.append(np.asarray(utt.reference, dtype="<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, name: str):
        self.buf, self.pos, self.name = buf, 0, name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.name}: truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def read_corpus(path) -> list[Utterance]:
    r = _Reader(Path(path).read_bytes(), str(path))
    if r.take(4) != CORPUS_MAGIC:
        raise FormatError(f"{path}: bad magic number")
    version, count = r.u32(2)
    if version != CORPUS_VERSION:
        raise FormatError(f"{path}: unsupported corpus version {version}")
    out = []
    for k in range(count):
        T, F = r.u32(2)
        if T == 0 or F == 0 or (out and F != out[0].frames.F):
            raise FormatError(f"{path}: utterance {k} has dimension mismatch T={T}, F={F}")
        frames = np.frombuffer(r.take(4 * T * F), dtype="<f4").astype(np.float64).reshape(T, F)
        if not np.isfinite(frames).all():
            raise FormatError(f"{path}: utterance {k} has non-finite frames")
        n = r.u32()
        tokens = np.frombuffer(r.take(4 * n), dtype="<u4").astype(int).tolist()
        out.append(Utterance(FrameSequence(frames), tokens))
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return out


def frontend(utt: Utterance, config: DataConfig) -> np.ndarray:
    return stack_downsample(utt.frames, config.stack_prev, config.stride).data


def utterance_id(index: int) -> str:
    return f"utt{index:05d}"


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


__all__ = [
    "BLANK", "SOS", "EOS", "Vocab", "FrameSequence", "Utterance", "DataConfig",
    "FormatError", "generate_utterance", "generate_corpus", "stack_downsample",
    "pad_hypothesis", "write_corpus", "read_corpus", "signatures", "frontend",
    "utterance_id", "ceil_div",
]
