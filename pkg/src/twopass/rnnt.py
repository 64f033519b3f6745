"""First pass: causal shared encoder and a transducer decoder.

The beam search is frame-synchronous.  Within a frame every live prefix
either emits blank (finishing the frame) or one more symbol; finished and
live candidates compete for the same ``beam`` slots, and identical finished
prefixes are merged with log-sum-exp.  Without pruning this computes exact
sequence probabilities under the per-frame symbol cap, and with ``beam=1`` it
reduces to greedy decoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .config import ModelConfig
from .data import BLANK, ceil_div


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float


Beam = list  # list[Hypothesis], sorted by log_prob descending


def sort_beam(hyps: Sequence[Hypothesis]) -> list[Hypothesis]:
    """Descending score; equal scores fall back to token-id order."""
    return sorted(hyps, key=lambda h: (-h.log_prob, h.tokens))


def pad_batch(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    out = np.zeros((len(seqs), int(lengths.max())) + seqs[0].shape[1:])
    for k, s in enumerate(seqs):
        out[k, :s.shape[0]] = s
    return out, lengths


def pad_tokens(seqs: Sequence[Sequence[int]], fill: int = 0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), max(1, int(lengths.max()) if len(seqs) else 1)), fill,
                  dtype=np.int64)
    for k, s in enumerate(seqs):
        out[k, :len(s)] = s
    return out, lengths


def time_reduce(x: Tensor, lengths: np.ndarray, factor: int) -> tuple[Tensor, np.ndarray]:
    """Concatenate ``factor`` adjacent frames; a short final group repeats the
    utterance's last valid frame."""
    if factor == 1:
        return x, lengths
    B, T, d = x.shape
    new_lengths = np.array([ceil_div(int(n), factor) for n in lengths], dtype=np.int64)
    t_out = int(new_lengths.max())
    j = np.arange(t_out * factor)
    src = np.minimum(j[None, :], (lengths - 1)[:, None]) + (np.arange(B) * T)[:, None]
    flat = ad.reshape(x, (B * T, d))
    gathered = ad.take(flat, src.reshape(-1), axis=0)
    return ad.reshape(gathered, (B, t_out, factor * d)), new_lengths


class SharedEncoder:
    """Unidirectional LSTM stack with per-layer projection and time reduction."""

    def __init__(self, params: nn.Params, cfg: ModelConfig):
        self.p = params
        self.cfg = cfg

    @staticmethod
    def init(rng, cfg: ModelConfig, feat_dim: int) -> nn.Params:
        p: nn.Params = {}
        d_in = feat_dim
        for layer in range(cfg.enc_layers):
            if layer == cfg.time_reduction_after:
                d_in *= cfg.time_reduction_factor
            nn.add_lstm(p, rng, f"l{layer}", d_in, cfg.enc_hidden, cfg.init_scale)
            nn.add_linear(p, rng, f"p{layer}", cfg.enc_hidden, cfg.enc_proj, cfg.init_scale)
            d_in = cfg.enc_proj
        return p

    def __call__(self, feats: Sequence[np.ndarray]) -> tuple[Tensor, np.ndarray]:
        """Encode a batch of (T_b, F) feature arrays -> (B, T', d), lengths."""
        x_np, lengths = pad_batch(feats)
        x = Tensor(x_np)
        for layer in range(self.cfg.enc_layers):
            if layer == self.cfg.time_reduction_after:
                x, lengths = time_reduce(x, lengths, self.cfg.time_reduction_factor)
            h = nn.lstm_sequence(self.p, f"l{layer}", x)
            x = nn.linear(self.p, f"p{layer}", h)
        return x, lengths

    def encode_one(self, feats: np.ndarray) -> np.ndarray:
        e, lengths = self([feats])
        return e.data[0, :lengths[0]]


class RnntDecoder:
    """Prediction network, joint network and output softmax (blank included)."""

    def __init__(self, params: nn.Params, cfg: ModelConfig, vocab_size: int,
                 allowed: Sequence[int]):
        self.p = params
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.allowed = list(allowed)

    @staticmethod
    def init(rng, cfg: ModelConfig, vocab_size: int) -> nn.Params:
        p: nn.Params = {}
        s = cfg.init_scale
        p["emb"] = nn.uniform(rng, (vocab_size, cfg.pred_proj), s, "emb")
        d_in = cfg.pred_proj
        for layer in range(cfg.pred_layers):
            nn.add_lstm(p, rng, f"l{layer}", d_in, cfg.pred_hidden, s)
            nn.add_linear(p, rng, f"p{layer}", cfg.pred_hidden, cfg.pred_proj, s)
            d_in = cfg.pred_proj
        nn.add_linear(p, rng, "je", cfg.enc_proj, cfg.joint_dim, s, bias=False)
        nn.add_linear(p, rng, "jp", cfg.pred_proj, cfg.joint_dim, s)
        nn.add_linear(p, rng, "out", cfg.joint_dim, vocab_size, s)
        return p

    # -- prediction network
    def predict(self, tokens: np.ndarray) -> Tensor:
        """Teacher-forced prediction outputs for (B, U+1) inputs starting with blank."""
        x = ad.take(self.p["emb"], tokens, axis=0)
        for layer in range(self.cfg.pred_layers):
            x = nn.linear(self.p, f"p{layer}", nn.lstm_sequence(self.p, f"l{layer}", x))
        return x

    def initial_state(self, batch: int = 1) -> list:
        return [nn.zeros_state(batch, self.cfg.pred_hidden)
                for _ in range(self.cfg.pred_layers)]

    def predict_step(self, tokens: np.ndarray, state: list) -> tuple[Tensor, list]:
        x = ad.take(self.p["emb"], tokens, axis=0)
        new_state = []
        for layer, (h, c) in enumerate(state):
            h, c = ad.lstm_cell(nn.linear(self.p, f"l{layer}", x), h, c,
                                self.p[f"l{layer}.U"])
            new_state.append((h, c))
            x = nn.linear(self.p, f"p{layer}", h)
        return x, new_state

    # -- joint network
    def enc_part(self, e: Tensor) -> Tensor:
        return ad.matmul(e, self.p["je.W"])

    def joint(self, enc_part: Tensor, pred_out: Tensor) -> Tensor:
        """Normalized log-probs from broadcast-compatible encoder/prediction parts."""
        z = ad.tanh(ad.add(enc_part, nn.linear(self.p, "jp", pred_out)))
        return ad.log_softmax(nn.linear(self.p, "out", z))

    def log_probs(self, e: Tensor, targets: np.ndarray) -> Tensor:
        """(B, T, U+1, V) lattice log-probabilities for padded targets (B, U)."""
        B = targets.shape[0]
        pred_in = np.concatenate([np.full((B, 1), BLANK, dtype=np.int64), targets], axis=1)
        g = self.predict(pred_in)
        a = self.enc_part(e)
        return self.joint(ad.reshape(a, (B, a.shape[1], 1, a.shape[2])),
                          ad.reshape(g, (B, 1, g.shape[1], g.shape[2])))

    def loss(self, e: Tensor, e_lens: np.ndarray, refs: Sequence[Sequence[int]]) -> Tensor:
        """Per-utterance transducer losses, shape (B,)."""
        for ref in refs:
            for tok in ref:
                if not 0 <= tok < self.vocab_size or tok == BLANK:
                    raise ValueError(f"token {tok} outside the output vocabulary")
        targets, u_lens = pad_tokens(refs)
        lp = self.log_probs(e, targets)
        return ad.rnnt_loss_batch(lp, targets, e_lens, u_lens, blank=BLANK)

    # -- search
    def beam_search(self, e: np.ndarray, beam: int, max_symbols: int = 4) -> list[Hypothesis]:
        if beam < 1:
            raise ValueError("beam must be >= 1")
        search = _PrefixCache(self)
        enc = self.enc_part(Tensor(e)).data
        allowed = self.allowed
        entering: dict[tuple, float] = {(): 0.0}
        for t in range(e.shape[0]):
            finished: dict[tuple, float] = {}
            live = sorted(entering.items(), key=lambda kv: (-kv[1], kv[0]))
            for wave in range(max_symbols + 1):
                lp = search.joint(enc[t], [y for y, _ in live])
                cands: dict[tuple, float] = {}
                for i, (y, score) in enumerate(live):
                    fin = score + lp[i, BLANK]
                    prev = finished.get(y)
                    finished[y] = fin if prev is None else float(np.logaddexp(prev, fin))
                    if wave < max_symbols:
                        for k in allowed:
                            cands[y + (k,)] = score + lp[i, k]
                pool = [(-s, y, 0) for y, s in finished.items()]
                pool += [(-s, y, 1) for y, s in cands.items()]
                pool.sort()
                kept = pool[:beam]
                finished = {y: -ns for ns, y, live_flag in kept if not live_flag}
                live = [(y, -ns) for ns, y, live_flag in kept if live_flag]
                if not live:
                    break
            entering = finished
        return sort_beam(Hypothesis(y, float(s)) for y, s in entering.items())

    def greedy(self, e: np.ndarray, max_symbols: int = 4) -> Hypothesis:
        search = _PrefixCache(self)
        enc = self.enc_part(Tensor(e)).data
        choices = [BLANK] + self.allowed
        y: tuple = ()
        score = 0.0
        for t in range(e.shape[0]):
            for emitted in range(max_symbols + 1):
                lp = search.joint(enc[t], [y])[0]
                if emitted == max_symbols:
                    score += lp[BLANK]
                    break
                k = choices[int(np.argmax(lp[choices]))]
                score += lp[k]
                if k == BLANK:
                    break
                y = y + (k,)
        return Hypothesis(y, float(score))


class _PrefixCache:
    """Prediction-network outputs per prefix, extended in batches."""

    def __init__(self, dec: RnntDecoder):
        self.dec = dec
        g, state = dec.predict_step(np.array([BLANK]), dec.initial_state(1))
        self.cache = {(): (g.data[0], [(h.data[0], c.data[0]) for h, c in state])}

    def _extend(self, prefixes: list[tuple]) -> None:
        missing = [y for y in prefixes if y not in self.cache]
        if not missing:
            return
        for y in missing:
            if y[:-1] not in self.cache:
                self._extend([y[:-1]])
        parents = [self.cache[y[:-1]][1] for y in missing]
        state = [(Tensor(np.stack([s[layer][0] for s in parents])),
                  Tensor(np.stack([s[layer][1] for s in parents])))
                 for layer in range(len(parents[0]))]
        g, new_state = self.dec.predict_step(np.array([y[-1] for y in missing]), state)
        for i, y in enumerate(missing):
            self.cache[y] = (g.data[i], [(h.data[i], c.data[i]) for h, c in new_state])

    def joint(self, enc_t: np.ndarray, prefixes: list[tuple]) -> np.ndarray:
        self._extend(prefixes)
        g = Tensor(np.stack([self.cache[y][0] for y in prefixes]))
        return self.dec.joint(Tensor(enc_t[None, :]), g).data
