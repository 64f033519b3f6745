"""Second-pass deliberation decoder.

Each first-pass hypothesis is padded with eos, embedded and run through the
same bidirectional encoder; the per-hypothesis outputs are concatenated in
time.  At every decoding step one multi-head attention reads that text
encoding and another reads the (optionally re-encoded) acoustic encoding.
The two contexts are concatenated with the previous-token embedding to feed
the decoder LSTM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .config import ATTENTION_MODES, ModelConfig
from .data import EOS, SOS, pad_hypothesis
from .rnnt import Hypothesis


@dataclass
class AttentionSource:
    """Keys and values projected once per source; ``mask`` marks valid rows."""

    keys: Tensor      # (B, heads, dk, S)
    values: Tensor    # (B, heads, S, dk)
    mask: np.ndarray  # (B, S) bool

    def tile(self, index: np.ndarray) -> "AttentionSource":
        return AttentionSource(ad.take(self.keys, index, axis=0),
                               ad.take(self.values, index, axis=0),
                               self.mask[index])


@dataclass
class Sources:
    text: AttentionSource | None
    acoustic: AttentionSource | None

    def tile(self, index: np.ndarray) -> "Sources":
        index = np.asarray(index, dtype=np.int64)
        return Sources(self.text.tile(index) if self.text else None,
                       self.acoustic.tile(index) if self.acoustic else None)


@dataclass
class StepOutput:
    logits: Tensor
    state: list
    weights_text: np.ndarray | None
    weights_acoustic: np.ndarray | None


def select_hypotheses(beam: Sequence[Hypothesis], H: int) -> list[tuple[int, ...]]:
    """Top-``H`` token sequences; the best one is repeated when fewer exist."""
    if H < 1:
        raise ValueError("H must be >= 1")
    if not beam:
        raise ValueError("cannot encode an empty first-pass beam")
    seqs = [h.tokens for h in beam[:H]]
    return seqs + [seqs[0]] * (H - len(seqs))


def project_source(p: nn.Params, name: str, source: Tensor, mask: np.ndarray,
                   heads: int) -> AttentionSource:
    B, S, _ = source.shape
    A = p[f"{name}.k"].shape[1]
    k = ad.reshape(ad.matmul(source, p[f"{name}.k"]), (B, S, heads, A // heads))
    v = ad.reshape(ad.matmul(source, p[f"{name}.v"]), (B, S, heads, A // heads))
    k = ad.transpose(k, (0, 2, 3, 1))
    v = ad.transpose(v, (0, 2, 1, 3))
    return AttentionSource(k, v, np.asarray(mask, dtype=bool))


def attend(p: nn.Params, name: str, query: Tensor, src: AttentionSource) -> tuple[Tensor, Tensor]:
    """Scaled dot-product multi-head attention for a batch of queries.

    Returns the output context (B, d_ctx) and per-head weights (B, heads, S).
    """
    B, heads, dk, S = src.keys.shape
    if S == 0:
        raise ValueError("attention source is empty")
    q = ad.reshape(ad.matmul(query, p[f"{name}.q"]), (B, heads, 1, dk))
    scores = ad.scale(ad.bmm(q, src.keys), 1.0 / math.sqrt(dk))
    w = ad.softmax(scores, axis=-1, mask=src.mask[:, None, None, :])
    ctx = ad.reshape(ad.bmm(w, src.values), (B, heads * dk))
    return ad.matmul(ctx, p[f"{name}.o"]), ad.reshape(w, (B, heads, S))


def multihead_attention(query: Tensor, source: Tensor, params: nn.Params, name: str,
                        heads: int = 4) -> tuple[Tensor, np.ndarray]:
    """Single query (d_q,) over a single source (S, d_s); returns the context
    and the head-averaged weights (S,)."""
    if source.shape[0] == 0:
        raise ValueError("attention source is empty")
    src = project_source(params, name, ad.reshape(source, (1,) + source.shape),
                         np.ones((1, source.shape[0]), dtype=bool), heads)
    ctx, w = attend(params, name, ad.reshape(query, (1, query.shape[0])), src)
    return ad.reshape(ctx, (ctx.shape[1],)), w.data[0].mean(axis=0)


class DeliberationDecoder:
    def __init__(self, params: nn.Params, cfg: ModelConfig, vocab_size: int,
                 allowed: Sequence[int], l_pad: int):
        self.p = params
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.allowed = list(allowed)
        self.l_pad = l_pad

    @staticmethod
    def init(rng, cfg: ModelConfig, vocab_size: int, enc_dim: int) -> nn.Params:
        p: nn.Params = {}
        s = cfg.init_scale
        p["hyp_emb"] = nn.uniform(rng, (vocab_size, cfg.d_emb), s, "hyp_emb")
        d_in = cfg.d_emb
        for layer in range(cfg.bidi_layers):
            nn.add_lstm(p, rng, f"bf{layer}", d_in, cfg.bidi_hidden, s)
            nn.add_lstm(p, rng, f"bb{layer}", d_in, cfg.bidi_hidden, s)
            nn.add_linear(p, rng, f"bp{layer}", 2 * cfg.bidi_hidden, cfg.bidi_proj, s)
            d_in = cfg.bidi_proj
        for layer in range(cfg.ae_layers):
            nn.add_lstm(p, rng, f"ae{layer}", enc_dim, cfg.ae_hidden, s)
            nn.add_linear(p, rng, f"aep{layer}", cfg.ae_hidden, enc_dim, s)
        d_q = cfg.d_emb + cfg.dec_hidden
        for name, d_src in (("att_t", cfg.bidi_proj), ("att_a", enc_dim)):
            p[f"{name}.q"] = nn.uniform(rng, (d_q, cfg.att_dim), s, f"{name}.q")
            p[f"{name}.k"] = nn.uniform(rng, (d_src, cfg.att_dim), s, f"{name}.k")
            p[f"{name}.v"] = nn.uniform(rng, (d_src, cfg.att_dim), s, f"{name}.v")
            p[f"{name}.o"] = nn.uniform(rng, (cfg.att_dim, cfg.ctx_dim), s, f"{name}.o")
        p["dec_emb"] = nn.uniform(rng, (vocab_size, cfg.d_emb), s, "dec_emb")
        d_in = cfg.d_emb + 2 * cfg.ctx_dim
        for layer in range(cfg.dec_layers):
            nn.add_lstm(p, rng, f"dec{layer}", d_in, cfg.dec_hidden, s)
            d_in = cfg.dec_hidden
        nn.add_linear(p, rng, "out", cfg.dec_hidden + 2 * cfg.ctx_dim, vocab_size, s)
        return p

    # ------------------------------------------------------------- encoders
    def encode_hypotheses(self, hyp_sets: Sequence[Sequence[Sequence[int]]]) -> Tensor:
        """``hyp_sets[b]`` holds H token sequences -> (B, H * l_pad, d_b)."""
        B = len(hyp_sets)
        H = len(hyp_sets[0])
        if H == 0 or any(len(s) != H for s in hyp_sets):
            raise ValueError("every utterance needs the same number (>= 1) of hypotheses")
        tokens = np.array([[pad_hypothesis(y, self.l_pad) for y in hs] for hs in hyp_sets],
                          dtype=np.int64).reshape(B * H, self.l_pad)
        x = ad.take(self.p["hyp_emb"], tokens, axis=0)
        for layer in range(self.cfg.bidi_layers):
            fwd = nn.lstm_sequence(self.p, f"bf{layer}", x)
            bwd = nn.lstm_sequence(self.p, f"bb{layer}", x, reverse=True)
            x = nn.linear(self.p, f"bp{layer}", ad.concat([fwd, bwd], axis=-1))
        return ad.reshape(x, (B, H * self.l_pad, x.shape[-1]))

    def additional_encode(self, e: Tensor) -> Tensor:
        """Extra unidirectional layers over ``e``; identity when AE is off."""
        if not self.cfg.ae:
            return e
        x = e
        for layer in range(self.cfg.ae_layers):
            x = nn.linear(self.p, f"aep{layer}", nn.lstm_sequence(self.p, f"ae{layer}", x))
        return x

    def sources(self, e: Tensor | None, e_lens: np.ndarray | None, h_b: Tensor | None,
                mode: str | None = None) -> Sources:
        mode = mode or self.cfg.attention
        if mode not in ATTENTION_MODES:
            raise ValueError(f"unknown attention mode {mode!r}")
        text = acoustic = None
        if mode in ("both", "text_only"):
            mask = np.ones(h_b.shape[:2], dtype=bool)
            text = project_source(self.p, "att_t", h_b, mask, self.cfg.heads)
        if mode in ("both", "acoustics_only"):
            e2 = self.additional_encode(e)
            mask = np.arange(e2.shape[1])[None, :] < np.asarray(e_lens)[:, None]
            acoustic = project_source(self.p, "att_a", e2, mask, self.cfg.heads)
        return Sources(text, acoustic)

    # --------------------------------------------------------------- decoder
    def initial_state(self, batch: int) -> list:
        return [nn.zeros_state(batch, self.cfg.dec_hidden) for _ in range(self.cfg.dec_layers)]

    def step(self, prev_tokens: np.ndarray, state: list, src: Sources) -> StepOutput:
        emb = ad.take(self.p["dec_emb"], prev_tokens, axis=0)
        B = emb.shape[0]
        query = ad.concat([emb, state[-1][0]], axis=-1)
        zero = Tensor(np.zeros((B, self.cfg.ctx_dim)))
        c_b = c_e = zero
        w_b = w_e = None
        if src.text is not None:
            c_b, w = attend(self.p, "att_t", query, src.text)
            w_b = w.data.mean(axis=1)
        if src.acoustic is not None:
            c_e, w = attend(self.p, "att_a", query, src.acoustic)
            w_e = w.data.mean(axis=1)
        x = ad.concat([emb, c_b, c_e], axis=-1)
        names = [f"dec{layer}" for layer in range(self.cfg.dec_layers)]
        top, new_state = nn.lstm_step_layers(self.p, names, x, state)
        logits = nn.linear(self.p, "out", ad.concat([top, c_b, c_e], axis=-1))
        return StepOutput(logits, new_state, w_b, w_e)

    def _run_forced(self, src: Sources, targets: Sequence[Sequence[int]]):
        for y in targets:
            if not y or y[-1] != EOS:
                raise ValueError("teacher-forced sequences must end with eos")
            if min(y) < 0 or max(y) >= self.vocab_size:
                raise ValueError("token outside the vocabulary")
        n = len(targets)
        lengths = np.array([len(y) for y in targets], dtype=np.int64)
        N = int(lengths.max())
        tgt = np.full((n, N), EOS, dtype=np.int64)
        for k, y in enumerate(targets):
            tgt[k, :len(y)] = y
        prev = np.concatenate([np.full((n, 1), SOS, dtype=np.int64), tgt[:, :-1]], axis=1)
        state = self.initial_state(n)
        steps = []
        for k in range(N):
            out = self.step(prev[:, k], state, src)
            state = out.state
            steps.append(out)
        return steps, tgt, lengths

    def teacher_force(self, src: Sources, targets: Sequence[Sequence[int]]):
        """Run the decoder over target sequences (each ending in eos).

        Returns per-step log-probs (n, N, V), padded targets, lengths and the
        per-step head-averaged attention weights (text, acoustic).
        """
        steps, tgt, lengths = self._run_forced(src, targets)
        logp = ad.log_softmax(ad.stack([s.logits for s in steps], axis=1))
        return (logp, tgt, lengths, [s.weights_text for s in steps],
                [s.weights_acoustic for s in steps])

    def sequence_log_probs(self, src: Sources, targets: Sequence[Sequence[int]]) -> Tensor:
        """Teacher-forced log P(y | x, y_r) for each target, shape (n,)."""
        logp, tgt, lengths, _, _ = self.teacher_force(src, targets)
        mask = (np.arange(tgt.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
        return ad.sum(ad.mul(ad.pick(logp, tgt), Tensor(mask)), axis=1)

    def token_logits(self, src: Sources, targets: Sequence[Sequence[int]]) -> tuple[Tensor, np.ndarray]:
        """Valid-position logits stacked as rows, with their target ids."""
        steps, tgt, lengths = self._run_forced(src, targets)
        n, N = tgt.shape
        stacked = ad.reshape(ad.stack([s.logits for s in steps], axis=1),
                             (n * N, self.vocab_size))
        rows = np.flatnonzero((np.arange(N)[None, :] < lengths[:, None]).reshape(-1))
        return ad.take(stacked, rows, axis=0), tgt.reshape(-1)[rows]
