"""Two-pass decoding: first-pass transducer search, then deliberation beam
search or teacher-forced rescoring of the first-pass candidates."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import DecodeConfig
from .data import EOS, SOS, Utterance, utterance_id
from .deliberation import DeliberationDecoder, Sources, select_hypotheses
from .model import TwoPassModel
from .rnnt import Hypothesis, sort_beam


@dataclass
class FirstPass:
    encoding: np.ndarray        # (T', d)
    beam: list[Hypothesis]


def run_first_pass(model: TwoPassModel, utt: Utterance, b1: int,
                   max_symbols: int = 4) -> FirstPass:
    with ad.no_grad():
        e = model.encoder.encode_one(model.features(utt))
        return FirstPass(e, model.rnnt.beam_search(e, b1, max_symbols))


def build_sources(model: TwoPassModel, fp: FirstPass, H: int, mode: str | None = None) -> Sources:
    """Attention sources for one utterance (batch of one)."""
    mode = mode or model.cfg.attention
    h_b = None
    if mode != "acoustics_only":
        h_b = model.delib.encode_hypotheses([select_hypotheses(fp.beam, H)])
    e = Tensor(fp.encoding[None])
    return model.delib.sources(e, np.array([fp.encoding.shape[0]]), h_b, mode)


def second_pass_search(dec: DeliberationDecoder, src: Sources, beam: int, max_len: int,
                       length_norm: bool = False) -> list[Hypothesis]:
    """Label-synchronous beam search.  At each step the best ``beam``
    continuations of all live prefixes are kept; those ending in eos are
    finished.  The last allowed step may only emit eos."""
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    live: list[tuple[tuple, float, list]] = [((), 0.0, None)]
    finished: list[Hypothesis] = []
    tokens_all = dec.allowed + [EOS]
    for step in range(max_len):
        n = len(live)
        prev = np.array([y[-1] if y else SOS for y, _, _ in live], dtype=np.int64)
        if step == 0:
            state = dec.initial_state(n)
        else:
            state = [(Tensor(np.stack([s[layer][0] for _, _, s in live])),
                      Tensor(np.stack([s[layer][1] for _, _, s in live])))
                     for layer in range(len(live[0][2]))]
        out = dec.step(prev, state, src.tile(np.zeros(n, dtype=np.int64)))
        lp = ad.log_softmax_np(out.logits.data)
        options = [EOS] if step == max_len - 1 else tokens_all
        cands = []
        for i, (y, score, _) in enumerate(live):
            row = lp[i]
            for k in options:
                cands.append((-(score + row[k]), y + (k,), i))
        cands.sort(key=lambda c: (c[0], c[1]))
        live = []
        for neg, y, i in cands[:beam]:
            if y[-1] == EOS:
                finished.append(Hypothesis(y[:-1], -neg))
            else:
                st = [(h.data[i], c.data[i]) for h, c in out.state]
                live.append((y, -neg, st))
        if not live:
            break
        if not length_norm and len(finished) >= beam:
            worst_kept = sorted(h.log_prob for h in finished)[-beam]
            if live[0][1] < worst_kept:
                break
    if length_norm:
        ranked = sorted(finished, key=lambda h: (-h.log_prob / (len(h.tokens) + 1), h.tokens))
        return ranked[:beam]
    return sort_beam(finished)[:beam]


def decode_two_pass(model: TwoPassModel, utt: Utterance, cfg: DecodeConfig,
                    mode: str | None = None, first: FirstPass | None = None) -> list[Hypothesis]:
    if first is None:
        first = run_first_pass(model, utt, cfg.b1, cfg.max_symbols)
    with ad.no_grad():
        src = build_sources(model, first, cfg.hyps, mode)
        return second_pass_search(model.delib, src, cfg.b2, 2 * model.data_cfg.l_pad,
                                  cfg.length_norm)


def rescore_first_pass(model: TwoPassModel, first: FirstPass, H: int,
                       mode: str | None = None) -> list[Hypothesis]:
    """Re-rank every first-pass candidate by its teacher-forced second-pass
    log-probability; the attention sees all top-``H`` candidates."""
    if not first.beam:
        raise ValueError("first-pass beam is empty")
    with ad.no_grad():
        src = build_sources(model, first, H, mode)
        targets = [list(h.tokens) + [EOS] for h in first.beam]
        scores = model.delib.sequence_log_probs(
            src.tile(np.zeros(len(targets), dtype=np.int64)), targets).data
    return sort_beam(Hypothesis(h.tokens, float(s)) for h, s in zip(first.beam, scores))


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; each item is computed independently, so the
    result does not depend on ``threads``."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def decode_corpus(model: TwoPassModel, utts: Sequence[Utterance], cfg: DecodeConfig,
                  mode: str | None = None,
                  first_passes: Sequence[FirstPass] | None = None) -> list[list[Hypothesis]]:
    def one(k: int) -> list[Hypothesis]:
        fp = first_passes[k] if first_passes is not None else \
            run_first_pass(model, utts[k], cfg.b1, cfg.max_symbols)
        if cfg.decode == "rescore":
            return rescore_first_pass(model, fp, cfg.hyps, mode)
        return decode_two_pass(model, utts[k], cfg, mode, first=fp)

    return parallel_map(one, range(len(utts)), cfg.threads)


def first_pass_corpus(model: TwoPassModel, utts: Sequence[Utterance], b1: int,
                      max_symbols: int = 4, threads: int = 1) -> list[FirstPass]:
    return parallel_map(lambda u: run_first_pass(model, u, b1, max_symbols), utts, threads)


def write_decode_output(path, beams: Sequence[Sequence[Hypothesis]], vocab,
                        ids: Sequence[str] | None = None, nbest: bool = False) -> None:
    """``id<TAB>tokens<TAB>logprob`` per utterance; the n-best variant inserts
    a rank column after the id."""
    lines = []
    for k, beam in enumerate(beams):
        uid = ids[k] if ids is not None else utterance_id(k)
        entries = beam if nbest else beam[:1]
        for rank, h in enumerate(entries, 1):
            text = vocab.decode(h.tokens)
            if nbest:
                lines.append(f"{uid}\t{rank}\t{text}\t{h.log_prob:.6f}")
            else:
                lines.append(f"{uid}\t{text}\t{h.log_prob:.6f}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_decode_output(path, vocab, nbest: bool = False) -> dict[str, list[tuple[list[int], float]]]:
    out: dict[str, list[tuple[list[int], float]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split("\t")
        uid, text, score = (parts[0], parts[2], parts[3]) if nbest else parts
        out.setdefault(uid, []).append((vocab.encode(text), float(score)))
    return out
