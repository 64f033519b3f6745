"""Training stages: transducer pre-training, deliberation CE with the first
pass frozen, MWER fine-tuning and joint training."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import Config, TrainConfig
from .data import EOS, FrameSequence, Utterance
from .decoding import FirstPass, build_sources, second_pass_search
from .deliberation import select_hypotheses
from .metrics import word_errors
from .model import TwoPassModel
from .rnnt import pad_batch

STAGE_GROUPS = {
    "rnnt": ("enc", "rnnt"),
    "delib_ce": ("delib",),
    "mwer": ("delib",),
    "joint": ("enc", "rnnt", "delib"),
}


class Optimizer:
    """SGD or Adam with optional global-norm clipping.  The ``linear``
    schedule decays the rate to a tenth of ``lr`` over ``steps`` updates."""

    def __init__(self, params: Sequence[Tensor], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        if cfg.optimizer == "adam":
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> float:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
        scale = 1.0
        if self.cfg.clip_norm > 0 and norm > self.cfg.clip_norm:
            scale = self.cfg.clip_norm / norm
        self.t += 1
        lr = self.cfg.lr
        if self.cfg.lr_schedule == "linear":
            frac = min(1.0, (self.t - 1) / max(1, self.cfg.steps - 1))
            lr *= 1.0 - 0.9 * frac
        for k, (p, g) in enumerate(zip(self.params, grads)):
            g = g * scale
            if self.cfg.optimizer == "sgd":
                p.data = p.data - lr * g
                continue
            b1, b2 = 0.9, 0.999
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        for p in self.params:
            p.zero_grad()
        return norm


class TrainLog:
    """CSV log, one ``step,stage,loss,wall_ms`` line per optimizer step."""

    HEADER = "step,stage,loss,wall_ms"

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[tuple[int, str, float, float]] = []
        if self.path:
            self.path.write_text(self.HEADER + "\n", encoding="utf-8")

    def add(self, step: int, stage: str, loss: float, wall_ms: float) -> None:
        self.rows.append((step, stage, loss, wall_ms))
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(f"{step},{stage},{loss!r},{wall_ms:.1f}\n")

    @property
    def losses(self) -> list[float]:
        return [r[2] for r in self.rows]


def batches(n: int, batch_size: int, steps: int, seed: int):
    """Deterministic index batches: a fresh permutation every epoch."""
    rng = np.random.default_rng([seed, 0xBA7C])
    order: list[int] = []
    for _ in range(steps):
        if len(order) < batch_size:
            order = order + rng.permutation(n).tolist()
        yield order[:batch_size]
        order = order[batch_size:]


def augmented_features(model: TwoPassModel, utt: Utterance, sigma: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Front-end features after adding fresh Gaussian noise to the frames."""
    frames = utt.frames.data + rng.normal(0.0, sigma, utt.frames.data.shape)
    return model.features(Utterance(FrameSequence(frames), utt.reference))


# --------------------------------------------------------------------- losses

def rnnt_batch_loss(model: TwoPassModel, feats: Sequence[np.ndarray],
                    refs: Sequence[Sequence[int]]) -> Tensor:
    e, lens = model.encoder(feats)
    return ad.mean(model.rnnt.loss(e, lens, refs))


def _padded_encodings(firsts: Sequence[FirstPass]) -> tuple[Tensor, np.ndarray]:
    e, lens = pad_batch([fp.encoding for fp in firsts])
    return Tensor(e), lens


def delib_ce_loss(model: TwoPassModel, e: Tensor, e_lens: np.ndarray,
                  beams: Sequence[Sequence], refs: Sequence[Sequence[int]], H: int,
                  mode: str | None = None) -> Tensor:
    """Token-mean cross-entropy of the deliberation decoder on references."""
    mode = mode or model.cfg.attention
    h_b = None
    if mode != "acoustics_only":
        h_b = model.delib.encode_hypotheses([select_hypotheses(b, H) for b in beams])
    src = model.delib.sources(e, e_lens, h_b, mode)
    logits, targets = model.delib.token_logits(src, [list(r) + [EOS] for r in refs])
    return ad.cross_entropy(logits, targets)


@dataclass
class MwerBatchStats:
    probs: np.ndarray
    errors: np.ndarray
    mean_error: float


def mwer_loss(seq_log_probs: Tensor, errors: Sequence[int], ce: Tensor | None = None,
              alpha: float = 0.01) -> tuple[Tensor, MwerBatchStats]:
    """Expected word-error deviation over an n-best list, plus ``alpha`` CE.

    Probabilities are renormalized over the list; the error baseline is the
    list mean, and the error counts are constants.
    """
    if seq_log_probs.size < 2:
        raise ValueError("MWER needs at least two hypotheses")
    W = np.asarray(errors, dtype=np.float64)
    if W.shape != seq_log_probs.shape:
        raise ValueError("one error count per hypothesis is required")
    mean_w = float(W.mean())
    probs = ad.softmax(seq_log_probs, axis=-1)
    loss = ad.sum(ad.mul(probs, Tensor(W - mean_w)))
    if ce is not None and alpha:
        loss = ad.add(loss, ad.scale(ce, alpha))
    return loss, MwerBatchStats(probs.data.copy(), W, mean_w)


def mwer_batch_loss(model: TwoPassModel, firsts: Sequence[FirstPass],
                    refs: Sequence[Sequence[int]], search_beams: Sequence[Sequence],
                    H: int, alpha: float, mode: str | None = None) -> Tensor:
    """Mean over utterances of MWER + alpha * sequence CE (-log P(y*|x))."""
    mode = mode or model.cfg.attention
    e, lens = _padded_encodings(firsts)
    h_b = None
    if mode != "acoustics_only":
        h_b = model.delib.encode_hypotheses([select_hypotheses(fp.beam, H) for fp in firsts])
    src = model.delib.sources(e, lens, h_b, mode)
    index, targets, spans = [], [], []
    for b, (ref, nbest) in enumerate(zip(refs, search_beams)):
        start = len(targets)
        index.append(b)
        targets.append(list(ref) + [EOS])
        for h in nbest:
            index.append(b)
            targets.append(list(h.tokens) + [EOS])
        spans.append((start, len(targets)))
    scores = model.delib.sequence_log_probs(src.tile(np.array(index)), targets)
    total = None
    for b, (start, stop) in enumerate(spans):
        ce = ad.scale(ad.take(scores, [start]), -1.0)
        ce = ad.reshape(ce, ())
        if stop - start - 1 >= 2:
            nbest = search_beams[b]
            errs = [word_errors(h.tokens, refs[b]) for h in nbest]
            term, _ = mwer_loss(ad.take(scores, np.arange(start + 1, stop)), errs, ce, alpha)
        else:
            term = ad.scale(ce, alpha)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(refs))


def joint_loss(model: TwoPassModel, feats: Sequence[np.ndarray], refs: Sequence[Sequence[int]],
               lam: float, H: int, b1: int, max_symbols: int = 4,
               parts: dict | None = None) -> Tensor:
    """Transducer loss plus ``lam`` times the deliberation sequence CE, both
    averaged over the batch; the shared encoder receives both gradients."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    e, lens = model.encoder(feats)
    l_rnnt = ad.mean(model.rnnt.loss(e, lens, refs))
    with ad.no_grad():
        beams = [model.rnnt.beam_search(e.data[b, :lens[b]], b1, max_symbols)
                 for b in range(len(feats))]
    mode = model.cfg.attention
    h_b = None
    if mode != "acoustics_only":
        h_b = model.delib.encode_hypotheses([select_hypotheses(bm, H) for bm in beams])
    src = model.delib.sources(e, lens, h_b, mode)
    seq = model.delib.sequence_log_probs(src, [list(r) + [EOS] for r in refs])
    l_ce = ad.scale(ad.mean(seq), -1.0)
    if parts is not None:
        parts["rnnt"], parts["ce"] = l_rnnt, l_ce
    return ad.add(l_rnnt, ad.scale(l_ce, lam))


# --------------------------------------------------------------------- stages

class FirstPassCache:
    """First-pass encodings and beams of a frozen transducer.

    While the shared encoder and transducer decoder are frozen these are
    pure functions of the input, so computing them once is equivalent to
    regenerating them every batch.  With ``sigma > 0`` each utterance also
    has ``copies - 1`` noise-augmented variants (variant 0 is clean).
    """

    def __init__(self, model: TwoPassModel, utts: Sequence[Utterance], b1: int,
                 max_symbols: int = 4, sigma: float = 0.0, copies: int = 1, seed: int = 0):
        self.model, self.utts, self.b1, self.max_symbols = model, utts, b1, max_symbols
        self.sigma, self.copies, self.seed = sigma, copies if sigma > 0 else 1, seed
        self._store: dict[tuple[int, int], FirstPass] = {}
        self._hashes = (model.group_hash("enc"), model.group_hash("rnnt"))

    def matches(self, model: TwoPassModel, utts: Sequence[Utterance], tc: TrainConfig,
                dc) -> bool:
        copies = tc.augment_copies if tc.augment_sigma > 0 else 1
        return (self.utts is utts and (self.b1, self.max_symbols) == (dc.b1, dc.max_symbols)
                and (self.sigma, self.copies) == (tc.augment_sigma, copies)
                and self._hashes == (model.group_hash("enc"), model.group_hash("rnnt")))

    def get(self, k: int, variant: int = 0) -> FirstPass:
        fp = self._store.get((k, variant))
        if fp is None:
            utt = self.utts[k]
            with ad.no_grad():
                if variant:
                    rng = np.random.default_rng([self.seed, k, variant, 0xA06])
                    feats = augmented_features(self.model, utt, self.sigma, rng)
                else:
                    feats = self.model.features(utt)
                e = self.model.encoder.encode_one(feats)
                fp = FirstPass(e, self.model.rnnt.beam_search(e, self.b1, self.max_symbols))
            self._store[(k, variant)] = fp
        return fp

    __getitem__ = get

    def check_frozen(self, model: TwoPassModel) -> None:
        if (model.group_hash("enc"), model.group_hash("rnnt")) != self._hashes:
            raise RuntimeError("first-pass parameters changed under a frozen cache")


def train(model: TwoPassModel, utts: Sequence[Utterance], cfg: Config,
          log: TrainLog | None = None, cache: FirstPassCache | None = None) -> TrainLog:
    """Run ``cfg.train.steps`` optimizer steps of ``cfg.train.stage``."""
    tc, dc = cfg.train, cfg.decode
    log = log if log is not None else TrainLog()
    stage = tc.stage
    opt = Optimizer(model.params(*STAGE_GROUPS[stage]), tc)
    feats = [model.features(u) for u in utts]
    refs = [u.reference for u in utts]
    if stage in ("delib_ce", "mwer"):
        if cache is None or not cache.matches(model, utts, tc, dc):
            cache = FirstPassCache(model, utts, dc.b1, dc.max_symbols, tc.augment_sigma,
                                   tc.augment_copies, cfg.seed)
    model.zero_grad()
    for step, idx in enumerate(batches(len(utts), tc.batch_size, tc.steps, cfg.seed), 1):
        t0 = time.perf_counter()
        b_refs = [refs[k] for k in idx]
        if tc.augment_sigma > 0 and stage in ("rnnt", "joint"):
            rng = np.random.default_rng([cfg.seed, step, 0xA06])
            b_feats = [augmented_features(model, utts[k], tc.augment_sigma, rng) for k in idx]
        else:
            b_feats = [feats[k] for k in idx]
        if stage in ("delib_ce", "mwer"):
            pick = np.random.default_rng([cfg.seed, step, 0xC0B])
            firsts = [cache.get(k, int(pick.integers(cache.copies))) for k in idx]
        if stage == "mwer":
            with ad.no_grad():
                nbests = [second_pass_search(model.delib, build_sources(model, fp, dc.hyps),
                                             tc.b_mwer, 2 * model.data_cfg.l_pad)
                          for fp in firsts]
        with ad.Tape() as tape:
            if stage == "rnnt":
                loss = rnnt_batch_loss(model, b_feats, b_refs)
            elif stage == "delib_ce":
                e, lens = _padded_encodings(firsts)
                loss = delib_ce_loss(model, e, lens, [fp.beam for fp in firsts], b_refs, dc.hyps)
            elif stage == "mwer":
                loss = mwer_batch_loss(model, firsts, b_refs, nbests, dc.hyps, tc.alpha)
            else:
                loss = joint_loss(model, b_feats, b_refs, tc.lam, dc.hyps,
                                  dc.b1, dc.max_symbols)
        ad.backprop(tape, loss)
        opt.step()
        log.add(step, stage, loss.item(), 1000 * (time.perf_counter() - t0))
    if stage in ("delib_ce", "mwer"):
        cache.check_frozen(model)
    return log
