"""Seeded gradient-check cases for every trainable loss."""

from __future__ import annotations

import numpy as np

from twopass import autodiff as ad
from twopass.autodiff import Tensor
from twopass.data import Vocab, generate_corpus
from twopass.decoding import build_sources, run_first_pass, second_pass_search
from twopass.training import (
    _padded_encodings, delib_ce_loss, joint_loss, mwer_batch_loss, rnnt_batch_loss,
)
from conftest import tiny_data_config, tiny_model, tiny_model_config

LOSSES = ("ce", "rnnt", "mwer", "joint")
SEEDS = range(20)
# Central differences carry roundoff near eps * |loss| / STEP (about 1e-11 here),
# so gradients below FLOOR are compared in absolute terms.
FLOOR = 1e-6
STEP = 1e-4


def _setup(seed: int):
    rng = np.random.default_rng([seed, 0x6AD])
    mode = ("both", "acoustics_only", "text_only")[seed % 3]
    model = tiny_model(seed, model=tiny_model_config(attention=mode, ae=bool(seed % 2)),
                       data=tiny_data_config(n_symbols=int(rng.integers(2, 4))))
    cfg = model.data_cfg
    utts = generate_corpus(2, seed * 10, Vocab.default(cfg.n_symbols), cfg)
    return model, utts


def case(loss: str, seed: int):
    """Return (objective, parameters) for one seeded configuration."""
    model, utts = _setup(seed)
    refs = [u.reference for u in utts]
    H = 1 + seed % 3
    if loss == "rnnt":
        feats = [model.features(u) for u in utts]
        return (lambda: rnnt_batch_loss(model, feats, refs)), model.params("enc", "rnnt")
    if loss == "joint":
        feats = [model.features(u) for u in utts]
        return (lambda: joint_loss(model, feats, refs, 0.7, H, b1=3)), model.params()
    firsts = [run_first_pass(model, u, 3) for u in utts]
    if loss == "ce":
        e, lens = _padded_encodings(firsts)
        return (lambda: delib_ce_loss(model, e, lens, [fp.beam for fp in firsts], refs, H),
                model.params("delib"))
    with ad.no_grad():
        nbests = [second_pass_search(model.delib, build_sources(model, fp, H), 3, 6)
                  for fp in firsts]
    return (lambda: mwer_batch_loss(model, firsts, refs, nbests, H, alpha=0.01),
            model.params("delib"))


def check(loss: str, seed: int, coords: int = 4) -> float:
    f, params = case(loss, seed)
    return ad.finite_diff_check(f, params, coords=coords, seed=seed, step=STEP,
                                floor=FLOOR)
