"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from twopass import autodiff as ad
from twopass.autodiff import Tensor
from twopass.cli import main
from twopass.config import build_config, parse_config_text
from twopass.data import EOS, Vocab, generate_corpus
from twopass.decoding import (
    FirstPass, build_sources, decode_corpus, first_pass_corpus, rescore_first_pass,
    run_first_pass, second_pass_search,
)
from twopass.flops import FlopsInput, estimate_flops, las_configuration, split_attention
from twopass.metrics import compute_wer, word_errors
from twopass.model import TwoPassModel
from twopass.report import export_heatmap, read_heatmap_csv, read_pgm
from twopass.rnnt import Hypothesis, pad_tokens
from twopass.training import FirstPassCache, mwer_loss, train
from conftest import record, tiny_data_config, tiny_model, tiny_model_config
from oracles import recursive_edit_distance, rnnt_brute_force_loglik
import gradcases

TREND_CFG = Path(__file__).resolve().parent.parent / "configs" / "trend.cfg"


def test_criterion_1_rnnt_loss_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng([seed, 1])
        n_sym = int(rng.integers(1, 5))
        model = tiny_model(seed, data=tiny_data_config(n_symbols=n_sym))
        feats = rng.normal(size=(int(rng.integers(1, 9)), 6))
        ref = [int(t) for t in rng.choice(model.vocab.token_ids, size=int(rng.integers(0, 4)))]
        e, lens = model.encoder([feats])
        assert lens[0] <= 4
        loss = model.rnnt.loss(e, lens, [ref]).data[0]
        targets, _ = pad_tokens([ref])
        with ad.no_grad():
            lp = model.rnnt.log_probs(e, targets).data[0, :, :len(ref) + 1]
        worst = max(worst, abs(loss + rnnt_brute_force_loglik(lp, ref)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 10
    record(1, ok, f"max |loss - oracle| = {worst:.2e} over 50 models in {elapsed:.1f}s")
    assert ok


def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    worst = {loss: max(gradcases.check(loss, s) for s in gradcases.SEEDS)
             for loss in gradcases.LOSSES}
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(2, ok, f"max rel err over {len(gradcases.SEEDS)} seeds: {detail} in {elapsed:.0f}s")
    assert ok


def test_criterion_3_mwer_properties():
    rng = np.random.default_rng(3)
    zero = all(mwer_loss(Tensor(rng.normal(size=5) * 4), [2] * 5)[0].item() == 0.0
               for _ in range(200))
    hand = mwer_loss(Tensor(np.log([0.6, 0.4])), [2, 0])[0].item()
    shift = True
    for _ in range(200):
        s = rng.integers(-4096, 0, 4) / 256.0
        c = float(rng.integers(-64, 64))
        errs = rng.integers(0, 5, 4)
        shift &= mwer_loss(Tensor(s), errs)[0].item() == mwer_loss(Tensor(s + c), errs)[0].item()
    ok = zero and abs(hand - 0.2) <= 1e-12 and shift
    record(3, ok, f"zero={zero} hand={hand!r} shift-exact={shift}")
    assert ok


def test_criterion_4_exhaustive_decoding():
    matches = total = 0
    for seed, mode in itertools.product(range(6), ("both", "text_only", "acoustics_only")):
        n_sym = 2 + seed % 2
        max_tokens = 4 if n_sym == 2 else 3
        model = tiny_model(seed, model=tiny_model_config(init_scale=1.5),
                           data=tiny_data_config(n_symbols=n_sym))
        fp = FirstPass(np.random.default_rng(seed).normal(size=(3, 5)),
                       [Hypothesis((3, 4), -1.0), Hypothesis((4,), -2.0)])
        seqs = [s for n in range(max_tokens + 1)
                for s in itertools.product(model.vocab.token_ids, repeat=n)]
        with ad.no_grad():
            src = build_sources(model, fp, 2, mode)
            scores = model.delib.sequence_log_probs(
                src.tile(np.zeros(len(seqs), dtype=int)), [list(s) + [EOS] for s in seqs]).data
            found = second_pass_search(model.delib, src, 10_000, max_tokens + 1)
        total += 1
        matches += found[0].tokens == seqs[int(np.argmax(scores))]
    greedy = 0
    for seed in range(20):
        model = tiny_model(seed, data=tiny_data_config(n_symbols=4))
        e = np.random.default_rng(seed).normal(size=(5, 5)) * 2
        greedy += model.rnnt.beam_search(e, 1, 3)[0] == model.rnnt.greedy(e, 3)
    ok = matches == total and greedy == 20
    record(4, ok, f"second pass {matches}/{total} argmax matches; beam-1 = greedy {greedy}/20")
    assert ok


def test_criterion_5_rescoring_contract():
    worst, permuted, n = 0.0, True, 0
    cfg = tiny_data_config()
    for seed in range(5):
        model = tiny_model(seed)
        for utt in generate_corpus(4, seed, Vocab.default(cfg.n_symbols), cfg):
            fp = run_first_pass(model, utt, 4)
            rescored = rescore_first_pass(model, fp, 2)
            permuted &= sorted(h.tokens for h in rescored) == sorted(h.tokens for h in fp.beam)
            with ad.no_grad():
                src = build_sources(model, fp, 2)
                for h in rescored:
                    alone = model.delib.sequence_log_probs(src, [list(h.tokens) + [EOS]]).data[0]
                    worst = max(worst, abs(alone - h.log_prob))
                    n += 1
    ok = permuted and worst <= 1e-9
    record(5, ok, f"permutation={permuted}; max score deviation {worst:.1e} over {n} hyps")
    assert ok


def test_criterion_6_flops():
    f = FlopsInput(22e6, 42e6, 14, 8, 8, 109, 120, split_attention(2e6))
    g = estimate_flops(f) / 1e9
    ratio = estimate_flops(f) / estimate_flops(las_configuration(f))
    ok = 7.0 <= g <= 9.5 and 1.5 <= ratio <= 2.1
    record(6, ok, f"{g:.4f} GFLOPS (band 7.0-9.5), deliberation/LAS ratio {ratio:.4f} "
                  "(band 1.5-2.1)")
    assert ok


@pytest.mark.slow
def test_criterion_7_trend_reproduction(tmp_path):
    t0 = time.perf_counter()
    shared = parse_config_text(TREND_CFG.read_text(encoding="utf-8"), str(TREND_CFG))
    cfg = build_config(shared, {"stage": "rnnt", "steps": 4000, "augment_sigma": 0.5})
    vocab = Vocab.default(cfg.data.n_symbols)
    train_set = generate_corpus(2000, 1000, vocab, cfg.data)
    test_set = generate_corpus(200, 900000, vocab, cfg.data)
    refs = [u.reference for u in test_set]
    dc = cfg.decode

    rnnt = TwoPassModel(cfg.model, cfg.data, cfg.seed)
    train(rnnt, train_set, cfg)
    rnnt.save(tmp_path / "rnnt.ckpt")
    firsts = first_pass_corpus(rnnt, test_set, dc.b1, dc.max_symbols)
    wer = {"first": compute_wer(refs, [fp.beam[0].tokens for fp in firsts])}

    second = {"augment_sigma": 0.25, "augment_copies": 4}
    cache = FirstPassCache(rnnt, train_set, dc.b1, dc.max_symbols, 0.25, 4, cfg.seed)

    def decode(model, mode, how="beam"):
        c = build_config(shared, {"decode": how})
        beams = decode_corpus(model, test_set, c.decode, mode, firsts)
        return compute_wer(refs, [b[0].tokens for b in beams])

    for mode in ("both", "acoustics_only", "text_only"):
        model = TwoPassModel.load(tmp_path / "rnnt.ckpt", attention=mode)
        c = build_config(shared, second, {"stage": "delib_ce", "steps": 4000,
                                          "lr_schedule": "linear", "attention": mode})
        train(model, train_set, c, cache=cache)
        wer[mode] = decode(model, mode)
        if mode == "both":
            wer["rescore"] = decode(model, mode, "rescore")
            c = build_config(shared, second, {"stage": "mwer", "steps": 100, "lr": 0.001})
            train(model, train_set, c, cache=cache)
            wer["mwer"] = decode(model, mode)
    elapsed = time.perf_counter() - t0

    checks = {
        "first pass in 10-30%": 0.10 <= wer["first"] <= 0.30,
        "a: both >= 10% rel. better": wer["both"] <= 0.9 * wer["first"],
        "b: both <= single attentions": wer["both"] <= min(wer["acoustics_only"],
                                                           wer["text_only"]),
        "c: MWER no worse": wer["mwer"] <= wer["both"],
        "d: beam <= rescore + 1pt": wer["both"] <= wer["rescore"] + 0.01,
        "runtime <= 15 min": elapsed <= 900,
    }
    ok = all(checks.values())
    summary = ", ".join(f"{k} {100 * v:.2f}%" for k, v in wer.items())
    failed = [k for k, v in checks.items() if not v]
    record(7, ok, f"WER {summary}; {elapsed:.0f}s" + (f"; failed: {failed}" if failed else ""))
    assert ok, checks


def test_criterion_8_determinism(tmp_path, capsys):
    w = tmp_path
    cfg = ["--set", "l_pad=8", "--set", "batch_size=4"]
    run = lambda *argv: main([str(a) for a in argv])  # noqa: E731
    assert run("gen-data", *cfg, "--seed", 5, "--count", 24, "--out", w / "d.bin") == 0
    logs_equal = True
    for stage, init in (("rnnt", None), ("delib-ce", "r0.ckpt"), ("mwer", "d0.ckpt"),
                        ("joint", None)):
        lines = []
        for k in range(2):
            argv = ["train", *cfg, "--seed", 3, "--stage", stage, "--steps", 10,
                    "--data", w / "d.bin", "--out", w / f"{stage[0]}{k}.ckpt",
                    "--log", w / f"{stage}{k}.csv"]
            if init:
                argv += ["--init", w / init]
            assert run(*argv) == 0
            rows = (w / f"{stage}{k}.csv").read_text().splitlines()
            lines.append([r.rsplit(",", 1)[0] for r in rows])
            assert len(rows) == 11
        logs_equal &= lines[0] == lines[1]
        logs_equal &= (w / f"{stage[0]}0.ckpt").read_bytes() == \
            (w / f"{stage[0]}1.ckpt").read_bytes()
    decodes_equal = True
    for how in ("beam", "rescore"):
        outs = []
        for threads in (1, 2, 4):
            out = w / f"{how}{threads}.txt"
            assert run("decode", "--model", w / "d0.ckpt", "--data", w / "d.bin", "--mode", how,
                       "--threads", threads, "--nbest", "--out", out) == 0
            outs.append(out.read_bytes())
        decodes_equal &= len(set(outs)) == 1
    capsys.readouterr()
    ok = logs_equal and decodes_equal
    record(8, ok, f"10-step logs and checkpoints identical={logs_equal}; "
                  f"decodes identical at threads 1/2/4={decodes_equal}")
    assert ok


def test_criterion_9_wer_harness():
    rng = np.random.default_rng(9)
    pairs = [(rng.integers(3, 7, rng.integers(0, 8)).tolist(),
              rng.integers(3, 7, rng.integers(1, 8)).tolist()) for _ in range(1000)]
    per_pair = all(word_errors(h, r) == recursive_edit_distance(h, r) for h, r in pairs)
    refs, hyps = [r for _, r in pairs], [h for h, _ in pairs]
    pooled = compute_wer(refs, hyps) == \
        sum(recursive_edit_distance(h, r) for h, r in pairs) / sum(map(len, refs))
    ok = per_pair and pooled
    record(9, ok, f"1000 pairs equal oracle={per_pair}; corpus WER equal={pooled}")
    assert ok


def test_criterion_10_heatmap_export(tmp_path):
    matrices = [np.array([[1.0]]), np.full((1, 4), 0.25),
                np.array([[0.1, 0.2, 0.7], [0.0, 1.0, 0.0], [0.123456789, 0.5, 0.376543211],
                          [0.5, 0.498, 0.002]])]
    ok = True
    for k, w in enumerate(matrices):
        src = [f"s{j}" for j in range(w.shape[1])]
        out = [f"o{i}" for i in range(w.shape[0])]
        csv_path, pgm_path = export_heatmap(w, src, out, tmp_path / f"m{k}")
        back, _, _ = read_heatmap_csv(csv_path)
        ok &= bool(np.all(np.abs(back - w) <= 5e-7))
        pixels = read_pgm(pgm_path)
        ok &= pixels.shape == w.shape
        ok &= bool(np.array_equal(pixels, np.floor(255 * w + 0.5).astype(np.uint8)))
    ok &= read_pgm(tmp_path / "m0.pgm").tolist() == [[255]]
    ok &= read_pgm(tmp_path / "m1.pgm").tolist() == [[64] * 4]
    record(10, ok, "3 fixed matrices: CSV within 6 decimals, PGM dims and round(255p) pixels")
    assert ok
