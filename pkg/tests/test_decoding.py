import itertools

import numpy as np
import pytest

from twopass import autodiff as ad
from twopass.config import DecodeConfig
from twopass.data import EOS, Vocab, generate_corpus
from twopass.decoding import (
    FirstPass, build_sources, decode_corpus, first_pass_corpus, read_decode_output,
    rescore_first_pass, run_first_pass, second_pass_search, write_decode_output,
)
from twopass.rnnt import Hypothesis
from conftest import tiny_data_config, tiny_model, tiny_model_config


def all_sequences(tokens, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(tokens, repeat=n)


def brute_force_scores(model, src, max_tokens):
    seqs = list(all_sequences(model.vocab.token_ids, max_tokens))
    with ad.no_grad():
        scores = model.delib.sequence_log_probs(
            src.tile(np.zeros(len(seqs), dtype=int)), [list(s) + [EOS] for s in seqs]).data
    return dict(zip(seqs, scores))


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("mode", ["both", "text_only", "acoustics_only"])
def test_exhaustive_search_equals_brute_force_argmax(seed, mode):
    n_sym = 2 + seed % 2
    max_tokens = 4 if n_sym == 2 else 3
    model = tiny_model(seed, model=tiny_model_config(init_scale=1.5),
                       data=tiny_data_config(n_symbols=n_sym))
    e = np.random.default_rng(seed).normal(size=(3, 5))
    fp = FirstPass(e, [Hypothesis((3, 4), -1.0), Hypothesis((4,), -2.0)])
    with ad.no_grad():
        src = build_sources(model, fp, 2, mode)
        found = second_pass_search(model.delib, src, beam=10_000, max_len=max_tokens + 1)
    oracle = brute_force_scores(model, src, max_tokens)
    best = max(oracle, key=lambda s: (oracle[s], tuple(-t for t in s)))
    assert found[0].tokens == best
    assert len(found) == len(oracle)
    for h in found:
        assert h.log_prob == pytest.approx(oracle[h.tokens], abs=1e-10)


def test_narrow_beam_returns_sorted_subset(model):
    fp = FirstPass(np.random.default_rng(0).normal(size=(3, 5)), [Hypothesis((3,), 0.0)])
    with ad.no_grad():
        src = build_sources(model, fp, 1)
        beam = second_pass_search(model.delib, src, beam=2, max_len=6)
    assert 1 <= len(beam) <= 2
    assert beam[0].log_prob >= beam[-1].log_prob
    assert all(len(h.tokens) <= 5 for h in beam)
    with pytest.raises(ValueError):
        second_pass_search(model.delib, src, beam=0, max_len=3)


def toy_corpus(n=6, seed=3):
    cfg = tiny_data_config()
    return generate_corpus(n, seed, Vocab.default(cfg.n_symbols), cfg)


@pytest.mark.parametrize("H", [1, 2, 4])
def test_rescoring_permutes_beam_with_teacher_forced_scores(H):
    model = tiny_model(4)
    for utt in toy_corpus():
        fp = run_first_pass(model, utt, b1=4)
        rescored = rescore_first_pass(model, fp, H)
        assert sorted(h.tokens for h in rescored) == sorted(h.tokens for h in fp.beam)
        for h in rescored:
            with ad.no_grad():
                src = build_sources(model, fp, H)
                alone = model.delib.sequence_log_probs(src, [list(h.tokens) + [EOS]]).data[0]
            assert abs(h.log_prob - alone) <= 1e-9
        assert [h.log_prob for h in rescored] == sorted((h.log_prob for h in rescored),
                                                        reverse=True)


@pytest.mark.parametrize("decode", ["beam", "rescore"])
def test_decode_is_thread_invariant(decode):
    model = tiny_model(6)
    corpus = toy_corpus(8)
    outs = [decode_corpus(model, corpus, DecodeConfig(b1=3, b2=3, hyps=2, decode=decode,
                                                      threads=t)) for t in (1, 4)]
    assert outs[0] == outs[1]


def test_precomputed_first_passes_give_same_result():
    model = tiny_model(6)
    corpus = toy_corpus(4)
    cfg = DecodeConfig(b1=3, b2=2, hyps=2)
    firsts = first_pass_corpus(model, corpus, 3, threads=2)
    assert decode_corpus(model, corpus, cfg, first_passes=firsts) == \
        decode_corpus(model, corpus, cfg)


@pytest.mark.parametrize("nbest", [False, True])
def test_decode_output_round_trip(tmp_path, nbest):
    vocab = Vocab.default(3)
    beams = [[Hypothesis((3, 4), -1.25), Hypothesis((), -2.5)], [Hypothesis((5,), -0.125)]]
    write_decode_output(tmp_path / "d.txt", beams, vocab, nbest=nbest)
    back = read_decode_output(tmp_path / "d.txt", vocab, nbest=nbest)
    keep = (lambda b: b) if nbest else (lambda b: b[:1])
    assert back == {f"utt{k:05d}": [(list(h.tokens), h.log_prob) for h in keep(b)]
                    for k, b in enumerate(beams)}
