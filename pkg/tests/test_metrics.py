import numpy as np
import pytest

from twopass.metrics import compute_wer, word_errors
from oracles import recursive_edit_distance


def test_perfect_and_single_substitution():
    refs = [[3, 4, 5, 6], [3, 3, 3, 4, 5, 6]]
    assert compute_wer(refs, refs) == 0.0
    hyps = [[3, 4, 5, 6], [3, 3, 9, 4, 5, 6][:2] + [4, 4, 5, 6]]
    assert compute_wer(refs, hyps) == 0.1


def test_wer_can_exceed_one():
    assert compute_wer([[3]], [[4, 4, 4]]) == 3.0


def test_wer_errors():
    with pytest.raises(ValueError):
        compute_wer([[3]], [])
    with pytest.raises(ValueError):
        compute_wer([[]], [[3]])


def test_corpus_wer_is_pooled_oracle_sum():
    rng = np.random.default_rng(4)
    refs = [rng.integers(3, 6, rng.integers(1, 7)).tolist() for _ in range(40)]
    hyps = [rng.integers(3, 6, rng.integers(0, 7)).tolist() for _ in range(40)]
    errors = sum(recursive_edit_distance(h, r) for h, r in zip(hyps, refs))
    assert compute_wer(refs, hyps) == errors / sum(map(len, refs))
    assert all(word_errors(h, r) == word_errors(r, h) for h, r in zip(hyps, refs))
