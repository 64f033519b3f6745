"""Token-level error counting."""

from __future__ import annotations

from typing import Sequence

from .kernels import edit_distance


def word_errors(hyp: Sequence[int], ref: Sequence[int]) -> int:
    """Substitutions + insertions + deletions (unit-cost Levenshtein)."""
    return edit_distance(list(hyp), list(ref))


def compute_wer(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> float:
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValueError("references contain no tokens")
    return sum(word_errors(h, r) for h, r in zip(hyps, refs)) / total
