"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the library's own code paths: alignment
by exhaustive recursion, conditionals and priors by pure-Python enumeration
over dict-based joint tables.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np
import pytest

from birescore.backends import TabularJointLM
from birescore.seqcore import TokenSeq, Vocabulary


def small_vocab(n_content: int = 3) -> Vocabulary:
    letters = ["a", "b", "c", "d"][:n_content]
    return Vocabulary.from_tokens(letters + ["<unk>", "<eos>"])


def random_joint_entries(
    rng: np.random.Generator, vocab: Vocabulary, length: int, content: list[int] | None = None
) -> dict[tuple[int, ...], float]:
    """Random joint over content tokens as a plain dict (oracle side)."""
    if content is None:
        content = [i for i, t in enumerate(vocab.tokens) if t not in ("<unk>", "<eos>")]
    combos = list(itertools.product(content, repeat=length))
    mass = rng.dirichlet(np.full(len(combos), 0.6))
    return {combo: float(p) for combo, p in zip(combos, mass)}


def tabular_from_entries(entries: dict[tuple[int, ...], float], vocab: Vocabulary) -> TabularJointLM:
    length = len(next(iter(entries)))
    return TabularJointLM.from_entries(entries, vocab, length)


def brute_min_edits(ref: tuple, hyp: tuple) -> int:
    """Minimum S+I+D over all alignments by exhaustive recursion."""

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(
            go(i + 1, j + 1) + (ref[i] != hyp[j]),
            go(i, j + 1) + 1,
            go(i + 1, j) + 1,
        )

    return go(0, 0)


def enum_conditional(
    entries: dict[tuple[int, ...], float],
    sentence: tuple[int, ...],
    visible: set[int],
    target: int,
) -> dict[int, float]:
    """P(w_target = v | visible assignment) by summing consistent sequences."""
    num: dict[int, float] = {}
    den = 0.0
    for seq, p in entries.items():
        if all(seq[i] == sentence[i] for i in visible):
            num[seq[target]] = num.get(seq[target], 0.0) + p
            den += p
    return {v: m / den for v, m in num.items()}


def enum_log_joint(entries: dict[tuple[int, ...], float], sentence: tuple[int, ...]) -> float:
    p = entries.get(tuple(sentence), 0.0)
    return math.log(p) if p > 0 else float("-inf")


def enum_mmlm_log(entries: dict[tuple[int, ...], float], sentence: tuple[int, ...]) -> float:
    """log Lambda by enumeration: product of leave-one-out conditionals."""
    T = len(sentence)
    total = 0.0
    for t in range(T):
        cond = enum_conditional(entries, sentence, set(range(T)) - {t}, t)
        total += math.log(cond[sentence[t]])
    return total


@pytest.fixture
def vocab3() -> Vocabulary:
    return small_vocab(3)


def seq(*ids: int) -> TokenSeq:
    return TokenSeq.of(ids)
