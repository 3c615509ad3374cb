"""Session-ordered n-best rescoring with weighted LM score combination.

The total score of a hypothesis is am_score + sum_k lambda_k * log P_k. Within
a session, utterances are rescored in temporal order: the left context of the
current hypothesis is built from the already-selected hypotheses of preceding
utterances, the right context from the original rank-1 hypotheses (or the
references) of the following utterances. Context never crosses sessions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .errors import ConfigError, DataError, RescoreError, ScoringError
from .seqcore import EMPTY_SEQ, Hypothesis, NBestSet, TokenSeq, Vocabulary

RIGHT_SOURCES = ("original-1best", "reference")


@dataclass(frozen=True)
class Weights:
    """Nonnegative per-scorer scaling factors; at least one must be positive."""

    lam: Mapping[str, float]

    def __post_init__(self):
        for name, value in self.lam.items():
            if value < 0:
                raise ConfigError(f"weight for scorer {name!r} must be >= 0, got {value}")
        if not any(v > 0 for v in self.lam.values()):
            raise ConfigError("at least one scorer weight must be > 0")

    def items(self):
        return self.lam.items()


@dataclass(frozen=True)
class ContextPolicy:
    """How much neighboring-utterance context a scorer sees, and where the
    right side comes from (future 1-best hypotheses or the references)."""

    left_len: int = 0
    right_len: int = 0
    right_source: str = "original-1best"
    max_window: int = 1024

    def __post_init__(self):
        if not 0 <= self.left_len <= self.max_window:
            raise ConfigError(f"left_len must be in 0..{self.max_window}, got {self.left_len}")
        if not 0 <= self.right_len <= self.max_window:
            raise ConfigError(f"right_len must be in 0..{self.max_window}, got {self.right_len}")
        if self.right_source not in RIGHT_SOURCES:
            raise ConfigError(f"right_source must be one of {RIGHT_SOURCES}, got {self.right_source!r}")


class SentenceScorer(Protocol):
    """What rescoring needs from a scorer: a name and a log score per sentence."""

    name: str

    def __call__(self, words: TokenSeq, left: TokenSeq = ..., right: TokenSeq = ...) -> float: ...


def left_stream(sentences: Sequence[TokenSeq], eos_id: int) -> TokenSeq:
    """Concatenate sentences that precede the current one, an eos after each,
    so the boundary adjacent to the current sentence is marked."""
    ids: list[int] = []
    for s in sentences:
        ids.extend(s.ids)
        ids.append(eos_id)
    return TokenSeq.of(ids)


def right_stream(sentences: Sequence[TokenSeq], eos_id: int) -> TokenSeq:
    """Concatenate sentences that follow the current one, an eos before each."""
    ids: list[int] = []
    for s in sentences:
        ids.append(eos_id)
        ids.extend(s.ids)
    return TokenSeq.of(ids)


def combined_score(h: Hypothesis, weights: Weights | Mapping[str, float]) -> float:
    """am_score + sum_k lambda_k * lm_log_scores[k]."""
    lam = weights.lam if isinstance(weights, Weights) else weights
    total = h.am_score
    for name, value in lam.items():
        if name not in h.lm_log_scores:
            raise DataError(f"hypothesis {h.utt_id!r} rank {h.rank} has no score for scorer {name!r}")
        if value != 0:  # skip, not multiply: 0 * (-inf) would poison the sum
            total += value * h.lm_log_scores[name]
    return total


def attach_scores(nbest: NBestSet, scorer: SentenceScorer) -> NBestSet:
    """Evaluate the scorer on every hypothesis (no cross-sentence context) and
    cache the result under the scorer's name. Idempotent per name; attaching a
    different scorer under an existing name is an error."""
    utterances: dict[str, tuple[Hypothesis, ...]] = {}
    for utt_id, hyps in nbest.utterances.items():
        out = []
        for h in hyps:
            value = scorer(h.words)
            if scorer.name in h.lm_log_scores:
                if h.lm_log_scores[scorer.name] != value:
                    raise DataError(
                        f"scorer name {scorer.name!r} already attached with a different value "
                        f"on {h.utt_id!r} rank {h.rank}"
                    )
                out.append(h)
            else:
                out.append(h.with_score(scorer.name, value))
        utterances[utt_id] = tuple(out)
    return NBestSet(utterances, dict(nbest.session_of))


def _select(hyps: Sequence[Hypothesis], weights: Weights) -> Hypothesis:
    best = None
    best_score = float("-inf")
    for h in hyps:  # rank order; strict > keeps the lowest rank on ties
        score = combined_score(h, weights)
        if best is None or score > best_score:
            best, best_score = h, score
    return best


def _rescore_one_session(
    utt_ids: Sequence[str],
    nbest: NBestSet,
    scorers: Sequence[SentenceScorer],
    weights: Weights,
    policy: ContextPolicy,
    refs: Mapping[str, TokenSeq] | None,
    eos_id: int | None,
) -> dict[str, Hypothesis]:
    if policy.right_source == "reference":
        future_words = []
        for u in utt_ids:
            if refs is None or u not in refs:
                raise ConfigError(f"right_source=reference but no reference for utterance {u!r}")
            future_words.append(refs[u])
    else:
        future_words = [nbest.utterances[u][0].words for u in utt_ids]

    selections: dict[str, Hypothesis] = {}
    selected_words: list[TokenSeq] = []
    for i, utt_id in enumerate(utt_ids):
        left = right = EMPTY_SEQ
        if policy.left_len > 0:
            left_full = left_stream(selected_words, eos_id)
            left = left_full[max(0, len(left_full) - policy.left_len) :]
        if policy.right_len > 0:
            right = right_stream(future_words[i + 1 :], eos_id)[: policy.right_len]

        scored = []
        for h in nbest.utterances[utt_id]:
            enriched = h
            for scorer in scorers:
                try:
                    value = scorer(h.words, left, right)
                except RescoreError as e:
                    raise ScoringError(utt_id, h.rank, e) from e
                enriched = enriched.with_score(scorer.name, value)
            scored.append(enriched)
        chosen = _select(scored, weights)
        selections[utt_id] = chosen
        selected_words.append(chosen.words)
    return selections


def rescore_session(
    nbest: NBestSet,
    scorers: Sequence[SentenceScorer],
    weights: Weights,
    policy: ContextPolicy,
    refs: Mapping[str, TokenSeq] | None = None,
    eos_id: int | None = None,
    jobs: int = 1,
) -> dict[str, Hypothesis]:
    """Rescore every utterance, returning the selected hypothesis per utterance
    (with the evaluated per-scorer log scores attached).

    Ties in combined score are broken toward the lowest original rank. Distinct
    sessions are independent and may be processed in parallel.
    """
    if eos_id is None and (policy.left_len > 0 or policy.right_len > 0):
        raise ConfigError("context windows need the vocabulary's eos id for sentence joining")
    sessions = nbest.sessions()

    def run(utt_ids: Sequence[str]) -> dict[str, Hypothesis]:
        return _rescore_one_session(utt_ids, nbest, scorers, weights, policy, refs, eos_id)

    selections: dict[str, Hypothesis] = {}
    if jobs > 1 and len(sessions) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for result in pool.map(run, sessions.values()):
                selections.update(result)
    else:
        for utt_ids in sessions.values():
            selections.update(run(utt_ids))
    # present results in the n-best set's utterance order
    return {utt_id: selections[utt_id] for utt_id in nbest.utterances}


def write_selections(
    path: str | Path,
    selections: Mapping[str, Hypothesis],
    weights: Weights,
    vocab: Vocabulary,
) -> None:
    """Selection file: utt_id <TAB> selected_rank <TAB> combined_score <TAB> words."""
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, h in selections.items():
            words = " ".join(vocab.words(h.words))
            f.write(f"{utt_id}\t{h.rank}\t{combined_score(h, weights)!r}\t{words}\n")
