"""Sentence prior computation from language-model conditionals.

A bidirectional model's leave-one-out conditionals multiplied over all
positions (the pseudo-score Lambda) are not a valid sentence prior. The
identity P(S) = P(w_t | S minus t) * P(S minus t), which holds for every
position t, can instead be averaged over any selection of positions and
applied recursively; with all |S| positions this recovers the exact prior
from bidirectional conditionals alone, and with only the end positions it
closes over contiguous substrings and becomes a quadratic-cost DP.

Methods, all in natural log (base 2 only at the perplexity boundary):
  forward-chain   sum of next-token conditionals on the left prefix
  backward-chain  sum of conditionals on the right suffix
  mmlm            log Lambda: leave-one-out conditionals, all positions visible
  dp-M1-red       substring DP deleting the first token (left words masked)
  dp-M1-blue      substring DP deleting the last token (right words masked)
  dp-M2           both end deletions, averaged at every recursion level
  exact-full      all deletions over position subsets, memoized by bitmask

Query budget is the contractual cost measure: dp-M1 issues T conditional
queries, dp-M2 issues T*T, exact-full at most T*2^(T-1). Arithmetic operation
counts reported elsewhere in the literature for the substring schedule (e.g.
0.5*T^2 + 1.5*T - 1) count finite-state items rather than backend queries and
therefore differ from the budgets here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import MutableMapping, Sequence

import numpy as np

from .backends import BIDIRECTIONAL, LanguageModel, MaskedQuery
from .errors import CapabilityError, ConfigError, DataError
from .logmath import temp_softmax as _temp_softmax
from .rescore import ContextPolicy, left_stream
from .seqcore import EMPTY_SEQ, TokenSeq

LN2 = math.log(2.0)

METHOD_KINDS = (
    "forward-chain",
    "backward-chain",
    "mmlm",
    "dp-M1-red",
    "dp-M1-blue",
    "dp-M2",
    "exact-full",
)
DP_KINDS = ("dp-M1-red", "dp-M1-blue", "dp-M2")
DEFAULT_EXACT_CAP = 12


@dataclass(frozen=True)
class PriorMethod:
    """A named scoring method plus its softmax temperature."""

    kind: str
    alpha: float = 1.0
    exact_cap: int = DEFAULT_EXACT_CAP

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown prior method {self.kind!r}; choose from {METHOD_KINDS}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")


@dataclass
class QueryBudget:
    """Number of backend conditional queries issued for one sentence."""

    issued: int = 0


@dataclass(frozen=True)
class Context:
    """Cross-sentence conditioning tokens for one sentence evaluation."""

    left: TokenSeq = EMPTY_SEQ
    right: TokenSeq = EMPTY_SEQ


EMPTY_CONTEXT = Context()


def temp_softmax(logits: np.ndarray, alpha: float) -> np.ndarray:
    """Temperature softmax over a logit vector; sums to 1 within 1e-12."""
    return _temp_softmax(logits, alpha)


def _require_bidirectional(model: LanguageModel, what: str) -> None:
    if model.capability.directionality != BIDIRECTIONAL:
        raise CapabilityError(f"{what} requires a bidirectional model")


def _lp(model: LanguageModel, s: TokenSeq, target: int, visible, ctx: Context, alpha: float) -> float:
    q = MaskedQuery(s, target, frozenset(visible), ctx.left, ctx.right)
    return model.logprob(q, alpha)


def chain_rule_log_prior(
    model: LanguageModel,
    s: TokenSeq,
    ctx: Context = EMPTY_CONTEXT,
    direction: str = "forward",
    alpha: float = 1.0,
) -> float:
    """Chain-rule log prior: each token conditioned on its one-sided context."""
    if direction not in ("forward", "backward"):
        raise ConfigError(f"direction must be forward or backward, got {direction!r}")
    T = len(s)
    total = 0.0
    for t in range(T):
        visible = range(t) if direction == "forward" else range(t + 1, T)
        total += _lp(model, s, t, visible, ctx, alpha)
    return total


def mmlm_log_score(
    model: LanguageModel, s: TokenSeq, ctx: Context = EMPTY_CONTEXT, alpha: float = 1.0
) -> float:
    """log Lambda: every token conditioned on all other in-sentence positions.

    Not a valid prior for inconsistent conditionals; see the conversion
    methods for the exact quantity.
    """
    _require_bidirectional(model, "the leave-one-out pseudo-score")
    T = len(s)
    total = 0.0
    for t in range(T):
        visible = [p for p in range(T) if p != t]
        total += _lp(model, s, t, visible, ctx, alpha)
    return total


def log_ppl(
    model: LanguageModel,
    corpus: Sequence[TokenSeq],
    context_policy: ContextPolicy | None = None,
    alpha: float = 1.0,
) -> float:
    """Corpus log2 perplexity under the forward factorization.

    Histories chain across sentences up to context_policy.left_len tokens
    (eos-joined); the returned value is -(1/T_total) * sum log2 P(w_t | history).
    """
    if not corpus:
        raise DataError("perplexity of an empty corpus is undefined")
    total_tokens = sum(len(s) for s in corpus)
    if total_tokens == 0:
        raise DataError("perplexity over zero tokens is undefined")
    left_len = context_policy.left_len if context_policy is not None else 0
    total = 0.0
    for k, s in enumerate(corpus):
        ctx = EMPTY_CONTEXT
        if left_len > 0:
            stream = left_stream(corpus[:k], model.vocab.eos_id)
            ctx = Context(left=stream[max(0, len(stream) - left_len) :])
        total += chain_rule_log_prior(model, s, ctx, "forward", alpha)
    return -total / (LN2 * total_tokens)


def converted_log_prior_exact(
    model: LanguageModel,
    s: TokenSeq,
    ctx: Context = EMPTY_CONTEXT,
    alpha: float = 1.0,
    cap: int = DEFAULT_EXACT_CAP,
    memo: MutableMapping | None = None,
) -> float:
    """Exact log prior via the full deletion recursion over position subsets.

    log P(S) = (1/|S|) * sum over t in S of [log P(w_t | S minus t) + log P(S minus t)],
    memoized by visible-position bitmask; empty set scores 0, singletons reduce
    to in-context unigram conditionals. Issues each (subset, target) query at
    most once; a warm memo issues none.
    """
    T = len(s)
    if T > cap:
        raise ConfigError(f"exact conversion capped at T <= {cap}, got T = {T}")
    _require_bidirectional(model, "the exact conversion")
    if memo is None:
        memo = {}
    full = (1 << T) - 1
    if ("xval", full) in memo:
        return memo[("xval", full)]

    members: dict[int, list[int]] = {0: []}
    log_p: dict[int, float] = {0: 0.0}
    masks = sorted(range(1, full + 1), key=lambda m: m.bit_count())
    for mask in masks:
        cached = memo.get(("xval", mask))
        if cached is not None:
            log_p[mask] = cached
            continue
        acc = 0.0
        n = mask.bit_count()
        for t in range(T):
            bit = 1 << t
            if not mask & bit:
                continue
            rest = mask & ~bit
            ckey = ("xcond", mask, t)
            cond = memo.get(ckey)
            if cond is None:
                cond = _lp(model, s, t, [p for p in range(T) if rest & (1 << p)], ctx, alpha)
                memo[ckey] = cond
            sub = log_p.get(rest)
            if sub is None:
                sub = memo[("xval", rest)]
            acc += cond + sub
        value = acc / n
        log_p[mask] = value
        memo[("xval", mask)] = value
    memo[("xval", 0)] = 0.0
    return log_p.get(full, 0.0)


def converted_log_prior_dp(
    model: LanguageModel,
    s: TokenSeq,
    ctx: Context = EMPTY_CONTEXT,
    method: PriorMethod = PriorMethod("dp-M2"),
    memo: MutableMapping | None = None,
) -> tuple[float, QueryBudget]:
    """End-deletion substring DP approximations of the exact conversion.

    For a span (i, j):
      dp-M1-red   log P(i,j) = log P(w_i | i+1..j) + log P(i+1,j)
      dp-M1-blue  log P(i,j) = log P(w_j | i..j-1) + log P(i,j-1)
      dp-M2       the mean of both identities, at every recursion level
    with log P(i,i) = the in-context unigram conditional. Spans are filled in
    increasing length order; each needed (span, end) conditional is queried
    exactly once. Budget: T queries for M=1, T*T for M=2.
    """
    if method.kind not in DP_KINDS:
        raise ConfigError(f"method for the substring DP must be one of {DP_KINDS}, got {method.kind!r}")
    if method.kind != "dp-M1-blue":
        _require_bidirectional(model, f"method {method.kind}")
    if memo is None:
        memo = {}
    budget = QueryBudget()
    alpha = method.alpha
    T = len(s)
    if T == 0:
        return 0.0, budget

    def cond(i: int, j: int, end: str) -> float:
        key = ("cond", i, j, end)
        value = memo.get(key)
        if value is None:
            if end == "left":  # delete w_i: predict it from i+1..j
                value = _lp(model, s, i, range(i + 1, j + 1), ctx, alpha)
            else:  # delete w_j: predict it from i..j-1
                value = _lp(model, s, j, range(i, j), ctx, alpha)
            memo[key] = value
            budget.issued += 1
        return value

    kind = method.kind

    def vkey(i: int, j: int) -> tuple:
        return ("val", kind, i, j)

    def base(i: int) -> float:
        key = vkey(i, i)
        value = memo.get(key)
        if value is None:
            value = cond(i, i, "right")
            memo[key] = value
        return value

    if kind == "dp-M1-blue":
        value = base(0)
        for j in range(1, T):
            key = vkey(0, j)
            cached = memo.get(key)
            value = cached if cached is not None else cond(0, j, "right") + value
            memo[key] = value
        return value, budget

    if kind == "dp-M1-red":
        value = base(T - 1)
        for i in range(T - 2, -1, -1):
            key = vkey(i, T - 1)
            cached = memo.get(key)
            value = cached if cached is not None else cond(i, T - 1, "left") + value
            memo[key] = value
        return value, budget

    # dp-M2: all spans, increasing length
    for i in range(T):
        base(i)
    for length in range(2, T + 1):
        for i in range(0, T - length + 1):
            j = i + length - 1
            key = vkey(i, j)
            if key in memo:
                continue
            memo[key] = 0.5 * (
                cond(i, j, "left") + memo[vkey(i + 1, j)] + cond(i, j, "right") + memo[vkey(i, j - 1)]
            )
    return memo[vkey(0, T - 1)], budget


@dataclass(frozen=True)
class Scorer:
    """A (method, model) pair packaged as a deterministic sentence scorer.

    Incoming context streams are trimmed to the scorer's own policy window
    before querying the model, so scorers with different context appetites can
    share one rescoring pass.
    """

    name: str
    method: PriorMethod
    model: LanguageModel
    policy: ContextPolicy | None = None

    def __call__(self, words: TokenSeq, left: TokenSeq = EMPTY_SEQ, right: TokenSeq = EMPTY_SEQ) -> float:
        if self.policy is not None:
            left = left[max(0, len(left) - self.policy.left_len) :]
            right = right[: self.policy.right_len]
        ctx = Context(left=left, right=right)
        kind, alpha = self.method.kind, self.method.alpha
        if kind == "forward-chain":
            return chain_rule_log_prior(self.model, words, ctx, "forward", alpha)
        if kind == "backward-chain":
            return chain_rule_log_prior(self.model, words, ctx, "backward", alpha)
        if kind == "mmlm":
            return mmlm_log_score(self.model, words, ctx, alpha)
        if kind == "exact-full":
            return converted_log_prior_exact(self.model, words, ctx, alpha, cap=self.method.exact_cap)
        value, _ = converted_log_prior_dp(self.model, words, ctx, self.method)
        return value


def sentence_scorer(
    method: PriorMethod,
    model: LanguageModel,
    context_policy: ContextPolicy | None = None,
    name: str | None = None,
) -> Scorer:
    """Build a named scorer, validating method/model capability up front."""
    needs_bidi = method.kind in ("backward-chain", "mmlm", "dp-M1-red", "dp-M2", "exact-full")
    if needs_bidi and model.capability.directionality != BIDIRECTIONAL:
        raise CapabilityError(f"method {method.kind} requires a bidirectional model")
    if name is None:
        name = method.kind if method.alpha == 1.0 else f"{method.kind}@a{method.alpha:g}"
    return Scorer(name, method, model, context_policy)
