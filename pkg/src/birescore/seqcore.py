"""Vocabulary, token sequences, n-best / reference file I/O, and WER.

File formats (all UTF-8, TAB-separated):
  n-best:    utt_id <TAB> rank <TAB> am_score <TAB> hypothesis words
  reference: utt_id <TAB> reference words
  session:   utt_id <TAB> session_id <TAB> index
  vocabulary: one token per line; <unk> and <eos> exactly once each
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataError

UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"


@dataclass(frozen=True)
class Vocabulary:
    """Closed word vocabulary with reserved unknown and sentence-end tokens."""

    tokens: tuple[str, ...]
    unk_id: int
    eos_id: int

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("vocabulary tokens must be unique")
        if len(self.tokens) < 3:
            raise DataError(f"vocabulary needs >= 3 tokens, got {len(self.tokens)}")
        if self.unk_id == self.eos_id:
            raise DataError("unk_id and eos_id must differ")
        for name, idx in (("unk_id", self.unk_id), ("eos_id", self.eos_id)):
            if not 0 <= idx < len(self.tokens):
                raise DataError(f"{name}={idx} out of range for size {len(self.tokens)}")

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        toks = tuple(tokens)
        for reserved in (UNK_TOKEN, EOS_TOKEN):
            if toks.count(reserved) != 1:
                raise DataError(f"vocabulary must contain {reserved} exactly once")
        return cls(toks, toks.index(UNK_TOKEN), toks.index(EOS_TOKEN))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @cached_property
    def index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    def id_of(self, word: str) -> int:
        return self.index.get(word, self.unk_id)

    def words(self, seq: "TokenSeq") -> list[str]:
        return [self.tokens[i] for i in seq.ids]


@dataclass(frozen=True)
class TokenSeq:
    """An immutable sequence of token ids; one sentence hypothesis or reference."""

    ids: tuple[int, ...] = ()

    @classmethod
    def of(cls, ids: Iterable[int]) -> "TokenSeq":
        return cls(tuple(int(i) for i in ids))

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return TokenSeq(self.ids[i])
        return self.ids[i]

    def __iter__(self):
        return iter(self.ids)

    def __add__(self, other: "TokenSeq") -> "TokenSeq":
        return TokenSeq(self.ids + other.ids)

    def validate_against(self, vocab: Vocabulary) -> "TokenSeq":
        for i in self.ids:
            if not 0 <= i < vocab.size:
                raise DataError(f"token id {i} out of range for vocabulary size {vocab.size}")
        return self


EMPTY_SEQ = TokenSeq()


@dataclass(frozen=True)
class Hypothesis:
    """One n-best entry: decoder rank, acoustic score, words, cached LM scores."""

    utt_id: str
    rank: int
    am_score: float
    words: TokenSeq
    lm_log_scores: Mapping[str, float] = field(default_factory=dict)

    def with_score(self, name: str, value: float) -> "Hypothesis":
        merged = dict(self.lm_log_scores)
        merged[name] = value
        return Hypothesis(self.utt_id, self.rank, self.am_score, self.words, merged)


@dataclass(frozen=True)
class NBestSet:
    """Per-utterance ranked hypotheses plus the session each utterance belongs to.

    session_of maps utt_id -> (session_id, index_in_session); indices within
    a session must be consecutive from 0 and define the temporal order used
    for context chaining.
    """

    utterances: Mapping[str, tuple[Hypothesis, ...]]
    session_of: Mapping[str, tuple[str, int]]

    def __post_init__(self):
        for utt_id, hyps in self.utterances.items():
            ranks = [h.rank for h in hyps]
            if ranks != sorted(ranks):
                raise DataError(f"hypotheses for {utt_id!r} not sorted by rank")
            if len(set(ranks)) != len(ranks):
                raise DataError(f"duplicate rank within utterance {utt_id!r}")
            if utt_id not in self.session_of:
                raise DataError(f"utterance {utt_id!r} missing from session map")
        by_session: dict[str, list[int]] = {}
        for utt_id, (sid, idx) in self.session_of.items():
            by_session.setdefault(sid, []).append(idx)
        for sid, idxs in by_session.items():
            if sorted(idxs) != list(range(len(idxs))):
                raise DataError(f"session {sid!r} indices not consecutive from 0: {sorted(idxs)}")

    def sessions(self) -> dict[str, list[str]]:
        """session_id -> utterance ids in temporal (index) order."""
        ordered: dict[str, list[tuple[int, str]]] = {}
        for utt_id in self.utterances:
            sid, idx = self.session_of[utt_id]
            ordered.setdefault(sid, []).append((idx, utt_id))
        return {sid: [u for _, u in sorted(pairs)] for sid, pairs in ordered.items()}


@dataclass(frozen=True)
class WerReport:
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_words

    def as_dict(self) -> dict:
        return {
            "wer": self.wer,
            "sub": self.substitutions,
            "ins": self.insertions,
            "del": self.deletions,
            "ref_words": self.ref_words,
        }


def tokenize(text: str, vocab: Vocabulary, append_eos: bool = False) -> TokenSeq:
    """Whitespace-split, lower-case, map to ids; unknown words become unk.

    Total function: any input maps to a valid TokenSeq.
    """
    ids = [vocab.id_of(w) for w in text.lower().split()]
    if append_eos:
        ids.append(vocab.eos_id)
    return TokenSeq.of(ids)


def levenshtein_align(ref: TokenSeq, hyp: TokenSeq) -> tuple[int, int, int]:
    """Minimum-edit alignment counts (substitutions, insertions, deletions).

    Unit costs. Among equal-cost alignments the backtrace prefers
    substitution over insertion over deletion; only S+I+D is contractual.
    """
    m, n = len(ref), len(hyp)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        dp[i][0] = i
    for j in range(n + 1):
        dp[0][j] = j
    for i in range(1, m + 1):
        ri = ref.ids[i - 1]
        row, prev = dp[i], dp[i - 1]
        for j in range(1, n + 1):
            cost = 0 if ri == hyp.ids[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, row[j - 1] + 1, prev[j] + 1)

    subs = ins = dels = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + (0 if ref.ids[i - 1] == hyp.ids[j - 1] else 1):
            if ref.ids[i - 1] != hyp.ids[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif j > 0 and dp[i][j] == dp[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return subs, ins, dels


def strip_eos(seq: TokenSeq, eos_id: int) -> TokenSeq:
    return TokenSeq.of(i for i in seq.ids if i != eos_id)


def wer(
    refs: Mapping[str, TokenSeq],
    hyps: Mapping[str, TokenSeq],
    eos_id: int | None = None,
) -> WerReport:
    """Corpus WER: counts summed over utterances before dividing by ref words.

    Sentence-end tokens are a scoring artifact, not spoken words; pass eos_id
    to strip them from both sides before alignment.
    """
    total_s = total_i = total_d = total_ref = 0
    for utt_id in hyps:
        if utt_id not in refs:
            raise DataError(f"no reference for utterance {utt_id!r}")
        ref, hyp = refs[utt_id], hyps[utt_id]
        if eos_id is not None:
            ref, hyp = strip_eos(ref, eos_id), strip_eos(hyp, eos_id)
        s, ins, d = levenshtein_align(ref, hyp)
        total_s += s
        total_i += ins
        total_d += d
        total_ref += len(ref)
    return WerReport(total_s, total_i, total_d, total_ref)


def parse_vocab(path: str | Path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    tokens = [ln.strip() for ln in lines if ln.strip()]
    return Vocabulary.from_tokens(tokens)


def _split_fields(line: str, n: int, path: str | Path, lineno: int) -> list[str]:
    fields = line.split("\t")
    if len(fields) != n:
        raise DataError(f"{path}:{lineno}: expected {n} TAB-separated fields, got {len(fields)}")
    return fields


def parse_refs(path: str | Path, vocab: Vocabulary, append_eos: bool = False) -> dict[str, TokenSeq]:
    """Reference file -> utt_id -> TokenSeq. Duplicate utt_ids are an error."""
    refs: dict[str, TokenSeq] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        utt_id, words = _split_fields(line, 2, path, lineno)
        if utt_id in refs:
            raise DataError(f"{path}:{lineno}: duplicate reference for utterance {utt_id!r}")
        refs[utt_id] = tokenize(words, vocab, append_eos=append_eos)
    return refs


def parse_sessions(path: str | Path) -> dict[str, tuple[str, int]]:
    """Session file -> utt_id -> (session_id, index)."""
    session_of: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        utt_id, sid, idx_s = _split_fields(line, 3, path, lineno)
        try:
            idx = int(idx_s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer session index {idx_s!r}") from None
        if utt_id in session_of:
            raise DataError(f"{path}:{lineno}: duplicate session entry for {utt_id!r}")
        session_of[utt_id] = (sid, idx)
    return session_of


def parse_nbest(
    path: str | Path,
    vocab: Vocabulary,
    session_of: Mapping[str, tuple[str, int]] | None = None,
) -> NBestSet:
    """N-best file -> NBestSet, hypothesis order normalized by rank.

    Without a session map every utterance becomes its own single-utterance
    session (no context chaining possible).
    """
    by_utt: dict[str, list[Hypothesis]] = {}
    seen: set[tuple[str, int]] = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        utt_id, rank_s, am_s, words = _split_fields(line, 4, path, lineno)
        try:
            rank = int(rank_s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer rank {rank_s!r}") from None
        if rank < 1:
            raise DataError(f"{path}:{lineno}: rank must be >= 1, got {rank}")
        try:
            am_score = float(am_s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric am_score {am_s!r}") from None
        if (utt_id, rank) in seen:
            raise DataError(f"{path}:{lineno}: duplicate (utt_id, rank) = ({utt_id!r}, {rank})")
        seen.add((utt_id, rank))
        by_utt.setdefault(utt_id, []).append(
            Hypothesis(utt_id, rank, am_score, tokenize(words, vocab))
        )

    if session_of is None:
        session_of = {utt_id: (utt_id, 0) for utt_id in by_utt}
    else:
        for utt_id in by_utt:
            if utt_id not in session_of:
                raise DataError(f"{path}: utterance {utt_id!r} missing from session map")
        session_of = dict(session_of)

    utterances = {
        utt_id: tuple(sorted(hyps, key=lambda h: h.rank)) for utt_id, hyps in by_utt.items()
    }
    return NBestSet(utterances, session_of)


def write_nbest(path: str | Path, nbest: NBestSet, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for hyps in nbest.utterances.values():
            for h in hyps:
                words = " ".join(vocab.words(h.words))
                f.write(f"{h.utt_id}\t{h.rank}\t{h.am_score!r}\t{words}\n")


def write_sessions(path: str | Path, session_of: Mapping[str, tuple[str, int]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, (sid, idx) in session_of.items():
            f.write(f"{utt_id}\t{sid}\t{idx}\n")


def write_refs(path: str | Path, refs: Mapping[str, TokenSeq], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, seq in refs.items():
            f.write(f"{utt_id}\t{' '.join(vocab.words(seq))}\n")


def write_vocab(path: str | Path, vocab: Vocabulary) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")
