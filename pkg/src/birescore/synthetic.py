"""Seeded desk-scale experiment worlds: a tabular joint over short sentences,
sessions of sampled references, and n-best lists with noisy acoustic scores.

The joint is a mixture of a few token "patterns" with flip noise, which gives
strongly correlated positions: leave-one-out conditionals stay confident for
any locally-consistent corruption, so pseudo-score rescoring degrades while
conversion-based priors track the true sentence probability.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .backends import TabularJointLM
from .errors import ConfigError
from .seqcore import (
    NBestSet,
    Hypothesis,
    TokenSeq,
    Vocabulary,
    write_nbest,
    write_refs,
    write_sessions,
    write_vocab,
)

CONTENT_LETTERS = ("a", "b", "c", "d")


def content_vocab(n_content: int) -> Vocabulary:
    """Vocabulary of n_content letter tokens plus the reserved unk and eos."""
    if not 1 <= n_content <= len(CONTENT_LETTERS):
        raise ConfigError(f"content vocabulary size must be 1..{len(CONTENT_LETTERS)}, got {n_content}")
    return Vocabulary.from_tokens(list(CONTENT_LETTERS[:n_content]) + ["<unk>", "<eos>"])


def content_ids(vocab: Vocabulary) -> list[int]:
    return [i for i, t in enumerate(vocab.tokens) if t not in ("<unk>", "<eos>")]


def random_dirichlet_joint(
    rng: np.random.Generator, vocab: Vocabulary, length: int, concentration: float = 0.5
) -> TabularJointLM:
    """A fully random joint supported on the content tokens."""
    ids = content_ids(vocab)
    table = np.zeros((vocab.size,) * length)
    mass = rng.dirichlet(np.full(len(ids) ** length, concentration))
    for k, combo in enumerate(itertools.product(ids, repeat=length)):
        table[combo] = mass[k]
    table /= table.sum()
    return TabularJointLM(table, vocab)


def pattern_mixture_joint(
    rng: np.random.Generator,
    vocab: Vocabulary,
    length: int,
    n_patterns: int = 3,
    flip: float = 0.12,
) -> TabularJointLM:
    """Mixture of token patterns with per-position flip noise (non-product)."""
    ids = content_ids(vocab)
    v = len(ids)
    patterns = [rng.choice(ids, size=length) for _ in range(n_patterns)]
    weights = rng.dirichlet(np.full(n_patterns, 2.0))
    table = np.zeros((vocab.size,) * length)
    for combo in itertools.product(ids, repeat=length):
        p = 0.0
        for pat, w in zip(patterns, weights):
            term = w
            for t in range(length):
                term *= (1 - flip) if combo[t] == pat[t] else flip / (v - 1)
            p += term
        table[combo] = p
    table /= table.sum()
    return TabularJointLM(table, vocab)


def sample_sentence(rng: np.random.Generator, joint: TabularJointLM) -> TokenSeq:
    flat = joint.table.reshape(-1)
    k = rng.choice(len(flat), p=flat)
    return TokenSeq.of(np.unravel_index(k, joint.table.shape))


@dataclass(frozen=True)
class World:
    """One generated experiment world, ready to rescore."""

    vocab: Vocabulary
    joint: TabularJointLM
    refs: Mapping[str, TokenSeq]
    nbest: NBestSet
    params: dict

    def save(self, out_dir: str | Path) -> dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "vocab": str(out / "vocab.txt"),
            "joint": str(out / "joint.json"),
            "refs": str(out / "refs.tsv"),
            "sessions": str(out / "sessions.tsv"),
            "nbest": str(out / "nbest.tsv"),
            "world": str(out / "world.json"),
        }
        write_vocab(paths["vocab"], self.vocab)
        self.joint.save(paths["joint"])
        write_refs(paths["refs"], self.refs, self.vocab)
        write_sessions(paths["sessions"], self.nbest.session_of)
        write_nbest(paths["nbest"], self.nbest, self.vocab)
        Path(paths["world"]).write_text(json.dumps(self.params, sort_keys=True), encoding="utf-8")
        return paths


def _perturb(rng: np.random.Generator, ref: TokenSeq, ids: list[int], max_edits: int) -> tuple[int, ...]:
    n_edits = 1 + int(rng.integers(0, max_edits))
    positions = rng.choice(len(ref), size=min(n_edits, len(ref)), replace=False)
    out = list(ref.ids)
    for p in positions:
        choices = [i for i in ids if i != out[p]]
        out[p] = int(choices[rng.integers(0, len(choices))])
    return tuple(out)


def gen_world(
    seed: int,
    n_sessions: int = 4,
    utts_per_session: int = 12,
    nbest_size: int = 10,
    length: int = 5,
    n_content: int = 4,
    n_patterns: int = 3,
    flip: float = 0.15,
    include_ref_prob: float = 0.9,
    max_extra_edits: int = 2,
    am_scale: float = 3.0,
    am_noise: float = 1.0,
) -> World:
    """Generate a seeded world: pattern-mixture joint, sampled sessions, and
    n-best lists built from edit perturbations with noisy acoustic scores."""
    if length > TabularJointLM.MAX_LEN:
        raise ConfigError(f"sentence length capped at {TabularJointLM.MAX_LEN}, got {length}")
    rng = np.random.default_rng(seed)
    vocab = content_vocab(n_content)
    joint = pattern_mixture_joint(rng, vocab, length, n_patterns=n_patterns, flip=flip)
    ids = content_ids(vocab)

    refs: dict[str, TokenSeq] = {}
    session_of: dict[str, tuple[str, int]] = {}
    utterances: dict[str, tuple[Hypothesis, ...]] = {}
    for si in range(n_sessions):
        sid = f"s{si:03d}"
        for ui in range(utts_per_session):
            utt_id = f"{sid}-u{ui:03d}"
            ref = sample_sentence(rng, joint)
            refs[utt_id] = ref
            session_of[utt_id] = (sid, ui)

            cands: list[tuple[int, ...]] = []
            seen: set[tuple[int, ...]] = set()
            if rng.random() < include_ref_prob:
                cands.append(ref.ids)
                seen.add(ref.ids)
            attempts = 0
            while len(cands) < nbest_size and attempts < 200 * nbest_size:
                attempts += 1
                c = _perturb(rng, ref, ids, max_extra_edits)
                if c not in seen:
                    seen.add(c)
                    cands.append(c)

            scored = []
            for c in cands:
                mismatches = sum(1 for a, b in zip(c, ref.ids) if a != b)
                am = -am_scale * mismatches + rng.normal(0.0, am_noise)
                scored.append((am, c))
            scored.sort(key=lambda pair: -pair[0])
            utterances[utt_id] = tuple(
                Hypothesis(utt_id, rank, am, TokenSeq(c))
                for rank, (am, c) in enumerate(scored, start=1)
            )

    nbest = NBestSet(utterances, session_of)
    params = {
        "seed": seed,
        "n_sessions": n_sessions,
        "utts_per_session": utts_per_session,
        "nbest_size": nbest_size,
        "length": length,
        "n_content": n_content,
        "n_patterns": n_patterns,
        "flip": flip,
        "include_ref_prob": include_ref_prob,
        "max_extra_edits": max_extra_edits,
        "am_scale": am_scale,
        "am_noise": am_noise,
    }
    return World(vocab, joint, refs, nbest, params)
