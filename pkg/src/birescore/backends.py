"""Language-model backends behind a uniform masked-conditional-query interface.

A query names one target position of a sentence, the set of in-sentence
positions the model may look at, and optional cross-sentence context tokens.
Backends return a logit vector over the whole vocabulary for the target
position; log-probabilities are read off through a temperature softmax.

Four backends:
  TabularJointLM  exact conditionals from an explicit joint table (oracle)
  NGramLM         interpolated absolute-discounting n-gram (causal)
  PerturbedLM     wrapper injecting seeded logit noise (models the mutual
                  inconsistency of real bidirectional conditionals)
  RemoteLM        client for the newline-delimited JSON wire protocol
"""

from __future__ import annotations

import hashlib
import itertools
import json
import socket
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CapabilityError,
    ConfigError,
    DataError,
    InvalidQueryError,
    RemoteConnectError,
    RemoteProtocolError,
    RemoteServerError,
)
from .logmath import log_temp_softmax
from .seqcore import EMPTY_SEQ, TokenSeq, Vocabulary

CAUSAL = "causal-forward"
BIDIRECTIONAL = "bidirectional"

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class Capability:
    has_logits: bool
    directionality: str


@dataclass(frozen=True)
class MaskedQuery:
    """One conditional request: predict sentence[target] given the visible
    in-sentence positions plus any cross-sentence context tokens."""

    sentence: TokenSeq
    target: int
    visible: frozenset[int] = frozenset()
    left_context: TokenSeq = EMPTY_SEQ
    right_context: TokenSeq = EMPTY_SEQ

    def validate(self) -> "MaskedQuery":
        n = len(self.sentence)
        if not 0 <= self.target < n:
            raise InvalidQueryError(f"target {self.target} out of range for length {n}")
        if self.target in self.visible:
            raise InvalidQueryError(f"target {self.target} must not be in the visible set")
        for p in self.visible:
            if not 0 <= p < n:
                raise InvalidQueryError(f"visible position {p} out of range for length {n}")
        return self


class LanguageModel(ABC):
    """Base backend: immutable after construction, safe for concurrent queries."""

    vocab: Vocabulary

    @property
    @abstractmethod
    def capability(self) -> Capability: ...

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    @abstractmethod
    def logits(self, q: MaskedQuery) -> np.ndarray:
        """Unnormalized scores over the vocabulary for the target position."""

    def _check_query(self, q: MaskedQuery) -> None:
        q.validate()
        if self.capability.directionality == CAUSAL:
            if q.visible != frozenset(range(q.target)):
                raise CapabilityError(
                    "causal-forward model requires visible = all positions before the target"
                )
            if len(q.right_context) > 0:
                raise CapabilityError("causal-forward model cannot condition on right context")

    def logprob(self, q: MaskedQuery, alpha: float = 1.0) -> float:
        """log temp-softmax probability of the actual token at the target."""
        if alpha <= 0:
            raise ConfigError(f"temperature alpha must be > 0, got {alpha}")
        if alpha != 1.0 and not self.capability.has_logits:
            raise CapabilityError("temperature != 1 requires a backend exposing logits")
        z = self.logits(q)
        return log_temp_softmax(z, alpha, q.sentence[q.target])


class TabularJointLM(LanguageModel):
    """Exact conditionals by summation over an explicit joint probability table.

    The table assigns a probability to every length-T sequence over the
    vocabulary; conditionals marginalize all positions outside the visible
    set. Defines a single-sentence world: cross-sentence context is rejected.
    """

    MAX_LEN = 8
    MAX_VOCAB = 6

    def __init__(self, table: np.ndarray, vocab: Vocabulary, tol: float = 1e-12):
        table = np.asarray(table, dtype=float)
        if table.ndim == 0 or table.ndim > self.MAX_LEN:
            raise DataError(f"joint table length must be 1..{self.MAX_LEN}, got {table.ndim}")
        if vocab.size > self.MAX_VOCAB:
            raise DataError(f"tabular vocabulary capped at {self.MAX_VOCAB}, got {vocab.size}")
        if table.shape != (vocab.size,) * table.ndim:
            raise DataError(f"table shape {table.shape} does not match vocabulary size {vocab.size}")
        if np.any(table < 0):
            raise DataError("joint table has negative entries")
        total = float(table.sum())
        if abs(total - 1.0) > tol:
            raise DataError(f"joint table sums to {total!r}, not 1 within {tol}")
        self.table = table
        self.vocab = vocab
        self.length = table.ndim

    @classmethod
    def from_entries(
        cls, entries: Mapping[tuple[int, ...], float], vocab: Vocabulary, length: int
    ) -> "TabularJointLM":
        table = np.zeros((vocab.size,) * length)
        for ids, p in entries.items():
            if len(ids) != length:
                raise DataError(f"sequence {ids} does not have length {length}")
            table[tuple(ids)] = p
        return cls(table, vocab)

    @property
    def capability(self) -> Capability:
        return Capability(has_logits=True, directionality=BIDIRECTIONAL)

    def logits(self, q: MaskedQuery) -> np.ndarray:
        self._check_query(q)
        if len(q.left_context) or len(q.right_context):
            raise CapabilityError("tabular joint model defines a single-sentence world; no context")
        if len(q.sentence) != self.length:
            raise InvalidQueryError(
                f"sentence length {len(q.sentence)} does not match joint table length {self.length}"
            )
        indexer: list = []
        kept: list[int] = []  # positions that survive as axes, in order
        for p in range(self.length):
            if p in q.visible:
                indexer.append(q.sentence[p])
            else:
                indexer.append(slice(None))
                kept.append(p)
        sub = self.table[tuple(indexer)]
        target_axis = kept.index(q.target)
        masses = sub.sum(axis=tuple(a for a in range(sub.ndim) if a != target_axis))
        with np.errstate(divide="ignore"):
            return np.log(masses)

    def sequence_log_prob(self, seq: TokenSeq) -> float:
        """log of the joint table entry (the enumeration side of oracle checks)."""
        if len(seq) != self.length:
            raise InvalidQueryError(f"sequence length {len(seq)} != table length {self.length}")
        p = float(self.table[tuple(seq.ids)])
        return float(np.log(p)) if p > 0 else float("-inf")

    def support(self) -> Iterable[tuple[int, ...]]:
        for ids in itertools.product(range(self.vocab.size), repeat=self.length):
            if self.table[ids] > 0:
                yield ids

    def save(self, path: str | Path) -> None:
        doc = {
            "kind": "tabular-joint",
            "tokens": list(self.vocab.tokens),
            "unk_id": self.vocab.unk_id,
            "eos_id": self.vocab.eos_id,
            "length": self.length,
            "probs": self.table.reshape(-1).tolist(),
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TabularJointLM":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("kind") != "tabular-joint":
            raise DataError(f"{path}: not a tabular joint model file")
        vocab = Vocabulary(tuple(doc["tokens"]), doc["unk_id"], doc["eos_id"])
        table = np.array(doc["probs"], dtype=float).reshape((vocab.size,) * doc["length"])
        return cls(table, vocab)


class NGramLM(LanguageModel):
    """Interpolated absolute-discounting n-gram over a closed vocabulary.

    P_k(v|h) = max(c(h,v)-D, 0)/c(h) + D*N1+(h)/c(h) * P_{k-1}(v|h'), bottoming
    out at the uniform distribution; unseen histories fall through to the
    lower order. Every conditional row sums to 1 exactly (up to float error).
    """

    MIN_ORDER, MAX_ORDER = 1, 5

    def __init__(
        self,
        order: int,
        vocab: Vocabulary,
        tables: Sequence[Mapping[tuple[int, ...], Mapping[int, int]]],
        discount: float = 0.75,
    ):
        if not self.MIN_ORDER <= order <= self.MAX_ORDER:
            raise ConfigError(f"n-gram order must be {self.MIN_ORDER}..{self.MAX_ORDER}, got {order}")
        if not 0.0 < discount < 1.0:
            raise ConfigError(f"discount must be in (0, 1), got {discount}")
        self.order = order
        self.vocab = vocab
        self.discount = discount
        # tables[k] maps history (length k-1) -> {token id: count}, k = 1..order
        self._tables: list[dict[tuple[int, ...], dict[int, int]]] = [
            {tuple(h): dict(counts) for h, counts in tables[k - 1].items()}
            for k in range(1, order + 1)
        ]
        self._row_cache: dict[tuple[int, ...], np.ndarray] = {}
        self._cache_lock = threading.Lock()

    @classmethod
    def train(
        cls, corpus: Sequence[TokenSeq], order: int, vocab: Vocabulary, discount: float = 0.75
    ) -> "NGramLM":
        if not corpus:
            raise DataError("cannot train an n-gram on an empty corpus")
        tables: list[dict[tuple[int, ...], dict[int, int]]] = [{} for _ in range(order)]
        for sent in corpus:
            ids = sent.ids
            for t, tok in enumerate(ids):
                for k in range(1, order + 1):
                    if t - (k - 1) < 0:
                        break
                    hist = ids[t - k + 1 : t]
                    row = tables[k - 1].setdefault(hist, {})
                    row[tok] = row.get(tok, 0) + 1
        return cls(order, vocab, tables, discount)

    @property
    def capability(self) -> Capability:
        return Capability(has_logits=True, directionality=CAUSAL)

    def conditional_row(self, history: Sequence[int]) -> np.ndarray:
        """P(. | history) over the vocabulary; history longer than order-1 is trimmed."""
        hist = tuple(history)[max(0, len(history) - (self.order - 1)) :] if self.order > 1 else ()
        with self._cache_lock:
            cached = self._row_cache.get(hist)
        if cached is not None:
            return cached
        V = self.vocab.size
        p = np.full(V, 1.0 / V)
        D = self.discount
        for k in range(1, self.order + 1):
            need = k - 1
            if need > len(hist):
                break
            h = hist[len(hist) - need :] if need else ()
            counts = self._tables[k - 1].get(h)
            if counts is None:
                continue
            total = sum(counts.values())
            distinct = len(counts)
            row = np.zeros(V)
            for tok, c in counts.items():
                row[tok] = c - D  # counts are >= 1 > D, never clipped
            p = (row + D * distinct * p) / total
        with self._cache_lock:
            self._row_cache[hist] = p
        return p

    def logits(self, q: MaskedQuery) -> np.ndarray:
        self._check_query(q)
        history = q.left_context.ids + q.sentence.ids[: q.target]
        return np.log(self.conditional_row(history))

    def save(self, path: str | Path) -> None:
        tables = [
            {" ".join(map(str, h)): {str(t): c for t, c in row.items()} for h, row in table.items()}
            for table in self._tables
        ]
        doc = {
            "kind": "ngram",
            "order": self.order,
            "discount": self.discount,
            "tokens": list(self.vocab.tokens),
            "unk_id": self.vocab.unk_id,
            "eos_id": self.vocab.eos_id,
            "tables": tables,
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NGramLM":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("kind") != "ngram":
            raise DataError(f"{path}: not an n-gram model file")
        vocab = Vocabulary(tuple(doc["tokens"]), doc["unk_id"], doc["eos_id"])
        tables = [
            {
                tuple(int(x) for x in h.split()) if h else (): {int(t): c for t, c in row.items()}
                for h, row in table.items()
            }
            for table in doc["tables"]
        ]
        return cls(doc["order"], vocab, tables, doc["discount"])


class PerturbedLM(LanguageModel):
    """Adds seeded uniform noise in [-epsilon, +epsilon] to each inner logit.

    Noise is a pure function of (sentence ids, target, visible set, seed), so
    repeated identical queries perturb identically while the conditionals of
    different queries become mutually inconsistent — the generic situation
    for a real bidirectional LM. epsilon=0 is the identity wrapper.
    """

    def __init__(self, inner: LanguageModel, epsilon: float, seed: int):
        if epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
        if not inner.capability.has_logits:
            raise CapabilityError("PerturbedLM requires an inner model exposing logits")
        self.inner = inner
        self.vocab = inner.vocab
        self.epsilon = epsilon
        self.seed = seed

    @property
    def capability(self) -> Capability:
        return self.inner.capability

    def _noise(self, q: MaskedQuery) -> np.ndarray:
        key = (q.sentence.ids, q.target, tuple(sorted(q.visible)), self.seed)
        digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        return rng.uniform(-self.epsilon, self.epsilon, size=self.vocab.size)

    def logits(self, q: MaskedQuery) -> np.ndarray:
        z = self.inner.logits(q)
        if self.epsilon == 0:
            return z
        return z + self._noise(q)


class CountingLM(LanguageModel):
    """Pass-through wrapper counting logits calls; used for query budgets."""

    def __init__(self, inner: LanguageModel):
        self.inner = inner
        self.vocab = inner.vocab
        self.calls = 0

    @property
    def capability(self) -> Capability:
        return self.inner.capability

    def logits(self, q: MaskedQuery) -> np.ndarray:
        self.calls += 1
        return self.inner.logits(q)


def _recv_line(reader) -> bytes:
    line = reader.readline()
    if not line:
        raise RemoteConnectError("connection closed by the bridge")
    return line


class RemoteLM(LanguageModel):
    """Client for the bridge wire protocol (newline-delimited JSON over TCP).

    Word strings cross the wire; the served vocabulary must agree with the
    local one, and its size is verified against the handshake. Requests are
    serialized per connection, so one instance is safe to share.
    """

    def __init__(self, sock: socket.socket, reader, vocab: Vocabulary, capability: Capability):
        self._sock = sock
        self._reader = reader
        self._lock = threading.Lock()
        self._next_id = 0
        self.vocab = vocab
        self._capability = capability

    @property
    def capability(self) -> Capability:
        return self._capability

    def _roundtrip(self, request: dict) -> dict:
        payload = (json.dumps(request) + "\n").encode("utf-8")
        try:
            with self._lock:
                self._sock.sendall(payload)
                line = _recv_line(self._reader)
        except OSError as e:
            raise RemoteConnectError(f"bridge connection failed: {e}") from e
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise RemoteProtocolError(f"malformed reply from bridge: {line[:200]!r}") from e

    def logits(self, q: MaskedQuery) -> np.ndarray:
        self._check_query(q)
        with self._lock:
            self._next_id += 1
            qid = self._next_id
        reply = self._roundtrip(
            {
                "op": "logits",
                "id": qid,
                "tokens": self.vocab.words(q.sentence),
                "target": q.target,
                "visible": sorted(q.visible),
                "left_context": self.vocab.words(q.left_context),
                "right_context": self.vocab.words(q.right_context),
            }
        )
        if reply.get("id") != qid:
            raise RemoteProtocolError(f"reply id {reply.get('id')!r} does not echo request id {qid}")
        if "error" in reply:
            raise RemoteServerError(str(reply["error"]))
        values = np.asarray(reply.get("logits", []), dtype=float)
        if values.shape != (self.vocab.size,):
            raise RemoteProtocolError(
                f"expected {self.vocab.size} logits, got shape {values.shape}"
            )
        return values

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "RemoteLM":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def remote_connect(endpoint: str, vocab: Vocabulary, timeout: float = 30.0) -> RemoteLM:
    """Connect and handshake with a bridge server at "host:port"."""
    host, _, port_s = endpoint.rpartition(":")
    if not host or not port_s.isdigit():
        raise ConfigError(f"endpoint must look like host:port, got {endpoint!r}")
    try:
        sock = socket.create_connection((host, int(port_s)), timeout=timeout)
    except OSError as e:
        raise RemoteConnectError(f"cannot connect to bridge at {endpoint}: {e}") from e
    sock.settimeout(timeout)
    reader = sock.makefile("rb")
    try:
        sock.sendall((json.dumps({"op": "hello", "version": PROTOCOL_VERSION}) + "\n").encode())
        hello = json.loads(_recv_line(reader))
    except (OSError, json.JSONDecodeError) as e:
        sock.close()
        raise RemoteProtocolError(f"handshake with {endpoint} failed: {e}") from e
    if hello.get("op") != "hello" or hello.get("version") != PROTOCOL_VERSION:
        sock.close()
        raise RemoteProtocolError(
            f"bridge protocol version mismatch: expected {PROTOCOL_VERSION}, got {hello!r}"
        )
    if hello.get("vocab_size") != vocab.size:
        sock.close()
        raise ConfigError(
            f"bridge serves a vocabulary of {hello.get('vocab_size')} words, local has {vocab.size}"
        )
    directionality = {"causal": CAUSAL, "bidirectional": BIDIRECTIONAL}.get(
        hello.get("directionality")
    )
    if directionality is None:
        sock.close()
        raise RemoteProtocolError(f"unknown directionality in handshake: {hello!r}")
    capability = Capability(has_logits=bool(hello.get("has_logits", True)), directionality=directionality)
    return RemoteLM(sock, reader, vocab, capability)
