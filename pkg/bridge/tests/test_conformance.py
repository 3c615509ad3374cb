"""Bridge conformance: handshake, shape, normalization, id echo, batching,
determinism, visibility masking, and error behavior."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import SERVED_WORDS, Client


def hello(client: Client) -> dict:
    return client.call({"op": "hello", "version": 1})


def query(client: Client, qid, tokens, target, visible, left=(), right=()):
    return client.call(
        {
            "op": "logits",
            "id": qid,
            "tokens": list(tokens),
            "target": target,
            "visible": list(visible),
            "left_context": list(left),
            "right_context": list(right),
        }
    )


def softmax(values):
    z = np.asarray(values, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


class TestHandshake:
    def test_round_trip_returns_declared_vocab_size(self, client):
        reply = hello(client)
        assert reply["op"] == "hello"
        assert reply["version"] == 1
        assert reply["vocab_size"] == len(SERVED_WORDS)
        assert reply["directionality"] in ("bidirectional", "causal")
        assert reply["has_logits"] is True

    def test_wrong_version_rejected(self, client):
        reply = client.call({"op": "hello", "version": 99})
        assert reply["error"] == "bad_request"


class TestLogits:
    def test_shape_and_normalization(self, client):
        n = hello(client)["vocab_size"]
        reply = query(client, 1, ["a", "b", "c"], 1, [0, 2])
        assert len(reply["logits"]) == n
        assert softmax(reply["logits"]).sum() == pytest.approx(1.0, abs=1e-6)

    def test_id_echo(self, client):
        for qid in (42, 7, 123456789, 1):
            reply = query(client, qid, ["a", "b"], 0, [1])
            assert reply["id"] == qid

    def test_determinism(self, client):
        a = query(client, 1, ["a", "b", "c", "d"], 2, [0, 1, 3])["logits"]
        b = query(client, 2, ["a", "b", "c", "d"], 2, [0, 1, 3])["logits"]
        assert np.allclose(a, b, atol=1e-5)

    def test_visibility_mask_honored(self, client):
        # only the right side visible vs full visibility must differ
        right_only = query(client, 1, ["a", "b", "c", "d"], 1, [2, 3])["logits"]
        full = query(client, 2, ["a", "b", "c", "d"], 1, [0, 2, 3])["logits"]
        assert not np.allclose(right_only, full, atol=1e-6)

    def test_contexts_change_outputs(self, client):
        plain = query(client, 1, ["a", "b"], 0, [1])["logits"]
        with_ctx = query(client, 2, ["a", "b"], 0, [1], left=["c", "<eos>"], right=["<eos>", "d"])["logits"]
        assert not np.allclose(plain, with_ctx, atol=1e-6)

    def test_multi_piece_word_scored(self, client):
        # "cats" tokenizes into several pieces; its score must still be finite
        reply = query(client, 3, ["cats", "b"], 0, [1])
        values = reply["logits"]
        assert np.all(np.isfinite(values))

    def test_reserved_words_accepted(self, client):
        reply = query(client, 4, ["<unk>", "<eos>"], 0, [1])
        assert "logits" in reply


class TestBatch:
    def _queries(self, n, start_id=100):
        rng = np.random.default_rng(0)
        out = []
        for k in range(n):
            words = [SERVED_WORDS[i] for i in rng.integers(0, 4, size=3)]
            target = int(rng.integers(0, 3))
            visible = [p for p in range(3) if p != target and rng.random() < 0.7]
            out.append(
                {
                    "op": "logits",
                    "id": start_id + k,
                    "tokens": words,
                    "target": target,
                    "visible": visible,
                    "left_context": [],
                    "right_context": [],
                }
            )
        return out

    def test_batch_of_one_equals_single(self, client):
        q = self._queries(1)[0]
        single = client.call(q)
        batched = client.call({"op": "batch", "queries": [q]})
        assert batched["replies"][0]["id"] == single["id"]
        assert np.allclose(batched["replies"][0]["logits"], single["logits"], atol=1e-5)

    def test_batch_of_32_equals_singles(self, client):
        queries = self._queries(32)
        singles = [client.call(q) for q in queries]
        batched = client.call({"op": "batch", "queries": queries})
        assert [r["id"] for r in batched["replies"]] == [q["id"] for q in queries]
        for got, want in zip(batched["replies"], singles):
            assert np.allclose(got["logits"], want["logits"], atol=1e-5)

    def test_shuffled_ids_echoed_in_request_order(self, client):
        queries = self._queries(5)
        ids = [907, 11, 500, 2, 80]
        for q, qid in zip(queries, ids):
            q["id"] = qid
        batched = client.call({"op": "batch", "queries": queries})
        assert [r["id"] for r in batched["replies"]] == ids

    def test_oversized_batch_rejected(self, client):
        batched = client.call({"op": "batch", "queries": self._queries(33)})
        assert batched["error"] == "bad_request"


class TestErrors:
    def test_unknown_op(self, client):
        reply = client.call({"op": "frobnicate", "id": 9})
        assert reply["error"] == "bad_request" and reply["id"] == 9

    def test_malformed_json_does_not_crash(self, client):
        reply = client.send_raw(b"this is not json\n")
        assert reply["error"] == "bad_request"
        # connection still serves afterwards
        assert hello(client)["op"] == "hello"

    def test_missing_fields(self, client):
        reply = client.call({"op": "logits", "id": 5})
        assert reply["error"] == "bad_request" and reply["id"] == 5

    def test_target_out_of_range(self, client):
        reply = query(client, 6, ["a"], 3, [])
        assert reply["error"] == "bad_request"

    def test_context_overflow(self, client):
        huge = ["a"] * 500
        reply = query(client, 7, ["a", "b"], 0, [1], left=huge)
        assert reply["error"] == "context_overflow"


class TestPrimaryClientIntegration:
    """The primary engine's remote backend against this server (test-level
    integration only; the bridge package itself does not import the engine)."""

    def test_remote_scorer_end_to_end(self, server):
        birescore = pytest.importorskip("birescore")
        from birescore.backends import remote_connect
        from birescore.prior import PriorMethod, sentence_scorer
        from birescore.seqcore import TokenSeq, Vocabulary

        vocab = Vocabulary.from_tokens(SERVED_WORDS)
        with remote_connect(f"127.0.0.1:{server.port}", vocab) as lm:
            assert lm.capability.directionality == "bidirectional"
            scorer = sentence_scorer(PriorMethod("dp-M2", alpha=0.7), lm, name="bert-like")
            score = scorer(TokenSeq.of([0, 1, 2]))
            assert np.isfinite(score)
            assert scorer(TokenSeq.of([0, 1, 2])) == pytest.approx(score, abs=1e-5)
