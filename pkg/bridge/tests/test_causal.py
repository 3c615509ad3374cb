"""Causal scorer path with a tiny randomly-initialized GPT-style model."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from lmbridge.models import CausalWordScorer, build_toy_masked
from lmbridge.server import serve_background

from conftest import Client, SERVED_WORDS


@pytest.fixture(scope="module")
def causal_server():
    from transformers import GPT2Config, GPT2LMHeadModel

    # reuse the toy WordPiece tokenizer; GPT-2 only needs matching vocab size
    _, tokenizer = build_toy_masked(SERVED_WORDS, seed=3)
    torch.manual_seed(3)
    config = GPT2Config(
        vocab_size=tokenizer.vocab_size, n_positions=128, n_embd=32, n_layer=2, n_head=2
    )
    model = GPT2LMHeadModel(config)
    scorer = CausalWordScorer(model, tokenizer, SERVED_WORDS)
    srv = serve_background(scorer)
    yield srv
    srv.shutdown()


@pytest.fixture
def client(causal_server):
    c = Client(causal_server.port)
    yield c
    c.close()


def test_handshake_reports_causal(client):
    reply = client.call({"op": "hello", "version": 1})
    assert reply["directionality"] == "causal"
    assert reply["vocab_size"] == len(SERVED_WORDS)


def test_prefix_query_scores(client):
    reply = client.call(
        {
            "op": "logits",
            "id": 1,
            "tokens": ["a", "b", "c"],
            "target": 2,
            "visible": [0, 1],
            "left_context": ["d"],
            "right_context": [],
        }
    )
    values = np.asarray(reply["logits"])
    assert values.shape == (len(SERVED_WORDS),)
    assert np.all(np.isfinite(values))


def test_sentence_start_query(client):
    reply = client.call(
        {
            "op": "logits",
            "id": 2,
            "tokens": ["a", "b"],
            "target": 0,
            "visible": [],
            "left_context": [],
            "right_context": [],
        }
    )
    assert "logits" in reply


def test_non_prefix_visible_rejected(client):
    reply = client.call(
        {
            "op": "logits",
            "id": 3,
            "tokens": ["a", "b", "c"],
            "target": 1,
            "visible": [2],
            "left_context": [],
            "right_context": [],
        }
    )
    assert reply["error"] == "bad_request"


def test_right_context_rejected(client):
    reply = client.call(
        {
            "op": "logits",
            "id": 4,
            "tokens": ["a", "b"],
            "target": 1,
            "visible": [0],
            "left_context": [],
            "right_context": ["c"],
        }
    )
    assert reply["error"] == "bad_request"
