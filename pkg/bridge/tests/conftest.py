"""One served model per test session; a tiny raw-socket protocol client."""

from __future__ import annotations

import json
import os
import socket

import pytest

from lmbridge.models import build_scorer
from lmbridge.server import serve_background

# letters for the rescoring worlds, a >3-char word to force multi-piece
# scoring, and the reserved words of the primary vocabulary format
SERVED_WORDS = ["a", "b", "c", "d", "cats", "<unk>", "<eos>"]

# a public id (e.g. masked:prajjwal1/bert-tiny) can be injected when the
# environment can fetch it; the default is the locally built model
MODEL_SPEC = os.environ.get("BRIDGE_TEST_MODEL", "toy-masked:7")


class Client:
    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=30)
        self.reader = self.sock.makefile("rb")

    def call(self, payload: dict) -> dict:
        self.sock.sendall((json.dumps(payload) + "\n").encode())
        return json.loads(self.reader.readline())

    def send_raw(self, data: bytes) -> dict:
        self.sock.sendall(data)
        return json.loads(self.reader.readline())

    def close(self):
        self.reader.close()
        self.sock.close()


@pytest.fixture(scope="session")
def server():
    scorer = build_scorer(MODEL_SPEC, SERVED_WORDS)
    srv = serve_background(scorer, max_batch=32)
    yield srv
    srv.shutdown()


@pytest.fixture
def client(server):
    c = Client(server.port)
    yield c
    c.close()
