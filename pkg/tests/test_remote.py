"""Remote backend against a minimal in-process wire-protocol server."""

from __future__ import annotations

import json
import socket
import threading

import numpy as np
import pytest

from birescore.backends import BIDIRECTIONAL, MaskedQuery, remote_connect
from birescore.errors import (
    ConfigError,
    RemoteConnectError,
    RemoteProtocolError,
    RemoteServerError,
)
from conftest import seq, small_vocab


class MockBridge:
    """Speaks the newline-delimited JSON protocol for one accepted client."""

    def __init__(self, vocab_size=5, version=1, directionality="bidirectional", handler=None):
        self.vocab_size = vocab_size
        self.version = version
        self.directionality = directionality
        self.handler = handler or self._default_handler
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(1)
        self.port = self.sock.getsockname()[1]
        self.thread = threading.Thread(target=self._serve, daemon=True)
        self.thread.start()

    def _default_handler(self, req: dict) -> dict:
        return {"id": req["id"], "logits": [0.1 * (i + 1) for i in range(self.vocab_size)]}

    def _serve(self):
        conn, _ = self.sock.accept()
        reader = conn.makefile("rb")
        try:
            for line in reader:
                req = json.loads(line)
                if req.get("op") == "hello":
                    reply = {
                        "op": "hello",
                        "version": self.version,
                        "vocab_size": self.vocab_size,
                        "directionality": self.directionality,
                        "has_logits": True,
                    }
                else:
                    reply = self.handler(req)
                conn.sendall((json.dumps(reply) + "\n").encode())
        except OSError:
            pass
        finally:
            conn.close()

    @property
    def endpoint(self) -> str:
        return f"127.0.0.1:{self.port}"

    def close(self):
        self.sock.close()


@pytest.fixture
def vocab():
    return small_vocab(3)  # size 5


def test_handshake_returns_capability(vocab):
    bridge = MockBridge(vocab_size=vocab.size)
    with remote_connect(bridge.endpoint, vocab) as lm:
        assert lm.capability.has_logits
        assert lm.capability.directionality == BIDIRECTIONAL
        assert lm.vocab_size == vocab.size
    bridge.close()


def test_logits_shape_and_id_echo(vocab):
    seen = []

    def handler(req):
        seen.append(req)
        return {"id": req["id"], "logits": list(np.linspace(0, 1, vocab.size))}

    bridge = MockBridge(vocab_size=vocab.size, handler=handler)
    with remote_connect(bridge.endpoint, vocab) as lm:
        z = lm.logits(MaskedQuery(seq(0, 1), 1, frozenset({0})))
        assert z.shape == (vocab.size,)
        assert seen[0]["tokens"] == ["a", "b"]
        assert seen[0]["visible"] == [0]
    bridge.close()


def test_version_mismatch_detected(vocab):
    bridge = MockBridge(vocab_size=vocab.size, version=2)
    with pytest.raises(RemoteProtocolError, match="version"):
        remote_connect(bridge.endpoint, vocab)
    bridge.close()


def test_vocab_size_mismatch_detected(vocab):
    bridge = MockBridge(vocab_size=vocab.size + 3)
    with pytest.raises(ConfigError, match="vocabulary"):
        remote_connect(bridge.endpoint, vocab)
    bridge.close()


def test_connection_failure_surfaced(vocab):
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()  # nothing listening here any more
    with pytest.raises(RemoteConnectError):
        remote_connect(f"127.0.0.1:{port}", vocab, timeout=0.5)


def test_server_error_surfaced(vocab):
    bridge = MockBridge(
        vocab_size=vocab.size, handler=lambda req: {"id": req["id"], "error": "context_overflow"}
    )
    with remote_connect(bridge.endpoint, vocab) as lm:
        with pytest.raises(RemoteServerError, match="context_overflow"):
            lm.logits(MaskedQuery(seq(0, 1), 0, frozenset({1})))
    bridge.close()


def test_wrong_logit_count_rejected(vocab):
    bridge = MockBridge(vocab_size=vocab.size, handler=lambda req: {"id": req["id"], "logits": [0.0]})
    with remote_connect(bridge.endpoint, vocab) as lm:
        with pytest.raises(RemoteProtocolError, match="logits"):
            lm.logits(MaskedQuery(seq(0, 1), 0, frozenset({1})))
    bridge.close()


def test_bad_endpoint_rejected(vocab):
    with pytest.raises(ConfigError):
        remote_connect("nonsense", vocab)
