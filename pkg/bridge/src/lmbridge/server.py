"""Newline-delimited JSON protocol server.

Handshake:
  -> {"op": "hello", "version": 1}
  <- {"op": "hello", "version": 1, "vocab_size": N,
      "directionality": "bidirectional"|"causal", "has_logits": true}

Single query:
  -> {"op": "logits", "id": u64, "tokens": [...], "target": int,
      "visible": [ints], "left_context": [...], "right_context": [...]}
  <- {"id": u64, "logits": [N reals]}  or  {"id": u64, "error": "message"}

Batch (up to --max-batch queries, replies in request order):
  -> {"op": "batch", "queries": [<logits requests>]}
  <- {"op": "batch", "replies": [<per-query replies>]}

Error codes in the "error" field: "context_overflow" for over-length
requests, "bad_request" for anything structurally invalid; a "detail" field
carries specifics. Malformed input never terminates the service.
"""

from __future__ import annotations

import json
import socketserver
import threading

from .models import BadRequest, ContextOverflow

PROTOCOL_VERSION = 1


class Bridge:
    def __init__(self, scorer, max_batch: int = 32):
        self.scorer = scorer
        self.max_batch = max_batch

    def hello(self) -> dict:
        served = self.scorer.served
        return {
            "op": "hello",
            "version": PROTOCOL_VERSION,
            "vocab_size": served.vocab_size,
            "directionality": served.directionality,
            "has_logits": True,
        }

    def _answer_query(self, req: dict) -> dict:
        qid = req.get("id")
        try:
            tokens = req["tokens"]
            target = int(req["target"])
            visible = [int(v) for v in req.get("visible", [])]
            left = req.get("left_context", [])
            right = req.get("right_context", [])
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise BadRequest("tokens must be a list of strings")
            values = self.scorer.logits(tokens, target, visible, left, right)
            return {"id": qid, "logits": values}
        except ContextOverflow as e:
            return {"id": qid, "error": "context_overflow", "detail": str(e)}
        except (BadRequest, KeyError, TypeError, ValueError) as e:
            return {"id": qid, "error": "bad_request", "detail": str(e)}

    def handle_request(self, req: dict) -> dict:
        op = req.get("op")
        if op == "hello":
            if req.get("version") != PROTOCOL_VERSION:
                return {"op": "hello", "error": "bad_request", "detail": "unsupported protocol version"}
            return self.hello()
        if op == "logits":
            return self._answer_query(req)
        if op == "batch":
            queries = req.get("queries")
            if not isinstance(queries, list) or len(queries) > self.max_batch:
                return {
                    "op": "batch",
                    "error": "bad_request",
                    "detail": f"batch must be a list of at most {self.max_batch} queries",
                }
            return {"op": "batch", "replies": [self._answer_query(q) for q in queries]}
        return {"id": req.get("id"), "error": "bad_request", "detail": f"unknown op {op!r}"}

    def handle_line(self, line: bytes) -> dict:
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            return {"id": None, "error": "bad_request", "detail": "malformed JSON"}
        if not isinstance(req, dict):
            return {"id": None, "error": "bad_request", "detail": "request must be a JSON object"}
        return self.handle_request(req)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            reply = self.server.bridge.handle_line(line)
            self.wfile.write((json.dumps(reply) + "\n").encode("utf-8"))
            self.wfile.flush()


class BridgeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, host: str, port: int, scorer, max_batch: int = 32):
        super().__init__((host, port), _Handler)
        self.bridge = Bridge(scorer, max_batch=max_batch)

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_background(scorer, host: str = "127.0.0.1", port: int = 0, max_batch: int = 32) -> BridgeServer:
    """Start a server thread; returns the server (its .port is bound)."""
    server = BridgeServer(host, port, scorer, max_batch=max_batch)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
