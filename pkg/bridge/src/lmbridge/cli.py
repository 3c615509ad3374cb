"""Entry point: lmbridge --port P --model SPEC --vocab WORDS [--device D] [--max-batch B]"""

from __future__ import annotations

import argparse
import sys

from .models import build_scorer, load_word_vocab
from .server import BridgeServer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lmbridge", description=__doc__)
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument(
        "--model",
        required=True,
        help="toy-masked[:seed], masked:<hf-id-or-path>, or causal:<hf-id-or-path>",
    )
    parser.add_argument("--vocab", required=True, help="served word vocabulary, one word per line")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=32)
    args = parser.parse_args(argv)

    words = load_word_vocab(args.vocab)
    scorer = build_scorer(args.model, words, device=args.device)
    server = BridgeServer(args.host, args.port, scorer, max_batch=args.max_batch)
    print(
        f"serving {args.model} ({scorer.served.directionality}, {scorer.served.vocab_size} words) "
        f"on {args.host}:{server.port}",
        file=sys.stderr,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
