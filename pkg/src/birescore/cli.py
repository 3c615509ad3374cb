"""Batch entry points: train-ngram, ppl, rescore, tune, score-wer, gen-synthetic.

Machine-readable JSON goes to stdout, human-readable tables to stderr.
Configuration comes from a JSON file (--config) with flag overrides; flags
win. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import cmaes
from .backends import LanguageModel, NGramLM, PerturbedLM, TabularJointLM, remote_connect
from .errors import ConfigError, DataError, NumericalError, RescoreError
from .prior import PriorMethod, Scorer, log_ppl, sentence_scorer
from .rescore import (
    ContextPolicy,
    Weights,
    attach_scores,
    rescore_session,
    write_selections,
)
from .seqcore import (
    NBestSet,
    TokenSeq,
    Vocabulary,
    levenshtein_align,
    parse_nbest,
    parse_refs,
    parse_sessions,
    parse_vocab,
    strip_eos,
    tokenize,
    wer,
)
from .synthetic import gen_world


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _table(rows: Sequence[tuple[str, object]]) -> None:
    width = max(len(k) for k, _ in rows) if rows else 0
    for k, v in rows:
        print(f"{k:<{width}}  {v}", file=sys.stderr)


def _load_corpus(path: str, vocab: Vocabulary, append_eos: bool) -> list[TokenSeq]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [tokenize(ln, vocab, append_eos=append_eos) for ln in lines if ln.strip()]


def _load_model(path: str) -> LanguageModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = doc.get("kind")
    if kind == "ngram":
        return NGramLM.load(path)
    if kind == "tabular-joint":
        return TabularJointLM.load(path)
    raise DataError(f"{path}: unknown model kind {kind!r}")


# ---------------------------------------------------------------- config


def _load_config(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Merge the JSON config file with CLI flags; flags win."""
    config: dict = {}
    if getattr(args, "config", None):
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(config, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
    for key in keys:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            config[key] = value
    return config


def _require(config: dict, key: str) -> object:
    if key not in config or config[key] is None:
        raise ConfigError(f"missing required config entry {key!r}")
    return config[key]


def _build_backend(spec: Mapping, vocab: Vocabulary) -> LanguageModel:
    kind = spec.get("kind")
    if kind == "tabular":
        model: LanguageModel = TabularJointLM.load(str(_require(dict(spec), "path")))
    elif kind == "ngram":
        model = NGramLM.load(str(_require(dict(spec), "path")))
    elif kind == "remote":
        model = remote_connect(str(_require(dict(spec), "endpoint")), vocab)
    else:
        raise ConfigError(f"unknown backend kind {kind!r}")
    if kind in ("tabular", "ngram") and model.vocab.tokens != vocab.tokens:
        raise ConfigError(f"backend {kind} vocabulary does not match the pipeline vocabulary")
    epsilon = float(spec.get("perturb_epsilon", 0.0))
    if epsilon > 0:
        model = PerturbedLM(model, epsilon, int(spec.get("perturb_seed", 0)))
    return model


def _build_scorers(config: dict, vocab: Vocabulary) -> list[Scorer]:
    specs = _require(config, "scorers")
    scorers: list[Scorer] = []
    names: set[str] = set()
    for spec in specs:
        if spec.get("kind") == "oracle":
            raise ConfigError("the oracle scorer is only available to the tune command")
        method = PriorMethod(kind=str(_require(spec, "method")), alpha=float(spec.get("alpha", 1.0)))
        policy = ContextPolicy(
            left_len=int(spec.get("left_len", 0)),
            right_len=int(spec.get("right_len", 0)),
        )
        backend = _build_backend(_require(spec, "backend"), vocab)
        scorer = sentence_scorer(method, backend, policy, name=spec.get("name"))
        if scorer.name in names:
            raise ConfigError(f"duplicate scorer name {scorer.name!r}")
        names.add(scorer.name)
        scorers.append(scorer)
    if not scorers:
        raise ConfigError("at least one scorer is required")
    return scorers


def _load_world(config: dict) -> tuple[Vocabulary, NBestSet, dict[str, TokenSeq]]:
    vocab = parse_vocab(str(_require(config, "vocab")))
    sessions = parse_sessions(str(config["sessions"])) if config.get("sessions") else None
    nbest = parse_nbest(str(_require(config, "nbest")), vocab, sessions)
    refs = parse_refs(str(_require(config, "refs")), vocab)
    return vocab, nbest, refs


# ---------------------------------------------------------------- commands


def cmd_train_ngram(args: argparse.Namespace) -> int:
    vocab = parse_vocab(args.vocab)
    corpus = _load_corpus(args.corpus, vocab, append_eos=not args.no_eos)
    model = NGramLM.train(corpus, args.order, vocab, discount=args.discount)
    model.save(args.out)
    _emit(
        {
            "model": str(args.out),
            "order": args.order,
            "discount": args.discount,
            "sentences": len(corpus),
            "tokens": sum(len(s) for s in corpus),
        }
    )
    return 0


def cmd_ppl(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    corpus = _load_corpus(args.text, model.vocab, append_eos=not args.no_eos)
    policy = ContextPolicy(left_len=args.context_left)
    log2 = log_ppl(model, corpus, policy)
    payload = {
        "log2_ppl": log2,
        "ppl": 2.0**log2,
        "tokens": sum(len(s) for s in corpus),
        "sentences": len(corpus),
    }
    if args.uniform_check:
        payload["uniform_log2_ppl"] = math.log2(model.vocab.size)
    _emit(payload)
    return 0


def cmd_score_wer(args: argparse.Namespace) -> int:
    # closed vocabulary over the words actually present: no unk collisions
    ref_lines = Path(args.refs).read_text(encoding="utf-8").splitlines()
    hyp_lines = Path(args.hyps).read_text(encoding="utf-8").splitlines()
    words: set[str] = set()
    for ln in ref_lines + hyp_lines:
        if ln.strip() and "\t" in ln:
            words.update(ln.split("\t", 1)[1].lower().split())
    words -= {"<unk>", "<eos>"}
    vocab = Vocabulary.from_tokens(sorted(words) + ["<unk>", "<eos>"])
    refs = parse_refs(args.refs, vocab)
    hyps = parse_refs(args.hyps, vocab)
    report = wer(refs, hyps, eos_id=vocab.eos_id)
    _emit(report.as_dict())
    _table(sorted(report.as_dict().items()))
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    world = gen_world(
        seed=args.seed,
        n_sessions=args.sessions,
        utts_per_session=args.utts,
        nbest_size=args.nbest_size,
        length=args.length,
        n_content=args.content,
        n_patterns=args.patterns,
        flip=args.flip,
        include_ref_prob=args.include_ref_prob,
        max_extra_edits=args.max_extra_edits,
        am_scale=args.am_scale,
        am_noise=args.am_noise,
    )
    paths = world.save(args.out)
    _emit({"paths": paths, "params": world.params})
    return 0


def _parse_weights(config: dict) -> dict[str, float]:
    raw = config.get("weights", {})
    if isinstance(raw, str):
        raw = json.loads(raw)
    if not isinstance(raw, dict):
        raise ConfigError("weights must be a JSON object of scorer name -> lambda")
    return {str(k): float(v) for k, v in raw.items()}


def cmd_rescore(args: argparse.Namespace) -> int:
    config = _load_config(
        args, ["nbest", "refs", "sessions", "vocab", "weights", "selections", "jobs"]
    )
    vocab, nbest, refs = _load_world(config)
    lam = _parse_weights(config)

    policy_cfg = config.get("policy", {})
    policy = ContextPolicy(
        left_len=int(policy_cfg.get("left_len", 0)),
        right_len=int(policy_cfg.get("right_len", 0)),
        right_source=str(policy_cfg.get("right_source", "original-1best")),
    )

    if not lam or all(v == 0 for v in lam.values()):
        # no LM evidence: rescoring is a no-op, keep the decoder's 1-best
        selections = {utt_id: hyps[0] for utt_id, hyps in nbest.utterances.items()}
        weights = None
    else:
        weights = Weights(lam)
        scorers = _build_scorers(config, vocab)
        missing = [n for n in lam if n not in {s.name for s in scorers}]
        if missing:
            raise ConfigError(f"weights name scorers that are not configured: {missing}")
        selections = rescore_session(
            nbest,
            scorers,
            weights,
            policy,
            refs=refs,
            eos_id=vocab.eos_id,
            jobs=int(config.get("jobs") or 1),
        )

    out_path = config.get("selections") or "selections.tsv"
    if weights is None:
        with open(out_path, "w", encoding="utf-8") as f:
            for utt_id, h in selections.items():
                f.write(f"{utt_id}\t{h.rank}\t{h.am_score!r}\t{' '.join(vocab.words(h.words))}\n")
    else:
        write_selections(out_path, selections, weights, vocab)

    hyp_words = {u: h.words for u, h in selections.items()}
    report = wer(refs, hyp_words, eos_id=vocab.eos_id)
    payload = dict(report.as_dict())
    payload["per_scorer_weights"] = lam
    payload["selections"] = str(out_path)
    _emit(payload)
    _table([("wer", f"{report.wer:.4f}"), ("errors", report.errors), ("ref_words", report.ref_words)])
    return 0


def attach_oracle_scores(
    nbest: NBestSet, refs: Mapping[str, TokenSeq], name: str = "oracle"
) -> NBestSet:
    """Attach score = -(edit distance to the reference) per hypothesis.

    A cheating scorer for oracle analyses: with a large enough weight it
    drives selection to the per-utterance minimum-error hypothesis.
    """
    utterances = {}
    for utt_id, hyps in nbest.utterances.items():
        if utt_id not in refs:
            raise DataError(f"no reference for utterance {utt_id!r}")
        out = []
        for h in hyps:
            s, i, d = levenshtein_align(refs[utt_id], h.words)
            out.append(h.with_score(name, -float(s + i + d)))
        utterances[utt_id] = tuple(out)
    return NBestSet(utterances, dict(nbest.session_of))


def _tuning_problem(
    nbest: NBestSet, refs: Mapping[str, TokenSeq], names: Sequence[str], eos_id: int
):
    """Precompute per-hypothesis score matrices and alignment counts so the
    tuning objective is pure arithmetic."""
    per_utt = []
    total_ref = 0
    for utt_id, hyps in nbest.utterances.items():
        ref = strip_eos(refs[utt_id], eos_id)
        am = np.array([h.am_score for h in hyps])
        scores = np.array([[h.lm_log_scores[n] for n in names] for h in hyps])
        errors = np.array(
            [sum(levenshtein_align(ref, strip_eos(h.words, eos_id))) for h in hyps]
        )
        per_utt.append((am, scores, errors))
        total_ref += len(ref)

    def objective(lam: np.ndarray) -> float:
        err = 0
        for am, scores, errors in per_utt:
            err += errors[int(np.argmax(am + scores @ lam))]
        return err / total_ref if total_ref else 0.0

    return objective


def cmd_tune(args: argparse.Namespace) -> int:
    config = _load_config(
        args,
        ["nbest", "refs", "sessions", "vocab", "budget", "seed", "out-weights", "history", "jobs"],
    )
    vocab, nbest, refs = _load_world(config)
    seed = config.get("seed")
    if seed is None:
        raise ConfigError("tune is stochastic: a seed is required")

    names: list[str] = []
    for spec in _require(config, "scorers"):
        if spec.get("kind") == "oracle":
            name = spec.get("name", "oracle")
            nbest = attach_oracle_scores(nbest, refs, name)
        else:
            method = PriorMethod(kind=str(_require(spec, "method")), alpha=float(spec.get("alpha", 1.0)))
            backend = _build_backend(_require(spec, "backend"), vocab)
            scorer = sentence_scorer(method, backend, None, name=spec.get("name"))
            name = scorer.name
            nbest = attach_scores(nbest, scorer)
        if name in names:
            raise ConfigError(f"duplicate scorer name {name!r}")
        names.append(name)

    objective = _tuning_problem(nbest, refs, names, vocab.eos_id)
    init = np.array([float(x) for x in config.get("init", [1.0] * len(names))])
    if init.shape != (len(names),):
        raise ConfigError(f"init length {len(init)} does not match {len(names)} scorers")
    budget = int(config.get("budget") or 0)

    if budget == 0:
        best, best_f, history = init, objective(init), []
    else:
        best, best_f, history = cmaes.optimize(
            objective,
            dim=len(names),
            budget_evals=budget,
            seed=int(seed),
            init=init,
            jobs=int(config.get("jobs") or 1),
        )

    weights = {n: float(v) for n, v in zip(names, best)}
    if config.get("out-weights"):
        Path(config["out-weights"]).write_text(json.dumps(weights, sort_keys=True), encoding="utf-8")
    if config.get("history"):
        with open(config["history"], "w", encoding="utf-8") as f:
            for record in history:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    _emit(
        {
            "best_wer": best_f,
            "weights": weights,
            "evaluations": budget,
            "generations": len(history),
        }
    )
    _table([("best_wer", f"{best_f:.4f}")] + [(f"lambda[{n}]", f"{v:.4f}") for n, v in weights.items()])
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="birescore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ngram", help="train and serialize an n-gram model")
    p.add_argument("--corpus", required=True, help="text file, one sentence per line")
    p.add_argument("--vocab", required=True)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--discount", type=float, default=0.75)
    p.add_argument("--no-eos", action="store_true", help="do not append eos to sentences")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_ngram)

    p = sub.add_parser("ppl", help="log2 perplexity of a text under a model")
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--context-left", type=int, default=0)
    p.add_argument("--no-eos", action="store_true")
    p.add_argument("--uniform-check", action="store_true", help="also print log2(V) for sanity")
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("score-wer", help="corpus WER between reference and hypothesis files")
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.set_defaults(func=cmd_score_wer)

    p = sub.add_parser("rescore", help="rescore an n-best set and report WER")
    p.add_argument("--config")
    p.add_argument("--nbest")
    p.add_argument("--refs")
    p.add_argument("--sessions")
    p.add_argument("--vocab")
    p.add_argument("--weights", help="JSON object scorer name -> lambda")
    p.add_argument("--selections", help="selection output file (default selections.tsv)")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("tune", help="CMA-ES search for LM weights minimizing dev WER")
    p.add_argument("--config")
    p.add_argument("--nbest")
    p.add_argument("--refs")
    p.add_argument("--sessions")
    p.add_argument("--vocab")
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-weights")
    p.add_argument("--history")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("gen-synthetic", help="emit a seeded tabular-joint experiment world")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sessions", type=int, default=4)
    p.add_argument("--utts", type=int, default=12)
    p.add_argument("--nbest-size", type=int, default=10)
    p.add_argument("--length", type=int, default=5)
    p.add_argument("--content", type=int, default=4)
    p.add_argument("--patterns", type=int, default=3)
    p.add_argument("--flip", type=float, default=0.15)
    p.add_argument("--include-ref-prob", type=float, default=0.9)
    p.add_argument("--max-extra-edits", type=int, default=2)
    p.add_argument("--am-scale", type=float, default=3.0)
    p.add_argument("--am-noise", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 4
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: missing file: {e}", file=sys.stderr)
        return 2
    except RescoreError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
