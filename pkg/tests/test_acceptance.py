"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are pinned in the assertions.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from birescore import cmaes
from birescore.backends import CountingLM, PerturbedLM
from birescore.cli import main
from birescore.prior import (
    PriorMethod,
    chain_rule_log_prior,
    converted_log_prior_dp,
    converted_log_prior_exact,
    log_ppl,
    mmlm_log_score,
    sentence_scorer,
)
from birescore.rescore import ContextPolicy, Weights, attach_scores, rescore_session
from birescore.seqcore import (
    TokenSeq,
    levenshtein_align,
    parse_nbest,
    parse_refs,
    parse_sessions,
    parse_vocab,
    wer,
)
from birescore.synthetic import gen_world

from conftest import (
    brute_min_edits,
    enum_log_joint,
    enum_mmlm_log,
    random_joint_entries,
    seq,
    small_vocab,
    tabular_from_entries,
)

CONVERSION_KINDS = ("forward-chain", "backward-chain", "dp-M1-red", "dp-M1-blue", "dp-M2", "exact-full")


def eval_method(model, s, kind, alpha=1.0):
    if kind == "forward-chain":
        return chain_rule_log_prior(model, s, direction="forward", alpha=alpha)
    if kind == "backward-chain":
        return chain_rule_log_prior(model, s, direction="backward", alpha=alpha)
    if kind == "mmlm":
        return mmlm_log_score(model, s, alpha=alpha)
    if kind == "exact-full":
        return converted_log_prior_exact(model, s, alpha=alpha)
    return converted_log_prior_dp(model, s, method=PriorMethod(kind, alpha))[0]


def test_exactness_oracle():
    """>= 200 seeded random joints: every conversion method recovers the
    enumerated log joint within 1e-9 at alpha=1; runtime < 60 s."""
    start = time.monotonic()
    rng = np.random.default_rng(20_000)
    checked = 0
    worst = 0.0
    while checked < 200:
        n_content = int(rng.integers(2, 5))  # vocab 2..4
        T = int(rng.integers(2, 7))  # T 2..6
        vocab = small_vocab(n_content)
        entries = random_joint_entries(rng, vocab, T)
        lm = tabular_from_entries(entries, vocab)
        sentence = list(entries)[int(rng.integers(0, len(entries)))]
        truth = enum_log_joint(entries, sentence)
        s = TokenSeq.of(sentence)
        for kind in CONVERSION_KINDS:
            err = abs(eval_method(lm, s, kind) - truth)
            worst = max(worst, err)
            assert err < 1e-9, (checked, kind, err)
        checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"exactness sweep took {elapsed:.1f}s"
    print(f"\nACCEPTANCE exactness-oracle: PASS ({checked} joints, worst error {worst:.2e}, {elapsed:.1f}s)")


def test_mmlm_inexactness():
    """On a fixed non-product joint the pseudo-score is off by > 1e-3 while
    every conversion method stays within 1e-9."""
    vocab = small_vocab(2)
    entries = {(0, 0): 0.4, (0, 1): 0.1, (1, 0): 0.2, (1, 1): 0.3}
    lm = tabular_from_entries(entries, vocab)
    s = seq(0, 0)
    truth = enum_log_joint(entries, (0, 0))
    lam = mmlm_log_score(lm, s)
    assert lam == pytest.approx(enum_mmlm_log(entries, (0, 0)), abs=1e-12)
    gap = abs(lam - truth)
    assert gap > 1e-3
    for kind in CONVERSION_KINDS:
        assert abs(eval_method(lm, s, kind) - truth) < 1e-9, kind
    print(f"\nACCEPTANCE mmlm-inexactness: PASS (|log L - log P| = {gap:.4f})")


def test_query_count_law():
    """dp-M1 issues exactly T queries and dp-M2 exactly T*T for T in 1..10.

    The per-conditional-query budget is the contractual count; arithmetic
    operation counts for the same schedule reported elsewhere (e.g.
    0.5*T^2 + 1.5*T - 1) count finite-state items, not backend queries.
    """
    from test_prior import HashLogitLM

    vocab = small_vocab(3)
    for T in range(1, 11):
        s = TokenSeq.of([0] * T)
        for kind, expected in (("dp-M1-red", T), ("dp-M1-blue", T), ("dp-M2", T * T)):
            counting = CountingLM(HashLogitLM(vocab))
            _, budget = converted_log_prior_dp(counting, s, method=PriorMethod(kind))
            assert budget.issued == expected == counting.calls, (T, kind)
    print("\nACCEPTANCE query-count-law: PASS (dp-M1 = T, dp-M2 = T^2 for T in 1..10)")


def test_directional_synthetic_rescoring():
    """Mean WER ordering dp-M2 <= dp-M1 <= MMLM in >= 15/20 seeds; < 5 min."""
    start = time.monotonic()
    holds = 0
    means = {"dp-M2": 0.0, "dp-M1-red": 0.0, "mmlm": 0.0}
    for seed in range(20):
        world = gen_world(seed)
        wers = {}
        for kind in ("dp-M2", "dp-M1-red", "mmlm"):
            model = PerturbedLM(world.joint, 0.2, seed=seed + 7777)
            scorer = sentence_scorer(PriorMethod(kind), model, name="lm")
            sel = rescore_session(
                world.nbest, [scorer], Weights({"lm": 1.0}), ContextPolicy(), eos_id=world.vocab.eos_id
            )
            hyp = {u: h.words for u, h in sel.items()}
            wers[kind] = wer(world.refs, hyp, eos_id=world.vocab.eos_id).wer
            means[kind] += wers[kind] / 20
        holds += wers["dp-M2"] <= wers["dp-M1-red"] <= wers["mmlm"]
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"directional experiment took {elapsed:.1f}s"
    assert holds >= 15, f"ordering held in only {holds}/20 seeds"
    print(
        f"\nACCEPTANCE directional-synthetic: PASS ({holds}/20 seeds; mean WER "
        f"m2={means['dp-M2']:.4f} <= m1={means['dp-M1-red']:.4f} <= mmlm={means['mmlm']:.4f}; {elapsed:.0f}s)"
    )


def test_cmaes_sphere():
    """Sphere (dim 4) to fitness < 1e-6 within 3000 evaluations, 10/10 seeds."""
    target = np.array([0.3, 0.3, 0.3, 0.3])

    def sphere(x):
        return float(np.sum((x - target) ** 2))

    for s in range(10):
        _, best, _ = cmaes.optimize(sphere, dim=4, budget_evals=3000, seed=s)
        assert best < 1e-6, (s, best)
    print("\nACCEPTANCE cmaes-sphere: PASS (10/10 seeds < 1e-6 within 3000 evals)")


def test_cmaes_tuning_improves_dev_wer():
    """Tuned weights strictly improve dev WER vs all-ones in >= 8/10 seeds."""
    wins = 0
    for seed in range(10):
        world = gen_world(seed)
        good = sentence_scorer(PriorMethod("dp-M2"), PerturbedLM(world.joint, 0.2, seed + 1), name="good")
        junk = sentence_scorer(PriorMethod("dp-M2"), PerturbedLM(world.joint, 8.0, seed + 2), name="junk")
        nb = attach_scores(attach_scores(world.nbest, good), junk)
        names = ["good", "junk"]
        per_utt = []
        total_ref = 0
        for utt, hyps in nb.utterances.items():
            ref = world.refs[utt]
            am = np.array([h.am_score for h in hyps])
            sc = np.array([[h.lm_log_scores[n] for n in names] for h in hyps])
            er = np.array([sum(levenshtein_align(ref, h.words)) for h in hyps])
            per_utt.append((am, sc, er))
            total_ref += len(ref)

        def objective(lam):
            errors = sum(er[int(np.argmax(am + sc @ lam))] for am, sc, er in per_utt)
            return errors / total_ref

        baseline = objective(np.ones(2))
        _, tuned, _ = cmaes.optimize(objective, dim=2, budget_evals=400, seed=seed)
        wins += tuned < baseline
    assert wins >= 8, f"tuning improved in only {wins}/10 seeds"
    print(f"\nACCEPTANCE cmaes-tuning: PASS ({wins}/10 seeds strictly improved)")


def test_wer_counts_match_brute_force():
    """Corpus counts equal exhaustive alignment search on 100 random pairs."""
    rng = np.random.default_rng(31_337)
    refs, hyps = {}, {}
    for k in range(100):
        refs[f"u{k}"] = TokenSeq.of(rng.integers(0, 4, size=rng.integers(1, 7)))
        hyps[f"u{k}"] = TokenSeq.of(rng.integers(0, 4, size=rng.integers(0, 7)))
    report = wer(refs, hyps)
    expected = sum(brute_min_edits(refs[k].ids, hyps[k].ids) for k in refs)
    assert report.errors == expected
    assert wer(refs, dict(refs)).wer == 0.0
    print(f"\nACCEPTANCE wer-brute-force: PASS (100 pairs, {expected} total edits)")


def test_ppl_criteria():
    """Uniform model gives log2 PPL = log2 V exactly; held-out PPL >= training
    PPL averaged over 10 seeds."""
    vocab = small_vocab(3)
    V = vocab.size
    uniform = {c: 1 / V**2 for c in __import__("itertools").product(range(V), repeat=2)}
    lm = tabular_from_entries(uniform, vocab)
    corpus = [seq(0, 1), seq(2, 4)]
    assert log_ppl(lm, corpus) == math.log2(V)

    from birescore.backends import NGramLM

    diffs = []
    for s in range(10):
        rng = np.random.default_rng(500 + s)
        pats = [rng.integers(0, 3, size=6) for _ in range(3)]

        def sample():
            pat = pats[rng.integers(0, len(pats))]
            return TokenSeq.of(
                [int(x) if rng.random() > 0.2 else int(rng.integers(0, 3)) for x in pat]
            )

        train = [sample() for _ in range(60)]
        held = [sample() for _ in range(60)]
        model = NGramLM.train(train, 3, vocab)
        diffs.append(log_ppl(model, held) - log_ppl(model, train))
    mean_gap = float(np.mean(diffs))
    assert mean_gap >= 0.0
    print(f"\nACCEPTANCE ppl: PASS (uniform = log2 {V} exactly; held-out gap {mean_gap:+.3f} bits)")


def test_baseline_equivalence(tmp_path, capsys):
    """cmd_rescore with lambda = 0 reproduces the rank-1 baseline bit-exactly."""
    out_dir = tmp_path / "world"
    code = main(["gen-synthetic", "--out", str(out_dir), "--seed", "123"])
    assert code == 0
    paths = json.loads(capsys.readouterr().out)["paths"]

    config = {
        "vocab": paths["vocab"],
        "nbest": paths["nbest"],
        "refs": paths["refs"],
        "sessions": paths["sessions"],
        "scorers": [],
        "weights": {},
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(config))
    sel = tmp_path / "sel.tsv"
    code = main(["rescore", "--config", str(cfg), "--selections", str(sel)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)

    vocab = parse_vocab(paths["vocab"])
    nbest = parse_nbest(paths["nbest"], vocab, parse_sessions(paths["sessions"]))
    refs = parse_refs(paths["refs"], vocab)
    baseline = wer(refs, {u: h[0].words for u, h in nbest.utterances.items()}, eos_id=vocab.eos_id)
    assert payload["wer"] == baseline.wer
    assert payload["sub"] == baseline.substitutions
    assert payload["ins"] == baseline.insertions
    assert payload["del"] == baseline.deletions
    print(f"\nACCEPTANCE baseline-equivalence: PASS (rank-1 WER {baseline.wer:.4f} bit-exact)")
