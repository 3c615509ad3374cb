"""Word-level conditional scoring on top of subword language models.

The wire protocol deals in whole words over an agreed word vocabulary; this
module owns the subword mapping. For masked models the target word is
replaced by the mask token and the attention mask hides the in-sentence
words outside the declared visible set; a word that tokenizes into several
pieces is scored by sequential mask filling. For causal models each word is
scored as the sum of its subword continuation log-probabilities.

The reserved word "<eos>" is rendered as a period (its role in the scoring
pipeline) and "<unk>" as the tokenizer's unknown token.
"""

from __future__ import annotations

import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F


class ContextOverflow(Exception):
    """Request does not fit the model's maximum context length."""


class BadRequest(Exception):
    """Structurally invalid query."""


@dataclass(frozen=True)
class ServedModel:
    model_id: str
    directionality: str  # "bidirectional" | "causal"
    vocab_size: int
    max_context: int


def _normalize_word(word: str, unk_token: str) -> str:
    if word == "<eos>":
        return "."
    if word == "<unk>":
        return unk_token
    return word


class MaskedWordScorer:
    """Mask-and-predict scoring with a BERT-style model."""

    directionality = "bidirectional"

    def __init__(self, model, tokenizer, words: list[str], device: str = "cpu", max_context: int | None = None):
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.words = list(words)
        self.max_context = max_context or int(getattr(model.config, "max_position_embeddings", 512))
        self._lock = threading.Lock()
        self._pieces = [self._word_pieces(w) for w in self.words]
        self.served = ServedModel(
            model_id=getattr(model.config, "name_or_path", "") or "masked",
            directionality=self.directionality,
            vocab_size=len(self.words),
            max_context=self.max_context,
        )

    def _word_pieces(self, word: str) -> list[int]:
        ids = self.tokenizer.convert_tokens_to_ids(
            self.tokenizer.tokenize(_normalize_word(word, self.tokenizer.unk_token))
        )
        return ids or [self.tokenizer.unk_token_id]

    def _render(
        self,
        tokens: list[str],
        target: int,
        visible_set: set[int],
        left_context: list[str],
        right_context: list[str],
        n_masks: int,
    ) -> tuple[list[int], list[int], int]:
        """Input ids and attention mask with n_masks mask pieces at the target
        word; in-sentence words outside the visible set are hidden from
        attention. Returns (ids, attention, index of the first mask)."""
        ids = [self.tokenizer.cls_token_id]
        att = [1]
        for w in left_context:
            p = self._word_pieces(w)
            ids += p
            att += [1] * len(p)
        mask_at = -1
        for pos, w in enumerate(tokens):
            if pos == target:
                mask_at = len(ids)
                ids += [self.tokenizer.mask_token_id] * n_masks
                att += [1] * n_masks
            else:
                p = self._word_pieces(w)
                ids += p
                att += [1 if pos in visible_set else 0] * len(p)
        for w in right_context:
            p = self._word_pieces(w)
            ids += p
            att += [1] * len(p)
        ids.append(self.tokenizer.sep_token_id)
        att.append(1)
        if len(ids) > self.max_context:
            raise ContextOverflow(f"{len(ids)} subword positions > limit {self.max_context}")
        return ids, att, mask_at

    def _forward_log_probs(self, ids: list[int], attention: list[int], position: int) -> torch.Tensor:
        input_ids = torch.tensor([ids], device=self.device)
        att = torch.tensor([attention], device=self.device)
        with torch.no_grad():
            logits = self.model(input_ids=input_ids, attention_mask=att).logits
        return F.log_softmax(logits[0, position], dim=-1)

    def logits(
        self,
        tokens: list[str],
        target: int,
        visible: list[int],
        left_context: list[str],
        right_context: list[str],
    ) -> list[float]:
        if not 0 <= target < len(tokens):
            raise BadRequest(f"target {target} out of range for {len(tokens)} tokens")
        visible_set = set(visible)
        if target in visible_set or not visible_set <= set(range(len(tokens))):
            raise BadRequest("visible set invalid")

        with self._lock:
            ids, att, mask_at = self._render(tokens, target, visible_set, left_context, right_context, 1)
            base = self._forward_log_probs(ids, att, mask_at)
            scores = []
            for pieces in self._pieces:
                if len(pieces) == 1:
                    scores.append(float(base[pieces[0]]))
                else:
                    scores.append(
                        self._sequential_fill(pieces, tokens, target, visible_set, left_context, right_context)
                    )
        return scores

    def _sequential_fill(
        self,
        pieces: list[int],
        tokens: list[str],
        target: int,
        visible_set: set[int],
        left_context: list[str],
        right_context: list[str],
    ) -> float:
        """Multi-piece target word: fill its masks left to right, summing the
        log-probability of each piece given the previously filled ones."""
        ids, att, slot = self._render(tokens, target, visible_set, left_context, right_context, len(pieces))
        total = 0.0
        for k, piece in enumerate(pieces):
            log_probs = self._forward_log_probs(ids, att, slot + k)
            total += float(log_probs[piece])
            ids[slot + k] = piece
        return total


class CausalWordScorer:
    """Next-word scoring with a GPT-style model: sum of subword continuations."""

    directionality = "causal"

    def __init__(self, model, tokenizer, words: list[str], device: str = "cpu", max_context: int | None = None):
        self.model = model.to(device).eval()
        self.tokenizer = tokenizer
        self.device = device
        self.words = list(words)
        self.max_context = max_context or int(
            getattr(model.config, "n_positions", 0) or getattr(model.config, "max_position_embeddings", 1024)
        )
        self._lock = threading.Lock()
        self._pieces = [
            tokenizer.encode(" " + _normalize_word(w, tokenizer.unk_token or ""), add_special_tokens=False)
            or [0]
            for w in self.words
        ]
        self.served = ServedModel(
            model_id=getattr(model.config, "name_or_path", "") or "causal",
            directionality=self.directionality,
            vocab_size=len(self.words),
            max_context=self.max_context,
        )

    def logits(
        self,
        tokens: list[str],
        target: int,
        visible: list[int],
        left_context: list[str],
        right_context: list[str],
    ) -> list[float]:
        if not 0 <= target < len(tokens):
            raise BadRequest(f"target {target} out of range for {len(tokens)} tokens")
        if right_context or set(visible) != set(range(target)):
            raise BadRequest("causal model requires visible = full left prefix and no right context")

        prefix_words = list(left_context) + [tokens[p] for p in range(target)]
        prefix: list[int] = []
        if self.tokenizer.bos_token_id is not None:
            prefix.append(self.tokenizer.bos_token_id)
        for w in prefix_words:
            prefix += self.tokenizer.encode(
                " " + _normalize_word(w, self.tokenizer.unk_token or ""), add_special_tokens=False
            )
        if not prefix:
            prefix = self.tokenizer.encode(".", add_special_tokens=False)

        longest = max(len(p) for p in self._pieces)
        if len(prefix) + longest > self.max_context:
            raise ContextOverflow(f"{len(prefix) + longest} subword positions > limit {self.max_context}")

        with self._lock:
            scores = []
            for pieces in self._pieces:
                ids = torch.tensor([prefix + pieces[:-1]], device=self.device)
                with torch.no_grad():
                    logits = self.model(input_ids=ids).logits
                log_probs = F.log_softmax(logits[0], dim=-1)
                total = 0.0
                for k, piece in enumerate(pieces):
                    total += float(log_probs[len(prefix) - 1 + k, piece])
                scores.append(total)
        return scores


def load_word_vocab(path: str | Path) -> list[str]:
    words = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(words) != len(set(words)):
        raise ValueError(f"{path}: duplicate words in vocabulary")
    return words


def build_toy_masked(words: list[str], seed: int = 0):
    """A small randomly-initialized masked LM over a generated WordPiece vocab.

    Exercises the full masked scoring path (tokenization, masking, attention
    visibility, sequential fill for multi-piece words) without any download;
    deterministic for a fixed seed.
    """
    from transformers import BertConfig, BertForMaskedLM, BertTokenizer

    pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "."]
    for w in words:
        w = _normalize_word(w, "[UNK]")
        if w in ("[UNK]", "."):
            continue
        if len(w) > 3:  # force a multi-piece split to exercise sequential fill
            for piece in (w[:3], "##" + w[3:]):
                if piece not in pieces:
                    pieces.append(piece)
        elif w not in pieces:
            pieces.append(w)

    vocab_file = Path(tempfile.mkdtemp(prefix="lmbridge-toy-")) / "wordpiece.txt"
    vocab_file.write_text("\n".join(pieces) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_file), do_lower_case=True)

    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(pieces),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    model = BertForMaskedLM(config)
    return model, tokenizer


def build_scorer(model_spec: str, words: list[str], device: str = "cpu"):
    """model_spec: "toy-masked[:seed]", "masked:<id-or-path>", "causal:<id-or-path>"."""
    if model_spec.startswith("toy-masked"):
        _, _, seed_s = model_spec.partition(":")
        model, tokenizer = build_toy_masked(words, seed=int(seed_s) if seed_s else 0)
        return MaskedWordScorer(model, tokenizer, words, device=device)
    kind, _, name = model_spec.partition(":")
    if not name:
        raise ValueError(f"model spec {model_spec!r} must look like masked:<id> or causal:<id>")
    if kind == "masked":
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        model = AutoModelForMaskedLM.from_pretrained(name)
        tokenizer = AutoTokenizer.from_pretrained(name)
        return MaskedWordScorer(model, tokenizer, words, device=device)
    if kind == "causal":
        from transformers import AutoModelForCausalLM, AutoTokenizer

        model = AutoModelForCausalLM.from_pretrained(name)
        tokenizer = AutoTokenizer.from_pretrained(name)
        return CausalWordScorer(model, tokenizer, words, device=device)
    raise ValueError(f"unknown model kind {kind!r}")
